//! The interacting N-particle system with shared mean reflection, the Picard
//! iteration on law flows for the limiting distribution-dependent equation,
//! and the propagation-of-chaos experiment.
//!
//! Each step runs an Euler predictor per particle, then computes one shared
//! reflection increment from the empirical mean: `zbar = l^T mean` is
//! projected onto `D_{t_{j+1}}` and the correction `(l^T)^{-1} (proj - zbar)`
//! is added to every particle. Empirical means use order-canonical summation,
//! so permuting particle substreams permutes paths but reproduces the shared
//! reflection term bit for bit.

use crate::constraint_map::{ConstraintMap, TimeDomainFamily, VPath};
use crate::control::{AttachedControl, StepControl};
use crate::geometry::ConvexDomain;
use crate::grid::{GridPath, TimeGrid};
use crate::numeric::{canonical_mean, ols_slope};
use crate::skorokhod::ReflectionLedger;
use crate::stochastic::{
    wasserstein2, CoefficientSet, EmpiricalMeasure, LevyJumpSpec, NoiseDriver, NoiseRole,
};
use crate::{Error, Point, Result};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Initial-state sampler with an analytic mean for constraint validation.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSampler {
    Point(Point),
    /// Independent Gaussian components.
    Gaussian { mean: Point, std: Point },
}

impl InitialSampler {
    pub fn dim(&self) -> usize {
        match self {
            Self::Point(p) => p.len(),
            Self::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn analytic_mean(&self) -> Point {
        match self {
            Self::Point(p) => p.clone(),
            Self::Gaussian { mean, .. } => mean.clone(),
        }
    }

    fn sample(&self, driver: &NoiseDriver, particle: u64) -> Point {
        match self {
            Self::Point(p) => p.clone(),
            Self::Gaussian { mean, std } => {
                let mut rng = driver.substream(particle, NoiseRole::Initial);
                Point::from_iterator(
                    mean.len(),
                    mean.iter()
                        .zip(std.iter())
                        .map(|(&m, &s)| m + s * rng.sample::<f64, _>(StandardNormal)),
                )
            }
        }
    }
}

/// Full problem description: coefficients, jumps, constraint structure,
/// initial law, grid, and an optional attached control.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub coeffs: CoefficientSet,
    pub jumps: LevyJumpSpec,
    pub initial: InitialSampler,
    pub control: Option<AttachedControl>,
    domain: ConvexDomain,
    l: DMatrix<f64>,
    vpath: VPath,
    family: TimeDomainFamily,
}

impl SystemSpec {
    pub fn new(
        coeffs: CoefficientSet,
        jumps: LevyJumpSpec,
        domain: ConvexDomain,
        l: DMatrix<f64>,
        vpath: VPath,
        grid: TimeGrid,
        initial: InitialSampler,
    ) -> Result<Self> {
        let dim = domain.dim();
        if initial.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: initial.dim() });
        }
        if jumps.intensity() > 0.0 && jumps.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: jumps.dim() });
        }
        let map = ConstraintMap::new(l.clone(), &vpath, grid)?;
        let family = TimeDomainFamily::new(domain.clone(), map)?;
        // the declared initial law must satisfy the mean constraint
        let phi0 = family.map().phi(0, &initial.analytic_mean());
        let gap = domain.distance(&phi0);
        if gap > domain.projector_tol() {
            return Err(Error::InitialConditionViolated { violation: gap, tol: domain.projector_tol() });
        }
        Ok(Self { coeffs, jumps, initial, control: None, domain, l, vpath, family })
    }

    /// Identity constraint structure (`phi = id`): domain constraint applies
    /// directly to the mean.
    pub fn with_identity_map(
        coeffs: CoefficientSet,
        jumps: LevyJumpSpec,
        domain: ConvexDomain,
        grid: TimeGrid,
        initial: InitialSampler,
    ) -> Result<Self> {
        let dim = domain.dim();
        Self::new(coeffs, jumps, domain, DMatrix::identity(dim, dim), VPath::zero(dim), grid, initial)
    }

    /// Rebuild the spec on another grid (re-sampling `v`); drops any attached
    /// control since its step count would no longer match.
    pub fn with_grid(&self, grid: &TimeGrid) -> Result<Self> {
        Self::new(
            self.coeffs.clone(),
            self.jumps.clone(),
            self.domain.clone(),
            self.l.clone(),
            self.vpath.clone(),
            grid.clone(),
            self.initial.clone(),
        )
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.family.grid()
    }

    pub fn domain(&self) -> &ConvexDomain {
        &self.domain
    }

    pub fn family(&self) -> &TimeDomainFamily {
        &self.family
    }

    pub fn map(&self) -> &ConstraintMap {
        self.family.map()
    }
}

/// What the ensemble stores besides summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StorageMode {
    /// Mean/reflection summaries plus audit-subset paths only.
    #[default]
    Rolling,
    /// Additionally keep every particle state at every node.
    FullPaths,
}

/// Simulation options: storage, audit-subset size, and an optional
/// substream permutation (particle `i` consumes substream `permutation[i]`).
#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub storage: StorageMode,
    pub audit_size: Option<usize>,
    pub permutation: Option<Vec<u64>>,
}

const DEFAULT_AUDIT: usize = 16;

/// How the shared reflection increment is produced.
enum ReflectionSource<'a> {
    /// Project the empirical mean (the particle scheme).
    Projection,
    /// Add increments of a precomputed deterministic ledger.
    Fixed(&'a ReflectionLedger),
}

/// Simulated ensemble: shared ledger, mean summaries, audit paths, and
/// optionally full paths.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    grid: TimeGrid,
    n: usize,
    dim: usize,
    ledger: ReflectionLedger,
    mean_path: GridPath,
    /// `phi_t` image of the empirical mean per node.
    mean_phi: GridPath,
    /// Distance of the `phi`-image to the base domain per node.
    constraint_gaps: Vec<f64>,
    final_states: Vec<Point>,
    audit_ids: Vec<usize>,
    /// `audit_paths[a][node]` for audit particle `a`.
    audit_paths: Vec<Vec<Point>>,
    /// `full[node][particle]` when requested.
    full: Option<Vec<Vec<Point>>>,
}

impl ParticleEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_particles(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ledger(&self) -> &ReflectionLedger {
        &self.ledger
    }

    pub fn mean_path(&self) -> &GridPath {
        &self.mean_path
    }

    pub fn mean_phi_path(&self) -> &GridPath {
        &self.mean_phi
    }

    pub fn constraint_gaps(&self) -> &[f64] {
        &self.constraint_gaps
    }

    pub fn constraint_gap_max(&self) -> f64 {
        self.constraint_gaps.iter().copied().fold(0.0, f64::max)
    }

    pub fn final_states(&self) -> &[Point] {
        &self.final_states
    }

    pub fn audit_ids(&self) -> &[usize] {
        &self.audit_ids
    }

    pub fn audit_paths(&self) -> &[Vec<Point>] {
        &self.audit_paths
    }

    pub fn full_paths(&self) -> Option<&Vec<Vec<Point>>> {
        self.full.as_ref()
    }

    pub fn terminal_measure(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::new(self.final_states.clone())
    }

    /// Per-node empirical law flow; requires full-path storage.
    pub fn law_flow(&self, provenance: impl Into<String>) -> Result<LawFlow> {
        let full = self
            .full
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("law_flow needs FullPaths storage".into()))?;
        let measures = full
            .iter()
            .map(|states| EmpiricalMeasure::new(states.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(LawFlow { measures, provenance: provenance.into() })
    }
}

/// A flow of empirical measures on the grid, with provenance.
#[derive(Debug, Clone)]
pub struct LawFlow {
    measures: Vec<EmpiricalMeasure>,
    provenance: String,
}

impl LawFlow {
    pub fn new(measures: Vec<EmpiricalMeasure>, provenance: impl Into<String>) -> Self {
        Self { measures, provenance: provenance.into() }
    }

    /// Constant-in-time flow concentrated at one point, represented on
    /// `support` identical atoms so residuals against N-particle flows are
    /// well-defined.
    pub fn delta_flow(point: &Point, support: usize, nodes: usize) -> Self {
        let measure = EmpiricalMeasure::new(vec![point.clone(); support]).expect("delta measure");
        Self { measures: vec![measure; nodes], provenance: "delta".into() }
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn support_size(&self) -> usize {
        self.measures[0].len()
    }

    pub fn measure_at(&self, node: usize) -> &EmpiricalMeasure {
        &self.measures[node]
    }

    pub fn mean_at(&self, node: usize) -> &Point {
        self.measures[node].mean()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }
}

fn effective_drift(
    coeffs: &CoefficientSet,
    t: f64,
    x: &Point,
    mean: &Point,
    control: StepControl<'_>,
) -> Point {
    match control {
        StepControl::None => coeffs.drift(t, x, mean, None),
        StepControl::Action(a) => coeffs.drift(t, x, mean, Some(a)),
        StepControl::Mixture(actions, weights) => {
            let mut out = Point::zeros(x.len());
            for (idx, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    out += coeffs.drift(t, x, mean, Some(actions.action(idx))).scale(w);
                }
            }
            out
        }
    }
}

/// Simulate the interacting particle system with shared mean reflection.
pub fn simulate_particles(
    spec: &SystemSpec,
    n: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<ParticleEnsemble> {
    simulate_core(spec, None, ReflectionSource::Projection, n, seed, opts)
}

/// Simulate with coefficients reading a frozen law flow; the reflection is
/// still computed from the empirical mean of these decoupled particles.
pub fn simulate_decoupled(
    spec: &SystemSpec,
    law: &LawFlow,
    n: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<ParticleEnsemble> {
    simulate_core(spec, Some(law), ReflectionSource::Projection, n, seed, opts)
}

/// Simulate against a frozen law flow with a fixed deterministic reflection
/// ledger (the propagation-of-chaos coupling, where the limit's `k` is known).
pub fn simulate_decoupled_fixed(
    spec: &SystemSpec,
    law: &LawFlow,
    ledger: &ReflectionLedger,
    n: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<ParticleEnsemble> {
    simulate_core(spec, Some(law), ReflectionSource::Fixed(ledger), n, seed, opts)
}

fn simulate_core(
    spec: &SystemSpec,
    law: Option<&LawFlow>,
    reflection: ReflectionSource<'_>,
    n: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<ParticleEnsemble> {
    if n < 2 {
        return Err(Error::InvalidConfig("particle system needs N >= 2".into()));
    }
    let grid = spec.grid().clone();
    let dim = spec.dim();
    if let Some(flow) = law {
        if flow.len() != grid.len() {
            return Err(Error::InvalidConfig("law flow does not match the grid".into()));
        }
    }
    if let Some(control) = &spec.control {
        if control.steps() != grid.steps() {
            return Err(Error::InvalidConfig(format!(
                "attached control has {} steps, grid has {}",
                control.steps(),
                grid.steps()
            )));
        }
    }
    if let Some(perm) = &opts.permutation {
        if perm.len() != n {
            return Err(Error::InvalidConfig("substream permutation must have length N".into()));
        }
    }
    let substream_of = |i: usize| -> u64 {
        match &opts.permutation {
            Some(perm) => perm[i],
            None => i as u64,
        }
    };

    let driver = NoiseDriver::new(seed, grid.clone(), dim);
    let map = spec.map();

    // initial states and the corrective shift restoring the sampled mean
    // constraint (sampling noise can violate what the analytic mean satisfies)
    let mut states: Vec<Point> =
        (0..n).map(|i| spec.initial.sample(&driver, substream_of(i))).collect();
    let mut scratch = Vec::with_capacity(n);
    let mut mean = Point::zeros(dim);
    canonical_mean(&states, &mut scratch, &mut mean);

    let mut increments: Vec<Point> = Vec::with_capacity(grid.len());
    let dk0 = match &reflection {
        ReflectionSource::Projection => {
            let zbar = map.to_transformed(&mean);
            let proj = spec.family().project(0, &zbar)?;
            let dbar = &proj - &zbar;
            if dbar.norm() > 0.0 {
                map.from_transformed(&dbar)
            } else {
                Point::zeros(dim)
            }
        }
        ReflectionSource::Fixed(ledger) => ledger.increment(0).clone(),
    };
    if dk0.norm() > 0.0 {
        for x in &mut states {
            *x += &dk0;
        }
        canonical_mean(&states, &mut scratch, &mut mean);
    }
    increments.push(dk0);

    let audit_size = opts.audit_size.unwrap_or(DEFAULT_AUDIT).min(n);
    let audit_ids: Vec<usize> = (0..audit_size).collect();
    let mut audit_paths: Vec<Vec<Point>> = audit_ids
        .iter()
        .map(|&i| {
            let mut path = Vec::with_capacity(grid.len());
            path.push(states[i].clone());
            path
        })
        .collect();
    let mut full: Option<Vec<Vec<Point>>> = match opts.storage {
        StorageMode::FullPaths => Some(vec![states.clone()]),
        StorageMode::Rolling => None,
    };

    let mut mean_values = Vec::with_capacity(grid.len());
    let mut mean_phi_values = Vec::with_capacity(grid.len());
    let mut gaps = Vec::with_capacity(grid.len());
    mean_values.push(mean.clone());
    let phi0 = map.phi(0, &mean);
    gaps.push(spec.domain().distance(&phi0));
    mean_phi_values.push(phi0);

    // per-particle noise: one Brownian generator each, jump streams up front
    let mut brownian: Vec<_> = (0..n)
        .map(|i| driver.substream(substream_of(i), NoiseRole::Brownian))
        .collect();
    let jump_streams: Vec<Vec<(f64, Point)>> = (0..n)
        .map(|i| spec.jumps.jump_stream(&driver, substream_of(i)))
        .collect();
    let mut jump_cursor = vec![0usize; n];
    let mut marks_buffer: Vec<Point> = Vec::new();

    for j in 0..grid.steps() {
        let t = grid.time(j);
        let dt = grid.dt(j);
        let sqrt_dt = dt.sqrt();
        let t_next = grid.time(j + 1);
        let coeff_mean = match law {
            Some(flow) => flow.mean_at(j).clone(),
            None => mean.clone(),
        };
        let step_control = match &spec.control {
            Some(c) => c.at_step(j),
            None => StepControl::None,
        };

        // Euler predictor per particle
        for (i, x) in states.iter_mut().enumerate() {
            let db = Point::from_iterator(
                dim,
                (0..dim).map(|_| sqrt_dt * brownian[i].sample::<f64, _>(StandardNormal)),
            );
            let drift = effective_drift(&spec.coeffs, t, x, &coeff_mean, step_control);
            let diffusion = spec.coeffs.sigma_apply(t, x, &db);
            marks_buffer.clear();
            let stream = &jump_streams[i];
            while jump_cursor[i] < stream.len() && stream[jump_cursor[i]].0 <= t_next {
                marks_buffer.push(stream[jump_cursor[i]].1.clone());
                jump_cursor[i] += 1;
            }
            let jump = crate::stochastic::compensated_jump_integral(
                &spec.jumps,
                &spec.coeffs,
                t,
                x,
                &coeff_mean,
                &marks_buffer,
                dt,
            );
            *x += drift.scale(dt) + diffusion + jump;
        }

        // shared reflection from the predictor mean
        canonical_mean(&states, &mut scratch, &mut mean);
        let dk = match &reflection {
            ReflectionSource::Projection => {
                let zbar = map.to_transformed(&mean);
                let proj = spec.family().project(j + 1, &zbar)?;
                let dbar = &proj - &zbar;
                if dbar.norm() > 0.0 {
                    map.from_transformed(&dbar)
                } else {
                    Point::zeros(dim)
                }
            }
            ReflectionSource::Fixed(ledger) => ledger.increment(j + 1).clone(),
        };
        if dk.norm() > 0.0 {
            for x in &mut states {
                *x += &dk;
            }
            canonical_mean(&states, &mut scratch, &mut mean);
        }
        increments.push(dk);

        if !mean.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite { step: j + 1, context: "ensemble mean".into() });
        }

        mean_values.push(mean.clone());
        let phi = map.phi(j + 1, &mean);
        gaps.push(spec.domain().distance(&phi));
        mean_phi_values.push(phi);
        for (slot, &i) in audit_ids.iter().enumerate() {
            audit_paths[slot].push(states[i].clone());
        }
        if let Some(full) = &mut full {
            full.push(states.clone());
        }
    }

    Ok(ParticleEnsemble {
        grid,
        n,
        dim,
        ledger: ReflectionLedger::from_increments(increments),
        mean_path: GridPath::new(mean_values)?,
        mean_phi: GridPath::new(mean_phi_values)?,
        constraint_gaps: gaps,
        final_states: states,
        audit_ids,
        audit_paths,
        full,
    })
}

// ---------------------------------------------------------------------------
// Picard iteration on law flows
// ---------------------------------------------------------------------------

/// Picard output: the fixed-point law flow, its reflection ledger, and the
/// residual history `max_t W2(mu^{k+1}_t, mu^k_t)`.
#[derive(Debug, Clone)]
pub struct PicardOutput {
    pub flow: LawFlow,
    pub ledger: ReflectionLedger,
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// False when any residual used the sliced Wasserstein backend.
    pub residuals_exact: bool,
}

/// Iterate `mu -> law(decoupled system driven by mu)` with common random
/// numbers until the law flow stops moving.
pub fn picard_solve(
    spec: &SystemSpec,
    n: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
    initial_flow: Option<LawFlow>,
) -> Result<PicardOutput> {
    if max_iter == 0 {
        return Err(Error::InvalidConfig("picard needs max_iter >= 1".into()));
    }
    let opts = SimOptions { storage: StorageMode::FullPaths, ..SimOptions::default() };
    let mut flow = match initial_flow {
        Some(flow) => {
            if flow.support_size() != n || flow.len() != spec.grid().len() {
                return Err(Error::InvalidConfig(
                    "initial flow must match support size N and the grid".into(),
                ));
            }
            flow
        }
        None => LawFlow::delta_flow(&spec.initial.analytic_mean(), n, spec.grid().len()),
    };
    let mut residuals = Vec::with_capacity(max_iter);
    let mut converged = false;
    let mut residuals_exact = true;
    let mut last: Option<(LawFlow, ReflectionLedger)> = None;
    for iter in 0..max_iter {
        let ensemble = simulate_decoupled(spec, &flow, n, seed, &opts)?;
        let next = ensemble.law_flow(format!("picard iterate {}", iter + 1))?;
        let mut residual = 0.0f64;
        for node in 0..flow.len() {
            let est = wasserstein2(next.measure_at(node), flow.measure_at(node))?;
            residuals_exact &= est.exact;
            residual = residual.max(est.value);
        }
        residuals.push(residual);
        last = Some((next.clone(), ensemble.ledger().clone()));
        flow = next;
        if residual < tol {
            converged = true;
            break;
        }
    }
    let (flow, ledger) = last.expect("at least one iteration");
    Ok(PicardOutput { flow, ledger, residuals, converged, residuals_exact })
}

// ---------------------------------------------------------------------------
// propagation-of-chaos study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ChaosOptions {
    pub n_ref: usize,
    pub picard_max_iter: usize,
    pub picard_tol: f64,
    pub ref_seed: u64,
    pub audit_size: usize,
}

impl Default for ChaosOptions {
    fn default() -> Self {
        Self { n_ref: 1000, picard_max_iter: 8, picard_tol: 1e-4, ref_seed: 0, audit_size: 16 }
    }
}

/// One N of the convergence table, averaged over seeds.
#[derive(Debug, Clone, Copy)]
pub struct ChaosRow {
    pub n: usize,
    /// Mean over seeds of `max_i sup_t |X^{i,N}_t - X^i_t|^2` on the audit set.
    pub gap: f64,
    /// Mean over seeds of `sup_t |K^N_t - k_ref(t)|`.
    pub k_gap: f64,
    /// Mean over seeds of the terminal-law Wasserstein-2 distance.
    pub w2_terminal: f64,
}

#[derive(Debug, Clone)]
pub struct ChaosStudy {
    pub rows: Vec<ChaosRow>,
    pub reference_residuals: Vec<f64>,
}

/// Couple the interacting system with decoupled copies driven by the
/// reference law (Picard at `n_ref`) and the reference reflection, using
/// identical substreams per particle, and tabulate the gaps over `n_list`.
pub fn chaos_study(
    spec: &SystemSpec,
    n_list: &[usize],
    seeds: &[u64],
    opts: &ChaosOptions,
) -> Result<ChaosStudy> {
    let max_n = n_list.iter().copied().max().unwrap_or(0);
    if max_n == 0 || seeds.is_empty() {
        return Err(Error::InvalidConfig("chaos study needs sizes and seeds".into()));
    }
    if opts.n_ref < 4 * max_n {
        return Err(Error::InvalidConfig(format!(
            "reference size {} must be at least 4x the largest N ({max_n})",
            opts.n_ref
        )));
    }
    let reference = picard_solve(
        spec,
        opts.n_ref,
        opts.picard_max_iter,
        opts.picard_tol,
        opts.ref_seed,
        None,
    )?;
    let sim_opts = SimOptions { audit_size: Some(opts.audit_size), ..SimOptions::default() };
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut gap_acc = 0.0;
        let mut k_acc = 0.0;
        let mut w2_acc = 0.0;
        for &seed in seeds {
            let interacting = simulate_particles(spec, n, seed, &sim_opts)?;
            let decoupled = simulate_decoupled_fixed(
                spec,
                &reference.flow,
                &reference.ledger,
                n,
                seed,
                &sim_opts,
            )?;
            let mut gap = 0.0f64;
            for (a, b) in interacting.audit_paths().iter().zip(decoupled.audit_paths()) {
                let sup = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).norm_squared())
                    .fold(0.0, f64::max);
                gap = gap.max(sup);
            }
            gap_acc += gap;
            k_acc += interacting.ledger().k().sup_distance(reference.ledger.k());
            w2_acc += wasserstein2(
                &interacting.terminal_measure()?,
                &decoupled.terminal_measure()?,
            )?
            .value;
        }
        let m = seeds.len() as f64;
        rows.push(ChaosRow { n, gap: gap_acc / m, k_gap: k_acc / m, w2_terminal: w2_acc / m });
    }
    Ok(ChaosStudy { rows, reference_residuals: reference.residuals })
}

// ---------------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------------

/// Increment moduli for one lag.
#[derive(Debug, Clone, Copy)]
pub struct ModulusRow {
    pub lag: f64,
    /// `max_{|t-s|<=lag} |k_t - k_s|`.
    pub k_sup_increment: f64,
    /// Same quantity over the audit particles' paths.
    pub x_sup_increment: f64,
}

#[derive(Debug, Clone)]
pub struct ModulusDiagnostic {
    pub rows: Vec<ModulusRow>,
    /// Fitted slope of the k-increment against the lag.
    pub k_slope: f64,
}

/// Dyadic lag set `mesh * {1, 2, 4, ...}` up to half the horizon.
pub fn dyadic_lags(grid: &TimeGrid) -> Vec<f64> {
    let mut lags = Vec::new();
    let mut h = grid.mesh();
    while h <= grid.t_end() / 2.0 {
        lags.push(h);
        h *= 2.0;
    }
    lags
}

/// Sup-increment table of the reflection path and the audit particles over a
/// set of lags, with the fitted k-slope.
pub fn modulus_diagnostic(ensemble: &ParticleEnsemble, lags: &[f64]) -> ModulusDiagnostic {
    let grid = ensemble.grid();
    let k = ensemble.ledger().k();
    let sup_increment = |path: &dyn Fn(usize) -> Point, lag: f64| -> f64 {
        let mut worst = 0.0f64;
        for a in 0..grid.len() {
            let mut b = a + 1;
            while b < grid.len() && grid.time(b) - grid.time(a) <= lag + 1e-12 {
                worst = worst.max((path(b) - path(a)).norm());
                b += 1;
            }
        }
        worst
    };
    let rows: Vec<ModulusRow> = lags
        .iter()
        .map(|&lag| {
            let k_sup = sup_increment(&|j| k.at(j).clone(), lag);
            let x_sup = ensemble
                .audit_paths()
                .iter()
                .map(|path| sup_increment(&|j| path[j].clone(), lag))
                .fold(0.0, f64::max);
            ModulusRow { lag, k_sup_increment: k_sup, x_sup_increment: x_sup }
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.lag).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.k_sup_increment).collect();
    let k_slope = if rows.len() >= 2 { ols_slope(&xs, &ys) } else { f64::NAN };
    ModulusDiagnostic { rows, k_slope }
}

/// Spread of the shared reflection across seeds: per-node standard deviation
/// of `K^N_t` (Euclidean norm of the componentwise deviations).
#[derive(Debug, Clone)]
pub struct KSpread {
    pub per_node_std: Vec<f64>,
    pub terminal_std: f64,
}

pub fn deterministic_k_diagnostic(spec: &SystemSpec, n: usize, seeds: &[u64]) -> Result<KSpread> {
    if seeds.len() < 2 {
        return Err(Error::InvalidConfig("k diagnostic needs at least two seeds".into()));
    }
    let opts = SimOptions::default();
    let mut k_paths: Vec<GridPath> = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let ensemble = simulate_particles(spec, n, seed, &opts)?;
        k_paths.push(ensemble.ledger().k().clone());
    }
    let nodes = k_paths[0].len();
    let dim = k_paths[0].dim();
    let m = seeds.len() as f64;
    let mut per_node_std = Vec::with_capacity(nodes);
    for node in 0..nodes {
        let mut acc = 0.0;
        for c in 0..dim {
            let mean: f64 = k_paths.iter().map(|k| k.at(node)[c]).sum::<f64>() / m;
            let var: f64 =
                k_paths.iter().map(|k| (k.at(node)[c] - mean).powi(2)).sum::<f64>() / (m - 1.0);
            acc += var;
        }
        per_node_std.push(acc.sqrt());
    }
    let terminal_std = *per_node_std.last().unwrap();
    Ok(KSpread { per_node_std, terminal_std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::{BetaKind, ControlCoupling, DriftKind, MarkSampler, SigmaKind};
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn coeffs(drift: DriftKind, sigma: SigmaKind, beta: BetaKind) -> CoefficientSet {
        CoefficientSet::new(drift, sigma, beta, ControlCoupling::None)
    }

    /// d=1 halfline benchmark: D = [0, inf), phi = id, b = -1, sigma = 1,
    /// X0 = 0. Mean path is -t, so K_t = t by the one-dimensional formula.
    fn halfline_spec(steps: usize) -> SystemSpec {
        SystemSpec::with_identity_map(
            coeffs(
                DriftKind::Constant(dvector![-1.0]),
                SigmaKind::Scalar { value: 1.0 },
                BetaKind::Zero,
            ),
            LevyJumpSpec::none(1),
            ConvexDomain::halfspace(dvector![-1.0], 0.0).unwrap(),
            TimeGrid::uniform(1.0, steps).unwrap(),
            InitialSampler::Point(dvector![0.0]),
        )
        .unwrap()
    }

    #[test]
    fn deterministic_interior_system_never_reflects() {
        let spec = SystemSpec::with_identity_map(
            coeffs(DriftKind::Zero, SigmaKind::Zero, BetaKind::Zero),
            LevyJumpSpec::none(2),
            ConvexDomain::ball(dvector![0.0, 0.0], 1.0).unwrap(),
            TimeGrid::uniform(1.0, 20).unwrap(),
            InitialSampler::Point(dvector![0.2, 0.1]),
        )
        .unwrap();
        let out = simulate_particles(&spec, 8, 3, &SimOptions::default()).unwrap();
        assert_eq!(out.ledger().variation_total(), 0.0);
        for x in out.final_states() {
            assert_eq!(x, &dvector![0.2, 0.1]);
        }
        assert_eq!(out.constraint_gap_max(), 0.0);
    }

    #[test]
    fn halfline_benchmark_tracks_closed_form() {
        let spec = halfline_spec(200);
        let out = simulate_particles(&spec, 800, 11, &SimOptions::default()).unwrap();
        let mut worst_k = 0.0f64;
        let mut worst_mean = 0.0f64;
        for j in 0..=200 {
            let t = spec.grid().time(j);
            worst_k = worst_k.max((out.ledger().k_at(j)[0] - t).abs());
            worst_mean = worst_mean.max(out.mean_path().at(j)[0].abs());
        }
        assert!(worst_k < 0.15, "K deviates from t by {worst_k}");
        assert!(worst_mean < 0.15, "constrained mean strays by {worst_mean}");
        assert!(out.constraint_gap_max() <= 1e-8);
    }

    #[test]
    fn seed_determinism_is_bitwise() {
        let spec = halfline_spec(50);
        let a = simulate_particles(&spec, 64, 5, &SimOptions::default()).unwrap();
        let b = simulate_particles(&spec, 64, 5, &SimOptions::default()).unwrap();
        assert_eq!(a.ledger().k(), b.ledger().k());
        assert_eq!(a.final_states(), b.final_states());
        let c = simulate_particles(&spec, 64, 6, &SimOptions::default()).unwrap();
        assert_ne!(a.ledger().k(), c.ledger().k());
    }

    #[test]
    fn substream_permutation_leaves_k_bitwise_unchanged() {
        let spec = halfline_spec(40);
        let n = 32;
        let base = simulate_particles(&spec, n, 9, &SimOptions::default()).unwrap();
        // a nontrivial deterministic permutation
        let perm: Vec<u64> = (0..n as u64).map(|i| (i * 13 + 5) % n as u64).collect();
        let permuted = simulate_particles(
            &spec,
            n,
            9,
            &SimOptions { permutation: Some(perm.clone()), ..SimOptions::default() },
        )
        .unwrap();
        for j in 0..=40 {
            let a = base.ledger().k_at(j);
            let b = permuted.ledger().k_at(j);
            assert_eq!(a[0].to_bits(), b[0].to_bits(), "K differs at node {j}");
        }
        // particle paths are permuted: particle i of the permuted run equals
        // particle perm[i] of a run where that id leads
        let x_base = &base.final_states()[perm[0] as usize];
        let x_perm = &permuted.final_states()[0];
        assert_eq!(x_base, x_perm);
    }

    #[test]
    fn decoupled_equals_interacting_without_mean_field() {
        let spec = halfline_spec(30);
        let n = 48;
        let interacting = simulate_particles(&spec, n, 4, &SimOptions::default()).unwrap();
        let flow = LawFlow::delta_flow(&dvector![0.0], n, spec.grid().len());
        let decoupled = simulate_decoupled(&spec, &flow, n, 4, &SimOptions::default()).unwrap();
        assert_eq!(interacting.ledger().k(), decoupled.ledger().k());
        assert_eq!(interacting.final_states(), decoupled.final_states());
    }

    #[test]
    fn degenerate_noise_matches_deterministic_solver() {
        // sigma = beta = 0: the ensemble collapses to the deterministic path
        // and the ledger must match solve_mean_reflection of that path.
        let spec = SystemSpec::with_identity_map(
            coeffs(DriftKind::Constant(dvector![-1.0]), SigmaKind::Zero, BetaKind::Zero),
            LevyJumpSpec::none(1),
            ConvexDomain::halfspace(dvector![-1.0], 0.0).unwrap(),
            TimeGrid::uniform(1.0, 100).unwrap(),
            InitialSampler::Point(dvector![0.0]),
        )
        .unwrap();
        let out = simulate_particles(&spec, 4, 1, &SimOptions::default()).unwrap();
        let y = GridPath::from_fn(spec.grid(), |t| dvector![-t]);
        let sol = crate::skorokhod::solve_mean_reflection(spec.family(), &y).unwrap();
        for j in 0..spec.grid().len() {
            assert_relative_eq!(out.ledger().k_at(j)[0], sol.ledger.k_at(j)[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn gaussian_initial_mean_violation_is_corrected_at_t0() {
        // wide initial law, boundary-touching analytic mean: sampling noise
        // violates the constraint, the shared shift restores it at node 0
        let spec = SystemSpec::with_identity_map(
            coeffs(DriftKind::Zero, SigmaKind::Zero, BetaKind::Zero),
            LevyJumpSpec::none(1),
            ConvexDomain::halfspace(dvector![-1.0], 0.0).unwrap(),
            TimeGrid::uniform(0.1, 2).unwrap(),
            InitialSampler::Gaussian { mean: dvector![0.0], std: dvector![1.0] },
        )
        .unwrap();
        for seed in 0..20u64 {
            let out = simulate_particles(&spec, 16, seed, &SimOptions::default()).unwrap();
            assert!(out.constraint_gaps()[0] <= 1e-8);
            // with zero coefficients nothing moves after the correction
            if out.ledger().increment(0).norm() > 0.0 {
                assert!(out.ledger().is_active(0));
            }
        }
    }

    #[test]
    fn picard_without_mean_field_settles_in_one_iterate() {
        let spec = halfline_spec(30);
        let out = picard_solve(&spec, 32, 5, 1e-12, 7, None).unwrap();
        assert!(out.converged);
        assert_eq!(out.residuals.len(), 2);
        assert_eq!(out.residuals[1], 0.0, "law must stop moving after one iterate");
        assert!(out.residuals_exact);
    }

    fn attraction_spec(steps: usize, kappa: f64) -> SystemSpec {
        SystemSpec::with_identity_map(
            coeffs(
                DriftKind::MeanFieldAttraction { kappa },
                SigmaKind::Scalar { value: 0.5 },
                BetaKind::Zero,
            ),
            LevyJumpSpec::none(1),
            ConvexDomain::halfspace(dvector![-1.0], 0.0).unwrap(),
            TimeGrid::uniform(1.0, steps).unwrap(),
            InitialSampler::Gaussian { mean: dvector![0.5], std: dvector![0.3] },
        )
        .unwrap()
    }

    #[test]
    fn picard_contracts_on_attraction_benchmark() {
        let spec = attraction_spec(50, 0.4);
        let out = picard_solve(&spec, 300, 10, 1e-3, 2, None).unwrap();
        assert!(out.converged, "residuals: {:?}", out.residuals);
        for w in out.residuals.windows(2).skip(1) {
            assert!(w[1] < w[0], "residuals must decay: {:?}", out.residuals);
        }
    }

    #[test]
    fn picard_fixed_point_independent_of_initial_flow() {
        let spec = attraction_spec(50, 0.4);
        let tol = 1e-3;
        let from_delta = picard_solve(&spec, 200, 12, tol, 3, None).unwrap();
        // alternative start: law of the interacting particle system
        let ensemble = simulate_particles(
            &spec,
            200,
            3,
            &SimOptions { storage: StorageMode::FullPaths, ..SimOptions::default() },
        )
        .unwrap();
        let from_particles =
            picard_solve(&spec, 200, 12, tol, 3, Some(ensemble.law_flow("particle run").unwrap()))
                .unwrap();
        assert!(from_delta.converged && from_particles.converged);
        let mut worst = 0.0f64;
        for node in 0..spec.grid().len() {
            worst = worst.max(
                wasserstein2(
                    from_delta.flow.measure_at(node),
                    from_particles.flow.measure_at(node),
                )
                .unwrap()
                .value,
            );
        }
        assert!(worst <= 2.0 * tol, "fixed points disagree by {worst}");
    }

    #[test]
    fn chaos_gap_vanishes_without_coupling_or_reflection() {
        // b independent of mu, huge ball never active: the decoupled system
        // equals the interacting one bitwise, so every gap is zero.
        let spec = SystemSpec::with_identity_map(
            coeffs(
                DriftKind::Constant(dvector![0.2]),
                SigmaKind::Scalar { value: 1.0 },
                BetaKind::Zero,
            ),
            LevyJumpSpec::none(1),
            ConvexDomain::ball(dvector![0.0], 1e6).unwrap(),
            TimeGrid::uniform(1.0, 20).unwrap(),
            InitialSampler::Point(dvector![0.0]),
        )
        .unwrap();
        let study = chaos_study(
            &spec,
            &[8, 16],
            &[1, 2],
            &ChaosOptions { n_ref: 64, picard_max_iter: 3, picard_tol: 1e-9, ..Default::default() },
        )
        .unwrap();
        for row in &study.rows {
            assert_eq!(row.gap, 0.0);
            assert_eq!(row.k_gap, 0.0);
            assert_eq!(row.w2_terminal, 0.0);
        }
    }

    #[test]
    fn chaos_k_gap_shrinks_on_halfline() {
        let spec = halfline_spec(50);
        let study = chaos_study(
            &spec,
            &[25, 100],
            &[1, 2, 3, 4, 5, 6],
            &ChaosOptions { n_ref: 400, picard_max_iter: 4, picard_tol: 1e-6, ..Default::default() },
        )
        .unwrap();
        assert!(
            study.rows[1].k_gap < study.rows[0].k_gap,
            "K gap should shrink: {:?}",
            study.rows
        );
        assert!(study.rows[1].gap < study.rows[0].gap, "coupling gap should shrink");
    }

    #[test]
    fn modulus_zero_reflection() {
        let spec = SystemSpec::with_identity_map(
            coeffs(DriftKind::Zero, SigmaKind::Zero, BetaKind::Zero),
            LevyJumpSpec::none(1),
            ConvexDomain::ball(dvector![0.0], 5.0).unwrap(),
            TimeGrid::uniform(1.0, 16).unwrap(),
            InitialSampler::Point(dvector![0.0]),
        )
        .unwrap();
        let out = simulate_particles(&spec, 4, 1, &SimOptions::default()).unwrap();
        let diag = modulus_diagnostic(&out, &dyadic_lags(spec.grid()));
        for row in &diag.rows {
            assert_eq!(row.k_sup_increment, 0.0);
            assert_eq!(row.x_sup_increment, 0.0);
        }
    }

    #[test]
    fn modulus_slope_tracks_drift_scale() {
        // deterministic halfline drift: k_t = c t, so increments over lag h
        // are c h and the fitted slope is c
        for (c, expected) in [(1.0, 1.0), (2.0, 2.0)] {
            let spec = SystemSpec::with_identity_map(
                coeffs(DriftKind::Constant(dvector![-c]), SigmaKind::Zero, BetaKind::Zero),
                LevyJumpSpec::none(1),
                ConvexDomain::halfspace(dvector![-1.0], 0.0).unwrap(),
                TimeGrid::uniform(1.0, 64).unwrap(),
                InitialSampler::Point(dvector![0.0]),
            )
            .unwrap();
            let out = simulate_particles(&spec, 4, 1, &SimOptions::default()).unwrap();
            let diag = modulus_diagnostic(&out, &dyadic_lags(spec.grid()));
            assert_relative_eq!(diag.k_slope, expected, epsilon = 0.05);
        }
    }

    #[test]
    fn k_spread_zero_for_deterministic_system() {
        let spec = SystemSpec::with_identity_map(
            coeffs(DriftKind::Constant(dvector![-1.0]), SigmaKind::Zero, BetaKind::Zero),
            LevyJumpSpec::none(1),
            ConvexDomain::halfspace(dvector![-1.0], 0.0).unwrap(),
            TimeGrid::uniform(1.0, 20).unwrap(),
            InitialSampler::Point(dvector![0.0]),
        )
        .unwrap();
        let spread = deterministic_k_diagnostic(&spec, 8, &[1, 2, 3]).unwrap();
        assert_eq!(spread.terminal_std, 0.0);
    }

    #[test]
    fn k_spread_shrinks_with_n() {
        let spec = halfline_spec(40);
        let seeds: Vec<u64> = (0..12).collect();
        let small = deterministic_k_diagnostic(&spec, 50, &seeds).unwrap();
        let large = deterministic_k_diagnostic(&spec, 200, &seeds).unwrap();
        assert!(
            large.terminal_std < small.terminal_std,
            "std {} -> {}",
            small.terminal_std,
            large.terminal_std
        );
    }

    #[test]
    fn jumps_enter_the_dynamics() {
        let spec = SystemSpec::with_identity_map(
            coeffs(
                DriftKind::Zero,
                SigmaKind::Zero,
                BetaKind::LinearInZ { gain: 1.0 },
            ),
            LevyJumpSpec::new(5.0, MarkSampler::SphereShell { dim: 1, radius: 0.5 }).unwrap(),
            ConvexDomain::ball(dvector![0.0], 100.0).unwrap(),
            TimeGrid::uniform(1.0, 50).unwrap(),
            InitialSampler::Point(dvector![0.0]),
        )
        .unwrap();
        let out = simulate_particles(&spec, 32, 3, &SimOptions::default()).unwrap();
        // some particle must have moved (jumps arrive with prob ~1)
        assert!(out.final_states().iter().any(|x| x.norm() > 1e-6));
        // and the compensated mean stays near zero
        assert!(out.mean_path().sup_norm() < 0.5);
    }
}
