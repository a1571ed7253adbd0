//! Noise generation, coefficient registry, and empirical-measure utilities.
//!
//! Randomness is organized around a master seed and per-(particle, role)
//! substreams derived by splitmix64 key expansion, so coupled experiments can
//! reuse identical noise across different ensemble sizes and any particle's
//! stream is independent of how many other particles exist.
//!
//! Jumps follow a finite-activity compound Poisson driver with marks on a
//! compact set away from the origin; compensator integrals use quadrature
//! nodes frozen at configuration (exact for finite point-mass intensities).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::grid::TimeGrid;
use crate::numeric::{canonical_mean, unit_directions};
use crate::{Error, Point, Result};

/// Support sizes above this use the sliced approximation instead of the exact
/// assignment backend.
pub const W2_EXACT_CAP: usize = 512;
/// Fixed projection directions of the sliced backend.
pub const W2_SLICED_DIRECTIONS: usize = 64;

// ---------------------------------------------------------------------------
// noise driver
// ---------------------------------------------------------------------------

/// Substream roles; each (particle, role) pair gets its own generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseRole {
    Initial = 0,
    Brownian = 1,
    JumpTimes = 2,
    JumpMarks = 3,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic substream-keyed noise source on a fixed grid.
#[derive(Debug, Clone)]
pub struct NoiseDriver {
    seed: u64,
    grid: TimeGrid,
    brownian_dim: usize,
}

impl NoiseDriver {
    pub fn new(seed: u64, grid: TimeGrid, brownian_dim: usize) -> Self {
        Self { seed, grid, brownian_dim }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn brownian_dim(&self) -> usize {
        self.brownian_dim
    }

    /// Generator for one (particle, role) substream. Identical arguments give
    /// bitwise-identical streams.
    pub fn substream(&self, particle: u64, role: NoiseRole) -> ChaCha12Rng {
        let mut state = self
            .seed
            .wrapping_mul(0xA24B_AED4_963E_E407)
            .wrapping_add((particle.wrapping_mul(4).wrapping_add(role as u64)).wrapping_mul(0x9FB2_1C65_1E98_DF25))
            .wrapping_add(0x6A09_E667_F3BC_C909);
        let mut seed_bytes = [0u8; 32];
        for chunk in seed_bytes.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha12Rng::from_seed(seed_bytes)
    }

    /// Brownian increments of one particle over every grid step:
    /// independent centered Gaussians with covariance `dt_j * I`.
    pub fn brownian_increments(&self, particle: u64) -> Vec<Point> {
        let mut rng = self.substream(particle, NoiseRole::Brownian);
        (0..self.grid.steps())
            .map(|j| {
                let scale = self.grid.dt(j).sqrt();
                Point::from_iterator(
                    self.brownian_dim,
                    (0..self.brownian_dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)),
                )
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// jumps
// ---------------------------------------------------------------------------

/// Mark distribution on the compact support, away from the origin.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkSampler {
    /// Uniform over a finite point set.
    PointSet { points: Vec<Point> },
    /// Uniform over the centered sphere of the given radius.
    SphereShell { dim: usize, radius: f64 },
}

/// Finite-activity Levy jump specification: total intensity, mark sampler,
/// and frozen quadrature nodes for compensator integrals.
#[derive(Debug, Clone)]
pub struct LevyJumpSpec {
    intensity: f64,
    marks: MarkSampler,
    /// `(node, weight)` pairs with weights summing to one; the compensator of
    /// `beta` over a step is `dt * intensity * sum_q w_q beta(z_q)`.
    quadrature: Vec<(Point, f64)>,
}

impl LevyJumpSpec {
    pub fn new(intensity: f64, marks: MarkSampler) -> Result<Self> {
        if !(intensity >= 0.0) || !intensity.is_finite() {
            return Err(Error::InvalidConfig(format!("jump intensity must be >= 0, got {intensity}")));
        }
        let quadrature = match &marks {
            MarkSampler::PointSet { points } => {
                if points.is_empty() {
                    return Err(Error::InvalidConfig("mark point set must be nonempty".into()));
                }
                let dim = points[0].len();
                for p in points {
                    if p.len() != dim {
                        return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
                    }
                    if p.norm() == 0.0 {
                        return Err(Error::InvalidConfig("marks must be nonzero".into()));
                    }
                }
                let w = 1.0 / points.len() as f64;
                points.iter().map(|p| (p.clone(), w)).collect()
            }
            MarkSampler::SphereShell { dim, radius } => {
                if !(*radius > 0.0) || *dim == 0 {
                    return Err(Error::InvalidConfig("sphere shell needs radius > 0 and dim >= 1".into()));
                }
                // antipodal pairs cancel odd moments exactly
                let half = unit_directions(*dim, 16);
                let w = 1.0 / (2 * half.len()) as f64;
                let mut nodes = Vec::with_capacity(2 * half.len());
                for u in half {
                    nodes.push((u.scale(*radius), w));
                    nodes.push((u.scale(-*radius), w));
                }
                nodes
            }
        };
        Ok(Self { intensity, marks, quadrature })
    }

    /// Jump-free specification.
    pub fn none(dim: usize) -> Self {
        Self {
            intensity: 0.0,
            marks: MarkSampler::SphereShell { dim, radius: 1.0 },
            quadrature: Vec::new(),
        }
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn marks(&self) -> &MarkSampler {
        &self.marks
    }

    pub fn quadrature(&self) -> &[(Point, f64)] {
        &self.quadrature
    }

    pub fn dim(&self) -> usize {
        match &self.marks {
            MarkSampler::PointSet { points } => points[0].len(),
            MarkSampler::SphereShell { dim, .. } => *dim,
        }
    }

    /// Smallest and largest mark norms (the radius bounds of the support).
    pub fn support_radius_bounds(&self) -> (f64, f64) {
        match &self.marks {
            MarkSampler::PointSet { points } => points.iter().map(|p| p.norm()).fold(
                (f64::INFINITY, 0.0),
                |(lo, hi), n| (lo.min(n), hi.max(n)),
            ),
            MarkSampler::SphereShell { radius, .. } => (*radius, *radius),
        }
    }

    fn sample_mark(&self, rng: &mut ChaCha12Rng) -> Point {
        match &self.marks {
            MarkSampler::PointSet { points } => {
                let idx = rng.random_range(0..points.len());
                points[idx].clone()
            }
            MarkSampler::SphereShell { dim, radius } => {
                if *dim == 1 {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    Point::from_element(1, sign * radius)
                } else {
                    loop {
                        let g = Point::from_iterator(
                            *dim,
                            (0..*dim).map(|_| rng.sample::<f64, _>(StandardNormal)),
                        );
                        let n = g.norm();
                        if n > 1e-12 {
                            return g.scale(radius / n);
                        }
                    }
                }
            }
        }
    }

    /// Compound-Poisson stream of one particle on `[0, T]`: arrival times with
    /// rate `intensity` and i.i.d. marks.
    pub fn jump_stream(&self, driver: &NoiseDriver, particle: u64) -> Vec<(f64, Point)> {
        if self.intensity == 0.0 {
            return Vec::new();
        }
        let t_end = driver.grid().t_end();
        let mut times = driver.substream(particle, NoiseRole::JumpTimes);
        let mut marks = driver.substream(particle, NoiseRole::JumpMarks);
        let mut events = Vec::new();
        let mut t = 0.0;
        loop {
            let u: f64 = times.random();
            t += -(1.0 - u).ln() / self.intensity;
            if t > t_end {
                break;
            }
            events.push((t, self.sample_mark(&mut marks)));
        }
        events
    }
}

// ---------------------------------------------------------------------------
// coefficient registry
// ---------------------------------------------------------------------------

/// Drift built-ins. `b(t, x, mu, a)`; measure dependence is through the mean.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftKind {
    Zero,
    Constant(Point),
    /// `b = gain * x + offset`.
    Linear { gain: f64, offset: Point },
    /// `b = -kappa * (x - mean(mu))`.
    MeanFieldAttraction { kappa: f64 },
}

/// Diffusion built-ins, mapping an m-dim Brownian increment to state space
/// with m = d.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaKind {
    Zero,
    /// `sigma = value * I`.
    Scalar { value: f64 },
    /// `sigma_ii = base + slope * x_i` (diagonal, state-linear).
    DiagLinear { base: f64, slope: f64 },
}

/// Jump coefficient built-ins. `beta(t, x, mu, z)`.
#[derive(Debug, Clone, PartialEq)]
pub enum BetaKind {
    Zero,
    /// Constant vector per jump, independent of the mark.
    Constant(Point),
    /// `beta = gain * z`.
    LinearInZ { gain: f64 },
}

/// How an attached control enters the drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlCoupling {
    None,
    /// `b_total = b(t, x, mu) + a` with actions living in state space.
    AdditiveDrift,
}

/// Coefficient selection with declared Lipschitz/growth constants.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub drift: DriftKind,
    pub sigma: SigmaKind,
    pub beta: BetaKind,
    pub control: ControlCoupling,
    /// Declared joint Lipschitz constant in `|x - x'| + W2(mu, mu')`.
    pub lipschitz: f64,
    /// Declared linear-growth constant.
    pub growth: f64,
}

impl CoefficientSet {
    pub fn new(drift: DriftKind, sigma: SigmaKind, beta: BetaKind, control: ControlCoupling) -> Self {
        let lipschitz = Self::intrinsic_lipschitz(&drift, &sigma);
        let growth = lipschitz + 1.0;
        Self { drift, sigma, beta, control, lipschitz, growth }
    }

    fn intrinsic_lipschitz(drift: &DriftKind, sigma: &SigmaKind) -> f64 {
        let b = match drift {
            DriftKind::Zero | DriftKind::Constant(_) => 0.0,
            DriftKind::Linear { gain, .. } => gain.abs(),
            DriftKind::MeanFieldAttraction { kappa } => kappa.abs(),
        };
        let s = match sigma {
            SigmaKind::Zero | SigmaKind::Scalar { .. } => 0.0,
            SigmaKind::DiagLinear { slope, .. } => slope.abs(),
        };
        b + s
    }

    pub fn drift(&self, _t: f64, x: &Point, measure_mean: &Point, action: Option<&Point>) -> Point {
        let mut b = match &self.drift {
            DriftKind::Zero => Point::zeros(x.len()),
            DriftKind::Constant(c) => c.clone(),
            DriftKind::Linear { gain, offset } => x.scale(*gain) + offset,
            DriftKind::MeanFieldAttraction { kappa } => (measure_mean - x).scale(*kappa),
        };
        if let (ControlCoupling::AdditiveDrift, Some(a)) = (self.control, action) {
            b += a;
        }
        b
    }

    /// Apply the diffusion matrix to a Brownian increment.
    pub fn sigma_apply(&self, _t: f64, x: &Point, db: &Point) -> Point {
        match &self.sigma {
            SigmaKind::Zero => Point::zeros(x.len()),
            SigmaKind::Scalar { value } => db.scale(*value),
            SigmaKind::DiagLinear { base, slope } => Point::from_iterator(
                x.len(),
                x.iter().zip(db.iter()).map(|(&xi, &dbi)| (base + slope * xi) * dbi),
            ),
        }
    }

    pub fn beta(&self, _t: f64, x: &Point, _measure_mean: &Point, z: &Point) -> Point {
        match &self.beta {
            BetaKind::Zero => Point::zeros(x.len()),
            BetaKind::Constant(c) => c.clone(),
            BetaKind::LinearInZ { gain } => z.scale(*gain),
        }
    }

    /// Largest sampled ratio `|(b,sigma)(x,mu) - (b,sigma)(x',mu')| /
    /// (|x-x'| + W2(mu,mu'))` over a deterministic scatter of `pairs` pairs.
    pub fn audit_lipschitz(&self, dim: usize, pairs: usize) -> f64 {
        let mut worst = 0.0f64;
        let probe = Point::zeros(dim);
        for k in 0..pairs {
            let h = crate::numeric::halton(k + 1, 4 * dim);
            let x = Point::from_iterator(dim, (0..dim).map(|c| 4.0 * h[c] - 2.0));
            let x2 = Point::from_iterator(dim, (0..dim).map(|c| 4.0 * h[dim + c] - 2.0));
            let m1 = Point::from_iterator(dim, (0..dim).map(|c| 4.0 * h[2 * dim + c] - 2.0));
            let m2 = Point::from_iterator(dim, (0..dim).map(|c| 4.0 * h[3 * dim + c] - 2.0));
            // two-point measures with matched second points isolate the mean shift
            let mu1 = EmpiricalMeasure::new(vec![m1.clone(), probe.clone()]).unwrap();
            let mu2 = EmpiricalMeasure::new(vec![m2.clone(), probe.clone()]).unwrap();
            let w2 = wasserstein2(&mu1, &mu2).unwrap().value;
            let denom = (&x - &x2).norm() + w2;
            if denom < 1e-9 {
                continue;
            }
            let db = (self.drift(0.5, &x, mu1.mean(), None)
                - self.drift(0.5, &x2, mu2.mean(), None))
            .norm();
            let unit = Point::from_element(dim, 1.0 / (dim as f64).sqrt());
            let ds = (self.sigma_apply(0.5, &x, &unit) - self.sigma_apply(0.5, &x2, &unit)).norm();
            worst = worst.max((db + ds) / denom);
        }
        worst
    }
}

/// One-step compensated jump increment:
/// `sum_{jumps in step} beta(t, x, mu, z) - dt * intensity * sum_q w_q beta(t, x, mu, z_q)`.
pub fn compensated_jump_integral(
    spec: &LevyJumpSpec,
    coeffs: &CoefficientSet,
    t: f64,
    x: &Point,
    measure_mean: &Point,
    marks_in_step: &[Point],
    dt: f64,
) -> Point {
    let mut incr = Point::zeros(x.len());
    for z in marks_in_step {
        incr += coeffs.beta(t, x, measure_mean, z);
    }
    if spec.intensity() > 0.0 {
        let scale = dt * spec.intensity();
        for (node, weight) in spec.quadrature() {
            incr -= coeffs.beta(t, x, measure_mean, node).scale(scale * weight);
        }
    }
    incr
}

// ---------------------------------------------------------------------------
// empirical measures and Wasserstein-2
// ---------------------------------------------------------------------------

/// Uniform empirical measure on `N` support points, with a cached
/// permutation-invariant mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<Point>,
    mean: Point,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidConfig("empirical measure needs support points".into()));
        }
        let dim = points[0].len();
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidConfig("empirical measure has non-finite support".into()));
            }
        }
        let mut scratch = Vec::with_capacity(points.len());
        let mut mean = Point::zeros(dim);
        canonical_mean(&points, &mut scratch, &mut mean);
        Ok(Self { points, mean })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn mean(&self) -> &Point {
        &self.mean
    }
}

/// Wasserstein-2 value plus a flag for the approximate sliced backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Estimate {
    pub value: f64,
    pub exact: bool,
}

/// Wasserstein-2 distance between equal-size empirical measures.
///
/// d=1 sorts and pairs (exact); d>=2 up to [`W2_EXACT_CAP`] solves the optimal
/// assignment on squared Euclidean cost (exact); larger supports fall back to
/// a sliced estimate over [`W2_SLICED_DIRECTIONS`] fixed directions, flagged
/// as approximate.
pub fn wasserstein2(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<W2Estimate> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    if a.len() != b.len() {
        return Err(Error::InvalidConfig(format!(
            "wasserstein2 needs equal support sizes, got {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if a.dim() == 1 {
        let mut xs: Vec<f64> = a.points().iter().map(|p| p[0]).collect();
        let mut ys: Vec<f64> = b.points().iter().map(|p| p[0]).collect();
        xs.sort_unstable_by(f64::total_cmp);
        ys.sort_unstable_by(f64::total_cmp);
        let sq = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n as f64;
        return Ok(W2Estimate { value: sq.sqrt(), exact: true });
    }
    if n <= W2_EXACT_CAP {
        let cost: Vec<Vec<f64>> = a
            .points()
            .iter()
            .map(|p| b.points().iter().map(|q| (p - q).norm_squared()).collect())
            .collect();
        let (_, total) = min_cost_assignment(&cost);
        return Ok(W2Estimate { value: (total / n as f64).sqrt(), exact: true });
    }
    // sliced fallback: average the squared 1-D distances of fixed projections
    let dirs = unit_directions(a.dim(), W2_SLICED_DIRECTIONS);
    let mut acc = 0.0;
    let mut xs = vec![0.0f64; n];
    let mut ys = vec![0.0f64; n];
    for dir in &dirs {
        for (i, p) in a.points().iter().enumerate() {
            xs[i] = dir.dot(p);
        }
        for (i, q) in b.points().iter().enumerate() {
            ys[i] = dir.dot(q);
        }
        xs.sort_unstable_by(f64::total_cmp);
        ys.sort_unstable_by(f64::total_cmp);
        acc += xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n as f64;
    }
    Ok(W2Estimate { value: (acc / dirs.len() as f64).sqrt(), exact: false })
}

/// Exact minimum-cost assignment (Jonker-Volgenant shortest augmenting
/// paths). Returns the column assigned to each row and the total cost.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    assert!(n > 0 && cost.iter().all(|row| row.len() == n));
    let inf = f64::INFINITY;
    // potentials and assignment use 1-based columns; index 0 is the virtual root
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut assigned_row = vec![0usize; n + 1]; // row occupying each column
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        assigned_row[0] = row;
        let mut j0 = 0usize;
        let mut min_v = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < min_v[j] {
                        min_v[j] = cur;
                        way[j] = j0;
                    }
                    if min_v[j] < delta {
                        delta = min_v[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0usize; n];
    let mut total = 0.0;
    for j in 1..=n {
        if assigned_row[j] > 0 {
            result[assigned_row[j] - 1] = j - 1;
            total += cost[assigned_row[j] - 1][j - 1];
        }
    }
    (result, total)
}
