//! Strict and relaxed open-loop controls on a finite action set, the cost
//! functional with its reflection-weighted running term, the chattering
//! approximation, and a brute-force optimizer for desk-scale validation.
//!
//! Relaxed controls are deterministic grid measures: one probability vector
//! over the action set per step. A chattered strict control subdivides every
//! step into `n` sub-slots whose occupation fractions reproduce the weights
//! to within 1/n, interleaved so the switching scale shrinks like `dt/n`.

use crate::mckean::{simulate_particles, SimOptions, StorageMode, SystemSpec};
use crate::stochastic::wasserstein2;
use crate::{Error, Point, Result};

/// Finite action set in R^q.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    points: Vec<Point>,
}

impl ActionSet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidConfig("action set must be nonempty".into()));
        }
        let dim = points[0].len();
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            for q in &points[..i] {
                if (p - q).norm() == 0.0 {
                    return Err(Error::InvalidConfig("action set points must be distinct".into()));
                }
            }
        }
        Ok(Self { points })
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

    pub fn action(&self, idx: usize) -> &Point {
        &self.points[idx]
    }

    pub fn actions(&self) -> &[Point] {
        &self.points
    }
}

/// Piecewise-constant action index per grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct StrictControl {
    actions: ActionSet,
    /// One action index per step (grid nodes minus one).
    indices: Vec<usize>,
}

impl StrictControl {
    pub fn new(actions: ActionSet, indices: Vec<usize>) -> Result<Self> {
        if indices.iter().any(|&i| i >= actions.len()) {
            return Err(Error::InvalidConfig("strict control index out of range".into()));
        }
        Ok(Self { actions, indices })
    }

    pub fn constant(actions: ActionSet, idx: usize, steps: usize) -> Result<Self> {
        Self::new(actions, vec![idx; steps])
    }

    pub fn steps(&self) -> usize {
        self.indices.len()
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn index_at(&self, step: usize) -> usize {
        self.indices[step]
    }

    pub fn action_at(&self, step: usize) -> &Point {
        self.actions.action(self.indices[step])
    }
}

/// Probability weights over the action set per grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedControl {
    actions: ActionSet,
    /// `weights[step][action]`, each row summing to one.
    weights: Vec<Vec<f64>>,
}

/// Tolerance on each step's weight normalization.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

impl RelaxedControl {
    pub fn new(actions: ActionSet, weights: Vec<Vec<f64>>) -> Result<Self> {
        for row in &weights {
            if row.len() != actions.len() {
                return Err(Error::InvalidConfig("relaxed weights must cover the action set".into()));
            }
            if row.iter().any(|&w| !(w >= 0.0)) {
                return Err(Error::InvalidConfig("relaxed weights must be nonnegative".into()));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::InvalidConfig(format!(
                    "relaxed weights must sum to one (got {sum})"
                )));
            }
        }
        Ok(Self { actions, weights })
    }

    /// The same weight vector at every step.
    pub fn stationary(actions: ActionSet, weights: Vec<f64>, steps: usize) -> Result<Self> {
        Self::new(actions, vec![weights; steps])
    }

    pub fn steps(&self) -> usize {
        self.weights.len()
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn weights_at(&self, step: usize) -> &[f64] {
        &self.weights[step]
    }

    /// Expand to a sub-grid by repeating each step's weights.
    pub fn refine(&self, n: usize) -> Self {
        let weights = self
            .weights
            .iter()
            .flat_map(|row| std::iter::repeat_n(row.clone(), n))
            .collect();
        Self { actions: self.actions.clone(), weights }
    }
}

/// Control attached to a particle system, resolved per step during stepping.
#[derive(Debug, Clone, PartialEq)]
pub enum AttachedControl {
    Strict(StrictControl),
    Relaxed(RelaxedControl),
}

/// What the stepper sees at one step.
#[derive(Debug, Clone, Copy)]
pub enum StepControl<'a> {
    None,
    Action(&'a Point),
    Mixture(&'a ActionSet, &'a [f64]),
}

impl AttachedControl {
    pub fn steps(&self) -> usize {
        match self {
            Self::Strict(c) => c.steps(),
            Self::Relaxed(c) => c.steps(),
        }
    }

    pub fn at_step(&self, step: usize) -> StepControl<'_> {
        match self {
            Self::Strict(c) => StepControl::Action(c.action_at(step)),
            Self::Relaxed(c) => StepControl::Mixture(c.actions(), c.weights_at(step)),
        }
    }
}

// ---------------------------------------------------------------------------
// chattering
// ---------------------------------------------------------------------------

/// Largest-remainder rounding of `n * w` to integer occupation counts.
fn occupation_counts(weights: &[f64], n: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = weights.iter().map(|w| (w * n as f64).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = weights
        .iter()
        .enumerate()
        .map(|(a, w)| (a, w * n as f64 - counts[a] as f64))
        .collect();
    // largest remainder first; ties go to the lower action index
    remainders.sort_by(|(ia, ra), (ib, rb)| rb.partial_cmp(ra).unwrap().then(ia.cmp(ib)));
    for k in 0..n.saturating_sub(assigned) {
        counts[remainders[k % remainders.len()].0] += 1;
    }
    counts
}

/// Replace a relaxed control by a rapidly switching strict control on the
/// `n`-fold refined grid.
///
/// Each step is subdivided into `n` equal sub-slots; occupation counts come
/// from largest-remainder rounding of the weights, and slots are interleaved
/// by Bresenham scheduling (ties to the lower action index) so each action's
/// slots spread evenly across the step.
pub fn chatter(relaxed: &RelaxedControl, n: usize) -> StrictControl {
    assert!(n >= 1);
    let mut indices = Vec::with_capacity(relaxed.steps() * n);
    for step in 0..relaxed.steps() {
        let counts = occupation_counts(relaxed.weights_at(step), n);
        let mut used = vec![0usize; counts.len()];
        for _ in 0..n {
            // next scheduled position (used + 1/2) * n / count per action;
            // the smallest position fires first
            let mut best: Option<(f64, usize)> = None;
            for (a, &c) in counts.iter().enumerate() {
                if c == 0 || used[a] >= c {
                    continue;
                }
                let position = (used[a] as f64 + 0.5) * n as f64 / c as f64;
                if best.is_none_or(|(bp, ba)| position < bp || (position == bp && a < ba)) {
                    best = Some((position, a));
                }
            }
            let (_, a) = best.expect("counts sum to n");
            used[a] += 1;
            indices.push(a);
        }
    }
    StrictControl { actions: relaxed.actions().clone(), indices }
}

// ---------------------------------------------------------------------------
// cost functional
// ---------------------------------------------------------------------------

/// Running-cost built-ins `f(t, x, mu, a)`.
#[derive(Debug, Clone, PartialEq)]
pub enum RunningCostKind {
    Zero,
    /// `f = |a|^2`.
    ActionSquare,
    /// `f = |a - target|^2`.
    ActionGapSquare { target: Point },
    /// `f = |x|^2`.
    StateSquare,
    /// `f = |a|^2 + |x|^2`.
    ActionPlusStateSquare,
}

/// Reflection-cost built-ins `h(t, x, mu)` weighting `d|k|`.
#[derive(Debug, Clone, PartialEq)]
pub enum ReflectionCostKind {
    Zero,
    Constant(f64),
}

/// Terminal-cost built-ins `g(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalCostKind {
    Zero,
    /// `g = |x|^2`.
    Square,
}

/// Cost functional selection with declared Lipschitz constant for the audit.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub running: RunningCostKind,
    pub reflection: ReflectionCostKind,
    pub terminal: TerminalCostKind,
}

impl CostSpec {
    pub fn zero() -> Self {
        Self {
            running: RunningCostKind::Zero,
            reflection: ReflectionCostKind::Zero,
            terminal: TerminalCostKind::Zero,
        }
    }

    pub fn running(&self, _t: f64, x: &Point, _measure_mean: &Point, action: &Point) -> f64 {
        match &self.running {
            RunningCostKind::Zero => 0.0,
            RunningCostKind::ActionSquare => action.norm_squared(),
            RunningCostKind::ActionGapSquare { target } => (action - target).norm_squared(),
            RunningCostKind::StateSquare => x.norm_squared(),
            RunningCostKind::ActionPlusStateSquare => action.norm_squared() + x.norm_squared(),
        }
    }

    pub fn reflection(&self, _t: f64, _x: &Point, _measure_mean: &Point) -> f64 {
        match &self.reflection {
            ReflectionCostKind::Zero => 0.0,
            ReflectionCostKind::Constant(c) => *c,
        }
    }

    pub fn terminal(&self, x: &Point) -> f64 {
        match &self.terminal {
            TerminalCostKind::Zero => 0.0,
            TerminalCostKind::Square => x.norm_squared(),
        }
    }
}

/// Monte Carlo cost estimate across a seed batch.
#[derive(Debug, Clone, Copy)]
pub struct CostEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Evaluate the cost functional for one control by simulating the particle
/// system: per particle,
/// `sum_j sum_a w_{j,a} f(t_j, X_j, mu_j, a) dt + sum_j h(t_j, X_j, mu_j) d|K|_j + g(X_T)`,
/// averaged over particles, with the standard error taken across seeds.
pub fn evaluate_cost(
    spec: &SystemSpec,
    cost: &CostSpec,
    control: &AttachedControl,
    n_particles: usize,
    seeds: &[u64],
) -> Result<CostEstimate> {
    if control.steps() != spec.grid().steps() {
        return Err(Error::InvalidConfig(format!(
            "control has {} steps, system grid has {}",
            control.steps(),
            spec.grid().steps()
        )));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("evaluate_cost needs at least one seed".into()));
    }
    let mut spec = spec.clone();
    spec.control = Some(control.clone());
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let ensemble = simulate_particles(
            &spec,
            n_particles,
            seed,
            &SimOptions { storage: StorageMode::FullPaths, ..SimOptions::default() },
        )?;
        per_seed.push(cost_of_ensemble(&spec, cost, control, &ensemble));
    }
    let m = per_seed.len() as f64;
    let value = per_seed.iter().sum::<f64>() / m;
    let std_error = if per_seed.len() > 1 {
        let var = per_seed.iter().map(|v| (v - value) * (v - value)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    } else {
        0.0
    };
    Ok(CostEstimate { value, std_error })
}

fn cost_of_ensemble(
    spec: &SystemSpec,
    cost: &CostSpec,
    control: &AttachedControl,
    ensemble: &crate::mckean::ParticleEnsemble,
) -> f64 {
    let grid = spec.grid();
    let paths = ensemble.full_paths().expect("cost evaluation stores full paths");
    let ledger = ensemble.ledger();
    let n = ensemble.n_particles() as f64;
    let mut total = 0.0;
    for j in 0..grid.steps() {
        let t = grid.time(j);
        let dt = grid.dt(j);
        let mean = ensemble.mean_path().at(j);
        // running term, weighted over the step's action measure
        let mut step_cost = 0.0;
        match control.at_step(j) {
            StepControl::None => {}
            StepControl::Action(a) => {
                for x in &paths[j] {
                    step_cost += cost.running(t, x, mean, a);
                }
            }
            StepControl::Mixture(actions, weights) => {
                for x in &paths[j] {
                    for (idx, &w) in weights.iter().enumerate() {
                        if w > 0.0 {
                            step_cost += w * cost.running(t, x, mean, actions.action(idx));
                        }
                    }
                }
            }
        }
        total += step_cost * dt / n;
    }
    // reflection term: h against the shared variation increments (the node-0
    // increment covers the initial corrective shift)
    for j in 0..grid.len() {
        let dvar = ledger.increment(j).iter().map(|c| c.abs()).sum::<f64>();
        if dvar > 0.0 {
            let t = grid.time(j);
            let mean = ensemble.mean_path().at(j);
            let mut h_avg = 0.0;
            for x in &paths[j] {
                h_avg += cost.reflection(t, x, mean);
            }
            total += h_avg / n * dvar;
        }
    }
    let last = grid.len() - 1;
    let mut g_avg = 0.0;
    for x in &paths[last] {
        g_avg += cost.terminal(x);
    }
    total + g_avg / n
}

/// One row of the chattering study: the cost gap for one sub-slot count.
#[derive(Debug, Clone, Copy)]
pub struct ChatterGap {
    pub n: usize,
    pub strict_cost: f64,
    pub relaxed_cost: f64,
    pub gap: f64,
    pub std_error: f64,
}

/// Compare `J(u^n)` against `J(q)` for each `n` with common random numbers.
///
/// All simulations run on the master grid refined by `lcm(n_list)`, so every
/// control sees bitwise-identical noise and the gaps isolate the control
/// difference.
pub fn chattering_convergence(
    spec: &SystemSpec,
    cost: &CostSpec,
    relaxed: &RelaxedControl,
    n_list: &[usize],
    n_particles: usize,
    seeds: &[u64],
) -> Result<Vec<ChatterGap>> {
    if relaxed.steps() != spec.grid().steps() {
        return Err(Error::InvalidConfig("relaxed control must match the system grid".into()));
    }
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::InvalidConfig("chattering n list must be positive".into()));
    }
    let master = n_list.iter().copied().fold(1usize, lcm);
    let master_grid = spec.grid().refine(master);
    let master_spec = spec.with_grid(&master_grid)?;
    let relaxed_master = relaxed.refine(master);

    // per-seed relaxed costs once around on the master grid
    let mut relaxed_costs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        relaxed_costs.push(single_cost(
            &master_spec,
            cost,
            &AttachedControl::Relaxed(relaxed_master.clone()),
            n_particles,
            seed,
        )?);
    }
    let relaxed_mean = relaxed_costs.iter().sum::<f64>() / seeds.len() as f64;

    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let chattered = chatter(relaxed, n);
        // expand each sub-slot to master/n master slots
        let expansion = master / n;
        let indices: Vec<usize> = (0..chattered.steps())
            .flat_map(|s| std::iter::repeat_n(chattered.index_at(s), expansion))
            .collect();
        let strict_master = StrictControl::new(relaxed.actions().clone(), indices)?;
        let mut gaps = Vec::with_capacity(seeds.len());
        let mut strict_costs = Vec::with_capacity(seeds.len());
        for (k, &seed) in seeds.iter().enumerate() {
            let j_strict = single_cost(
                &master_spec,
                cost,
                &AttachedControl::Strict(strict_master.clone()),
                n_particles,
                seed,
            )?;
            strict_costs.push(j_strict);
            gaps.push((j_strict - relaxed_costs[k]).abs());
        }
        let m = gaps.len() as f64;
        let gap = gaps.iter().sum::<f64>() / m;
        let std_error = if gaps.len() > 1 {
            let var = gaps.iter().map(|v| (v - gap) * (v - gap)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        } else {
            0.0
        };
        rows.push(ChatterGap {
            n,
            strict_cost: strict_costs.iter().sum::<f64>() / m,
            relaxed_cost: relaxed_mean,
            gap,
            std_error,
        });
    }
    Ok(rows)
}

fn single_cost(
    spec: &SystemSpec,
    cost: &CostSpec,
    control: &AttachedControl,
    n_particles: usize,
    seed: u64,
) -> Result<f64> {
    let mut spec = spec.clone();
    spec.control = Some(control.clone());
    let ensemble = simulate_particles(
        &spec,
        n_particles,
        seed,
        &SimOptions { storage: StorageMode::FullPaths, ..SimOptions::default() },
    )?;
    Ok(cost_of_ensemble(&spec, cost, control, &ensemble))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Cap on the exhaustive search size `|actions|^cells`.
pub const BRUTE_FORCE_CAP: usize = 4096;

/// One evaluated candidate of the brute-force search.
#[derive(Debug, Clone)]
pub struct SearchRow {
    /// Action index per coarse cell.
    pub cells: Vec<usize>,
    pub cost: f64,
}

/// Exhaustively evaluate every piecewise-constant strict control on a coarse
/// cell partition with common random numbers; returns the argmin and the full
/// table.
pub fn brute_force_optimal(
    spec: &SystemSpec,
    cost: &CostSpec,
    actions: &ActionSet,
    cells: usize,
    n_particles: usize,
    seed: u64,
) -> Result<(StrictControl, Vec<SearchRow>)> {
    let steps = spec.grid().steps();
    if cells == 0 || cells > steps {
        return Err(Error::InvalidConfig("cell count must be in 1..=steps".into()));
    }
    let combos = actions.len().checked_pow(cells as u32).filter(|&c| c <= BRUTE_FORCE_CAP);
    let Some(combos) = combos else {
        return Err(Error::InvalidConfig(format!(
            "search space exceeds cap {BRUTE_FORCE_CAP}"
        )));
    };
    let mut table = Vec::with_capacity(combos);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for code in 0..combos {
        let mut cell_actions = Vec::with_capacity(cells);
        let mut rem = code;
        for _ in 0..cells {
            cell_actions.push(rem % actions.len());
            rem /= actions.len();
        }
        // spread cells over steps: cell c covers steps [c*steps/cells, (c+1)*steps/cells)
        let indices: Vec<usize> = (0..steps)
            .map(|s| cell_actions[s * cells / steps])
            .collect();
        let control = AttachedControl::Strict(StrictControl::new(actions.clone(), indices)?);
        let value = single_cost(spec, cost, &control, n_particles, seed)?;
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, cell_actions.clone()));
        }
        table.push(SearchRow { cells: cell_actions, cost: value });
    }
    let (_, cell_actions) = best.expect("at least one candidate");
    let indices: Vec<usize> = (0..steps).map(|s| cell_actions[s * cells / steps]).collect();
    Ok((StrictControl::new(actions.clone(), indices)?, table))
}

/// Gap between relaxed and chattered terminal laws under common noise; used
/// by studies that track pathwise convergence alongside the cost gap.
pub fn terminal_law_gap(
    spec: &SystemSpec,
    relaxed: &RelaxedControl,
    n: usize,
    n_particles: usize,
    seed: u64,
) -> Result<f64> {
    let master_grid = spec.grid().refine(n);
    let master_spec = spec.with_grid(&master_grid)?;
    let mut relaxed_spec = master_spec.clone();
    relaxed_spec.control = Some(AttachedControl::Relaxed(relaxed.refine(n)));
    let mut strict_spec = master_spec;
    strict_spec.control = Some(AttachedControl::Strict(chatter(relaxed, n)));
    let opts = SimOptions::default();
    let a = simulate_particles(&relaxed_spec, n_particles, seed, &opts)?;
    let b = simulate_particles(&strict_spec, n_particles, seed, &opts)?;
    Ok(wasserstein2(&a.terminal_measure()?, &b.terminal_measure()?)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn two_actions() -> ActionSet {
        ActionSet::new(vec![dvector![-1.0], dvector![1.0]]).unwrap()
    }

    #[test]
    fn relaxed_weights_validated() {
        let a = two_actions();
        assert!(RelaxedControl::stationary(a.clone(), vec![0.5, 0.5], 4).is_ok());
        assert!(RelaxedControl::stationary(a.clone(), vec![0.6, 0.5], 4).is_err());
        assert!(RelaxedControl::stationary(a, vec![-0.1, 1.1], 4).is_err());
    }

    #[test]
    fn chatter_point_mass_is_constant() {
        let a = two_actions();
        let relaxed = RelaxedControl::stationary(a, vec![0.0, 1.0], 3).unwrap();
        for n in [1usize, 2, 5] {
            let strict = chatter(&relaxed, n);
            assert_eq!(strict.steps(), 3 * n);
            assert!((0..strict.steps()).all(|s| strict.index_at(s) == 1));
        }
    }

    #[test]
    fn chatter_half_half_alternates() {
        let a = two_actions();
        let relaxed = RelaxedControl::stationary(a, vec![0.5, 0.5], 2).unwrap();
        let strict = chatter(&relaxed, 2);
        // per step: (a0, a1)
        assert_eq!(
            (0..4).map(|s| strict.index_at(s)).collect::<Vec<_>>(),
            vec![0, 1, 0, 1]
        );
        let strict4 = chatter(&relaxed, 4);
        assert_eq!(
            (0..4).map(|s| strict4.index_at(s)).collect::<Vec<_>>(),
            vec![0, 1, 0, 1],
            "n=4 interleaves rather than blocking"
        );
    }

    #[test]
    fn chatter_third_two_thirds_occupation() {
        let a = two_actions();
        let relaxed = RelaxedControl::stationary(a, vec![1.0 / 3.0, 2.0 / 3.0], 1).unwrap();
        let strict = chatter(&relaxed, 3);
        let counts = (0..3).fold([0usize; 2], |mut acc, s| {
            acc[strict.index_at(s)] += 1;
            acc
        });
        assert_eq!(counts, [1, 2]);
    }

    #[test]
    fn chattered_occupation_within_one_over_n() {
        let actions = ActionSet::new(vec![dvector![0.0], dvector![1.0], dvector![2.0]]).unwrap();
        let weights = vec![0.21, 0.33, 0.46];
        let relaxed = RelaxedControl::stationary(actions, weights.clone(), 5).unwrap();
        for n in [3usize, 7, 16] {
            let strict = chatter(&relaxed, n);
            for step in 0..5 {
                let mut counts = [0usize; 3];
                for slot in 0..n {
                    counts[strict.index_at(step * n + slot)] += 1;
                }
                for (a, &w) in weights.iter().enumerate() {
                    let occupation = counts[a] as f64 / n as f64;
                    assert!(
                        (occupation - w).abs() <= 1.0 / n as f64 + 1e-12,
                        "n={n} step={step} action={a}: occupation {occupation} vs weight {w}"
                    );
                }
            }
        }
    }

    #[test]
    fn occupation_counts_largest_remainder() {
        assert_eq!(occupation_counts(&[0.5, 0.5], 2), vec![1, 1]);
        assert_eq!(occupation_counts(&[1.0 / 3.0, 2.0 / 3.0], 3), vec![1, 2]);
        // tie on remainders goes to the lower index
        assert_eq!(occupation_counts(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(occupation_counts(&[0.25, 0.25, 0.5], 4), vec![1, 1, 2]);
    }

    mod costs {
        use super::*;
        use crate::geometry::ConvexDomain;
        use crate::grid::TimeGrid;
        use crate::mckean::{InitialSampler, SystemSpec};
        use crate::stochastic::{
            BetaKind, CoefficientSet, ControlCoupling, DriftKind, LevyJumpSpec, SigmaKind,
        };
        use approx::assert_relative_eq;

        /// d=1 system with control-additive drift on the halfline.
        fn controlled_spec(steps: usize, sigma: f64, coupling: ControlCoupling) -> SystemSpec {
            SystemSpec::with_identity_map(
                CoefficientSet::new(
                    DriftKind::Zero,
                    SigmaKind::Scalar { value: sigma },
                    BetaKind::Zero,
                    coupling,
                ),
                LevyJumpSpec::none(1),
                ConvexDomain::halfspace(dvector![-1.0], 0.0).unwrap(),
                TimeGrid::uniform(1.0, steps).unwrap(),
                InitialSampler::Point(dvector![0.0]),
            )
            .unwrap()
        }

        #[test]
        fn zero_cost_is_zero() {
            let spec = controlled_spec(10, 1.0, ControlCoupling::AdditiveDrift);
            let relaxed = AttachedControl::Relaxed(
                RelaxedControl::stationary(two_actions(), vec![0.5, 0.5], 10).unwrap(),
            );
            let est = evaluate_cost(&spec, &CostSpec::zero(), &relaxed, 16, &[1, 2]).unwrap();
            assert_eq!(est.value, 0.0);
            assert_eq!(est.std_error, 0.0);
        }

        #[test]
        fn action_square_running_term_is_exactly_t() {
            // f = a^2 on A = {-1, 1}: any weights average to 1, so the
            // running term equals T no matter what the paths do.
            let spec = controlled_spec(8, 1.0, ControlCoupling::AdditiveDrift);
            let cost = CostSpec {
                running: RunningCostKind::ActionSquare,
                reflection: ReflectionCostKind::Zero,
                terminal: TerminalCostKind::Zero,
            };
            let relaxed = AttachedControl::Relaxed(
                RelaxedControl::stationary(two_actions(), vec![0.5, 0.5], 8).unwrap(),
            );
            let est = evaluate_cost(&spec, &cost, &relaxed, 32, &[5]).unwrap();
            assert_relative_eq!(est.value, 1.0, epsilon = 1e-12);
        }

        #[test]
        fn reflection_cost_recovers_ledger_variation() {
            // h = 1, f = g = 0 on the halfline drift benchmark: J = |K|_T = T
            let spec = SystemSpec::with_identity_map(
                CoefficientSet::new(
                    DriftKind::Constant(dvector![-1.0]),
                    SigmaKind::Scalar { value: 1.0 },
                    BetaKind::Zero,
                    ControlCoupling::None,
                ),
                LevyJumpSpec::none(1),
                ConvexDomain::halfspace(dvector![-1.0], 0.0).unwrap(),
                TimeGrid::uniform(1.0, 100).unwrap(),
                InitialSampler::Point(dvector![0.0]),
            )
            .unwrap();
            let cost = CostSpec {
                running: RunningCostKind::Zero,
                reflection: ReflectionCostKind::Constant(1.0),
                terminal: TerminalCostKind::Zero,
            };
            let control = AttachedControl::Strict(
                StrictControl::constant(two_actions(), 0, 100).unwrap(),
            );
            let est = evaluate_cost(&spec, &cost, &control, 400, &[3]).unwrap();
            assert!((est.value - 1.0).abs() < 0.1, "J = {} should be near |K|_T = 1", est.value);
        }

        #[test]
        fn cost_affine_in_relaxed_weights_when_drift_control_free() {
            // decoupled dynamics: J((w, 1-w)) is affine in w, so the midpoint
            // matches the average exactly
            let spec = controlled_spec(6, 0.7, ControlCoupling::None);
            let cost = CostSpec {
                running: RunningCostKind::ActionGapSquare { target: dvector![0.25] },
                reflection: ReflectionCostKind::Zero,
                terminal: TerminalCostKind::Zero,
            };
            let eval = |w: f64| {
                let relaxed = AttachedControl::Relaxed(
                    RelaxedControl::stationary(two_actions(), vec![w, 1.0 - w], 6).unwrap(),
                );
                evaluate_cost(&spec, &cost, &relaxed, 24, &[9]).unwrap().value
            };
            let (j0, j1, jmid) = (eval(1.0), eval(0.0), eval(0.5));
            assert_relative_eq!(jmid, 0.5 * (j0 + j1), epsilon = 1e-12);
        }

        #[test]
        fn chattering_gap_zero_when_control_cannot_act() {
            // with control-free dynamics and action-only costs, the chattered
            // and relaxed evaluations see bitwise-identical paths, so gaps
            // reflect only the occupation rounding (zero for exact weights)
            let spec = controlled_spec(4, 1.0, ControlCoupling::None);
            let cost = CostSpec {
                running: RunningCostKind::ActionSquare,
                reflection: ReflectionCostKind::Zero,
                terminal: TerminalCostKind::Zero,
            };
            let relaxed = RelaxedControl::stationary(two_actions(), vec![0.5, 0.5], 4).unwrap();
            let rows =
                chattering_convergence(&spec, &cost, &relaxed, &[2, 4], 16, &[1, 2]).unwrap();
            for row in rows {
                assert!(row.gap.abs() < 1e-12, "gap {} at n={}", row.gap, row.n);
            }
        }

        #[test]
        fn chattering_gap_decreases_with_n() {
            // two-action drift benchmark with a state-sensitive cost: the
            // sawtooth deviation of the chattered path shrinks like dt/n
            let spec = controlled_spec(10, 1.0, ControlCoupling::AdditiveDrift);
            let cost = CostSpec {
                running: RunningCostKind::ActionPlusStateSquare,
                reflection: ReflectionCostKind::Zero,
                terminal: TerminalCostKind::Zero,
            };
            let relaxed = RelaxedControl::stationary(two_actions(), vec![0.5, 0.5], 10).unwrap();
            let rows =
                chattering_convergence(&spec, &cost, &relaxed, &[2, 8], 128, &[1, 2, 3]).unwrap();
            assert!(
                rows[1].gap < rows[0].gap,
                "gap should shrink: n=2 -> {}, n=8 -> {}",
                rows[0].gap,
                rows[1].gap
            );
        }

        #[test]
        fn brute_force_separable_cost_picks_target_action() {
            let spec = controlled_spec(6, 0.5, ControlCoupling::None);
            let actions =
                ActionSet::new(vec![dvector![-1.0], dvector![0.5], dvector![1.0]]).unwrap();
            let cost = CostSpec {
                running: RunningCostKind::ActionGapSquare { target: dvector![0.5] },
                reflection: ReflectionCostKind::Zero,
                terminal: TerminalCostKind::Zero,
            };
            let (best, table) =
                brute_force_optimal(&spec, &cost, &actions, 3, 8, 7).unwrap();
            assert_eq!(table.len(), 27);
            for s in 0..best.steps() {
                assert_eq!(best.index_at(s), 1, "cell covering step {s} should pick 0.5");
            }
        }

        #[test]
        fn single_cell_two_actions_matches_direct_comparison() {
            let spec = controlled_spec(4, 0.8, ControlCoupling::AdditiveDrift);
            let cost = CostSpec {
                running: RunningCostKind::Zero,
                reflection: ReflectionCostKind::Zero,
                terminal: TerminalCostKind::Square,
            };
            let actions = two_actions();
            let (best, table) = brute_force_optimal(&spec, &cost, &actions, 1, 32, 11).unwrap();
            assert_eq!(table.len(), 2);
            let direct: Vec<f64> = (0..2)
                .map(|idx| {
                    let c = AttachedControl::Strict(
                        StrictControl::constant(actions.clone(), idx, 4).unwrap(),
                    );
                    evaluate_cost(&spec, &cost, &c, 32, &[11]).unwrap().value
                })
                .collect();
            let best_direct = if direct[0] <= direct[1] { 0 } else { 1 };
            assert_eq!(best.index_at(0), best_direct);
        }

        #[test]
        fn relaxed_mixture_beats_strict_when_image_nonconvex() {
            // b = a, f = a^2 on A = {-1, 1}: the (b, f)-image is two points
            // (non-convex). With g = x^2 and no noise, J(strict) = 1 + 1 = 2
            // while the symmetric mixture drives X to 0: J = 1 + 0.
            let spec = SystemSpec::with_identity_map(
                CoefficientSet::new(
                    DriftKind::Zero,
                    SigmaKind::Zero,
                    BetaKind::Zero,
                    ControlCoupling::AdditiveDrift,
                ),
                LevyJumpSpec::none(1),
                ConvexDomain::ball(dvector![0.0], 1e6).unwrap(),
                TimeGrid::uniform(1.0, 8).unwrap(),
                InitialSampler::Point(dvector![0.0]),
            )
            .unwrap();
            let cost = CostSpec {
                running: RunningCostKind::ActionSquare,
                reflection: ReflectionCostKind::Zero,
                terminal: TerminalCostKind::Square,
            };
            let actions = two_actions();
            let mut best_strict = f64::INFINITY;
            for idx in 0..2 {
                let c = AttachedControl::Strict(
                    StrictControl::constant(actions.clone(), idx, 8).unwrap(),
                );
                best_strict =
                    best_strict.min(evaluate_cost(&spec, &cost, &c, 4, &[1]).unwrap().value);
            }
            let mut best_relaxed = f64::INFINITY;
            for k in 0..=4 {
                let w = k as f64 / 4.0;
                let c = AttachedControl::Relaxed(
                    RelaxedControl::stationary(actions.clone(), vec![w, 1.0 - w], 8).unwrap(),
                );
                best_relaxed =
                    best_relaxed.min(evaluate_cost(&spec, &cost, &c, 4, &[1]).unwrap().value);
            }
            assert_relative_eq!(best_strict, 2.0, epsilon = 1e-10);
            assert_relative_eq!(best_relaxed, 1.0, epsilon = 1e-10);
            assert!(best_relaxed < best_strict);
        }
    }
}
