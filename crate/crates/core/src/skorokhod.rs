//! Discrete solvers for the Skorokhod problem in a time-dependent convex
//! domain and for the mean-reflection problem, plus minimality, variation,
//! and stability diagnostics.
//!
//! The scheme is the classical recursive projection: starting from a feasible
//! point, each step adds the input increment and projects back onto the
//! current domain. The mean-reflection problem reduces to this solver through
//! the change of variables `zbar = l^T ybar` on `D_t = Phi_t^{-1}(D)`, and the
//! reflection transforms back as `k = (l^T)^{-1} kbar`.
//!
//! Discrete Stieltjes sums evaluate the integrand at the node carrying the
//! increment, which keeps the projection variational inequality exact
//! termwise.

use crate::constraint_map::TimeDomainFamily;
use crate::geometry::ConvexDomain;
use crate::grid::GridPath;
use crate::{Error, Point, Result};

/// The deterministic reflection path: cumulative values, per-step increments,
/// per-component-sum variation, and activity data.
#[derive(Debug, Clone)]
pub struct ReflectionLedger {
    k: GridPath,
    increments: Vec<Point>,
    /// `|k|_{t_j} = sum_i |k^i|_{t_j}`, accumulated as l1 norms of increments.
    variation: Vec<f64>,
    /// Euclidean unit directions of nonzero increments.
    directions: Vec<Option<Point>>,
    active: Vec<bool>,
}

impl ReflectionLedger {
    /// Build the ledger from per-node increments (`increments[0]` is the
    /// initial correction, zero in the deterministic solver).
    pub fn from_increments(increments: Vec<Point>) -> Self {
        let dim = increments[0].len();
        let mut k_values = Vec::with_capacity(increments.len());
        let mut variation = Vec::with_capacity(increments.len());
        let mut directions = Vec::with_capacity(increments.len());
        let mut active = Vec::with_capacity(increments.len());
        let mut running = Point::zeros(dim);
        let mut var = 0.0;
        for inc in &increments {
            running += inc;
            var += inc.iter().map(|c| c.abs()).sum::<f64>();
            k_values.push(running.clone());
            variation.push(var);
            let norm = inc.norm();
            if norm > 0.0 {
                directions.push(Some(inc / norm));
                active.push(true);
            } else {
                directions.push(None);
                active.push(false);
            }
        }
        Self {
            k: GridPath::new(k_values).expect("ledger path"),
            increments,
            variation,
            directions,
            active,
        }
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.increments[0].len()
    }

    /// Cumulative reflection path `k`.
    pub fn k(&self) -> &GridPath {
        &self.k
    }

    pub fn k_at(&self, node: usize) -> &Point {
        self.k.at(node)
    }

    pub fn increment(&self, node: usize) -> &Point {
        &self.increments[node]
    }

    /// `|k|_{t_j}` (per-component total variation accumulated on the grid).
    pub fn variation_at(&self, node: usize) -> f64 {
        self.variation[node]
    }

    pub fn variation_total(&self) -> f64 {
        *self.variation.last().unwrap()
    }

    pub fn direction(&self, node: usize) -> Option<&Point> {
        self.directions[node].as_ref()
    }

    pub fn is_active(&self, node: usize) -> bool {
        self.active[node]
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Map every increment through a linear transform, producing the ledger of
    /// the transformed reflection.
    pub fn map_increments(&self, f: impl Fn(&Point) -> Point) -> Self {
        Self::from_increments(self.increments.iter().map(f).collect())
    }
}

/// Output of [`solve_mean_reflection`]: the reflection ledger together with
/// the constrained mean path and its `phi`-image (which lives in the base
/// domain).
#[derive(Debug, Clone)]
pub struct MeanReflectionSolution {
    pub ledger: ReflectionLedger,
    /// `ybar + k` on the grid.
    pub constrained_mean: GridPath,
    /// `phi_t(ybar_t + k_t)`, inside the base domain within projection
    /// tolerance at every node.
    pub mean_phi: GridPath,
}

/// Recursive-projection solution of the Skorokhod problem in the
/// time-dependent family: `x_0 = y_0`, then
/// `x_j = project(D_{t_j}, x_{j-1} + (y_j - y_{j-1}))` and `k = x - y`.
///
/// Requires `y_0` inside `D_0` within the projector tolerance.
pub fn solve_time_dependent(
    family: &TimeDomainFamily,
    y: &GridPath,
) -> Result<(GridPath, ReflectionLedger)> {
    let grid = family.grid();
    if y.len() != grid.len() {
        return Err(Error::InvalidConfig(format!(
            "input path has {} nodes, grid has {}",
            y.len(),
            grid.len()
        )));
    }
    if y.dim() != family.map().dim() {
        return Err(Error::DimensionMismatch { expected: family.map().dim(), got: y.dim() });
    }
    let tol = family.domain().projector_tol();
    let initial_gap = family.distance(0, y.at(0))?;
    if initial_gap > tol {
        return Err(Error::InitialConditionViolated { violation: initial_gap, tol });
    }

    let dim = y.dim();
    let mut x_values = Vec::with_capacity(y.len());
    let mut increments = Vec::with_capacity(y.len());
    x_values.push(y.at(0).clone());
    increments.push(Point::zeros(dim));
    for j in 1..y.len() {
        let pre = &x_values[j - 1] + (y.at(j) - y.at(j - 1));
        let projected = family.project(j, &pre)?;
        increments.push(&projected - &pre);
        x_values.push(projected);
    }
    Ok((GridPath::new(x_values)?, ReflectionLedger::from_increments(increments)))
}

/// Solve the mean-reflection problem for the deterministic mean path `ybar`:
/// transform by `l^T`, solve the time-dependent problem on
/// `D_t = Phi_t^{-1}(D)`, and transform the reflection back by `(l^T)^{-1}`.
pub fn solve_mean_reflection(
    family: &TimeDomainFamily,
    ybar: &GridPath,
) -> Result<MeanReflectionSolution> {
    let map = family.map();
    if ybar.dim() != map.dim() {
        return Err(Error::DimensionMismatch { expected: map.dim(), got: ybar.dim() });
    }
    let tol = family.domain().projector_tol();
    let phi0 = map.phi(0, ybar.at(0));
    let gap0 = family.domain().distance(&phi0);
    if gap0 > tol {
        return Err(Error::InitialConditionViolated { violation: gap0, tol });
    }
    let zbar = GridPath::new(ybar.values().iter().map(|p| map.to_transformed(p)).collect())?;
    let (_, ledger_bar) = solve_time_dependent(family, &zbar)?;
    let ledger = ledger_bar.map_increments(|inc| map.from_transformed(inc));
    let constrained: Vec<Point> = ybar
        .values()
        .iter()
        .zip(ledger.k().values())
        .map(|(y, k)| y + k)
        .collect();
    let mean_phi: Vec<Point> = constrained
        .iter()
        .enumerate()
        .map(|(j, m)| map.phi(j, m))
        .collect();
    Ok(MeanReflectionSolution {
        ledger,
        constrained_mean: GridPath::new(constrained)?,
        mean_phi: GridPath::new(mean_phi)?,
    })
}

/// Largest discrete minimality violation: the maximum over probes `z` and
/// grid times `t` of `sum_{t_j <= t} <mean_phi_j - z, dK_j>`. Nonpositive (up
/// to tolerance) for a valid reflection.
pub fn check_minimality(
    mean_phi: &GridPath,
    ledger: &ReflectionLedger,
    probes: &[Point],
) -> f64 {
    assert_eq!(mean_phi.len(), ledger.len());
    let mut worst = f64::NEG_INFINITY;
    for z in probes {
        let mut partial = 0.0;
        for j in 0..ledger.len() {
            if ledger.is_active(j) {
                partial += (mean_phi.at(j) - z).dot(ledger.increment(j));
            }
            worst = worst.max(partial);
        }
    }
    worst
}

/// The two sides of the variation estimate
/// `|k|_T <= C (sup_s |E(Y_s)|^2 + 1)`: the constant is non-constructive, so
/// callers track the ratio across scalings instead of asserting a bound.
#[derive(Debug, Clone, Copy)]
pub struct VariationBound {
    pub variation_total: f64,
    /// `sup_j |ybar_j|^2 + 1`.
    pub bound_term: f64,
    pub ratio: f64,
}

pub fn variation_bound_report(ledger: &ReflectionLedger, ybar: &GridPath) -> VariationBound {
    let variation_total = ledger.variation_total();
    let bound_term = ybar.sup_norm().powi(2) + 1.0;
    VariationBound { variation_total, bound_term, ratio: variation_total / bound_term }
}

/// Both sides of the discrete stability inequality
/// `|k_t - ktilde_t|^2 <= 2 (|y_t - ytilde_t|^2
///     + sup_{s<=t} d_H(D_s, Dtilde_s) (|k|_t + |ktilde|_t)
///     + int_0^t <y_t - y_s + ytilde_s - ytilde_t, d(k - ktilde)_s>)`,
/// evaluated at the node where the left side peaks.
#[derive(Debug, Clone, Copy)]
pub struct StabilityGap {
    /// `max_j |k_j - ktilde_j|^2`.
    pub lhs: f64,
    /// Sum of the three right-hand terms (without the constant 2).
    pub rhs: f64,
    /// Node attaining the left side.
    pub argmax_node: usize,
    pub hausdorff_sup: f64,
    pub mesh_resolution: f64,
}

/// Solve both problems and report the stability inequality sides. The
/// Hausdorff supremum between the families is mesh-estimated with `mesh`
/// boundary points per node and cached over repeated offset values.
pub fn stability_gap(
    family: &TimeDomainFamily,
    y: &GridPath,
    family_tilde: &TimeDomainFamily,
    y_tilde: &GridPath,
    mesh: usize,
) -> Result<StabilityGap> {
    if family.grid() != family_tilde.grid() {
        return Err(Error::InvalidConfig("stability_gap needs a shared grid".into()));
    }
    let (_, ledger) = solve_time_dependent(family, y)?;
    let (_, ledger_tilde) = solve_time_dependent(family_tilde, y_tilde)?;

    let mut lhs = f64::NEG_INFINITY;
    let mut argmax = 0;
    for j in 0..ledger.len() {
        let gap = (ledger.k_at(j) - ledger_tilde.k_at(j)).norm_squared();
        if gap > lhs {
            lhs = gap;
            argmax = j;
        }
    }

    // sup_{s <= argmax} d_H(D_s, Dtilde_s), mesh-based, deduplicated over
    // repeated (v_s, vtilde_s) pairs since the domains only move with v.
    let mut hausdorff_sup = 0.0f64;
    let mut resolution = 0.0f64;
    let mut seen: Vec<(Point, Point)> = Vec::new();
    let same_shape =
        family.domain() == family_tilde.domain() && family.map().l() == family_tilde.map().l();
    for s in 0..=argmax {
        // identical families at a node have d_H = 0, no mesh needed (and the
        // mesh does not exist for unbounded variants)
        if same_shape && family.map().v_at(s) == family_tilde.map().v_at(s) {
            continue;
        }
        let key = (family.map().v_at(s).clone(), family_tilde.map().v_at(s).clone());
        if seen.iter().any(|(a, b)| a == &key.0 && b == &key.1) {
            continue;
        }
        let mesh_a = family.boundary_mesh(s, mesh)?;
        let mesh_b = family_tilde.boundary_mesh(s, mesh)?;
        let mut dist = 0.0f64;
        for p in &mesh_a {
            dist = dist.max(family_tilde.distance(s, p)?);
        }
        for p in &mesh_b {
            dist = dist.max(family.distance(s, p)?);
        }
        hausdorff_sup = hausdorff_sup.max(dist);
        resolution = resolution
            .max(crate::geometry::mesh_resolution(&mesh_a))
            .max(crate::geometry::mesh_resolution(&mesh_b));
        seen.push(key);
    }

    let y_t = y.at(argmax);
    let yt_t = y_tilde.at(argmax);
    let mut integral = 0.0;
    for j in 0..=argmax {
        let weight = (y_t - y.at(j)) + (y_tilde.at(j) - yt_t);
        let dk = ledger.increment(j) - ledger_tilde.increment(j);
        integral += weight.dot(&dk);
    }

    let rhs = (y_t - yt_t).norm_squared()
        + hausdorff_sup * (ledger.variation_at(argmax) + ledger_tilde.variation_at(argmax))
        + integral;
    Ok(StabilityGap { lhs, rhs, argmax_node: argmax, hausdorff_sup, mesh_resolution: resolution })
}

/// Deterministic probe set for minimality checks: every vertex for polyhedral
/// domains plus mesh and interior points, at least `count` in total.
pub fn minimality_probes(domain: &ConvexDomain, count: usize) -> Vec<Point> {
    domain.probe_points(count)
}
