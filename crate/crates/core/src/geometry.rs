//! Closed convex domains of R^d with projection, membership, distance,
//! normal-cone certification, and mesh-based Hausdorff distance.
//!
//! Four variants cover the experiment surface: balls, axis boxes, halfspace
//! intersections (polytopes) with a declared interior point, and single
//! halfspaces for unbounded constraints. Ball/box/halfspace projections are
//! closed-form; polytopes go through Dykstra's alternating projections.
//! Boundary meshes are deterministic and seedless so geometric diagnostics
//! reproduce exactly.

use nalgebra::{DMatrix, DVector};

use crate::numeric::unit_directions;
use crate::{Error, Point, Result};

/// Iteration cap for Dykstra's alternating projections.
pub const DYKSTRA_MAX_SWEEPS: usize = 10_000;
/// Stop Dykstra when a full sweep moves the iterate by less than this.
pub const DYKSTRA_STOP: f64 = 1e-10;
/// Required strict margin of a polytope's declared interior point.
pub const SLATER_MARGIN: f64 = 1e-9;

/// A closed convex subset of R^d with nonempty interior.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexDomain {
    Ball {
        center: Point,
        radius: f64,
    },
    Box {
        lower: Point,
        upper: Point,
    },
    /// Intersection of halfspaces `{x : <normals[i], x> <= offsets[i]}` with a
    /// declared strictly interior (Slater) point.
    Polytope {
        normals: Vec<Point>,
        offsets: Vec<f64>,
        interior: Point,
    },
    /// Single halfspace `{x : <normal, x> <= offset}`; unbounded.
    Halfspace {
        normal: Point,
        offset: f64,
    },
}

/// Certified inward normal direction at a boundary point.
///
/// Acceptance means `<x - y, eta> <= tol` held for every probe `y` in the
/// domain, the pointwise form of the normal-cone inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalCertificate {
    pub point: Point,
    pub direction: Point,
    pub tol: f64,
}

/// Witness that a direction is not an inward normal: a domain point `witness`
/// with `<x - witness, eta> = violation > tol`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalRejection {
    pub witness: Point,
    pub violation: f64,
}

/// Mesh-based two-sided Hausdorff estimate.
///
/// `value` underestimates the true distance by at most `resolution`, the
/// covering radius surrogate of the boundary meshes used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HausdorffEstimate {
    pub value: f64,
    pub resolution: f64,
}

impl ConvexDomain {
    pub fn ball(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidDomain(format!("ball radius must be positive, got {radius}")));
        }
        if center.is_empty() || !center.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidDomain("ball center must be finite and nonempty".into()));
        }
        Ok(Self::Ball { center, radius })
    }

    pub fn axis_box(lower: Point, upper: Point) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidDomain("box corners must share a nonzero dimension".into()));
        }
        if !lower.iter().zip(upper.iter()).all(|(l, u)| l.is_finite() && u.is_finite() && l < u) {
            return Err(Error::InvalidDomain("box needs lower < upper componentwise".into()));
        }
        Ok(Self::Box { lower, upper })
    }

    pub fn polytope(normals: Vec<Point>, offsets: Vec<f64>, interior: Point) -> Result<Self> {
        if normals.is_empty() || normals.len() != offsets.len() {
            return Err(Error::InvalidDomain("polytope needs matching normals and offsets".into()));
        }
        let dim = interior.len();
        for (a, &b) in normals.iter().zip(&offsets) {
            if a.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: a.len() });
            }
            let norm = a.norm();
            if !(norm > 0.0) || !b.is_finite() {
                return Err(Error::InvalidDomain("polytope normal must be nonzero, offset finite".into()));
            }
            if (b - interior.dot(a)) / norm < SLATER_MARGIN {
                return Err(Error::InvalidDomain(format!(
                    "declared interior point violates Slater margin {SLATER_MARGIN:.1e} on a constraint"
                )));
            }
        }
        Ok(Self::Polytope { normals, offsets, interior })
    }

    pub fn halfspace(normal: Point, offset: f64) -> Result<Self> {
        if !(normal.norm() > 0.0) || !offset.is_finite() {
            return Err(Error::InvalidDomain("halfspace needs a nonzero normal and finite offset".into()));
        }
        Ok(Self::Halfspace { normal, offset })
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        match self {
            Self::Ball { center, .. } => center.len(),
            Self::Box { lower, .. } => lower.len(),
            Self::Polytope { interior, .. } => interior.len(),
            Self::Halfspace { normal, .. } => normal.len(),
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, Self::Halfspace { .. })
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Self::Ball { .. } => "ball",
            Self::Box { .. } => "box",
            Self::Polytope { .. } => "polytope",
            Self::Halfspace { .. } => "halfspace",
        }
    }

    /// Projection accuracy the backend guarantees for this variant.
    pub fn projector_tol(&self) -> f64 {
        match self {
            // Dykstra stops on iterate stagnation, not constraint residual.
            Self::Polytope { .. } => 1e-6,
            _ => 1e-8,
        }
    }

    /// A point strictly inside the domain.
    pub fn slater_point(&self) -> Point {
        match self {
            Self::Ball { center, .. } => center.clone(),
            Self::Box { lower, upper } => (lower + upper) * 0.5,
            Self::Polytope { interior, .. } => interior.clone(),
            Self::Halfspace { normal, offset } => {
                normal * ((offset - 1.0) / normal.norm_squared())
            }
        }
    }

    /// Exact closed-form membership (no tolerance band).
    pub fn contains_exact(&self, x: &Point) -> bool {
        match self {
            Self::Ball { center, radius } => (x - center).norm() <= *radius,
            Self::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(&v, (&l, &u))| l <= v && v <= u),
            Self::Polytope { normals, offsets, .. } => normals
                .iter()
                .zip(offsets)
                .all(|(a, &b)| a.dot(x) <= b),
            Self::Halfspace { normal, offset } => normal.dot(x) <= *offset,
        }
    }

    /// True iff `distance(x) <= tol`.
    pub fn contains(&self, x: &Point, tol: f64) -> bool {
        debug_assert!(tol >= 0.0);
        self.distance(x) <= tol
    }

    /// Euclidean distance `inf_{y in D} |x - y|`; zero iff `x` is a member.
    pub fn distance(&self, x: &Point) -> f64 {
        match self {
            Self::Ball { center, radius } => ((x - center).norm() - radius).max(0.0),
            Self::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .map(|(&v, (&l, &u))| (l - v).max(v - u).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt(),
            Self::Polytope { .. } => {
                if self.contains_exact(x) {
                    0.0
                } else {
                    // Dykstra converges here; treat failure as unreachable for
                    // validated polytopes.
                    (x - self.project(x).expect("polytope projection")).norm()
                }
            }
            Self::Halfspace { normal, offset } => {
                ((normal.dot(x) - offset) / normal.norm()).max(0.0)
            }
        }
    }

    /// Metric projection onto the domain. Members project to themselves
    /// exactly; the polytope backend can fail to converge.
    pub fn project(&self, x: &Point) -> Result<Point> {
        if self.contains_exact(x) {
            return Ok(x.clone());
        }
        match self {
            Self::Ball { center, radius } => {
                let gap = x - center;
                Ok(center + gap.scale(radius / gap.norm()))
            }
            Self::Box { lower, upper } => Ok(Point::from_iterator(
                x.len(),
                x.iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .map(|(&v, (&l, &u))| v.clamp(l, u)),
            )),
            Self::Polytope { normals, offsets, .. } => {
                let halfspaces: Vec<(Point, f64)> =
                    normals.iter().cloned().zip(offsets.iter().copied()).collect();
                project_onto_halfspaces(&halfspaces, x)
            }
            Self::Halfspace { normal, offset } => {
                Ok(x - normal.scale((normal.dot(x) - offset) / normal.norm_squared()))
            }
        }
    }

    /// Distance from `x` to the boundary of the domain (from either side).
    pub fn boundary_distance(&self, x: &Point) -> f64 {
        match self {
            Self::Ball { center, radius } => ((x - center).norm() - radius).abs(),
            Self::Box { lower, upper } => {
                if self.contains_exact(x) {
                    x.iter()
                        .zip(lower.iter().zip(upper.iter()))
                        .map(|(&v, (&l, &u))| (v - l).min(u - v))
                        .fold(f64::INFINITY, f64::min)
                } else {
                    self.distance(x)
                }
            }
            Self::Polytope { normals, offsets, .. } => {
                if self.contains_exact(x) {
                    normals
                        .iter()
                        .zip(offsets)
                        .map(|(a, &b)| (b - a.dot(x)) / a.norm())
                        .fold(f64::INFINITY, f64::min)
                } else {
                    self.distance(x)
                }
            }
            Self::Halfspace { normal, offset } => (normal.dot(x) - offset).abs() / normal.norm(),
        }
    }

    /// Vertices of a bounded polyhedral domain (box corners or polytope
    /// vertices). Errors for balls and halfspaces.
    pub fn vertices(&self) -> Result<Vec<Point>> {
        match self {
            Self::Box { lower, upper } => {
                let d = lower.len();
                if d > 16 {
                    return Err(Error::InvalidDomain("box vertex enumeration capped at d=16".into()));
                }
                let mut verts = Vec::with_capacity(1 << d);
                for mask in 0..(1u32 << d) {
                    verts.push(Point::from_iterator(
                        d,
                        (0..d).map(|i| if mask >> i & 1 == 1 { upper[i] } else { lower[i] }),
                    ));
                }
                Ok(verts)
            }
            Self::Polytope { normals, offsets, .. } => {
                Ok(polytope_vertices(normals, offsets))
            }
            _ => Err(Error::Unsupported { operation: "vertices", domain: self.variant_name() }),
        }
    }

    /// Deterministic mesh of boundary points with roughly `mesh` entries.
    /// Unsupported for halfspaces.
    pub fn boundary_mesh(&self, mesh: usize) -> Result<Vec<Point>> {
        let mesh = mesh.max(2);
        match self {
            Self::Ball { center, radius } => {
                let d = center.len();
                let dirs = if d == 2 {
                    (0..mesh)
                        .map(|k| {
                            let th = 2.0 * std::f64::consts::PI * k as f64 / mesh as f64;
                            Point::from_vec(vec![th.cos(), th.sin()])
                        })
                        .collect::<Vec<_>>()
                } else {
                    unit_directions(d, mesh)
                };
                Ok(dirs.into_iter().map(|u| center + u.scale(*radius)).collect())
            }
            Self::Box { lower, upper } => {
                let mut pts = self.vertices()?;
                let d = lower.len();
                if d == 2 && mesh > pts.len() {
                    let per_edge = (mesh - pts.len()).div_ceil(4).max(1);
                    for k in 1..=per_edge {
                        let s = k as f64 / (per_edge + 1) as f64;
                        let lx = lower[0] + s * (upper[0] - lower[0]);
                        let ly = lower[1] + s * (upper[1] - lower[1]);
                        pts.push(Point::from_vec(vec![lx, lower[1]]));
                        pts.push(Point::from_vec(vec![lx, upper[1]]));
                        pts.push(Point::from_vec(vec![lower[0], ly]));
                        pts.push(Point::from_vec(vec![upper[0], ly]));
                    }
                } else if d > 2 && mesh > pts.len() {
                    // Halton points spread over faces, cycling through the 2d
                    // facets deterministically.
                    let extra = mesh - pts.len();
                    for k in 0..extra {
                        let face = k % (2 * d);
                        let axis = face / 2;
                        let hi = face % 2 == 1;
                        let coords = crate::numeric::halton(k / (2 * d) + 1, d);
                        let mut p = Point::from_iterator(
                            d,
                            (0..d).map(|i| lower[i] + coords[i] * (upper[i] - lower[i])),
                        );
                        p[axis] = if hi { upper[axis] } else { lower[axis] };
                        pts.push(p);
                    }
                }
                Ok(pts)
            }
            Self::Polytope { normals, offsets, interior } => {
                let mut pts = polytope_vertices(normals, offsets);
                let d = interior.len();
                if mesh > pts.len() {
                    for dir in unit_directions(d, mesh - pts.len()) {
                        if let Some(p) = ray_to_boundary(normals, offsets, interior, &dir) {
                            pts.push(p);
                        }
                    }
                }
                Ok(pts)
            }
            Self::Halfspace { .. } => Err(Error::Unsupported {
                operation: "boundary_mesh",
                domain: "halfspace",
            }),
        }
    }

    /// Deterministic probe points inside the domain for variational
    /// inequalities. Includes every vertex for box/polytope variants and at
    /// least `count` points overall.
    pub fn probe_points(&self, count: usize) -> Vec<Point> {
        let mut pts = match self {
            Self::Halfspace { normal, offset } => {
                let d = normal.len();
                let nhat = normal / normal.norm();
                let anchor = normal * (*offset / normal.norm_squared());
                let mut pts = vec![anchor.clone()];
                let dirs = unit_directions(d, count.max(8));
                for (i, dir) in dirs.iter().enumerate() {
                    let tangent = dir - nhat.scale(dir.dot(&nhat));
                    let scale = 0.5 + (i % 5) as f64;
                    let inward = 0.25 * (i % 3) as f64;
                    pts.push(&anchor + tangent.scale(scale) - nhat.scale(inward));
                }
                pts
            }
            _ => {
                let mut pts = self.vertices().unwrap_or_default();
                pts.push(self.slater_point());
                if pts.len() < count {
                    if let Ok(mesh) = self.boundary_mesh(count - pts.len()) {
                        pts.extend(mesh);
                    }
                }
                // Blend boundary points toward the interior so probes are not
                // exclusively extreme.
                let center = self.slater_point();
                let boundary_len = pts.len();
                for i in 0..boundary_len.min(count / 4) {
                    pts.push((&pts[i] + &center) * 0.5);
                }
                pts
            }
        };
        pts.truncate(count.max(pts.len().min(count * 2)));
        debug_assert!(pts.iter().all(|p| self.contains(p, 1e-7)));
        pts
    }

    /// Pointwise normal-cone test: accept `eta` as an inward normal at `x`
    /// iff `<x - y, eta> <= tol` for every probe `y` in the domain.
    pub fn certify_normal(
        &self,
        x: &Point,
        eta: &Point,
        tol: f64,
        probe_count: usize,
    ) -> std::result::Result<NormalCertificate, NormalRejection> {
        debug_assert!((eta.norm() - 1.0).abs() < 1e-6, "direction must be a unit vector");
        debug_assert!(
            self.boundary_distance(x) <= self.projector_tol().max(1e-6) * 10.0,
            "certify_normal expects a boundary point"
        );
        let probes: Vec<Point> = match self {
            Self::Ball { center, .. } => {
                let mut p = vec![center.clone()];
                p.extend(self.boundary_mesh(probe_count.max(8)).expect("ball mesh"));
                p
            }
            Self::Box { .. } | Self::Polytope { .. } => {
                let mut p = self.vertices().expect("bounded vertices");
                if p.len() < probe_count {
                    p.extend(self.boundary_mesh(probe_count - p.len()).expect("mesh"));
                }
                p
            }
            Self::Halfspace { .. } => self.probe_points(probe_count.max(16)),
        };
        let mut worst: Option<(Point, f64)> = None;
        for y in probes {
            let violation = (x - &y).dot(eta);
            if violation > tol && worst.as_ref().is_none_or(|(_, v)| violation > *v) {
                worst = Some((y, violation));
            }
        }
        match worst {
            None => Ok(NormalCertificate { point: x.clone(), direction: eta.clone(), tol }),
            Some((witness, violation)) => Err(NormalRejection { witness, violation }),
        }
    }

    /// Two-sided Hausdorff distance estimated on boundary meshes of size
    /// `mesh`. Errors for unbounded variants.
    pub fn hausdorff(&self, other: &ConvexDomain, mesh: usize) -> Result<HausdorffEstimate> {
        if !self.is_bounded() || !other.is_bounded() {
            return Err(Error::Unsupported { operation: "hausdorff", domain: "halfspace" });
        }
        let mine = self.boundary_mesh(mesh)?;
        let theirs = other.boundary_mesh(mesh)?;
        let one = mine.iter().map(|p| other.distance(p)).fold(0.0, f64::max);
        let two = theirs.iter().map(|p| self.distance(p)).fold(0.0, f64::max);
        let resolution = mesh_resolution(&mine).max(mesh_resolution(&theirs));
        Ok(HausdorffEstimate { value: one.max(two), resolution })
    }
}

/// Largest nearest-neighbor spacing of a point cloud; used as the covering
/// radius surrogate for mesh-based estimates.
pub fn mesh_resolution(points: &[Point]) -> f64 {
    if points.len() < 2 {
        return f64::INFINITY;
    }
    let mut worst = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        let mut nearest = f64::INFINITY;
        for (j, q) in points.iter().enumerate() {
            if i != j {
                nearest = nearest.min((p - q).norm());
            }
        }
        worst = worst.max(nearest);
    }
    worst
}

/// Euclidean projection onto an intersection of halfspaces via Dykstra's
/// alternating projections. `halfspaces` are `(normal, offset)` pairs.
///
/// The Dykstra iterate is polished by an exact solve on the detected active
/// set, which brings generic projections to machine precision.
pub fn project_onto_halfspaces(halfspaces: &[(Point, f64)], x: &Point) -> Result<Point> {
    if halfspaces.iter().all(|(a, b)| a.dot(x) <= *b) {
        return Ok(x.clone());
    }
    if halfspaces.len() == 1 {
        let (a, b) = &halfspaces[0];
        return Ok(x - a.scale((a.dot(x) - b) / a.norm_squared()));
    }
    let mut y = x.clone();
    let mut corrections: Vec<Point> = vec![Point::zeros(x.len()); halfspaces.len()];
    let mut last_step = f64::INFINITY;
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        let before = y.clone();
        for (i, (a, b)) in halfspaces.iter().enumerate() {
            let w = &y + &corrections[i];
            let excess = a.dot(&w) - b;
            let projected = if excess > 0.0 {
                &w - a.scale(excess / a.norm_squared())
            } else {
                w.clone()
            };
            corrections[i] = &w - &projected;
            y = projected;
        }
        last_step = (&y - &before).norm();
        if last_step < DYKSTRA_STOP {
            return Ok(polish_projection(halfspaces, x, &y).unwrap_or(y));
        }
    }
    Err(Error::ProjectionDiverged { iterations: DYKSTRA_MAX_SWEEPS, last_step })
}

/// Re-solve the projection exactly on the active set suggested by an
/// approximate projection `approx`. Returns `None` when the active set cannot
/// be certified (dual or primal infeasibility), in which case the caller keeps
/// the iterative answer.
fn polish_projection(halfspaces: &[(Point, f64)], x: &Point, approx: &Point) -> Option<Point> {
    let mut active: Vec<usize> = halfspaces
        .iter()
        .enumerate()
        .filter(|(_, (a, b))| (a.dot(approx) - b).abs() <= 1e-6 * (1.0 + b.abs()) * a.norm())
        .map(|(i, _)| i)
        .collect();
    let d = x.len();
    for _ in 0..=d {
        if active.is_empty() || active.len() > d {
            return None;
        }
        let a = DMatrix::from_fn(active.len(), d, |r, c| halfspaces[active[r]].0[c]);
        let gram = &a * a.transpose();
        let rhs = &a * x - DVector::from_iterator(active.len(), active.iter().map(|&i| halfspaces[i].1));
        let lambda = gram.lu().solve(&rhs)?;
        if let Some(worst) = (0..lambda.len()).filter(|&i| lambda[i] < -1e-10).min_by(|&i, &j| {
            lambda[i].partial_cmp(&lambda[j]).unwrap()
        }) {
            active.remove(worst);
            continue;
        }
        let candidate = x - a.transpose() * &lambda;
        let feasible = halfspaces
            .iter()
            .all(|(n, o)| n.dot(&candidate) <= o + 1e-9 * (1.0 + o.abs()) * n.norm());
        return if feasible { Some(candidate) } else { None };
    }
    None
}

/// Enumerate polytope vertices by solving all d-subsets of active constraints
/// and keeping feasible, well-conditioned solutions.
fn polytope_vertices(normals: &[Point], offsets: &[f64]) -> Vec<Point> {
    let d = normals[0].len();
    let m = normals.len();
    let mut verts: Vec<Point> = Vec::new();
    let mut combo: Vec<usize> = (0..d).collect();
    if m < d {
        return verts;
    }
    loop {
        let a = DMatrix::from_fn(d, d, |r, c| normals[combo[r]][c]);
        let b = DVector::from_iterator(d, combo.iter().map(|&i| offsets[i]));
        if let Some(sol) = a.clone().lu().solve(&b) {
            let residual = (&a * &sol - &b).norm();
            let scale = 1.0 + sol.norm();
            if residual < 1e-8 * scale {
                let feasible = normals
                    .iter()
                    .zip(offsets)
                    .all(|(n, &o)| n.dot(&sol) <= o + 1e-9 * (1.0 + o.abs()));
                if feasible && !verts.iter().any(|v| (v - &sol).norm() < 1e-9 * scale) {
                    verts.push(sol);
                }
            }
        }
        // next d-combination of m constraint indices
        let mut i = d;
        loop {
            if i == 0 {
                return verts;
            }
            i -= 1;
            if combo[i] != i + m - d {
                combo[i] += 1;
                for j in i + 1..d {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Boundary point hit by the ray `interior + t * dir`, if the ray leaves the
/// polytope (it always does for bounded ones).
fn ray_to_boundary(
    normals: &[Point],
    offsets: &[f64],
    interior: &Point,
    dir: &Point,
) -> Option<Point> {
    let mut t_max = f64::INFINITY;
    for (a, &b) in normals.iter().zip(offsets) {
        let denom = a.dot(dir);
        if denom > 1e-14 {
            t_max = t_max.min((b - a.dot(interior)) / denom);
        }
    }
    if t_max.is_finite() && t_max > 0.0 {
        Some(interior + dir.scale(t_max))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn unit_ball2() -> ConvexDomain {
        ConvexDomain::ball(dvector![0.0, 0.0], 1.0).unwrap()
    }

    fn unit_box2() -> ConvexDomain {
        ConvexDomain::axis_box(dvector![0.0, 0.0], dvector![1.0, 1.0]).unwrap()
    }

    /// Triangle {x1 + x2 <= 1, x1 >= 0, x2 >= 0}.
    fn triangle() -> ConvexDomain {
        ConvexDomain::polytope(
            vec![dvector![1.0, 1.0], dvector![-1.0, 0.0], dvector![0.0, -1.0]],
            vec![1.0, 0.0, 0.0],
            dvector![0.25, 0.25],
        )
        .unwrap()
    }

    /// Independent active-set oracle for projection onto a halfspace
    /// intersection: enumerate candidate active sets, solve the
    /// equality-constrained least-squares system, check primal and dual
    /// feasibility, return the best feasible candidate.
    fn qp_projection_oracle(normals: &[Point], offsets: &[f64], x: &Point) -> Point {
        let m = normals.len();
        let d = x.len();
        let mut best: Option<(f64, Point)> = None;
        for mask in 0u32..(1 << m) {
            let active: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
            if active.len() > d {
                continue;
            }
            let candidate = if active.is_empty() {
                x.clone()
            } else {
                let a = DMatrix::from_fn(active.len(), d, |r, c| normals[active[r]][c]);
                let gram = &a * a.transpose();
                let rhs = &a * x
                    - DVector::from_iterator(active.len(), active.iter().map(|&i| offsets[i]));
                let Some(lambda) = gram.lu().solve(&rhs) else { continue };
                if lambda.iter().any(|&l| l < -1e-10) {
                    continue; // dual infeasible
                }
                x - a.transpose() * lambda
            };
            let feasible = normals
                .iter()
                .zip(offsets)
                .all(|(n, &o)| n.dot(&candidate) <= o + 1e-9);
            if feasible {
                let dist = (x - &candidate).norm();
                if best.as_ref().is_none_or(|(bd, _)| dist < *bd) {
                    best = Some((dist, candidate));
                }
            }
        }
        best.expect("oracle found no feasible candidate").1
    }

    #[test]
    fn contains_ball_examples() {
        let ball = unit_ball2();
        assert!(ball.contains(&dvector![0.0, 0.0], 0.0));
        assert!(!ball.contains(&dvector![2.0, 0.0], 0.0));
    }

    #[test]
    fn contains_box_tolerance_band() {
        let b = unit_box2();
        assert!(b.contains(&dvector![1.0 + 1e-12, 0.5], 1e-9));
        assert!(!b.contains(&dvector![1.0 + 1e-6, 0.5], 1e-9));
    }

    #[test]
    fn project_ball_radial() {
        let ball = unit_ball2();
        let p = ball.project(&dvector![2.0, 0.0]).unwrap();
        assert_relative_eq!(p, dvector![1.0, 0.0], epsilon = 1e-14);
    }

    #[test]
    fn project_box_clamps() {
        let b = unit_box2();
        let p = b.project(&dvector![-1.0, 0.5]).unwrap();
        assert_eq!(p, dvector![0.0, 0.5]);
    }

    #[test]
    fn project_triangle_matches_qp_oracle() {
        // Hand value: the active face is x1 + x2 = 1, so (1,1) projects to
        // (0.5, 0.5). The oracle confirms the frozen value.
        let tri = triangle();
        let x = dvector![1.0, 1.0];
        if let ConvexDomain::Polytope { normals, offsets, .. } = &tri {
            let oracle = qp_projection_oracle(normals, offsets, &x);
            assert_relative_eq!(oracle, dvector![0.5, 0.5], epsilon = 1e-12);
        }
        let p = tri.project(&x).unwrap();
        assert_relative_eq!(p, dvector![0.5, 0.5], epsilon = 1e-8);
    }

    #[test]
    fn project_triangle_random_points_match_oracle() {
        let tri = triangle();
        let ConvexDomain::Polytope { normals, offsets, .. } = &tri else { unreachable!() };
        // deterministic scatter around and inside the triangle
        for k in 0..40 {
            let h = crate::numeric::halton(k + 1, 2);
            let x = dvector![3.0 * h[0] - 1.0, 3.0 * h[1] - 1.0];
            let oracle = qp_projection_oracle(normals, offsets, &x);
            let p = tri.project(&x).unwrap();
            assert!(
                (p - oracle).norm() < 1e-7,
                "dykstra disagrees with active-set oracle at {x:?}"
            );
        }
    }

    #[test]
    fn distance_examples() {
        let ball = unit_ball2();
        assert_relative_eq!(ball.distance(&dvector![3.0, 0.0]), 2.0, epsilon = 1e-14);
        assert_eq!(ball.distance(&dvector![0.3, -0.2]), 0.0);
        let b = unit_box2();
        assert_relative_eq!(b.distance(&dvector![2.0, 2.0]), 2.0_f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn member_projects_to_itself_exactly() {
        let tri = triangle();
        let x = dvector![0.25, 0.5];
        assert_eq!(tri.project(&x).unwrap(), x);
    }

    #[test]
    fn halfspace_projection_and_distance() {
        // {x : x >= 0} in d=1 as <-1, x> <= 0
        let hs = ConvexDomain::halfspace(dvector![-1.0], 0.0).unwrap();
        assert_eq!(hs.project(&dvector![-2.0]).unwrap(), dvector![0.0]);
        assert_eq!(hs.distance(&dvector![-2.0]), 2.0);
        assert_eq!(hs.distance(&dvector![3.0]), 0.0);
    }

    #[test]
    fn certify_normal_ball() {
        let ball = unit_ball2();
        let x = dvector![1.0, 0.0];
        assert!(ball.certify_normal(&x, &dvector![-1.0, 0.0], 1e-12, 64).is_ok());
        let rej = ball.certify_normal(&x, &dvector![1.0, 0.0], 1e-12, 64).unwrap_err();
        assert!(rej.violation > 1.9, "worst witness should be near (-1,0), got {rej:?}");
    }

    #[test]
    fn certify_normal_box_face() {
        let b = unit_box2();
        let x = dvector![1.0, 0.5];
        assert!(b.certify_normal(&x, &dvector![-1.0, 0.0], 1e-12, 16).is_ok());
        assert!(b.certify_normal(&x, &dvector![0.0, 1.0], 1e-12, 16).is_err());
    }

    #[test]
    fn hausdorff_identical_and_concentric() {
        let b1 = unit_ball2();
        let est = b1.hausdorff(&b1, 64).unwrap();
        assert_eq!(est.value, 0.0);
        let b2 = ConvexDomain::ball(dvector![0.0, 0.0], 2.0).unwrap();
        let est = b1.hausdorff(&b2, 128).unwrap();
        assert_relative_eq!(est.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hausdorff_translated_box() {
        // d_H(D, D + u) = |u| for translations.
        let b1 = unit_box2();
        let b2 = ConvexDomain::axis_box(dvector![0.3, 0.0], dvector![1.3, 1.0]).unwrap();
        let est = b1.hausdorff(&b2, 64).unwrap();
        assert_relative_eq!(est.value, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn hausdorff_rejects_halfspace() {
        let hs = ConvexDomain::halfspace(dvector![-1.0, 0.0], 0.0).unwrap();
        assert!(hs.hausdorff(&unit_ball2(), 16).is_err());
    }

    #[test]
    fn polytope_vertices_of_triangle() {
        let tri = triangle();
        let mut verts = tri.vertices().unwrap();
        verts.sort_by(|a, b| (a[0], a[1]).partial_cmp(&(b[0], b[1])).unwrap());
        assert_eq!(verts.len(), 3);
        assert_relative_eq!(verts[0], dvector![0.0, 0.0], epsilon = 1e-12);
        assert_relative_eq!(verts[1], dvector![0.0, 1.0], epsilon = 1e-12);
        assert_relative_eq!(verts[2], dvector![1.0, 0.0], epsilon = 1e-12);
    }

    #[test]
    fn slater_margin_enforced() {
        let r = ConvexDomain::polytope(
            vec![dvector![1.0, 0.0]],
            vec![0.0],
            dvector![0.0, 0.0], // on the boundary, not interior
        );
        assert!(r.is_err());
    }

    #[test]
    fn probe_points_include_vertices_and_stay_inside() {
        let tri = triangle();
        let probes = tri.probe_points(32);
        assert!(probes.len() >= 32);
        for v in tri.vertices().unwrap() {
            assert!(
                probes.iter().any(|p| (p - &v).norm() < 1e-12),
                "vertex {v:?} missing from probes"
            );
        }
        for p in &probes {
            assert!(tri.contains(p, 1e-7));
        }
    }

    #[test]
    fn halfspace_probes_are_members() {
        let hs = ConvexDomain::halfspace(dvector![-1.0], 0.0).unwrap();
        for p in hs.probe_points(32) {
            assert!(hs.contains(&p, 1e-9), "{p:?} outside halfline");
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn domains() -> Vec<ConvexDomain> {
            vec![
                unit_ball2(),
                unit_box2(),
                triangle(),
                ConvexDomain::halfspace(dvector![-1.0, 0.5], 0.25).unwrap(),
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn projection_idempotent_and_nonexpansive(
                ax in -3.0f64..3.0, ay in -3.0f64..3.0,
                bx in -3.0f64..3.0, by in -3.0f64..3.0,
                which in 0usize..4,
            ) {
                let d = &domains()[which];
                let x = dvector![ax, ay];
                let y = dvector![bx, by];
                let px = d.project(&x).unwrap();
                let py = d.project(&y).unwrap();
                let ppx = d.project(&px).unwrap();
                prop_assert!((&ppx - &px).norm() <= 1e-12);
                prop_assert!((&px - &py).norm() <= (&x - &y).norm() + 1e-9);
            }

            #[test]
            fn variational_inequality_and_outward_gap(
                ax in -3.0f64..3.0, ay in -3.0f64..3.0,
                which in 0usize..4,
            ) {
                let d = &domains()[which];
                let x = dvector![ax, ay];
                let px = d.project(&x).unwrap();
                // <x - Px, y - Px> <= tol for all probes y
                let gap = &x - &px;
                for y in d.probe_points(16) {
                    prop_assert!(gap.dot(&(&y - &px)) <= 1e-7);
                }
                // outside points certify the reversed gap direction as an
                // inward normal at the projected point
                if d.distance(&x) > 1e-3 {
                    let eta = -gap.clone() / gap.norm();
                    prop_assert!(d.certify_normal(&px, &eta, 1e-7, 32).is_ok());
                }
            }

            #[test]
            fn hausdorff_symmetry_and_triangle(
                sx in -0.5f64..0.5, sy in -0.5f64..0.5,
                r1 in 0.5f64..2.0, r2 in 0.5f64..2.0,
            ) {
                let a = ConvexDomain::ball(dvector![0.0, 0.0], r1).unwrap();
                let b = ConvexDomain::ball(dvector![sx, sy], r2).unwrap();
                let c = unit_box2();
                let dab = a.hausdorff(&b, 64).unwrap();
                let dba = b.hausdorff(&a, 64).unwrap();
                prop_assert!((dab.value - dba.value).abs() <= 1e-12);
                let dac = a.hausdorff(&c, 64).unwrap();
                let dcb = c.hausdorff(&b, 64).unwrap();
                let slack = dab.resolution + dac.resolution + dcb.resolution;
                prop_assert!(dab.value <= dac.value + dcb.value + slack);
            }
        }
    }
}
