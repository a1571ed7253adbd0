//! The affine constraint structure `phi_t(x) = l∘l*(x) + v_t` together with
//! `Phi_t(x) = l(x) + v_t` and the induced time-dependent domain family
//! `D_t = Phi_t^{-1}(D)`.
//!
//! `l` is an invertible matrix (its adjoint is the transpose), validated at
//! construction through its singular values; `v` is stored piecewise-constant
//! on the simulation grid. Everything here is immutable after construction.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::geometry::{mesh_resolution, project_onto_halfspaces, ConvexDomain};
use crate::grid::TimeGrid;
use crate::{Error, Point, Result};

/// Reject maps whose smallest singular value is below this fraction of the
/// largest: near-singular `l` makes the reduction ill-conditioned.
pub const MIN_CONDITION: f64 = 1e-8;
/// Relative tolerance of the scalar Lagrange-multiplier bisection used for
/// ellipsoidal transformed projections.
pub const ELLIPSOID_BISECTION_RTOL: f64 = 1e-12;

/// Offset path specification; sampled onto the grid at map construction.
#[derive(Debug, Clone, PartialEq)]
pub enum VPath {
    Constant(Point),
    /// `v_t = start + t * slope`.
    Linear { start: Point, slope: Point },
    /// One value per grid node.
    Samples(Vec<Point>),
}

impl VPath {
    pub fn zero(dim: usize) -> Self {
        Self::Constant(Point::zeros(dim))
    }

    fn sample(&self, grid: &TimeGrid, dim: usize) -> Result<Vec<Point>> {
        let check = |v: &Point| -> Result<()> {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
            }
            Ok(())
        };
        match self {
            Self::Constant(v) => {
                check(v)?;
                Ok(vec![v.clone(); grid.len()])
            }
            Self::Linear { start, slope } => {
                check(start)?;
                check(slope)?;
                Ok(grid.times().iter().map(|&t| start + slope.scale(t)).collect())
            }
            Self::Samples(values) => {
                if values.len() != grid.len() {
                    return Err(Error::InvalidConfig(format!(
                        "v samples ({}) must match grid nodes ({})",
                        values.len(),
                        grid.len()
                    )));
                }
                for v in values {
                    check(v)?;
                }
                Ok(values.clone())
            }
        }
    }
}

/// The pair `(l, v)` realizing `phi_t = l∘l* + v_t` and `Phi_t = l + v_t`,
/// with cached factorizations and the bi-Lipschitz constants
/// `gamma1 <= |l u|/|u| <= gamma2`.
#[derive(Debug, Clone)]
pub struct ConstraintMap {
    l: DMatrix<f64>,
    l_inv: DMatrix<f64>,
    lt_inv: DMatrix<f64>,
    gamma1: f64,
    gamma2: f64,
    /// Eigendecomposition of `l^T l`, reused by the ellipsoid projection.
    gram_eigen: SymmetricEigen<f64, nalgebra::Dyn>,
    /// True when `l = c Q` for orthogonal `Q`: transformed projections then
    /// have closed forms in the image space.
    scaled_orthogonal: bool,
    grid: TimeGrid,
    v: Vec<Point>,
}

impl ConstraintMap {
    pub fn new(l: DMatrix<f64>, v: &VPath, grid: TimeGrid) -> Result<Self> {
        if l.nrows() != l.ncols() || l.nrows() == 0 {
            return Err(Error::InvalidConfig("constraint map l must be square and nonempty".into()));
        }
        let dim = l.nrows();
        let svd = l.clone().svd(false, false);
        let gamma2 = svd.singular_values.max();
        let gamma1 = svd.singular_values.min();
        if !(gamma1 > MIN_CONDITION * gamma2) || gamma2 == 0.0 {
            return Err(Error::InvalidConfig(format!(
                "constraint map is near-singular: gamma1={gamma1:.3e}, gamma2={gamma2:.3e}"
            )));
        }
        let l_inv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidConfig("constraint map l is not invertible".into()))?;
        let lt_inv = l_inv.transpose();
        let gram = l.transpose() * &l;
        let scaled_orthogonal = {
            let c2 = gram.diagonal().mean();
            let mut identity_scaled = DMatrix::identity(dim, dim);
            identity_scaled *= c2;
            (&gram - identity_scaled).norm() <= 1e-10 * c2.max(1.0)
        };
        let gram_eigen = SymmetricEigen::new(gram);
        let v = v.sample(&grid, dim)?;
        Ok(Self { l, l_inv, lt_inv, gamma1, gamma2, gram_eigen, scaled_orthogonal, grid, v })
    }

    /// Identity map with zero offset, the trivial constraint structure.
    pub fn identity(dim: usize, grid: TimeGrid) -> Self {
        Self::new(DMatrix::identity(dim, dim), &VPath::zero(dim), grid)
            .expect("identity map is valid")
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn v_at(&self, node: usize) -> &Point {
        &self.v[node]
    }

    /// `l^T x` — the change of variables into the Skorokhod space.
    pub fn to_transformed(&self, x: &Point) -> Point {
        self.l.transpose() * x
    }

    /// `(l^T)^{-1} x` — back from the Skorokhod space.
    pub fn from_transformed(&self, x: &Point) -> Point {
        &self.lt_inv * x
    }

    /// `phi_t(x) = l l^T x + v_t` at grid node `node`.
    pub fn phi(&self, node: usize, x: &Point) -> Point {
        &self.l * (self.l.transpose() * x) + &self.v[node]
    }

    /// `Phi_t(x) = l x + v_t` at grid node `node`.
    pub fn big_phi(&self, node: usize, x: &Point) -> Point {
        &self.l * x + &self.v[node]
    }

    /// `Phi_t^{-1}(y) = l^{-1}(y - v_t)` at grid node `node`.
    pub fn big_phi_inverse(&self, node: usize, y: &Point) -> Point {
        &self.l_inv * (y - &self.v[node])
    }

    /// Metric projection of `z` onto `D_t = Phi_t^{-1}(domain)` at grid node
    /// `node`: `argmin { |z - w| : Phi_t(w) in domain }`.
    ///
    /// Scalar-orthogonal `l` uses the closed form through the image space;
    /// polyhedral domains become halfspace intersections in the source space;
    /// balls under general `l` reduce to a one-dimensional Lagrange
    /// multiplier search.
    pub fn project_transformed(
        &self,
        node: usize,
        domain: &ConvexDomain,
        z: &Point,
    ) -> Result<Point> {
        if domain.contains_exact(&self.big_phi(node, z)) {
            return Ok(z.clone());
        }
        if self.scaled_orthogonal {
            let image = domain.project(&self.big_phi(node, z))?;
            return Ok(self.big_phi_inverse(node, &image));
        }
        match domain {
            ConvexDomain::Ball { center, radius } => {
                self.project_transformed_ellipsoid(node, center, *radius, z)
            }
            _ => self.project_transformed_halfspaces(node, domain, z),
        }
    }

    /// Distance from `z` to `D_t` at grid node `node`.
    pub fn transformed_distance(&self, node: usize, domain: &ConvexDomain, z: &Point) -> Result<f64> {
        Ok((z - self.project_transformed(node, domain, z)?).norm())
    }

    /// Ball constraint under a general map: minimize `|z - w|` subject to
    /// `|l w + v - c| <= r` via bisection on the KKT multiplier.
    fn project_transformed_ellipsoid(
        &self,
        node: usize,
        center: &Point,
        radius: f64,
        z: &Point,
    ) -> Result<Point> {
        let shift = center - &self.v[node];
        let rhs_base = self.l.transpose() * &shift;
        let q = &self.gram_eigen.eigenvectors;
        let vals = &self.gram_eigen.eigenvalues;
        let zq = q.transpose() * z;
        let bq = q.transpose() * &rhs_base;
        let w_of = |nu: f64| -> Point {
            let scaled = Point::from_iterator(
                zq.len(),
                zq.iter().zip(bq.iter()).zip(vals.iter()).map(|((&zc, &bc), &lam)| {
                    (zc + nu * bc) / (1.0 + nu * lam)
                }),
            );
            q * scaled
        };
        let residual = |w: &Point| (&self.l * w + &self.v[node] - center).norm() - radius;
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut g_hi = residual(&w_of(hi));
        let mut guard = 0;
        while g_hi > 0.0 {
            lo = hi;
            hi *= 2.0;
            g_hi = residual(&w_of(hi));
            guard += 1;
            if guard > 200 {
                return Err(Error::ProjectionDiverged { iterations: guard, last_step: g_hi });
            }
        }
        while hi - lo > ELLIPSOID_BISECTION_RTOL * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if residual(&w_of(mid)) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(w_of(hi))
    }

    /// Polyhedral constraints `<a_i, zeta> <= b_i` pull back to halfspaces
    /// `<l^T a_i, w> <= b_i - <a_i, v_t>` in the source space.
    fn project_transformed_halfspaces(
        &self,
        node: usize,
        domain: &ConvexDomain,
        z: &Point,
    ) -> Result<Point> {
        let halfspaces = self.pullback_halfspaces(node, domain)?;
        project_onto_halfspaces(&halfspaces, z)
    }

    fn pullback_halfspaces(
        &self,
        node: usize,
        domain: &ConvexDomain,
    ) -> Result<Vec<(Point, f64)>> {
        let v = &self.v[node];
        let pairs: Vec<(Point, f64)> = match domain {
            ConvexDomain::Halfspace { normal, offset } => vec![(normal.clone(), *offset)],
            ConvexDomain::Box { lower, upper } => {
                let d = lower.len();
                let mut hs = Vec::with_capacity(2 * d);
                for i in 0..d {
                    let mut e = Point::zeros(d);
                    e[i] = 1.0;
                    hs.push((e.clone(), upper[i]));
                    e[i] = -1.0;
                    hs.push((e, -lower[i]));
                }
                hs
            }
            ConvexDomain::Polytope { normals, offsets, .. } => {
                normals.iter().cloned().zip(offsets.iter().copied()).collect()
            }
            ConvexDomain::Ball { .. } => {
                return Err(Error::Unsupported {
                    operation: "halfspace pullback",
                    domain: "ball",
                })
            }
        };
        Ok(pairs
            .into_iter()
            .map(|(a, b)| {
                let shifted = b - a.dot(v);
                (self.l.transpose() * a, shifted)
            })
            .collect())
    }
}

/// A base domain together with the constraint map inducing the family
/// `{D_t = Phi_t^{-1}(D)}` on the map's grid.
#[derive(Debug, Clone)]
pub struct TimeDomainFamily {
    domain: ConvexDomain,
    map: ConstraintMap,
}

/// Both sides of the Hausdorff modulus bound between two nodes, plus the mesh
/// resolution of the estimate.
#[derive(Debug, Clone, Copy)]
pub struct ModulusCheck {
    /// `d_H(D_s, D_t)`, mesh-estimated.
    pub lhs: f64,
    /// `|v_t - v_s| / gamma1`.
    pub rhs: f64,
    pub resolution: f64,
}

impl TimeDomainFamily {
    pub fn new(domain: ConvexDomain, map: ConstraintMap) -> Result<Self> {
        if domain.dim() != map.dim() {
            return Err(Error::DimensionMismatch { expected: map.dim(), got: domain.dim() });
        }
        // Nonemptiness witness at every node: the base interior point pulls
        // back to a point of D_t.
        let slater = domain.slater_point();
        for node in 0..map.grid().len() {
            let witness = map.big_phi_inverse(node, &slater);
            if !witness.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidDomain(format!(
                    "domain family witness is non-finite at node {node}"
                )));
            }
        }
        Ok(Self { domain, map })
    }

    /// Static family: identity map, zero offset.
    pub fn static_family(domain: ConvexDomain, grid: TimeGrid) -> Result<Self> {
        let map = ConstraintMap::identity(domain.dim(), grid);
        Self::new(domain, map)
    }

    pub fn domain(&self) -> &ConvexDomain {
        &self.domain
    }

    pub fn map(&self) -> &ConstraintMap {
        &self.map
    }

    pub fn grid(&self) -> &TimeGrid {
        self.map.grid()
    }

    /// Projection onto `D_t` at grid node `node`.
    pub fn project(&self, node: usize, z: &Point) -> Result<Point> {
        self.map.project_transformed(node, &self.domain, z)
    }

    /// Distance to `D_t` at grid node `node`.
    pub fn distance(&self, node: usize, z: &Point) -> Result<f64> {
        self.map.transformed_distance(node, &self.domain, z)
    }

    /// Mesh of the boundary of `D_t`, the pullback of the base mesh
    /// (`∂D_t = Phi_t^{-1}(∂D)` exactly).
    pub fn boundary_mesh(&self, node: usize, mesh: usize) -> Result<Vec<Point>> {
        Ok(self
            .domain
            .boundary_mesh(mesh)?
            .iter()
            .map(|p| self.map.big_phi_inverse(node, p))
            .collect())
    }

    /// Compare `d_H(D_s, D_t)` against the modulus bound `|v_t - v_s|/gamma1`.
    pub fn hausdorff_modulus_check(&self, s: usize, t: usize, mesh: usize) -> Result<ModulusCheck> {
        if !self.domain.is_bounded() {
            return Err(Error::Unsupported { operation: "hausdorff_modulus_check", domain: "halfspace" });
        }
        let mesh_s = self.boundary_mesh(s, mesh)?;
        let mesh_t = self.boundary_mesh(t, mesh)?;
        let mut lhs = 0.0f64;
        for p in &mesh_s {
            lhs = lhs.max(self.distance(t, p)?);
        }
        for p in &mesh_t {
            lhs = lhs.max(self.distance(s, p)?);
        }
        let rhs = (self.map.v_at(t) - self.map.v_at(s)).norm() / self.map.gamma1();
        let resolution = mesh_resolution(&mesh_s).max(mesh_resolution(&mesh_t));
        Ok(ModulusCheck { lhs, rhs, resolution })
    }
}
