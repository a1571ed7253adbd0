//! Time grids and grid-indexed paths.
//!
//! Paths are right-continuous step interpolations of their node values, the
//! discrete surrogate of cadlag trajectories with `y_0 = y_{0^-}` and
//! `y_T = y_{T^-}`.

use crate::{Error, Point, Result};

/// Strictly increasing node times `0 = t_0 < t_1 < ... < t_M = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidConfig("time grid needs at least two nodes".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidConfig("time grid must start at 0".into()));
        }
        if !times.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidConfig("time grid must be strictly increasing".into()));
        }
        if !times.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidConfig("time grid contains a non-finite node".into()));
        }
        Ok(Self { times })
    }

    /// Uniform grid with `steps` steps on `[0, t_end]`.
    pub fn uniform(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || steps == 0 {
            return Err(Error::InvalidConfig("uniform grid needs t_end > 0 and steps >= 1".into()));
        }
        let times = (0..=steps).map(|j| t_end * j as f64 / steps as f64).collect();
        Self::new(times)
    }

    /// Refine every step into `n` equal sub-steps.
    pub fn refine(&self, n: usize) -> Self {
        assert!(n >= 1);
        let mut times = Vec::with_capacity((self.len() - 1) * n + 1);
        times.push(self.times[0]);
        for w in self.times.windows(2) {
            let (a, b) = (w[0], w[1]);
            for s in 1..=n {
                times.push(a + (b - a) * s as f64 / n as f64);
            }
        }
        Self { times }
    }

    /// Number of nodes (steps + 1).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of steps.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn time(&self, node: usize) -> f64 {
        self.times[node]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Width of step `j`, i.e. `t_{j+1} - t_j`.
    pub fn dt(&self, step: usize) -> f64 {
        self.times[step + 1] - self.times[step]
    }

    /// Largest step width.
    pub fn mesh(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Node index whose time equals `t` within `tol`.
    pub fn node_at(&self, t: f64, tol: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }
}

/// Vector-valued path sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    values: Vec<Point>,
}

impl GridPath {
    pub fn new(values: Vec<Point>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("empty path".into()));
        }
        let dim = values[0].len();
        for v in &values {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidConfig("path contains a non-finite entry".into()));
            }
        }
        Ok(Self { values })
    }

    /// Path built by evaluating `f` at every node time.
    pub fn from_fn(grid: &TimeGrid, f: impl Fn(f64) -> Point) -> Self {
        Self { values: grid.times().iter().map(|&t| f(t)).collect() }
    }

    pub fn constant(grid: &TimeGrid, value: Point) -> Self {
        Self { values: vec![value; grid.len()] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn at(&self, node: usize) -> &Point {
        &self.values[node]
    }

    pub fn values(&self) -> &[Point] {
        &self.values
    }

    pub fn push(&mut self, value: Point) {
        self.values.push(value);
    }

    /// Increment `x_{j} - x_{j-1}` landing at node `j >= 1`.
    pub fn increment(&self, node: usize) -> Point {
        &self.values[node] - &self.values[node - 1]
    }

    /// Largest Euclidean norm over nodes.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest Euclidean distance to another path, node by node.
    pub fn sup_distance(&self, other: &GridPath) -> f64 {
        assert_eq!(self.len(), other.len());
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}
