//! Serializable configuration records for domains, constraint maps,
//! coefficients, jumps, grids, initial laws, controls, and costs.
//!
//! These are the stable on-disk shapes; `build*` methods validate and convert
//! into core types. No runtime code loading: coefficients and costs are
//! selected from the named built-in registry by these records.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::constraint_map::{ConstraintMap, VPath};
use crate::control::{
    ActionSet, AttachedControl, CostSpec, ReflectionCostKind, RelaxedControl, RunningCostKind,
    StrictControl, TerminalCostKind,
};
use crate::geometry::ConvexDomain;
use crate::grid::TimeGrid;
use crate::mckean::InitialSampler;
use crate::stochastic::{
    BetaKind, CoefficientSet, ControlCoupling, DriftKind, LevyJumpSpec, MarkSampler, SigmaKind,
};
use crate::{Error, Point, Result};

fn vec_to_point(v: &[f64]) -> Point {
    Point::from_column_slice(v)
}

fn point_to_vec(p: &Point) -> Vec<f64> {
    p.iter().copied().collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Polytope { normals: Vec<Vec<f64>>, offsets: Vec<f64>, interior_point: Vec<f64> },
    Halfspace { normal: Vec<f64>, offset: f64 },
}

impl DomainConfig {
    pub fn build(&self) -> Result<ConvexDomain> {
        match self {
            Self::Ball { center, radius } => ConvexDomain::ball(vec_to_point(center), *radius),
            Self::Box { lower, upper } => {
                ConvexDomain::axis_box(vec_to_point(lower), vec_to_point(upper))
            }
            Self::Polytope { normals, offsets, interior_point } => ConvexDomain::polytope(
                normals.iter().map(|n| vec_to_point(n)).collect(),
                offsets.clone(),
                vec_to_point(interior_point),
            ),
            Self::Halfspace { normal, offset } => {
                ConvexDomain::halfspace(vec_to_point(normal), *offset)
            }
        }
    }

    pub fn from_domain(domain: &ConvexDomain) -> Self {
        match domain {
            ConvexDomain::Ball { center, radius } => {
                Self::Ball { center: point_to_vec(center), radius: *radius }
            }
            ConvexDomain::Box { lower, upper } => {
                Self::Box { lower: point_to_vec(lower), upper: point_to_vec(upper) }
            }
            ConvexDomain::Polytope { normals, offsets, interior } => Self::Polytope {
                normals: normals.iter().map(point_to_vec).collect(),
                offsets: offsets.clone(),
                interior_point: point_to_vec(interior),
            },
            ConvexDomain::Halfspace { normal, offset } => {
                Self::Halfspace { normal: point_to_vec(normal), offset: *offset }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VPathConfig {
    Constant { value: Vec<f64> },
    Linear { start: Vec<f64>, slope: Vec<f64> },
    Samples { values: Vec<Vec<f64>> },
}

impl VPathConfig {
    pub fn build(&self) -> VPath {
        match self {
            Self::Constant { value } => VPath::Constant(vec_to_point(value)),
            Self::Linear { start, slope } => {
                VPath::Linear { start: vec_to_point(start), slope: vec_to_point(slope) }
            }
            Self::Samples { values } => {
                VPath::Samples(values.iter().map(|v| vec_to_point(v)).collect())
            }
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self::Constant { value: vec![0.0; dim] }
    }
}

/// Constraint-map record: row-major `l` plus the offset path.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    /// Row-major square matrix.
    pub l: Vec<Vec<f64>>,
    pub v: VPathConfig,
}

impl MapConfig {
    pub fn identity(dim: usize) -> Self {
        let l = (0..dim)
            .map(|r| (0..dim).map(|c| if r == c { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { l, v: VPathConfig::zero(dim) }
    }

    pub fn l_matrix(&self) -> Result<DMatrix<f64>> {
        let rows = self.l.len();
        if rows == 0 || self.l.iter().any(|r| r.len() != rows) {
            return Err(Error::InvalidConfig("map l must be a nonempty square matrix".into()));
        }
        let flat: Vec<f64> = self.l.iter().flatten().copied().collect();
        Ok(DMatrix::from_row_slice(rows, rows, &flat))
    }

    pub fn build(&self, grid: TimeGrid) -> Result<ConstraintMap> {
        ConstraintMap::new(self.l_matrix()?, &self.v.build(), grid)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftConfig {
    Zero,
    Constant { value: Vec<f64> },
    Linear { gain: f64, offset: Vec<f64> },
    MeanFieldAttraction { kappa: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaConfig {
    Zero,
    Scalar { value: f64 },
    DiagLinear { base: f64, slope: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaConfig {
    Zero,
    Constant { value: Vec<f64> },
    LinearInZ { gain: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum CouplingConfig {
    None,
    AdditiveDrift,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    pub drift: DriftConfig,
    pub sigma: SigmaConfig,
    pub beta: BetaConfig,
    #[serde(default)]
    pub control_coupling: Option<CouplingConfig>,
}

impl CoefficientConfig {
    pub fn build(&self) -> CoefficientSet {
        let drift = match &self.drift {
            DriftConfig::Zero => DriftKind::Zero,
            DriftConfig::Constant { value } => DriftKind::Constant(vec_to_point(value)),
            DriftConfig::Linear { gain, offset } => {
                DriftKind::Linear { gain: *gain, offset: vec_to_point(offset) }
            }
            DriftConfig::MeanFieldAttraction { kappa } => {
                DriftKind::MeanFieldAttraction { kappa: *kappa }
            }
        };
        let sigma = match &self.sigma {
            SigmaConfig::Zero => SigmaKind::Zero,
            SigmaConfig::Scalar { value } => SigmaKind::Scalar { value: *value },
            SigmaConfig::DiagLinear { base, slope } => {
                SigmaKind::DiagLinear { base: *base, slope: *slope }
            }
        };
        let beta = match &self.beta {
            BetaConfig::Zero => BetaKind::Zero,
            BetaConfig::Constant { value } => BetaKind::Constant(vec_to_point(value)),
            BetaConfig::LinearInZ { gain } => BetaKind::LinearInZ { gain: *gain },
        };
        let coupling = match self.control_coupling {
            Some(CouplingConfig::AdditiveDrift) => ControlCoupling::AdditiveDrift,
            _ => ControlCoupling::None,
        };
        CoefficientSet::new(drift, sigma, beta, coupling)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarksConfig {
    PointSet { points: Vec<Vec<f64>> },
    SphereShell { dim: usize, radius: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct JumpConfig {
    pub intensity: f64,
    pub marks: MarksConfig,
}

impl JumpConfig {
    pub fn none(dim: usize) -> Self {
        Self { intensity: 0.0, marks: MarksConfig::SphereShell { dim, radius: 1.0 } }
    }

    pub fn build(&self) -> Result<LevyJumpSpec> {
        let marks = match &self.marks {
            MarksConfig::PointSet { points } => {
                MarkSampler::PointSet { points: points.iter().map(|p| vec_to_point(p)).collect() }
            }
            MarksConfig::SphereShell { dim, radius } => {
                MarkSampler::SphereShell { dim: *dim, radius: *radius }
            }
        };
        LevyJumpSpec::new(self.intensity, marks)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Point { value: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl InitialConfig {
    pub fn build(&self) -> InitialSampler {
        match self {
            Self::Point { value } => InitialSampler::Point(vec_to_point(value)),
            Self::Gaussian { mean, std } => {
                InitialSampler::Gaussian { mean: vec_to_point(mean), std: vec_to_point(std) }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_end: f64,
    pub steps: usize,
}

impl GridConfig {
    pub fn build(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.t_end, self.steps)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RunningCostConfig {
    Zero,
    ActionSquare,
    ActionGapSquare { target: Vec<f64> },
    StateSquare,
    ActionPlusStateSquare,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReflectionCostConfig {
    Zero,
    Constant { value: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalCostConfig {
    Zero,
    Square,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub running: RunningCostConfig,
    pub reflection: ReflectionCostConfig,
    pub terminal: TerminalCostConfig,
}

impl CostConfig {
    pub fn build(&self) -> CostSpec {
        CostSpec {
            running: match &self.running {
                RunningCostConfig::Zero => RunningCostKind::Zero,
                RunningCostConfig::ActionSquare => RunningCostKind::ActionSquare,
                RunningCostConfig::ActionGapSquare { target } => {
                    RunningCostKind::ActionGapSquare { target: vec_to_point(target) }
                }
                RunningCostConfig::StateSquare => RunningCostKind::StateSquare,
                RunningCostConfig::ActionPlusStateSquare => RunningCostKind::ActionPlusStateSquare,
            },
            reflection: match &self.reflection {
                ReflectionCostConfig::Zero => ReflectionCostKind::Zero,
                ReflectionCostConfig::Constant { value } => ReflectionCostKind::Constant(*value),
            },
            terminal: match &self.terminal {
                TerminalCostConfig::Zero => TerminalCostKind::Zero,
                TerminalCostConfig::Square => TerminalCostKind::Square,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlConfig {
    /// Constant strict control by action index.
    StrictConstant { action: usize },
    /// Per-step strict control by action index.
    StrictSteps { indices: Vec<usize> },
    /// The same weight vector at every step.
    RelaxedStationary { weights: Vec<f64> },
    /// Per-step weight rows.
    RelaxedSteps { rows: Vec<Vec<f64>> },
}

impl ControlConfig {
    pub fn build(&self, actions: &ActionSet, steps: usize) -> Result<AttachedControl> {
        Ok(match self {
            Self::StrictConstant { action } => {
                AttachedControl::Strict(StrictControl::constant(actions.clone(), *action, steps)?)
            }
            Self::StrictSteps { indices } => {
                if indices.len() != steps {
                    return Err(Error::InvalidConfig(format!(
                        "strict control has {} steps, grid has {steps}",
                        indices.len()
                    )));
                }
                AttachedControl::Strict(StrictControl::new(actions.clone(), indices.clone())?)
            }
            Self::RelaxedStationary { weights } => AttachedControl::Relaxed(
                RelaxedControl::stationary(actions.clone(), weights.clone(), steps)?,
            ),
            Self::RelaxedSteps { rows } => {
                if rows.len() != steps {
                    return Err(Error::InvalidConfig(format!(
                        "relaxed control has {} steps, grid has {steps}",
                        rows.len()
                    )));
                }
                AttachedControl::Relaxed(RelaxedControl::new(actions.clone(), rows.clone())?)
            }
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ActionSetConfig {
    pub actions: Vec<Vec<f64>>,
}

impl ActionSetConfig {
    pub fn build(&self) -> Result<ActionSet> {
        ActionSet::new(self.actions.iter().map(|a| vec_to_point(a)).collect())
    }
}
