//! Experiment configuration: one structured JSON file naming the domain,
//! constraint map, coefficients, jump spec, grid, ensemble size, seeds, and
//! per-subcommand options.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mean_reflect::config::{
    ActionSetConfig, CoefficientConfig, ControlConfig, CostConfig, DomainConfig, GridConfig,
    InitialConfig, JumpConfig, MapConfig,
};
use mean_reflect::mckean::SystemSpec;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkorokhodSection {
    /// CSV with header `t,x1,...,xd`; node times define the solver grid.
    pub path_csv: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSection {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PicardSection {
    fn default() -> Self {
        Self { max_iter: 10, tol: 1e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosSection {
    pub n_list: Vec<usize>,
    pub n_ref: usize,
    #[serde(default = "default_picard_iter")]
    pub picard_max_iter: usize,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_audit")]
    pub audit_size: usize,
}

fn default_picard_iter() -> usize {
    8
}

fn default_picard_tol() -> f64 {
    1e-4
}

fn default_audit() -> usize {
    16
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub actions: ActionSetConfig,
    pub cost: CostConfig,
    /// Inline relaxed/strict control; `relaxed_csv` takes precedence.
    #[serde(default)]
    pub control: Option<ControlConfig>,
    /// CSV with header `step,w0,...,wA`: one weight row per grid step.
    #[serde(default)]
    pub relaxed_csv: Option<PathBuf>,
    #[serde(default = "default_chatter")]
    pub chatter_n_list: Vec<usize>,
    #[serde(default = "default_cells")]
    pub search_cells: usize,
}

fn default_chatter() -> Vec<usize> {
    vec![4, 16, 64]
}

fn default_cells() -> usize {
    2
}

/// Top-level experiment file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub domain: DomainConfig,
    /// Defaults to the identity map with zero offset.
    #[serde(default)]
    pub map: Option<MapConfig>,
    pub coefficients: CoefficientConfig,
    #[serde(default)]
    pub jumps: Option<JumpConfig>,
    pub grid: GridConfig,
    pub initial: InitialConfig,
    pub n_particles: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub skorokhod: Option<SkorokhodSection>,
    #[serde(default)]
    pub picard: Option<PicardSection>,
    #[serde(default)]
    pub chaos: Option<ChaosSection>,
    #[serde(default)]
    pub control: Option<ControlSection>,
}

/// A parsed configuration plus its provenance hash and base directory for
/// resolving relative paths.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
        config.validate()?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let sha256 = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>();
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(Self { config, sha256, base_dir })
    }

    /// Resolve a config-relative path.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.grid.t_end > 0.0) {
            return Err(CliError::Config("grid.t_end must be positive".into()));
        }
        if self.grid.steps == 0 {
            return Err(CliError::Config("grid.steps must be at least 1".into()));
        }
        if self.n_particles < 2 {
            return Err(CliError::Config("n_particles must be at least 2".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must be nonempty".into()));
        }
        Ok(())
    }

    /// Build the core system description.
    pub fn build_system(&self) -> Result<SystemSpec, CliError> {
        let domain = self.domain.build().map_err(config_err)?;
        let dim = domain.dim();
        let grid = self.grid.build().map_err(config_err)?;
        let map_cfg = self.map.clone().unwrap_or_else(|| MapConfig::identity(dim));
        let l = map_cfg.l_matrix().map_err(config_err)?;
        let jumps = self
            .jumps
            .clone()
            .unwrap_or_else(|| JumpConfig::none(dim))
            .build()
            .map_err(config_err)?;
        SystemSpec::new(
            self.coefficients.build(),
            jumps,
            domain,
            l,
            map_cfg.v.build(),
            grid,
            self.initial.build(),
        )
        .map_err(config_err)
    }
}

fn config_err(e: mean_reflect::Error) -> CliError {
    CliError::Config(e.to_string())
}
