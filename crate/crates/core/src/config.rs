//! One TOML config file covering every tunable in the pipeline. All fields
//! default; a file only needs the keys it overrides.

use serde::{Deserialize, Serialize};

use crate::armshare::ArmShareConfig;
use crate::baselines::DEFAULT_DLS_DAMPING;
use crate::intervene::Authority;
use crate::retarget::CostWeights;
use crate::solver::SolverConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config file: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Retargeting objective parameters.
    pub weights: CostWeights,
    /// Per-step solver settings.
    pub solver: SolverConfig,
    /// Residual arm shared control (also carries the 50 Hz control period
    /// and VR tick period).
    pub armshare: ArmShareConfig,
    pub fusion: FusionConfig,
    /// Jacobian-baseline pseudo-inverse damping (meters).
    pub jacobian_damping: f64,
    /// Mock policy chunk length; only the first action of each chunk runs.
    pub policy_horizon: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            weights: CostWeights::default(),
            solver: SolverConfig::default(),
            armshare: ArmShareConfig::default(),
            fusion: FusionConfig::default(),
            jacobian_damping: DEFAULT_DLS_DAMPING,
            policy_horizon: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Copilot authority weights; autonomous and full takeover are fixed.
    pub copilot: Authority,
}

impl SimConfig {
    pub fn load(path: &std::path::Path) -> Result<SimConfig, ConfigError> {
        SimConfig::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml_str(text: &str) -> Result<SimConfig, ConfigError> {
        Ok(toml::from_str(text)?)
    }
}

impl SimConfig {
    pub fn control_period(&self) -> f64 {
        self.armshare.control_period
    }
}
