//! Optional TOML file with parameter overrides. Command-line flags win over
//! the file, and the file wins over scenario files and built-in defaults.
//!
//! ```toml
//! seed = 7
//! out_dir = "runs/a"
//!
//! [drafter]
//! window = 16
//! recency_gamma = 0.8
//!
//! [optimizer]
//! p_max_factor = 4.0
//!
//! [latency]
//! c_base = 1.0
//! c_tok = 0.01
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use specroll::budget::{BudgetConfig, DEFAULT_P_MAX_FACTOR, DEFAULT_UNLIMITED_FACTOR};
use specroll::drafter::DrafterConfig;
use specroll::latency::LatencyParams;
use specroll::sim::{BudgetSettings, LengthPolicySettings};

use crate::output::{read_to_string, Failure};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub drafter: Option<DrafterConfig>,
    /// Simulator budget settings.
    pub budget: Option<BudgetSettings>,
    pub optimizer: Option<OptimizerConfig>,
    pub length_policy: Option<LengthPolicySettings>,
    pub latency: Option<LatencyParams>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub p_max_factor: f64,
    pub unlimited_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { p_max_factor: DEFAULT_P_MAX_FACTOR, unlimited_factor: DEFAULT_UNLIMITED_FACTOR }
    }
}

impl From<OptimizerConfig> for BudgetConfig {
    fn from(c: OptimizerConfig) -> Self {
        BudgetConfig { p_max_factor: c.p_max_factor, unlimited_factor: c.unlimited_factor }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = read_to_string(path)?;
        let cfg: CliConfig = toml::from_str(&text)
            .map_err(|e| Failure::invalid(format!("{}: {}", path.display(), e.message())))?;
        if let Some(o) = cfg.optimizer {
            if !(o.p_max_factor > 0.0 && o.unlimited_factor > 0.0) {
                return Err(Failure::invalid("optimizer factors must be > 0"));
            }
        }
        if let Some(d) = &cfg.drafter {
            d.validate().map_err(Failure::invalid)?;
        }
        Ok(cfg)
    }
}
