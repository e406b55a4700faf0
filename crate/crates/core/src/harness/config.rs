//! Run configuration: a JSON document layered over a named profile.
//!
//! Loading starts from the profile named by the optional `"profile"` key
//! (`"desk"` when absent), deep-merges the remaining keys over it, and then
//! validates the result. Unknown keys anywhere are rejected.
//!
//! ```json
//! { "profile": "paper", "seed": 3, "optimizer": { "epochs": 2000 } }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::losses::{GridConfig, LdGParams, LossConfig};
use crate::model::ModelConfig;
use crate::oracle::OracleConfig;
use crate::training::OptimizerConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Published hyperparameters with a trunk narrow enough for a single core.
    #[default]
    Desk,
    /// Published hyperparameters, including the 4000-wide trunk.
    Paper,
}

impl Profile {
    pub fn config(self) -> RunConfig {
        let mut cfg = RunConfig {
            profile: self,
            ..RunConfig::default()
        };
        if self == Profile::Paper {
            cfg.model.hidden_width = 4000;
        }
        cfg
    }
}

/// Thresholds the pipeline uses to decide pass/fail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceConfig {
    /// Required ratio of first-epoch to final PIML loss, per solution.
    pub piml_reduction: f64,
    /// Epochs at the end of training over which deflation must stay 0.
    pub deflation_tail_epochs: usize,
    /// Maximum relative full-field L² error per matched solution.
    pub classification_tol: f64,
    /// Maximum relative energy difference per matched solution.
    pub energy_rel_tol: f64,
    /// Training attempts (consecutive seeds) before giving up.
    pub max_attempts: usize,
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        AcceptanceConfig {
            piml_reduction: 100.0,
            deflation_tail_epochs: 1000,
            classification_tol: 0.15,
            energy_rel_tol: 0.10,
            max_attempts: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Run directory; the CLI's `--out` overrides it.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Checkpoint reused by `pipeline --skip-train` and `classify`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    /// Master seed; copied into `model.init_seed`.
    pub seed: u64,
    pub model: ModelConfig,
    pub ldg: LdGParams,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub grid: GridConfig,
    pub oracle: OracleConfig,
    pub acceptance: AcceptanceConfig,
    pub output: OutputConfig,
    /// Log a progress line every this many epochs (0 disables).
    pub log_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: Profile::Desk,
            seed: 0,
            model: ModelConfig::default(),
            ldg: LdGParams::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            grid: GridConfig::default(),
            oracle: OracleConfig::default(),
            acceptance: AcceptanceConfig::default(),
            output: OutputConfig::default(),
            log_every: 500,
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let over: Value = if text.trim().is_empty() {
            Value::Object(Default::default())
        } else {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("parse error: {e}")))?
        };
        let Value::Object(mut over) = over else {
            return Err(Error::Config("top level must be a JSON object".into()));
        };
        let profile = match over.remove("profile") {
            None => Profile::default(),
            Some(v) => {
                serde_json::from_value(v).map_err(|e| Error::Config(format!("profile: {e}")))?
            }
        };
        let explicit_init_seed = over
            .get("model")
            .and_then(|m| m.get("init_seed"))
            .and_then(Value::as_u64);
        let mut base = serde_json::to_value(profile.config())?;
        merge(&mut base, Value::Object(over));
        let mut cfg: RunConfig =
            serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(s) = explicit_init_seed {
            if s != cfg.seed {
                return Err(Error::Config(format!(
                    "model.init_seed ({s}) conflicts with seed ({})",
                    cfg.seed
                )));
            }
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Fills derived fields and checks cross-field consistency.
    pub fn resolve(&mut self) -> Result<()> {
        self.model.init_seed = self.seed;
        self.model.validate()?;
        self.ldg.validate()?;
        self.ldg
            .trapezoid()
            .map_err(|e| Error::Config(format!("ldg.epsilon: {e}")))?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.grid.validate()?;
        self.oracle.validate()?;
        if self.loss.alpha == 0.0 && self.loss.beta == 0.0 && self.optimizer.epochs > 0 {
            return Err(Error::Config(
                "alpha and beta are both zero; training would not move".into(),
            ));
        }
        if self.loss.beta > 0.0 && self.model.solution_count < 2 {
            return Err(Error::Config(
                "deflation (beta > 0) needs at least two solutions".into(),
            ));
        }
        if self.acceptance.max_attempts == 0 {
            return Err(Error::Config("acceptance.max_attempts must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Same configuration with a different master seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seed = seed;
        cfg.model.init_seed = seed;
        cfg
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json_str(&text)
}
