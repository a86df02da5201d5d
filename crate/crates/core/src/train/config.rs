use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::loss::LossConfig;
use crate::model::ModelConfig;

fn default_noise() -> f64 {
    0.1
}

fn default_spacing() -> [f64; 3] {
    [1.0; 3]
}

/// Where training volumes come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Generated from the run seed; `dims` defaults to the patch size.
    Synthetic {
        cases: usize,
        #[serde(default)]
        dims: Option<[usize; 3]>,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_spacing")]
        spacing: [f64; 3],
    },
    /// A directory of `PHVOL` image/label pairs.
    Directory { path: PathBuf },
}

fn d_lr() -> f64 {
    0.01
}
fn d_momentum() -> f64 {
    0.99
}
fn d_true() -> bool {
    true
}
fn d_wd() -> f64 {
    3e-5
}
fn d_power() -> f64 {
    0.9
}
fn d_batch() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Overridden by the command line when given there.
    #[serde(default)]
    pub seed: u64,
    pub iterations: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_true")]
    pub nesterov: bool,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    /// Exponent of the polynomial learning-rate decay.
    #[serde(default = "d_power")]
    pub lr_power: f64,
    /// Write `checkpoint_<iter>.ckpt` every this many iterations; 0 disables.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub loss: LossConfig,
    pub data: DataSpec,
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.batch_size == 0 {
            v.push(Violation::new("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            v.push(Violation::new("train.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            v.push(Violation::new("train.momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            v.push(Violation::new("train.weight_decay", "must be non-negative"));
        }
        if !(self.lr_power >= 0.0) {
            v.push(Violation::new("train.lr_power", "must be non-negative"));
        }
        if self.loss.ce_weight < 0.0 || self.loss.dice_weight < 0.0 || !(self.loss.dice_eps >= 0.0) {
            v.push(Violation::new("train.loss", "weights and eps must be non-negative"));
        }
        if let DataSpec::Synthetic { cases, noise, spacing, .. } = &self.data {
            if *cases == 0 {
                v.push(Violation::new("train.data.cases", "must be positive"));
            }
            if !(*noise >= 0.0) {
                v.push(Violation::new("train.data.noise", "must be non-negative"));
            }
            if spacing.iter().any(|&s| !(s > 0.0)) {
                v.push(Violation::new("train.data.spacing", "must be positive"));
            }
        }
        v
    }
}

/// A run file: `[model]` and `[train]` sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string().trim().replace('\n', " ")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn check(&self) -> Result<()> {
        let mut v = self.model.validate();
        v.extend(self.train.validate());
        if let DataSpec::Synthetic { dims: Some(d), .. } = &self.train.data {
            for a in 0..3 {
                if d[a] < self.model.patch_size[a] {
                    v.push(Violation::new(
                        format!("train.data.dims axis {}", a + 1),
                        format!("volume extent {} is smaller than patch extent {}", d[a], self.model.patch_size[a]),
                    ));
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Model section of a run file, or a file holding only model fields.
pub fn parse_model_config(text: &str) -> Result<ModelConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Format(e.to_string().trim().replace('\n', " ")))?;
    let cfg: ModelConfig = match table.get("model") {
        Some(toml::Value::Table(m)) => m.clone().try_into(),
        _ => table.try_into(),
    }
    .map_err(|e| Error::Format(e.to_string().trim().replace('\n', " ")))?;
    cfg.check()?;
    Ok(cfg)
}
