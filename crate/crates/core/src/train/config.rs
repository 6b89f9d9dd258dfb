use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EarError, Result};

/// Optimization settings. Defaults follow the published fine-tuning recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub max_epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping; `None`
    /// disables early stopping and keeps the final epoch's parameters.
    pub patience: Option<usize>,
    /// Regularization strength of the entropy term.
    pub alpha: f64,
    pub seed: u64,
    /// Divide each sample's loss by the training prior of its class.
    pub use_class_weights: bool,
    pub max_len: usize,
    /// Softmax re-normalization of head-averaged attention before taking
    /// entropies. Disable only for ablations.
    pub renormalize: bool,
    /// Fraction of the training file held out for validation when no
    /// separate validation file is given.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 2e-5,
            weight_decay: 0.01,
            warmup_fraction: 0.10,
            max_epochs: 30,
            patience: Some(5),
            alpha: 0.01,
            seed: 0,
            use_class_weights: false,
            max_len: 120,
            renormalize: true,
            validation_fraction: 0.10,
        }
    }
}

/// Named presets selectable with `preset=<name>`.
pub const PRESETS: [&str; 2] = ["default", "ear-fixed-epochs"];

impl TrainConfig {
    /// `ear-fixed-epochs`: 20 epochs, no early stopping, α = 0.01.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "ear-fixed-epochs" => Ok(Self {
                max_epochs: 20,
                patience: None,
                alpha: 0.01,
                ..Self::default()
            }),
            other => Err(EarError::InvalidInput(format!(
                "unknown preset {other:?} (known: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(EarError::InvalidInput(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return fail(format!("warmup_fraction {} outside [0,1)", self.warmup_fraction));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail(format!("validation_fraction {} outside [0,1)", self.validation_fraction));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return fail(format!("learning_rate {} must be finite and ≥ 0", self.learning_rate));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return fail(format!("weight_decay {} must be finite and ≥ 0", self.weight_decay));
        }
        if !self.alpha.is_finite() {
            return fail("alpha must be finite".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1".into());
        }
        if self.max_len < 2 {
            return fail("max_len must be at least 2".into());
        }
        Ok(())
    }

    /// Applies one `key=value` setting. Returns `Ok(false)` for keys this
    /// struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = || EarError::InvalidInput(format!("invalid value {value:?} for {key}"));
        macro_rules! parse {
            () => {
                value.parse().map_err(|_| bad())?
            };
        }
        match key {
            "preset" => *self = Self::preset(value)?,
            "batch_size" => self.batch_size = parse!(),
            "learning_rate" => self.learning_rate = parse!(),
            "weight_decay" => self.weight_decay = parse!(),
            "warmup_fraction" => self.warmup_fraction = parse!(),
            "max_epochs" => self.max_epochs = parse!(),
            "patience" => {
                self.patience = match value {
                    "none" | "off" => None,
                    v => Some(v.parse().map_err(|_| bad())?),
                }
            }
            "alpha" => self.alpha = parse!(),
            "seed" => self.seed = parse!(),
            "use_class_weights" => self.use_class_weights = parse_bool(value).ok_or_else(bad)?,
            "max_len" => self.max_len = parse!(),
            "renormalize" => self.renormalize = parse_bool(value).ok_or_else(bad)?,
            "validation_fraction" => self.validation_fraction = parse!(),
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// `key=value` lines mirroring the field names, plus `preset=`.
    pub fn to_config_string(&self) -> String {
        let patience = self.patience.map_or("none".to_string(), |p| p.to_string());
        format!(
            "batch_size={}\nlearning_rate={}\nweight_decay={}\nwarmup_fraction={}\nmax_epochs={}\n\
             patience={}\nalpha={}\nseed={}\nuse_class_weights={}\nmax_len={}\nrenormalize={}\n\
             validation_fraction={}\n",
            self.batch_size,
            self.learning_rate,
            self.weight_decay,
            self.warmup_fraction,
            self.max_epochs,
            patience,
            self.alpha,
            self.seed,
            self.use_class_weights,
            self.max_len,
            self.renormalize,
            self.validation_fraction
        )
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

/// One `key=value` line of a config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigEntry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parses `key=value` lines; blank lines and `#` comments are ignored.
pub fn parse_config(text: &str, path: &Path) -> Result<Vec<ConfigEntry>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| EarError::parse(path, idx + 1, "expected key=value"))?;
        out.push(ConfigEntry {
            line: idx + 1,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}
