use serde::{Deserialize, Serialize};

use crate::error::{EarError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_key: usize,
    pub d_value: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub num_classes: usize,
    /// Dropout on attention probabilities during training. Entropies are
    /// always taken before dropout.
    pub attention_dropout: f64,
}

impl ModelConfig {
    /// Desk-scale defaults for a given vocabulary size.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            layers: 2,
            heads: 2,
            d_model: 32,
            d_key: 16,
            d_value: 16,
            d_ff: 64,
            vocab_size,
            max_len: 120,
            num_classes: 2,
            attention_dropout: 0.0,
        }
    }

    /// Applies one `key=value` architecture setting. Returns `Ok(false)` for
    /// keys this struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = || EarError::InvalidInput(format!("invalid value {value:?} for {key}"));
        match key {
            "layers" => self.layers = value.parse().map_err(|_| bad())?,
            "heads" => self.heads = value.parse().map_err(|_| bad())?,
            "d_model" => self.d_model = value.parse().map_err(|_| bad())?,
            "d_key" => self.d_key = value.parse().map_err(|_| bad())?,
            "d_value" => self.d_value = value.parse().map_err(|_| bad())?,
            "d_ff" => self.d_ff = value.parse().map_err(|_| bad())?,
            "attention_dropout" => self.attention_dropout = value.parse().map_err(|_| bad())?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_key", self.d_key),
            ("d_value", self.d_value),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(EarError::InvalidInput(format!("{name} must be at least 1")));
        }
        if self.heads * self.d_value != self.d_model {
            return Err(EarError::InvalidInput(format!(
                "heads·d_value = {}·{} must equal d_model = {}",
                self.heads, self.d_value, self.d_model
            )));
        }
        if self.max_len < 2 {
            return Err(EarError::InvalidInput("max_len must be at least 2".into()));
        }
        if self.num_classes != 2 {
            return Err(EarError::InvalidInput("only binary classification is supported".into()));
        }
        if !(0.0..1.0).contains(&self.attention_dropout) {
            return Err(EarError::InvalidInput("attention_dropout must be in [0,1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_by_key() {
        let mut c = ModelConfig::desk(10);
        assert!(c.set("layers", "3").unwrap());
        assert!(c.set("attention_dropout", "0.1").unwrap());
        assert!(!c.set("alpha", "0.1").unwrap());
        assert!(c.set("heads", "two").is_err());
        assert_eq!((c.layers, c.attention_dropout), (3, 0.1));
    }

    #[test]
    fn desk_defaults_are_valid() {
        let c = ModelConfig::desk(100);
        c.validate().unwrap();
        assert_eq!((c.layers, c.heads, c.d_model, c.d_key, c.d_value, c.d_ff), (2, 2, 32, 16, 16, 64));
    }

    #[test]
    fn head_concatenation_must_match_model_dim() {
        let mut c = ModelConfig::desk(10);
        c.d_value = 8;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(10);
        c.layers = 0;
        assert!(c.validate().is_err());
    }
}
