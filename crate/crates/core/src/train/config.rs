use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::AdamConfig;
use crate::model::{ModelDims, VariantKind};
use crate::parallel::Execution;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Everything a training run depends on. Serialised as flat `key = value`
/// lines; see [`TrainConfig::keys`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: VariantKind,
    pub data: Option<String>,
    pub output_dir: String,
    pub max_seq_len: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub dropout: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Overrides the split stream derived from `seed`.
    pub split_seed: Option<u64>,
    pub train_ratio: f64,
    pub validation_fraction: f64,
    /// Keep this many randomly chosen students (0 keeps all).
    pub subsample_students: usize,
    /// Rows per gradient shard; shards run in parallel.
    pub shard_size: usize,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: VariantKind::Full,
            data: None,
            output_dir: "out".into(),
            max_seq_len: 200,
            embed_dim: 64,
            hidden_dim: 64,
            model_dim: 64,
            n_heads: 4,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            dropout: 0.2,
            patience: 10,
            max_epochs: 200,
            seed: 42,
            split_seed: None,
            train_ratio: 0.8,
            validation_fraction: 0.1,
            subsample_students: 0,
            shard_size: 8,
            execution: Execution::Parallel,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn optional(value: &str) -> Option<&str> {
    match value {
        "" | "none" | "auto" => None,
        v => Some(v),
    }
}

impl TrainConfig {
    pub fn keys() -> &'static [&'static str] {
        &[
            "batch_size",
            "beta1",
            "beta2",
            "data",
            "dropout",
            "embed_dim",
            "eps",
            "execution",
            "hidden_dim",
            "learning_rate",
            "max_epochs",
            "max_seq_len",
            "model_dim",
            "n_heads",
            "output_dir",
            "patience",
            "seed",
            "shard_size",
            "split_seed",
            "subsample_students",
            "train_ratio",
            "validation_fraction",
            "variant",
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "variant" => {
                self.variant = value.parse().map_err(|e: crate::model::ModelError| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    reason: e.to_string(),
                })?
            }
            "data" => self.data = optional(value).map(str::to_string),
            "output_dir" => self.output_dir = value.to_string(),
            "max_seq_len" => self.max_seq_len = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "model_dim" => self.model_dim = parse(key, value)?,
            "n_heads" => self.n_heads = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "split_seed" => self.split_seed = optional(value).map(|v| parse(key, v)).transpose()?,
            "train_ratio" => self.train_ratio = parse(key, value)?,
            "validation_fraction" => self.validation_fraction = parse(key, value)?,
            "subsample_students" => self.subsample_students = parse(key, value)?,
            "shard_size" => self.shard_size = parse(key, value)?,
            "execution" => {
                self.execution = match value {
                    "parallel" => Execution::Parallel,
                    "sequential" => Execution::Sequential,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                            reason: "expected `parallel` or `sequential`".into(),
                        })
                    }
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (key, value) in parse_pairs(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.into()));
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be at least 2");
        }
        if [self.embed_dim, self.hidden_dim, self.model_dim, self.n_heads, self.batch_size, self.shard_size]
            .contains(&0)
        {
            return bad("dims, batch_size and shard_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be at least 1");
        }
        Ok(())
    }

    /// Effective config, one entry per key.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let e = |v: &dyn Display| v.to_string();
        let pairs: [(&str, String); 23] = [
            ("variant", e(&self.variant)),
            ("data", self.data.clone().unwrap_or_else(|| "none".into())),
            ("output_dir", self.output_dir.clone()),
            ("max_seq_len", e(&self.max_seq_len)),
            ("embed_dim", e(&self.embed_dim)),
            ("hidden_dim", e(&self.hidden_dim)),
            ("model_dim", e(&self.model_dim)),
            ("n_heads", e(&self.n_heads)),
            ("batch_size", e(&self.batch_size)),
            ("learning_rate", e(&self.learning_rate)),
            ("beta1", e(&self.beta1)),
            ("beta2", e(&self.beta2)),
            ("eps", e(&self.eps)),
            ("dropout", e(&self.dropout)),
            ("patience", e(&self.patience)),
            ("max_epochs", e(&self.max_epochs)),
            ("seed", e(&self.seed)),
            ("split_seed", self.split_seed.map_or_else(|| "auto".into(), |s| s.to_string())),
            ("train_ratio", e(&self.train_ratio)),
            ("validation_fraction", e(&self.validation_fraction)),
            ("subsample_students", e(&self.subsample_students)),
            ("shard_size", e(&self.shard_size)),
            (
                "execution",
                match self.execution {
                    Execution::Parallel => "parallel".into(),
                    Execution::Sequential => "sequential".into(),
                },
            ),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Sorted `key = value` lines; parses back to the same config.
    pub fn to_text(&self) -> String {
        self.to_map().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of [`TrainConfig::to_text`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn dims(&self, n_questions: usize, n_kcs: usize, n_literacy: usize) -> ModelDims {
        ModelDims {
            n_questions,
            n_kcs,
            n_literacy,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            model_dim: self.model_dim,
            n_heads: self.n_heads,
            max_seq_len: self.max_seq_len,
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed
            .unwrap_or_else(|| crate::rng::stream_seed(self.seed, "split", &[]))
    }
}

/// Splits `key = value` lines. `#` starts a comment line.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            });
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.set("max_seq_len", "20").unwrap();
        c.set("variant", "wo_head").unwrap();
        c.set("split_seed", "9").unwrap();
        c.set("data", "x/y.csv").unwrap();
        let back = TrainConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.to_map().len(), TrainConfig::keys().len());
        for k in TrainConfig::keys() {
            assert!(c.to_map().contains_key(*k), "{k}");
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert_eq!(
            TrainConfig::from_text("colour = blue"),
            Err(ConfigError::UnknownKey("colour".into()))
        );
        assert!(matches!(
            TrainConfig::from_text("batch_size = lots"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(TrainConfig::from_text("patience = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(TrainConfig::from_text("no equals"), Err(ConfigError::Syntax { line: 1, .. })));
    }

    #[test]
    fn comments_and_defaults() {
        let c = TrainConfig::from_text("# a comment\n\nlearning_rate = 0.01\n").unwrap();
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.patience, 10);
        assert_eq!(c.adam().beta2, 0.999);
    }
}
