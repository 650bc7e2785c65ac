//! Flat training configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderKind;
use crate::error::{FiltError, Result};
use crate::model::{ConceptVariant, ModelConfig};
use crate::numeric::{Activation, OptimizerConfig, OptimizerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub time_dim: usize,
    /// Support quadruples per entity (K).
    pub shots: usize,
    /// Entities per meta-training task (N).
    pub entities_per_task: usize,
    pub negatives: usize,
    pub margin: f64,
    pub lambda: f64,
    pub dropout: f64,
    pub activation: Activation,
    pub encoder: EncoderKind,
    pub concepts: ConceptVariant,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batches: usize,
    pub eval_every: usize,
    pub data_seed: u64,
    pub model_seed: u64,
    pub episode_seed: u64,
    /// Seed of the evaluation support draws.
    pub eval_seed: u64,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
    /// Divide each episode loss by its number of queries.
    pub mean_loss: bool,
    /// Exclude known true entities from training negatives.
    pub filter_negatives: bool,
    /// Initial value of both concept gates.
    pub gate_init: f64,
    pub train_gates: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            time_dim: 8,
            shots: 3,
            entities_per_task: 100,
            negatives: 32,
            margin: 1.0,
            lambda: 0.2,
            dropout: 0.3,
            activation: Activation::LeakyRelu,
            encoder: EncoderKind::Filt,
            concepts: ConceptVariant::Full,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            batches: 15000,
            eval_every: 500,
            data_seed: 0,
            model_seed: 0,
            episode_seed: 0,
            eval_seed: 0,
            pretrain_epochs: 100,
            pretrain_lr: 1e-2,
            pretrain_batch: 512,
            mean_loss: false,
            filter_negatives: false,
            gate_init: 1.0,
            train_gates: true,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| FiltError::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FiltError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Read an optional TOML file, then apply `key=value` overrides. Values
    /// are parsed as TOML (so `lr=0.01` is a float and `encoder=rgcn` a string).
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| FiltError::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| FiltError::InvalidArgument(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| FiltError::InvalidArgument(format!("override `{o}` is not key=value")))?;
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.trim().to_string(), value);
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e| FiltError::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FiltError::InvalidArgument(m));
        if self.shots == 0 {
            return bad("shots (K) must be >= 1".into());
        }
        if self.entities_per_task == 0 {
            return bad("entities_per_task (N) must be >= 1".into());
        }
        if self.batches == 0 {
            return bad("batches must be >= 1".into());
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        if self.pretrain_batch == 0 {
            return bad("pretrain_batch must be >= 1".into());
        }
        if !(self.lr > 0.0) || !(self.pretrain_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.dim == 0 || self.dim % 2 != 0 {
            return bad(format!("dim must be even and positive, got {}", self.dim));
        }
        if self.time_dim == 0 {
            return bad("time_dim must be >= 1".into());
        }
        self.model().validate()
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder,
            concepts: self.concepts,
            lambda: self.lambda,
            dropout: self.dropout,
            activation: self.activation,
            margin: self.margin,
            mean_loss: self.mean_loss,
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            lr: self.lr,
            ..OptimizerConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = TrainConfig::default();
        assert_eq!(TrainConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let p = TrainConfig::from_toml_str("shots = 1\nencoder = \"rgcn\"\nconcepts = \"no_concept\"\n").unwrap();
        assert_eq!(p.shots, 1);
        assert_eq!(p.encoder, EncoderKind::Rgcn);
        assert_eq!(p.negatives, 32);
    }

    #[test]
    fn overrides_take_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "lr = 0.5\nshots = 5\n").unwrap();
        let c = TrainConfig::load_with_overrides(Some(&p), &["shots=1".into(), "encoder=attention".into()]).unwrap();
        assert_eq!(c.lr, 0.5);
        assert_eq!(c.shots, 1);
        assert_eq!(c.encoder, EncoderKind::Attention);
        assert!(TrainConfig::load_with_overrides(None, &["shots".into()]).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(TrainConfig::from_toml_str("lambda = 0.0").is_err());
        assert!(TrainConfig::from_toml_str("shots = 0").is_err());
        assert!(TrainConfig::from_toml_str("batches = 0").is_err());
        assert!(TrainConfig::from_toml_str("unknown_key = 1").is_err());
    }
}
