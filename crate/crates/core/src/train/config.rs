//! Training configuration, read from TOML with dotted keys.

use serde::{Deserialize, Serialize};

use crate::data::CorpusSpec;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Variant};
use crate::optim::{DEFAULT_CLIP_NORM, DEFAULT_LR, LR_DECAY, LR_DECAY_EVERY};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub seed: u64,
    pub batch_size: usize,
    pub max_steps: u64,
    /// Steps between metric rows.
    pub eval_interval: u64,
    /// Validation batches per metric row.
    pub eval_batches: usize,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    /// Steps of linear KL annealing.
    pub anneal_steps: u64,
    /// Fixed KL weight replacing the annealing schedule.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_weight: Option<f64>,
    /// Weight of the auxiliary reconstruction term.
    pub alpha: f64,
    /// Global gradient-norm cap; 0 disables it. Defaults to 5 for models with
    /// a recurrent or masked decoder and off for the feed-forward one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    /// Greedy prior samples written at the end of a run.
    pub samples: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            seed: 1,
            batch_size: 16,
            max_steps: 2000,
            eval_interval: 100,
            eval_batches: 4,
            checkpoint_interval: 500,
            lr: DEFAULT_LR,
            lr_decay: LR_DECAY,
            lr_decay_every: LR_DECAY_EVERY,
            anneal_steps: 1000,
            kl_weight: None,
            alpha: 0.2,
            clip_norm: None,
            samples: 5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub corpus: CorpusSpec,
    pub train: TrainSettings,
}

const OPTIONAL_KEYS: [&str; 2] = ["train.kl_weight", "train.clip_norm"];

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(one_line(&e.to_string())))?;
        check_keys(&table)?;
        table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(one_line(&e.to_string())))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sets one dotted key, e.g. `train.alpha=0.5`. The value is parsed as a
    /// TOML value and falls back to a plain string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table: toml::Table = toml::from_str(&self.to_toml()).expect("round trip");
        let parsed: toml::Value = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let parts: Vec<&str> = key.split('.').collect();
        let (last, path) = parts.split_last().expect("split yields one part");
        let mut node = &mut table;
        for p in path {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("unknown config key {key}")))?;
        }
        node.insert(last.to_string(), parsed);
        check_keys(&table)?;
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {}", one_line(&e.to_string()))))?;
        Ok(())
    }

    /// Effective gradient-norm cap.
    pub fn clip_norm(&self) -> Option<f64> {
        match self.train.clip_norm {
            Some(c) if c > 0.0 => Some(c),
            Some(_) => None,
            None if self.model.variant == Variant::ConvDeconv => None,
            None => Some(DEFAULT_CLIP_NORM),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if t.batch_size == 0 {
            return fail("train.batch_size must be positive");
        }
        if t.eval_interval == 0 || t.eval_batches == 0 {
            return fail("train.eval_interval and train.eval_batches must be positive");
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return fail("train.lr must be positive");
        }
        if t.anneal_steps == 0 {
            return fail("train.anneal_steps must be positive");
        }
        if !(t.alpha >= 0.0 && t.alpha.is_finite()) {
            return fail("train.alpha must be >= 0");
        }
        if let Some(w) = t.kl_weight {
            if !(w >= 0.0 && w.is_finite()) {
                return fail("train.kl_weight must be >= 0");
            }
        }
        if self.corpus.window == 0 {
            return fail("corpus.window must be positive");
        }
        Ok(())
    }

    /// Stable identifier of the resolved configuration.
    pub fn hash(&self) -> u64 {
        crate::data::text::fnv1a(self.to_toml().as_bytes())
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn check_keys(table: &toml::Table) -> Result<()> {
    let reference: toml::Table = toml::from_str(&TrainConfig::default().to_toml()).expect("round trip");
    let mut known = Vec::new();
    flatten("", &reference, &mut known);
    known.extend(OPTIONAL_KEYS.iter().map(|k| k.to_string()));
    let mut given = Vec::new();
    flatten("", table, &mut given);
    match given.into_iter().find(|k| !known.contains(k)) {
        Some(k) => Err(Error::Config(format!("unknown config key {k}"))),
        None => Ok(()),
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            _ => out.push(key),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_parse() {
        let c = TrainConfig::from_toml(
            "model.variant = \"hybrid_bytenet\"\nmodel.bytenet_layers = 5\ntrain.alpha = 0.5\ncorpus.source = \"synth:two_topic\"\n",
        )
        .unwrap();
        assert_eq!(c.model.variant, Variant::HybridBytenet);
        assert_eq!(c.model.bytenet_layers, 5);
        assert_eq!(c.train.alpha, 0.5);
        assert_eq!(c.train.batch_size, TrainSettings::default().batch_size);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = TrainConfig::from_toml("train.alpah = 0.1\n").unwrap_err();
        assert_eq!(err.to_string(), "config error: unknown config key train.alpah");
        let err = TrainConfig::from_toml("[model]\nfoo = 1\n").unwrap_err();
        assert!(err.to_string().contains("model.foo"));
    }

    #[test]
    fn round_trip_and_overrides() {
        let mut c = TrainConfig::default();
        c.set("train.kl_weight", "0").unwrap();
        c.set("model.variant", "lstm_vae").unwrap();
        c.set("corpus.source", "data/ptb.txt").unwrap();
        assert_eq!(c.train.kl_weight, Some(0.0));
        assert_eq!(c.model.variant, Variant::LstmVae);
        assert_eq!(c.corpus.source, "data/ptb.txt");
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(c.set("train.nope", "1").is_err());
        assert!(c.set("train.batch_size", "\"x\"").is_err());
    }

    #[test]
    fn clip_defaults_follow_variant() {
        let mut c = TrainConfig::default();
        assert_eq!(c.clip_norm(), Some(DEFAULT_CLIP_NORM));
        c.model.variant = Variant::ConvDeconv;
        assert_eq!(c.clip_norm(), None);
        c.train.clip_norm = Some(1.0);
        assert_eq!(c.clip_norm(), Some(1.0));
        c.train.clip_norm = Some(0.0);
        assert_eq!(c.clip_norm(), None);
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
