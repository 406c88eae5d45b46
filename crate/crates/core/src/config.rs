//! Flat key=value configuration with a closed schema.
//!
//! Every run is controlled by the same key set; unknown keys are
//! rejected up front with the list of valid ones, so typos cannot pass
//! silently. Precedence is total and simple: built-in defaults, then the
//! config file, then `--set` overrides, later wins.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::training::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    UInt,
    Float,
    Text,
}

/// The closed schema: key, type, default.
const SCHEMA: &[(&str, Kind, &str)] = &[
    ("seed", Kind::UInt, "42"),
    ("embedding_dim", Kind::UInt, "256"),
    ("hidden_dim", Kind::UInt, "512"),
    ("learning_rate", Kind::Float, "0.05"),
    ("batch_size", Kind::UInt, "32"),
    ("epochs", Kind::UInt, "10"),
    ("grad_clip_norm", Kind::Float, "5.0"),
    ("rmsprop_decay", Kind::Float, "0.95"),
    ("rmsprop_eps", Kind::Float, "1e-6"),
    ("k_alignments", Kind::UInt, "10"),
    ("frequent_size", Kind::UInt, "2000"),
    ("align_iterations", Kind::UInt, "5"),
    // 0 disables the diagonal positional prior
    ("diagonal_tension", Kind::Float, "0"),
    ("min_count_source", Kind::UInt, "2"),
    ("min_count_target", Kind::UInt, "1"),
    ("coverage_top_n", Kind::UInt, "30000"),
    ("beam_width", Kind::UInt, "1"),
    ("max_decode_len", Kind::UInt, "50"),
    ("lead_k", Kind::UInt, "20"),
    // greedy | beam | lead
    ("decode_mode", Kind::Text, "greedy"),
    ("train_corpus", Kind::Text, ""),
    ("valid_corpus", Kind::Text, ""),
    ("test_corpus", Kind::Text, ""),
    ("sources_file", Kind::Text, ""),
    ("references_file", Kind::Text, ""),
    ("outputs_file", Kind::Text, ""),
    ("lm_corpus", Kind::Text, ""),
    ("alignment_table", Kind::Text, ""),
    ("checkpoint", Kind::Text, ""),
    ("checkpoint_dir", Kind::Text, ""),
    ("coverage_report", Kind::Text, ""),
    ("generate_output", Kind::Text, ""),
    ("trace_output", Kind::Text, ""),
    ("eval_report", Kind::Text, ""),
    ("src_vocab", Kind::Text, ""),
    ("tgt_vocab", Kind::Text, ""),
    ("frequent_vocab", Kind::Text, ""),
    // content hashes recorded into checkpoint snapshots
    ("src_vocab_hash", Kind::Text, ""),
    ("tgt_vocab_hash", Kind::Text, ""),
    ("table_hash", Kind::Text, ""),
];

fn schema_entry(key: &str) -> Option<&'static (&'static str, Kind, &'static str)> {
    SCHEMA.iter().find(|(k, _, _)| *k == key)
}

fn valid_keys() -> String {
    SCHEMA
        .iter()
        .map(|(k, _, _)| *k)
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<&'static str, String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            values: SCHEMA.iter().map(|(k, _, d)| (*k, d.to_string())).collect(),
        }
    }
}

impl Config {
    /// Set one key, validating name and value type.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let Some((canonical, kind, _)) = schema_entry(key) else {
            return Err(Error::Schema(format!(
                "unknown config key '{key}'; valid keys: {}",
                valid_keys()
            )));
        };
        match kind {
            Kind::UInt => {
                value.parse::<u64>().map_err(|_| {
                    Error::Config(format!("{key}: expected an unsigned integer, got '{value}'"))
                })?;
            }
            Kind::Float => {
                value.parse::<f64>().map_err(|_| {
                    Error::Config(format!("{key}: expected a number, got '{value}'"))
                })?;
            }
            Kind::Text => {}
        }
        self.values.insert(canonical, value.to_string());
        Ok(())
    }

    /// Parse `key=value` lines; '#' starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key=value, got '{line}'",
                    lineno + 1
                )));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn uint(&self, key: &str) -> u64 {
        self.values[schema_entry(key).expect("schema key").0]
            .parse()
            .expect("validated")
    }

    pub fn float(&self, key: &str) -> f64 {
        self.values[schema_entry(key).expect("schema key").0]
            .parse()
            .expect("validated")
    }

    pub fn text(&self, key: &str) -> &str {
        &self.values[schema_entry(key).expect("schema key").0]
    }

    /// Text value, erroring with the key name when empty.
    pub fn required_path(&self, key: &str) -> Result<&str> {
        let v = self.text(key);
        if v.is_empty() {
            return Err(Error::Config(format!("config key '{key}' is required")));
        }
        Ok(v)
    }

    /// Every key, sorted, one `key=value` line each. This is the
    /// canonical form used for hashing and checkpoint snapshots.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(self.canonical_text().as_bytes())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            embedding_dim: self.uint("embedding_dim") as usize,
            hidden_dim: self.uint("hidden_dim") as usize,
            learning_rate: self.float("learning_rate"),
            batch_size: self.uint("batch_size") as usize,
            k_alignments: self.uint("k_alignments") as usize,
            frequent_size: self.uint("frequent_size") as usize,
            epochs: self.uint("epochs") as usize,
            grad_clip_norm: self.float("grad_clip_norm"),
            rmsprop_decay: self.float("rmsprop_decay"),
            rmsprop_eps: self.float("rmsprop_eps"),
            seed: self.uint("seed"),
        }
    }

    /// The diagonal prior is off at tension zero.
    pub fn diagonal_tension(&self) -> Option<f64> {
        let t = self.float("diagonal_tension");
        (t > 0.0).then_some(t)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_values() {
        let cfg = Config::default();
        assert_eq!(cfg.uint("embedding_dim"), 256);
        assert_eq!(cfg.uint("hidden_dim"), 512);
        assert_eq!(cfg.float("learning_rate"), 0.05);
        assert_eq!(cfg.uint("batch_size"), 32);
        assert_eq!(cfg.uint("k_alignments"), 10);
        assert_eq!(cfg.uint("frequent_size"), 2000);
        assert_eq!(cfg.uint("lead_k"), 20);
        assert!(cfg.diagonal_tension().is_none());
    }

    #[test]
    fn unknown_key_names_valid_keys() {
        let mut cfg = Config::default();
        let err = cfg.set("hiden_dim", "64").unwrap_err();
        assert_eq!(err.category(), "schema");
        assert!(err.to_string().contains("hidden_dim"));
    }

    #[test]
    fn type_errors_are_config_errors() {
        let mut cfg = Config::default();
        assert_eq!(
            cfg.set("batch_size", "many").unwrap_err().category(),
            "config"
        );
        assert_eq!(
            cfg.set("learning_rate", "fast").unwrap_err().category(),
            "config"
        );
    }

    #[test]
    fn file_text_and_overrides_layer_in_order() {
        let mut cfg = Config::from_text("# comment\nhidden_dim=64\n\nseed=7\n").unwrap();
        assert_eq!(cfg.uint("hidden_dim"), 64);
        assert_eq!(cfg.uint("seed"), 7);
        cfg.set("hidden_dim", "32").unwrap();
        assert_eq!(cfg.uint("hidden_dim"), 32);
    }

    #[test]
    fn canonical_text_round_trips_and_hashes_stably() {
        let mut cfg = Config::default();
        cfg.set("train_corpus", "x.tsv").unwrap();
        let text = cfg.canonical_text();
        let back = Config::from_text(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.content_hash(), back.content_hash());
        let mut other = cfg.clone();
        other.set("seed", "43").unwrap();
        assert_ne!(cfg.content_hash(), other.content_hash());
    }

    #[test]
    fn train_config_mirrors_keys() {
        let cfg = Config::from_text("epochs=3\nbatch_size=4\n").unwrap();
        let tc = cfg.train_config();
        assert_eq!(tc.epochs, 3);
        assert_eq!(tc.batch_size, 4);
        assert_eq!(tc.rmsprop_decay, 0.95);
        tc.validate().unwrap();
    }
}
