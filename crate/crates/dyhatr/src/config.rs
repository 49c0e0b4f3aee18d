//! Whole-experiment configuration: one JSON document naming the dataset,
//! its on-disk format, and the training/evaluation settings.

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::graph::{load_edge_list, DynamicGraph, FormatDescriptor};
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Edge-list file. Relative paths resolve against the process's working
    /// directory, not the config file's location.
    pub dataset: PathBuf,
    pub format: FormatDescriptor,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Seed for carving the held-out snapshot into val/train/test links.
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(json)
            .map_err(|e| Error::Config(format!("bad experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::Config("dataset path is empty".into()));
        }
        self.format.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<DynamicGraph> {
        load_edge_list(&self.dataset, Some(&self.format))
    }

    /// SHA-256 of the canonical JSON form. Canonicalization goes through
    /// `serde_json::Value`, whose objects sort keys, so two documents that
    /// differ only in key order or whitespace hash identically. The output
    /// directory is excluded: it locates results but is not part of the
    /// experiment's identity.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value.as_object_mut().expect("config is an object").remove("out_dir");
        let canonical = value.to_string();
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_json() -> String {
        r#"{
            "dataset": "data/edges.tsv",
            "format": {"src_col": 0, "dst_col": 1, "snapshot_col": 2},
            "train": {"seed": 9},
            "split_seed": 4
        }"#
        .to_string()
    }

    #[test]
    fn parses_with_defaults_and_round_trips() {
        let cfg = ExperimentConfig::from_json(&base_json()).unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.split_seed, 4);
        assert_eq!(cfg.out_dir, PathBuf::from("out"));
        assert_eq!(cfg.eval, EvalConfig::default());
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn hash_ignores_key_order_and_whitespace() {
        let reordered = r#"{
            "split_seed": 4,
            "train": {"seed": 9},
            "format": {"dst_col": 1, "snapshot_col": 2, "src_col": 0},
            "dataset": "data/edges.tsv"
        }"#;
        let a = ExperimentConfig::from_json(&base_json()).unwrap();
        let b = ExperimentConfig::from_json(reordered).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn hash_distinguishes_different_settings() {
        let a = ExperimentConfig::from_json(&base_json()).unwrap();
        let mut b = a.clone();
        b.split_seed = 5;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = ExperimentConfig::from_json(&base_json()).unwrap();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let unknown = r#"{"dataset": "d", "format": {"src_col": 0, "dst_col": 1, "snapshot_col": 2}, "bogus": 1}"#;
        assert!(matches!(ExperimentConfig::from_json(unknown), Err(Error::Config(_))));
        let bad_train = r#"{
            "dataset": "d",
            "format": {"src_col": 0, "dst_col": 1, "snapshot_col": 2},
            "train": {"walk_len": 0}
        }"#;
        assert!(matches!(ExperimentConfig::from_json(bad_train), Err(Error::Config(_))));
    }

    #[test]
    fn missing_config_file_is_an_io_error() {
        let err = ExperimentConfig::from_path(Path::new("/nonexistent/cfg.json")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }
}
