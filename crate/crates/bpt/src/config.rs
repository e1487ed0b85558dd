//! Flat JSON run configuration. Command-line flags override file values.

use std::path::{Path, PathBuf};

use bpt_core::instances::{Mode, DEFAULT_SHARD_BYTES};
use bpt_core::stats::Tolerances;
use bpt_core::vocab::{DEFAULT_MIN_FREQUENCY, DEFAULT_TARGET_SIZE};
use bpt_core::InstanceConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Binary,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub amplify_vocab: bool,
    pub small_corpus: Option<PathBuf>,
    pub small_label: String,
    pub large_corpus: Option<PathBuf>,
    pub large_label: String,
    pub vocab: Option<PathBuf>,
    pub merges: Option<PathBuf>,
    pub target_size: usize,
    pub min_frequency: u64,
    pub each_file_size: u64,
    #[serde(flatten)]
    pub instances: InstanceConfig,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
    pub threads: Option<usize>,
    pub ruleset: Option<PathBuf>,
    pub tolerances: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Simpt,
            amplify_vocab: false,
            small_corpus: None,
            small_label: "small".into(),
            large_corpus: None,
            large_label: "large".into(),
            vocab: None,
            merges: None,
            target_size: DEFAULT_TARGET_SIZE,
            min_frequency: DEFAULT_MIN_FREQUENCY,
            each_file_size: DEFAULT_SHARD_BYTES,
            instances: InstanceConfig::default(),
            output: None,
            format: OutputFormat::Binary,
            threads: None,
            ruleset: None,
            tolerances: Tolerances::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_keys_round_trip() {
        let mut c = RunConfig::default();
        c.instances.master_seed = 7;
        c.mode = Mode::Conventional;
        let v = c.to_json();
        assert_eq!(v["master_seed"], 7);
        assert_eq!(v["mode"], "conventional");
        let back: RunConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"n_rounds": 3, "amplify_vocab": true}"#).unwrap();
        assert_eq!(c.instances.n_rounds, 3);
        assert!(c.amplify_vocab);
        assert_eq!(c.instances.max_seq_length, 128);
        assert_eq!(c.target_size, 32_000);
    }
}
