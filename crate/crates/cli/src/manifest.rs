//! Run manifest: everything needed to repeat a training run.

use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{DateTime, Utc};
use rgbt_core::metadata::LAYOUT_VERSION;
use rgbt_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

pub const RUN_MANIFEST: &str = "run.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub layout_version: String,
    pub command: Vec<String>,
    pub data: PathBuf,
    pub preprocess_hash: String,
    pub seed: u64,
    pub folds_requested: Vec<usize>,
    pub blur_sigma: f64,
    pub config: TrainConfig,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn start(data: &Path, preprocess_hash: &str, folds: &[usize], blur_sigma: f64, config: &TrainConfig) -> Self {
        Self {
            code_version: crate::VERSION.to_string(),
            layout_version: LAYOUT_VERSION.to_string(),
            command: std::env::args().collect(),
            data: data.to_path_buf(),
            preprocess_hash: preprocess_hash.to_string(),
            seed: config.seed,
            folds_requested: folds.to_vec(),
            blur_sigma,
            config: config.clone(),
            started_at: Utc::now(),
            finished_at: None,
            outputs: Vec::new(),
        }
    }

    /// Writes via a temporary file so readers never see a partial manifest.
    pub fn write(&self, run_dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(run_dir)?;
        let path = run_dir.join(RUN_MANIFEST);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        std::fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Loads a training config from TOML, or from the `config` field of a
/// previous run manifest when the file ends in `.json`.
pub fn load_train_config(path: &Path) -> anyhow::Result<TrainConfig> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(RunManifest::read(path)?.config);
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "epochs = 3\n[loss_weights]\nlpips = 0.0\n[augment]\nhflip_p = 0.0\n").unwrap();
        let c = load_train_config(&p).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.loss_weights.lpips, 0.0);
        assert_eq!(c.loss_weights.msssim, TrainConfig::default().loss_weights.msssim);
        assert_eq!(c.augment.vflip_p, 0.3);
        assert_eq!(c.batch_size, 4);
    }

    #[test]
    fn manifest_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            seed: 7,
            epochs: 2,
            ..TrainConfig::default()
        };
        RunManifest::start(Path::new("d"), "abc", &[0], 0.5, &cfg).write(dir.path()).unwrap();
        assert_eq!(load_train_config(&dir.path().join(RUN_MANIFEST)).unwrap(), cfg);
    }
}
