//! Self-describing single-file checkpoints: safetensors parameters plus a
//! JSON header carrying everything needed to rebuild and use the model.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::VarMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metadata::{Standardizer, LAYOUT_VERSION};
use crate::model::{UNetConfig, UNetModel};
use crate::preprocess::PreprocessConfig;

pub const CHECKPOINT_FORMAT: &str = "rgbt-checkpoint-v1";
const META_KEY: &str = "rgbt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Unet,
    Pix2pix,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unet" => Ok(ModelKind::Unet),
            "pix2pix" => Ok(ModelKind::Pix2pix),
            other => Err(Error::Config(format!("unknown model kind {other:?}; expected unet or pix2pix"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Unet => "unet",
            ModelKind::Pix2pix => "pix2pix",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: String,
    pub model_kind: ModelKind,
    pub unet: UNetConfig,
    pub standardizer: Standardizer,
    pub preprocess: PreprocessConfig,
    pub preprocess_hash: String,
    pub layout_version: String,
    pub fold: usize,
    pub epochs_completed: usize,
    pub seed: u64,
}

impl CheckpointMeta {
    pub fn new(
        model_kind: ModelKind,
        unet: UNetConfig,
        standardizer: Standardizer,
        preprocess: PreprocessConfig,
        fold: usize,
        seed: u64,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT.into(),
            model_kind,
            unet,
            standardizer,
            preprocess_hash: preprocess.hash(),
            preprocess,
            layout_version: LAYOUT_VERSION.into(),
            fold,
            epochs_completed: 0,
            seed,
        }
    }
}

/// Writes every variable of `varmap` and `meta` to `path` atomically.
pub fn save_checkpoint(path: &Path, varmap: &VarMap, meta: &CheckpointMeta) -> Result<()> {
    let tensors: Vec<(String, Tensor)> = {
        let data = varmap.data().lock().expect("varmap poisoned");
        let mut v: Vec<_> = data.iter().map(|(k, var)| (k.clone(), var.as_tensor().clone())).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    };
    let header = HashMap::from([(META_KEY.to_string(), serde_json::to_string(meta)?)]);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("safetensors.tmp");
    safetensors::serialize_to_file(tensors, Some(header), &tmp)
        .map_err(|e| Error::Checkpoint(format!("writing {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads only the JSON header.
pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = std::fs::read(path)?;
    meta_from_bytes(&bytes, path)
}

fn meta_from_bytes(bytes: &[u8], path: &Path) -> Result<CheckpointMeta> {
    let (_, st_meta) = safetensors::SafeTensors::read_metadata(bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let raw = st_meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::Checkpoint(format!("{} has no {META_KEY} header", path.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(raw)?;
    if meta.format_version != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "{}: format {} is not {CHECKPOINT_FORMAT}",
            path.display(),
            meta.format_version
        )));
    }
    if meta.layout_version != LAYOUT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: metadata layout {} is not {LAYOUT_VERSION}",
            path.display(),
            meta.layout_version
        )));
    }
    Ok(meta)
}

/// Copies named tensors from `tensors` into every variable of `varmap`.
pub fn fill_varmap(varmap: &VarMap, tensors: &HashMap<String, Tensor>, origin: &Path) -> Result<()> {
    let data = varmap.data().lock().expect("varmap poisoned");
    for (name, var) in data.iter() {
        let t = tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("{} lacks tensor {name}", origin.display())))?;
        var.set(&t.to_dtype(var.dtype())?)
            .map_err(|e| Error::Checkpoint(format!("{}: {name}: {e}", origin.display())))?;
    }
    Ok(())
}

/// Rebuilds the generator described by the header and loads its weights.
pub fn load_checkpoint(path: &Path, device: &Device) -> Result<(UNetModel, CheckpointMeta)> {
    let bytes = std::fs::read(path)?;
    let meta = meta_from_bytes(&bytes, path)?;
    let tensors = candle_core::safetensors::load_buffer(&bytes, device)?;
    let model = UNetModel::new(meta.unet.clone(), meta.seed, DType::F32, device)?;
    fill_varmap(&model.varmap, &tensors, path)?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metadata::{fit_standardizer, MetadataVector};

    #[test]
    fn round_trip_restores_weights_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = UNetConfig {
            encoder_widths: vec![4, 8, 16, 32],
            bottleneck_width: 64,
            film_hidden: 8,
            norm_groups: 8,
            input_size: 16,
            ..UNetConfig::default()
        };
        let model = UNetModel::new(cfg.clone(), 11, DType::F32, &Device::Cpu).unwrap();
        let vs: Vec<MetadataVector> = (0..3)
            .map(|i| MetadataVector::from_values([i as f64; 15]))
            .collect();
        let st = fit_standardizer(&vs, 2).unwrap();
        let meta = CheckpointMeta::new(ModelKind::Unet, cfg, st, PreprocessConfig::default(), 2, 11);
        let path = dir.path().join("m.safetensors");
        save_checkpoint(&path, &model.varmap, &meta).unwrap();
        assert_eq!(read_checkpoint_meta(&path).unwrap(), meta);

        let (loaded, m2) = load_checkpoint(&path, &Device::Cpu).unwrap();
        assert_eq!(m2.fold, 2);
        let a = model.varmap.data().lock().unwrap();
        let b = loaded.varmap.data().lock().unwrap();
        assert_eq!(a.len(), b.len());
        for (k, v) in a.iter() {
            let x = v.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let y = b[k].as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(x, y, "{k}");
        }
    }

    #[test]
    fn rejects_files_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bare.safetensors");
        let t = Tensor::zeros(3, DType::F32, &Device::Cpu).unwrap();
        candle_core::safetensors::save(&HashMap::from([("x", t)]), &path).unwrap();
        assert!(matches!(read_checkpoint_meta(&path), Err(Error::Checkpoint(_))));
    }
}
