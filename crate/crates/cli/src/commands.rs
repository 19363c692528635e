use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context};
use candle_core::{DType, Device};
use chrono::{DateTime, Utc};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use rgbt_core::checkpoint::{load_checkpoint, ModelKind};
use rgbt_core::dataset::{
    load_rgb_png, load_thermal_png, preprocess_dataset, read_metadata_csv, save_png, write_metadata_csv,
    DatasetLayout, MetadataRow,
};
use rgbt_core::losses::{Lpips, LpipsBackbone};
use rgbt_core::metadata::{build_feature_vector, fetch_weather, weather_source, FixtureWeather, WeatherSource};
use rgbt_core::preprocess::{preprocess_pipeline, PreprocessConfig};
use rgbt_core::render::{gaussian_blur, render_prediction, triptych, RenderConfig};
use rgbt_core::synthetic::{group_location, sample_timestamp, sample_weather, synthetic_samples, SynthConfig};
use rgbt_core::train::{
    assign_folds, evaluate as evaluate_samples, format_table, load_processed, run_cross_validation, write_report,
    AugmentConfig, RunContext, TrainConfig, TrainSample,
};
use rgbt_core::types::{MetadataRecord, PairedSample};

use crate::manifest::{load_train_config, RunManifest};
use crate::{
    CvArgs, EvaluateArgs, InferArgs, IngestArgs, LpipsArgs, PreprocessArgs, RenderArgs, RenderOpts, SynthArgs,
    TrainArgs,
};

pub const PAIRS_FILE: &str = "pairs.csv";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const PREDICTIONS_DIR: &str = "predictions";

/// One row of a raw `pairs.csv`: what the drone log provides before weather.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRow {
    pub sample_id: String,
    pub group_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub timestamp_iso8601: DateTime<Utc>,
}

fn parse_pair(s: &str, what: &str) -> anyhow::Result<(f64, f64)> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| anyhow!("{what} must be `lo,hi`, got {s:?}"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

pub fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        samples: a.samples,
        groups: a.groups,
        height: a.height,
        width: a.width,
        seed: a.seed,
    };
    ensure!(cfg.groups > 0 && cfg.samples > 0, "samples and groups must be positive");
    let layout = DatasetLayout::new(&a.out);
    layout.create_dirs()?;
    let fixtures = FixtureWeather::new(a.out.join("fixtures"));
    let mut w = csv::Writer::from_path(a.out.join(PAIRS_FILE))?;
    for (i, s) in synthetic_samples(&cfg).iter().enumerate() {
        save_png(&s.rgb, &layout.rgb_path(&s.sample_id))?;
        save_png(&s.thermal, &layout.thermal_path(&s.sample_id))?;
        let (lat, lon) = group_location(i % cfg.groups);
        fixtures.store(lat, lon, sample_timestamp(i), &sample_weather(i))?;
        w.serialize(PairRow {
            sample_id: s.sample_id.clone(),
            group_id: s.group_id.clone(),
            latitude: lat,
            longitude: lon,
            timestamp_iso8601: sample_timestamp(i),
        })?;
    }
    w.flush()?;
    info!("wrote {} synthetic pairs to {}", cfg.samples, a.out.display());
    Ok(())
}

fn ingest_one(input: &DatasetLayout, out: &DatasetLayout, pair: &PairRow, source: &dyn WeatherSource) -> anyhow::Result<MetadataRow> {
    let id = &pair.sample_id;
    for path in [input.rgb_path(id), input.thermal_path(id)] {
        ensure!(path.is_file(), "missing image {}", path.display());
    }
    let metadata = fetch_weather(source, pair.latitude, pair.longitude, pair.timestamp_iso8601)?;
    let sample = PairedSample {
        sample_id: id.clone(),
        rgb: load_rgb_png(&input.rgb_path(id))?,
        thermal: load_thermal_png(&input.thermal_path(id))?,
        metadata,
        group_id: pair.group_id.clone(),
    };
    let problems = rgbt_core::types::validate_sample(&sample);
    ensure!(problems.is_empty(), "{}", problems.join("; "));
    std::fs::copy(input.rgb_path(id), out.rgb_path(id))?;
    std::fs::copy(input.thermal_path(id), out.thermal_path(id))?;
    Ok(MetadataRow::from_record(id, &pair.group_id, &sample.metadata))
}

/// Resumable: samples already listed in the output metadata with both
/// images present are kept as they are, so a repeated run is a no-op.
pub fn ingest(a: IngestArgs) -> anyhow::Result<()> {
    let input = DatasetLayout::new(&a.input);
    let out = DatasetLayout::new(&a.out);
    out.create_dirs()?;
    let pairs: Vec<PairRow> = csv::Reader::from_path(a.input.join(PAIRS_FILE))
        .with_context(|| format!("reading {}", a.input.join(PAIRS_FILE).display()))?
        .deserialize()
        .collect::<Result<_, _>>()?;
    let fixture_dir = a.fixture_dir.clone().unwrap_or_else(|| a.input.join("fixtures"));
    let source = weather_source(a.weather_mode, Some(&fixture_dir))?;
    let mut done: BTreeMap<String, MetadataRow> = if out.metadata_path().is_file() {
        read_metadata_csv(&out.metadata_path())?
            .into_iter()
            .filter(|r| out.rgb_path(&r.sample_id).is_file() && out.thermal_path(&r.sample_id).is_file())
            .map(|r| (r.sample_id.clone(), r))
            .collect()
    } else {
        BTreeMap::new()
    };
    let resumed = done.len();
    let mut failures = Vec::new();
    for pair in &pairs {
        if done.contains_key(&pair.sample_id) {
            continue;
        }
        match ingest_one(&input, &out, pair, source.as_ref()) {
            Ok(row) => {
                done.insert(pair.sample_id.clone(), row);
                write_rows(&out, &pairs, &done)?;
            }
            Err(e) => {
                warn!("{}: {e:#}", pair.sample_id);
                failures.push(pair.sample_id.clone());
            }
        }
    }
    write_rows(&out, &pairs, &done)?;
    info!(
        "ingested {} of {} pairs ({resumed} already present) into {}",
        done.len(),
        pairs.len(),
        a.out.display()
    );
    if !failures.is_empty() {
        bail!("{} sample(s) failed: {}", failures.len(), failures.join(", "));
    }
    Ok(())
}

/// Rows in `pairs.csv` order, so reruns produce the same file.
fn write_rows(out: &DatasetLayout, pairs: &[PairRow], done: &BTreeMap<String, MetadataRow>) -> anyhow::Result<()> {
    let rows: Vec<MetadataRow> = pairs.iter().filter_map(|p| done.get(&p.sample_id).cloned()).collect();
    let tmp = out.root().join("metadata.csv.tmp");
    write_metadata_csv(&tmp, &rows)?;
    std::fs::rename(&tmp, out.metadata_path())?;
    Ok(())
}

pub fn preprocess(a: PreprocessArgs) -> anyhow::Result<()> {
    let (lo, hi) = parse_pair(&a.stretch, "--stretch")?;
    let cfg = PreprocessConfig {
        target_size: a.size,
        saturation_factor: a.saturation,
        stretch_lo: lo as f32,
        stretch_hi: hi as f32,
    };
    let manifest = preprocess_dataset(&a.input, &a.out, &cfg)?;
    info!(
        "processed {} samples into {} (config hash {})",
        manifest.samples.len(),
        a.out.display(),
        manifest.config_hash
    );
    Ok(())
}

impl LpipsArgs {
    fn resolve(&self, fallback: &LpipsBackbone) -> anyhow::Result<LpipsBackbone> {
        match self.lpips_backbone.as_deref() {
            None => Ok(match (&self.lpips_weights, self.lpips_seed) {
                (Some(p), _) => LpipsBackbone::Pretrained(p.clone()),
                (None, Some(s)) => LpipsBackbone::Seeded(s),
                (None, None) => fallback.clone(),
            }),
            Some("seeded") => Ok(LpipsBackbone::Seeded(self.lpips_seed.unwrap_or(0))),
            Some("pretrained") => match &self.lpips_weights {
                Some(p) => Ok(LpipsBackbone::Pretrained(p.clone())),
                None => bail!("--lpips-backbone pretrained needs --lpips-weights FILE"),
            },
            Some(other) => bail!("unknown LPIPS backbone {other:?}; expected seeded or pretrained"),
        }
    }
}

/// Flag > config file > default. Returns the config and where each
/// overridden field came from.
fn resolve_train_config(a: &TrainArgs) -> anyhow::Result<(TrainConfig, Vec<String>)> {
    let mut cfg = match &a.config {
        Some(p) => load_train_config(p)?,
        None => TrainConfig::default(),
    };
    let mut flags = Vec::new();
    macro_rules! flag {
        ($field:ident) => {
            if let Some(v) = a.$field {
                cfg.$field = v;
                flags.push(stringify!($field).to_string());
            }
        };
    }
    flag!(model);
    flag!(folds);
    flag!(seed);
    flag!(epochs);
    flag!(finetune_epochs);
    flag!(batch_size);
    flag!(lr);
    flag!(finetune_lr);
    flag!(lambda_l1);
    if a.no_augment {
        cfg.augment = AugmentConfig::off();
        flags.push("augment".into());
    }
    let lpips = a.lpips.resolve(&cfg.lpips)?;
    if lpips != cfg.lpips {
        cfg.lpips = lpips;
        flags.push("lpips".into());
    }
    cfg.validate()?;
    Ok((cfg, flags))
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    let (cfg, flags) = resolve_train_config(&a)?;
    let source = a.config.as_ref().map_or("defaults".to_string(), |p| p.display().to_string());
    info!("config from {source}; flags override {flags:?}");
    info!("effective config: {}", serde_json::to_string(&cfg)?);
    for &f in &a.fold {
        ensure!(f < cfg.folds, "--fold {f} out of range for {} folds", cfg.folds);
    }
    let (samples, pre) = load_processed(&a.data)?;
    let mut manifest = RunManifest::start(&a.data, &pre.config_hash, &a.fold, a.sigma, &cfg);
    manifest.write(&a.run_dir)?;
    let device = Device::Cpu;
    let ctx = RunContext {
        data: &samples,
        cfg: &cfg,
        preprocess: &pre.config,
        run_dir: &a.run_dir,
        device: &device,
    };
    let out = run_cross_validation(&ctx, &pre.config_hash, a.sigma, &a.fold)?;
    for (f, r) in out.folds.iter().zip(&out.reports) {
        info!(
            "fold {}: {} train / {} val, psnr {:.2} ssim {:.4} lpips {:.4}",
            f.fold,
            f.train_ids.len(),
            f.val_ids.len(),
            r.fold_mean.psnr_db,
            r.fold_mean.ssim,
            r.fold_mean.lpips
        );
        manifest.outputs.push(f.checkpoint.clone());
    }
    manifest.outputs.push(a.run_dir.join("aggregate.json"));
    manifest.finished_at = Some(Utc::now());
    manifest.write(&a.run_dir)?;
    print!("{}", format_table(&out.aggregate));
    Ok(())
}

pub fn cv(a: CvArgs) -> anyhow::Result<()> {
    let rows = read_metadata_csv(&DatasetLayout::new(&a.data).metadata_path())?;
    let groups: Vec<&str> = rows.iter().map(|r| r.group_id.as_str()).collect();
    let assignment = assign_folds(&groups, a.folds, a.seed)?;
    for fold in 0..a.folds {
        let (train, val) = assignment.split(&groups, fold)?;
        let held: Vec<&String> = assignment
            .fold_of_group
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(g, _)| g)
            .collect();
        println!("fold {fold}: {} train, {} val, groups {held:?}", train.len(), val.len());
    }
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string_pretty(&assignment)?)?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub model_kind: ModelKind,
    pub fold: usize,
    pub blur_sigma: f64,
    pub preprocess_hash: String,
    pub lpips: LpipsBackbone,
    pub samples: Vec<String>,
}

pub fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let device = Device::Cpu;
    let (model, meta) = load_checkpoint(&a.checkpoint, &device)?;
    let (samples, pre) = load_processed(&a.data)?;
    let backbone = a.lpips.resolve(&LpipsBackbone::Seeded(0))?;
    let lpips = Lpips::new(&backbone, DType::F32, &device)?;
    let refs: Vec<&TrainSample> = samples.iter().collect();
    let (report, preds) = evaluate_samples(&model, &meta, &refs, &pre.config_hash, a.sigma, &lpips)?;
    write_report(&a.out, &report)?;
    for (s, p) in samples.iter().zip(&preds) {
        save_png(p, &a.out.join(PREDICTIONS_DIR).join(format!("{}.png", s.id)))?;
    }
    let record = EvaluationRecord {
        checkpoint: a.checkpoint.clone(),
        data: a.data.clone(),
        model_kind: meta.model_kind,
        fold: meta.fold,
        blur_sigma: a.sigma,
        preprocess_hash: pre.config_hash,
        lpips: backbone,
        samples: samples.iter().map(|s| s.id.clone()).collect(),
    };
    std::fs::write(a.out.join(EVALUATION_FILE), serde_json::to_string_pretty(&record)?)?;
    let problems = report.violations();
    ensure!(problems.is_empty(), "malformed report: {}", problems.join("; "));
    println!(
        "{} samples: psnr {:.2} dB, ssim {:.4}, lpips {:.4}",
        report.per_sample.len(),
        report.fold_mean.psnr_db,
        report.fold_mean.ssim,
        report.fold_mean.lpips
    );
    Ok(())
}

impl RenderOpts {
    fn config(&self) -> anyhow::Result<RenderConfig> {
        let (lo, hi) = parse_pair(&self.norm, "--norm")?;
        let cfg = RenderConfig {
            blur_sigma: self.sigma,
            norm_lo: lo,
            norm_hi: hi,
            colormap: self.cmap.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn infer(a: InferArgs) -> anyhow::Result<()> {
    let render_cfg = a.render.config()?;
    let device = Device::Cpu;
    let (model, meta) = load_checkpoint(&a.checkpoint, &device)?;
    let text = std::fs::read_to_string(&a.meta).with_context(|| format!("reading {}", a.meta.display()))?;
    let record: MetadataRecord = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.meta.display()))?;
    let problems = record.violations();
    ensure!(problems.is_empty(), "{}: {}", a.meta.display(), problems.join("; "));
    let rgb = preprocess_pipeline(&load_rgb_png(&a.rgb)?, &meta.preprocess)?.image;
    let v = meta.standardizer.apply(&build_feature_vector(&record)?);
    let pred = model.predict(&rgb, &v)?;
    let stem = a.rgb.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let thermal_path = a.out.join(format!("{stem}_thermal.png"));
    let render_path = a.out.join(format!("{stem}_render.png"));
    save_png(&gaussian_blur(&pred, render_cfg.blur_sigma)?, &thermal_path)?;
    save_png(&render_prediction(&pred, &render_cfg)?, &render_path)?;
    println!("{}\n{}", thermal_path.display(), render_path.display());
    Ok(())
}

pub fn render(a: RenderArgs) -> anyhow::Result<()> {
    let cfg = a.render.config()?;
    let record_path = a.input.join(EVALUATION_FILE);
    let record: EvaluationRecord = serde_json::from_str(
        &std::fs::read_to_string(&record_path).with_context(|| format!("reading {}", record_path.display()))?,
    )?;
    let data = DatasetLayout::new(a.data.clone().unwrap_or(record.data));
    std::fs::create_dir_all(&a.out)?;
    let mut failures = Vec::new();
    for id in &record.samples {
        let result = (|| -> anyhow::Result<()> {
            let pred = load_thermal_png(&a.input.join(PREDICTIONS_DIR).join(format!("{id}.png")))?;
            let rgb = load_rgb_png(&data.rgb_path(id))?;
            let truth = load_thermal_png(&data.thermal_path(id))?;
            save_png(&triptych(&rgb, &pred, &truth, &cfg)?, &triptych_path(&a.out, id))?;
            Ok(())
        })();
        if let Err(e) = result {
            warn!("{id}: {e:#}");
            failures.push(id.clone());
        }
    }
    ensure!(failures.is_empty(), "{} triptych(s) failed: {}", failures.len(), failures.join(", "));
    info!("wrote {} triptychs to {}", record.samples.len(), a.out.display());
    Ok(())
}

pub fn triptych_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_triptych.png"))
}
