//! Training loop, fine-tuning pass, paired augmentation, grouped k-fold
//! cross-validation and held-out evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, ModelKind};
use crate::dataset::{read_dataset, read_preprocess_manifest, PreprocessManifest};
use crate::error::{Error, Result};
use crate::gan::{adamw, GanStepLosses, PatchGanConfig, Pix2Pix, DEFAULT_LAMBDA_L1};
use crate::losses::{combined_loss, lpips_metric, psnr_metric, ssim_metric, LossBreakdown, LossWeights, Lpips, LpipsBackbone, CHARBONNIER_EPS};
use crate::metadata::{build_feature_vector, fit_standardizer, MetadataVector, Standardizer};
use crate::model::{UNetConfig, UNetModel};
use crate::preprocess::{normalize_to_pm1, PreprocessConfig};
use crate::render::gaussian_blur;
use crate::types::{ImageTensor, MetricReport, PairedSample, RangeTag, SampleMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub rot90_p: f64,
    pub brightness_p: f64,
    pub brightness_min: f64,
    pub brightness_max: f64,
    pub noise_p: f64,
    pub noise_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip_p: 0.5,
            vflip_p: 0.3,
            rot90_p: 0.25,
            brightness_p: 0.4,
            brightness_min: 0.85,
            brightness_max: 1.15,
            noise_p: 0.15,
            noise_sigma: 0.02,
        }
    }
}

impl AugmentConfig {
    /// Every transform disabled.
    pub fn off() -> Self {
        Self {
            hflip_p: 0.0,
            vflip_p: 0.0,
            rot90_p: 0.0,
            brightness_p: 0.0,
            noise_p: 0.0,
            ..Self::default()
        }
    }

    pub fn probabilities(&self) -> [f64; 5] {
        [self.hflip_p, self.vflip_p, self.rot90_p, self.brightness_p, self.noise_p]
    }

    pub fn validate(&self) -> Result<()> {
        if self.probabilities().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!("augmentation probabilities must lie in [0,1]: {self:?}")));
        }
        if !(self.brightness_min > 0.0 && self.brightness_min <= self.brightness_max) {
            return Err(Error::Config(format!(
                "brightness range [{}, {}] must be positive and ordered",
                self.brightness_min, self.brightness_max
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma {} must be >= 0", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine floor reached at the end of the main phase.
    pub eta_min: f64,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub folds: usize,
    pub lambda_l1: f64,
    pub charbonnier_eps: f64,
    pub loss_weights: LossWeights,
    pub augment: AugmentConfig,
    pub lpips: LpipsBackbone,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Unet,
            epochs: 60,
            batch_size: 4,
            lr: 2e-4,
            eta_min: 0.0,
            finetune_epochs: 15,
            finetune_lr: 5e-5,
            weight_decay: 1e-2,
            seed: 0,
            folds: 5,
            lambda_l1: DEFAULT_LAMBDA_L1,
            charbonnier_eps: CHARBONNIER_EPS,
            loss_weights: LossWeights::default(),
            augment: AugmentConfig::default(),
            lpips: LpipsBackbone::Seeded(0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        let rates = [self.lr, self.finetune_lr];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config(format!("learning rates must be > 0, got {rates:?}")));
        }
        if !(self.eta_min >= 0.0 && self.eta_min <= self.lr) {
            return Err(Error::Config(format!("eta_min {} must lie in [0, lr]", self.eta_min)));
        }
        if !(self.weight_decay >= 0.0) || !(self.lambda_l1 >= 0.0) || !(self.charbonnier_eps >= 0.0) {
            return Err(Error::Config("weight decay, lambda and eps must be >= 0".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        self.loss_weights.validate()?;
        self.augment.validate()
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs + self.finetune_epochs
    }

    /// Cosine annealing over the main phase, constant afterwards.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.epochs {
            cosine_lr(epoch, self.epochs, self.lr, self.eta_min)
        } else {
            self.finetune_lr
        }
    }
}

/// `eta_min + (base - eta_min) (1 + cos(pi t / period)) / 2`.
pub fn cosine_lr(epoch: usize, period: usize, base: f64, eta_min: f64) -> f64 {
    let t = epoch as f64 / period as f64;
    eta_min + (base - eta_min) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of_group: BTreeMap<String, usize>,
}

/// Shuffles the distinct groups with `seed` and deals them round-robin.
pub fn assign_folds<S: AsRef<str>>(groups: &[S], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(Error::Config("fold count must be >= 1".into()));
    }
    let mut unique: Vec<String> = groups.iter().map(|g| g.as_ref().to_string()).collect();
    if let Some(bad) = unique.iter().find(|g| g.is_empty()) {
        return Err(Error::Assignment(format!("empty group id {bad:?}")));
    }
    unique.sort();
    unique.dedup();
    if unique.len() < k {
        return Err(Error::Assignment(format!(
            "{} distinct groups cannot fill {k} folds",
            unique.len()
        )));
    }
    unique.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of_group = unique.into_iter().enumerate().map(|(i, g)| (g, i % k)).collect();
    Ok(FoldAssignment { k, fold_of_group })
}

impl FoldAssignment {
    pub fn fold_of(&self, group: &str) -> Result<usize> {
        self.fold_of_group
            .get(group)
            .copied()
            .ok_or_else(|| Error::Assignment(format!("group {group:?} has no fold")))
    }

    /// Indices of `(train, validation)` samples for `fold`.
    pub fn split<S: AsRef<str>>(&self, groups: &[S], fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if fold >= self.k {
            return Err(Error::Config(format!("fold {fold} out of 0..{}", self.k)));
        }
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, g) in groups.iter().enumerate() {
            if self.fold_of(g.as_ref())? == fold {
                val.push(i);
            } else {
                train.push(i);
            }
        }
        Ok((train, val))
    }
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// Transforms sampled for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentDraw {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns, 0 when rotation was not drawn.
    pub quarter_turns: u8,
    pub brightness: Option<f32>,
    pub noise: bool,
}

/// Independent RNG stream for sample `index` in `epoch`, so the sampled
/// augmentation does not depend on batch order or worker count.
pub fn augment_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// Draws every decision with a fixed number of RNG calls.
pub fn sample_augment<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> AugmentDraw {
    let hflip = rng.random::<f64>() < cfg.hflip_p;
    let vflip = rng.random::<f64>() < cfg.vflip_p;
    let rotate = rng.random::<f64>() < cfg.rot90_p;
    let turns = rng.random_range(1..=3u8);
    let bright = rng.random::<f64>() < cfg.brightness_p;
    let factor = rng.random_range(cfg.brightness_min..=cfg.brightness_max) as f32;
    let noise = rng.random::<f64>() < cfg.noise_p;
    AugmentDraw {
        hflip,
        vflip,
        quarter_turns: if rotate { turns } else { 0 },
        brightness: bright.then_some(factor),
        noise,
    }
}

fn map_planes(img: &ImageTensor, out_h: usize, out_w: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Result<ImageTensor> {
    let (c, w) = (img.channels(), img.width());
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = img.plane(ch);
        for y in 0..out_h {
            for x in 0..out_w {
                let (sy, sx) = src(y, x);
                out.push(plane[sy * w + sx]);
            }
        }
    }
    ImageTensor::new(c, out_h, out_w, img.range(), out)
}

pub fn hflip(img: &ImageTensor) -> Result<ImageTensor> {
    let w = img.width();
    map_planes(img, img.height(), w, |y, x| (y, w - 1 - x))
}

pub fn vflip(img: &ImageTensor) -> Result<ImageTensor> {
    let h = img.height();
    map_planes(img, h, img.width(), |y, x| (h - 1 - y, x))
}

/// One counter-clockwise quarter turn.
pub fn rot90(img: &ImageTensor) -> Result<ImageTensor> {
    let (h, w) = (img.height(), img.width());
    map_planes(img, w, h, |y, x| (x, w - 1 - y))
}

fn geometric(img: &ImageTensor, d: &AugmentDraw) -> Result<ImageTensor> {
    let mut out = img.clone();
    if d.hflip {
        out = hflip(&out)?;
    }
    if d.vflip {
        out = vflip(&out)?;
    }
    for _ in 0..d.quarter_turns {
        out = rot90(&out)?;
    }
    Ok(out)
}

/// Applies a drawn augmentation: geometry to both images identically,
/// brightness and noise to the `[-1, 1]` RGB only.
pub fn apply_augment<R: Rng>(
    rgb: &ImageTensor,
    thermal: &ImageTensor,
    d: &AugmentDraw,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<(ImageTensor, ImageTensor)> {
    rgb.expect_range(RangeTag::SignedPm1)?;
    if !rgb.same_size(thermal) {
        return Err(Error::Shape("rgb and thermal differ in size".into()));
    }
    let rgb2 = geometric(rgb, d)?;
    let thermal2 = geometric(thermal, d)?;
    if d.brightness.is_none() && !d.noise {
        return Ok((rgb2, thermal2));
    }
    let mut data = rgb2.data().to_vec();
    if let Some(f) = d.brightness {
        for v in &mut data {
            *v = ((*v + 1.0) / 2.0 * f) * 2.0 - 1.0;
        }
    }
    if d.noise {
        let n = Normal::new(0.0, noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        for v in &mut data {
            *v += n.sample(rng) as f32;
        }
    }
    let rgb3 = ImageTensor::new_clamped(3, rgb2.height(), rgb2.width(), RangeTag::SignedPm1, data)?;
    Ok((rgb3, thermal2))
}

/// Samples and applies one augmentation. Metadata is never altered.
pub fn augment_pair<R: Rng>(
    rgb: &ImageTensor,
    thermal: &ImageTensor,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(ImageTensor, ImageTensor, AugmentDraw)> {
    let d = sample_augment(cfg, rng);
    let (a, b) = apply_augment(rgb, thermal, &d, cfg.noise_sigma, rng)?;
    Ok((a, b, d))
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// A processed sample ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub group: String,
    /// `[-1, 1]`.
    pub rgb: ImageTensor,
    /// `[0, 1]`.
    pub thermal: ImageTensor,
    /// Unstandardized conditioning vector.
    pub features: MetadataVector,
}

impl TrainSample {
    /// From a sample whose RGB went through the pipeline up to (not
    /// including) the `[-1, 1]` step, as stored on disk.
    pub fn from_processed(s: &PairedSample) -> Result<Self> {
        Ok(Self {
            id: s.sample_id.clone(),
            group: s.group_id.clone(),
            rgb: normalize_to_pm1(&s.rgb)?,
            thermal: s.thermal.clone(),
            features: build_feature_vector(&s.metadata)?,
        })
    }
}

/// Loads a processed dataset directory and its manifest.
pub fn load_processed(dir: &Path) -> Result<(Vec<TrainSample>, PreprocessManifest)> {
    let manifest = read_preprocess_manifest(dir)?;
    let samples = read_dataset(dir)?
        .iter()
        .map(TrainSample::from_processed)
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(Error::Dataset(format!("{} holds no samples", dir.display())));
    }
    let (h, w) = (samples[0].rgb.height(), samples[0].rgb.width());
    if h != w || samples.iter().any(|s| s.rgb.height() != h || s.rgb.width() != w || !s.rgb.same_size(&s.thermal)) {
        return Err(Error::Dataset(format!(
            "{}: every processed image must be square and {h}x{w}",
            dir.display()
        )));
    }
    Ok((samples, manifest))
}

/// Stacks `(rgb, thermal, standardized vector)` triples into model tensors.
pub fn stack_batch(
    items: &[(ImageTensor, ImageTensor, MetadataVector)],
    dtype: DType,
    device: &Device,
) -> Result<(Tensor, Tensor, Tensor)> {
    let rgb = items.iter().map(|(r, _, _)| r.to_tensor(device)).collect::<Result<Vec<_>>>()?;
    let th = items.iter().map(|(_, t, _)| t.to_tensor(device)).collect::<Result<Vec<_>>>()?;
    let cond: Vec<f64> = items.iter().flat_map(|(_, _, v)| v.values).collect();
    let n = items.len();
    Ok((
        Tensor::stack(&rgb, 0)?.to_dtype(dtype)?,
        Tensor::from_vec(cond, (n, crate::metadata::FEATURE_DIM), device)?.to_dtype(dtype)?,
        Tensor::stack(&th, 0)?.to_dtype(dtype)?,
    ))
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

fn check_finite(b: &LossBreakdown) -> Result<()> {
    if b.total.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            epoch: 0,
            step: 0,
            detail: format!("{b:?}"),
        })
    }
}

/// U-Net with its AdamW optimizer and composite objective.
pub struct UnetTrainer {
    pub model: UNetModel,
    opt: AdamW,
    lpips: Option<Lpips>,
    weights: LossWeights,
    eps: f64,
}

impl UnetTrainer {
    pub fn new(model: UNetModel, lr: f64, weight_decay: f64, weights: LossWeights, eps: f64, lpips: Option<Lpips>) -> Result<Self> {
        let opt = adamw(&model.varmap, lr, weight_decay)?;
        Ok(Self {
            model,
            opt,
            lpips,
            weights,
            eps,
        })
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.opt.set_learning_rate(lr);
    }

    /// One optimizer step; refuses to step on a non-finite loss.
    pub fn step(&mut self, rgb: &Tensor, cond: &Tensor, thermal: &Tensor) -> Result<LossBreakdown> {
        let pred = self.model.net.forward_t(rgb, cond, true)?;
        let (loss, br) = combined_loss(&pred, thermal, &self.weights, self.eps, self.lpips.as_ref())?;
        check_finite(&br)?;
        self.opt.backward_step(&loss)?;
        Ok(br)
    }
}

enum Learner {
    Unet(UnetTrainer),
    Gan {
        gan: Box<Pix2Pix>,
        lpips: Option<Lpips>,
        weights: LossWeights,
        eps: f64,
    },
}

impl Learner {
    fn set_learning_rate(&mut self, lr: f64) {
        match self {
            Learner::Unet(t) => t.set_learning_rate(lr),
            Learner::Gan { gan, .. } => gan.set_learning_rate(lr),
        }
    }

    fn step(&mut self, rgb: &Tensor, cond: &Tensor, thermal: &Tensor) -> Result<(LossBreakdown, Option<GanStepLosses>)> {
        match self {
            Learner::Unet(t) => Ok((t.step(rgb, cond, thermal)?, None)),
            Learner::Gan { gan, lpips, weights, eps } => {
                let (g, fake) = gan.step(rgb, cond, thermal)?;
                // composite terms on the generator output, for monitoring only
                let (_, br) = combined_loss(&fake, thermal, weights, *eps, lpips.as_ref())?;
                Ok((br, Some(g)))
            }
        }
    }

    fn generator(&self) -> &UNetModel {
        match self {
            Learner::Unet(t) => &t.model,
            Learner::Gan { gan, .. } => &gan.generator,
        }
    }
}

/// Per-epoch means of the step losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub gan: Option<GanStepLosses>,
}

pub const HISTORY_COLUMNS: [&str; 8] = [
    "epoch",
    "lr",
    "total_loss",
    "charbonnier",
    "msssim_term",
    "lpips_term",
    "grad_term",
    "stats_term",
];
pub const GAN_HISTORY_COLUMNS: [&str; 5] = ["d_loss", "g_adversarial", "g_l1", "d_real_acc", "d_fake_acc"];

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let gan = rows.first().is_some_and(|r| r.gan.is_some());
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = HISTORY_COLUMNS.to_vec();
    if gan {
        header.extend(GAN_HISTORY_COLUMNS);
    }
    w.write_record(&header)?;
    for r in rows {
        let l = &r.loss;
        let total = r.gan.map_or(l.total, |g| g.g_total);
        let mut rec = vec![
            r.epoch.to_string(),
            r.lr.to_string(),
            total.to_string(),
            l.charbonnier.to_string(),
            l.msssim_term.to_string(),
            l.lpips_term.to_string(),
            l.grad_term.to_string(),
            l.stats_term.to_string(),
        ];
        if let Some(g) = r.gan {
            rec.extend([g.d_loss, g.g_adversarial, g.g_l1, g.d_real_acc, g.d_fake_acc].map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn mean_breakdown(v: &[LossBreakdown]) -> LossBreakdown {
    let n = v.len().max(1) as f64;
    let mut m = LossBreakdown::default();
    for b in v {
        m.charbonnier += b.charbonnier / n;
        m.msssim_term += b.msssim_term / n;
        m.lpips_term += b.lpips_term / n;
        m.grad_term += b.grad_term / n;
        m.stats_term += b.stats_term / n;
        m.total += b.total / n;
    }
    m
}

fn mean_gan(v: &[GanStepLosses]) -> Option<GanStepLosses> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mut m = GanStepLosses::default();
    for g in v {
        m.d_loss += g.d_loss / n;
        m.d_real_acc += g.d_real_acc / n;
        m.d_fake_acc += g.d_fake_acc / n;
        m.g_adversarial += g.g_adversarial / n;
        m.g_l1 += g.g_l1 / n;
        m.g_total += g.g_total / n;
    }
    Some(m)
}

/// Inputs shared by every fold of one run.
pub struct RunContext<'a> {
    pub data: &'a [TrainSample],
    pub cfg: &'a TrainConfig,
    pub preprocess: &'a PreprocessConfig,
    pub run_dir: &'a Path,
    pub device: &'a Device,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub checkpoint: PathBuf,
    pub history: Vec<HistoryRow>,
    pub standardizer: Standardizer,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

pub fn fold_dir(run_dir: &Path, fold: usize) -> PathBuf {
    run_dir.join(format!("fold{fold}"))
}

pub const CHECKPOINT_FILE: &str = "model.safetensors";
pub const HISTORY_FILE: &str = "history.csv";

/// Trains one fold: standardizer fit on the training split only, cosine
/// phase then constant-rate fine-tuning. The checkpoint is rewritten after
/// every epoch, so a non-finite abort leaves the last good one in place.
pub fn train_fold(ctx: &RunContext, assignment: &FoldAssignment, fold: usize) -> Result<FoldOutcome> {
    let cfg = ctx.cfg;
    cfg.validate()?;
    let groups: Vec<&str> = ctx.data.iter().map(|s| s.group.as_str()).collect();
    let (train_idx, val_idx) = assignment.split(&groups, fold)?;
    if train_idx.is_empty() {
        return Err(Error::Config(format!("fold {fold} has an empty training split")));
    }
    let train_vecs: Vec<MetadataVector> = train_idx.iter().map(|&i| ctx.data[i].features.clone()).collect();
    let standardizer = fit_standardizer(&train_vecs, fold)?;
    let size = ctx.data[train_idx[0]].rgb.height();
    let unet = UNetConfig::reduced_size(size);
    let model_seed = cfg.seed.wrapping_add(fold as u64);
    let model = UNetModel::new(unet.clone(), model_seed, DType::F32, ctx.device)?;
    let lpips = if cfg.loss_weights.lpips > 0.0 {
        Some(Lpips::new(&cfg.lpips, DType::F32, ctx.device)?)
    } else {
        None
    };
    let mut learner = match cfg.model {
        ModelKind::Unet => Learner::Unet(UnetTrainer::new(
            model,
            cfg.lr,
            cfg.weight_decay,
            cfg.loss_weights,
            cfg.charbonnier_eps,
            lpips,
        )?),
        ModelKind::Pix2pix => Learner::Gan {
            gan: Box::new(Pix2Pix::new(model, PatchGanConfig::default(), model_seed, cfg.lr, cfg.weight_decay, cfg.lambda_l1)?),
            lpips,
            weights: cfg.loss_weights,
            eps: cfg.charbonnier_eps,
        },
    };
    let mut meta = CheckpointMeta::new(cfg.model, unet, standardizer.clone(), ctx.preprocess.clone(), fold, model_seed);
    let dir = fold_dir(ctx.run_dir, fold);
    std::fs::create_dir_all(&dir)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    let standardized: Vec<MetadataVector> = ctx.data.iter().map(|s| standardizer.apply(&s.features)).collect();

    let mut history = Vec::with_capacity(cfg.total_epochs());
    for epoch in 0..cfg.total_epochs() {
        let lr = cfg.lr_at(epoch);
        learner.set_learning_rate(lr);
        let mut order = train_idx.clone();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((fold as u64) << 48));
        shuffle_rng.set_stream(epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let mut steps = Vec::new();
        let mut gan_steps = Vec::new();
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut items = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &ctx.data[i];
                let mut rng = augment_rng(cfg.seed, epoch, i);
                let (r, t, _) = augment_pair(&s.rgb, &s.thermal, &cfg.augment, &mut rng)?;
                items.push((r, t, standardized[i].clone()));
            }
            let (rgb, cond, thermal) = stack_batch(&items, DType::F32, ctx.device)?;
            match learner.step(&rgb, &cond, &thermal) {
                Ok((b, g)) => {
                    steps.push(b);
                    gan_steps.extend(g);
                }
                Err(Error::NonFinite { detail, .. }) => {
                    write_history(&dir.join(HISTORY_FILE), &history)?;
                    return Err(Error::NonFinite { epoch, step, detail });
                }
                Err(e) => return Err(e),
            }
        }
        history.push(HistoryRow {
            epoch,
            lr,
            loss: mean_breakdown(&steps),
            gan: mean_gan(&gan_steps),
        });
        write_history(&dir.join(HISTORY_FILE), &history)?;
        meta.epochs_completed = epoch + 1;
        save_checkpoint(&ckpt, &learner.generator().varmap, &meta)?;
    }
    let ids = |idx: &[usize]| idx.iter().map(|&i| ctx.data[i].id.clone()).collect();
    Ok(FoldOutcome {
        fold,
        checkpoint: ckpt,
        history,
        standardizer,
        train_ids: ids(&train_idx),
        val_ids: ids(&val_idx),
    })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Raw (unblurred) prediction for one sample.
pub fn predict_sample(model: &UNetModel, meta: &CheckpointMeta, sample: &TrainSample) -> Result<ImageTensor> {
    let v = meta.standardizer.apply(&sample.features);
    model.predict(&sample.rgb, &v)
}

/// PSNR, SSIM and LPIPS of a (post-processed) prediction against truth.
pub fn score_sample(id: &str, pred: &ImageTensor, truth: &ImageTensor, lpips: &Lpips) -> Result<SampleMetrics> {
    Ok(SampleMetrics {
        sample_id: id.to_string(),
        psnr_db: psnr_metric(pred, truth)?,
        ssim: ssim_metric(pred, truth)?,
        lpips: lpips_metric(lpips, pred, truth)?,
    })
}

/// Forward, blur, score. Returns the report and the unblurred predictions.
/// Refuses data processed with a different config than the checkpoint
/// recorded.
pub fn evaluate(
    model: &UNetModel,
    meta: &CheckpointMeta,
    samples: &[&TrainSample],
    data_hash: &str,
    blur_sigma: f64,
    lpips: &Lpips,
) -> Result<(MetricReport, Vec<ImageTensor>)> {
    if meta.preprocess_hash != data_hash {
        return Err(Error::PreprocessMismatch {
            expected: meta.preprocess_hash.clone(),
            found: data_hash.to_string(),
        });
    }
    let mut rows = Vec::with_capacity(samples.len());
    let mut preds = Vec::with_capacity(samples.len());
    for s in samples {
        let raw = predict_sample(model, meta, s)?;
        let pred = gaussian_blur(&raw, blur_sigma)?;
        rows.push(score_sample(&s.id, &pred, &s.thermal, lpips)?);
        preds.push(raw);
    }
    Ok((MetricReport::from_samples(meta.fold, rows), preds))
}

pub fn write_report(dir: &Path, report: &MetricReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
    for row in &report.per_sample {
        w.serialize(row)?;
    }
    w.flush()?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    Ok(())
}

/// Mean and sample standard deviation of the fold means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvAggregate {
    pub model: ModelKind,
    pub folds: Vec<usize>,
    #[serde(with = "crate::types::ext_f64")]
    pub psnr_mean: f64,
    #[serde(with = "crate::types::ext_f64")]
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub lpips_mean: f64,
    pub lpips_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(model: ModelKind, reports: &[MetricReport]) -> CvAggregate {
    let col = |f: fn(&MetricReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    let (psnr_mean, psnr_std) = col(|r| r.fold_mean.psnr_db);
    let (ssim_mean, ssim_std) = col(|r| r.fold_mean.ssim);
    let (lpips_mean, lpips_std) = col(|r| r.fold_mean.lpips);
    CvAggregate {
        model,
        folds: reports.iter().map(|r| r.fold_id).collect(),
        psnr_mean,
        psnr_std,
        ssim_mean,
        ssim_std,
        lpips_mean,
        lpips_std,
    }
}

/// One-line table in the `Model | PSNR | SSIM | LPIPS` layout.
pub fn format_table(a: &CvAggregate) -> String {
    format!(
        "model,psnr_db,ssim,lpips\n{},{:.2} ± {:.2},{:.4} ± {:.4},{:.4} ± {:.4}\n",
        a.model, a.psnr_mean, a.psnr_std, a.ssim_mean, a.ssim_std, a.lpips_mean, a.lpips_std
    )
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub assignment: FoldAssignment,
    pub folds: Vec<FoldOutcome>,
    pub reports: Vec<MetricReport>,
    pub aggregate: CvAggregate,
}

/// Trains and evaluates the requested folds (all when `only` is empty),
/// writing per-fold artifacts and `aggregate.json` / `table.csv`.
pub fn run_cross_validation(ctx: &RunContext, data_hash: &str, blur_sigma: f64, only: &[usize]) -> Result<CvOutcome> {
    let cfg = ctx.cfg;
    cfg.validate()?;
    let groups: Vec<&str> = ctx.data.iter().map(|s| s.group.as_str()).collect();
    let assignment = assign_folds(&groups, cfg.folds, cfg.seed)?;
    std::fs::create_dir_all(ctx.run_dir)?;
    std::fs::write(ctx.run_dir.join("folds.json"), serde_json::to_string_pretty(&assignment)?)?;
    let folds: Vec<usize> = if only.is_empty() { (0..cfg.folds).collect() } else { only.to_vec() };
    let lpips = Lpips::new(&cfg.lpips, DType::F32, ctx.device)?;
    let mut outcomes = Vec::new();
    let mut reports = Vec::new();
    for &fold in &folds {
        let outcome = train_fold(ctx, &assignment, fold)?;
        let (model, meta) = load_checkpoint(&outcome.checkpoint, ctx.device)?;
        let val: Vec<&TrainSample> = ctx.data.iter().filter(|s| outcome.val_ids.contains(&s.id)).collect();
        let (report, _) = evaluate(&model, &meta, &val, data_hash, blur_sigma, &lpips)?;
        write_report(&fold_dir(ctx.run_dir, fold), &report)?;
        reports.push(report);
        outcomes.push(outcome);
    }
    let agg = aggregate(cfg.model, &reports);
    std::fs::write(ctx.run_dir.join("aggregate.json"), serde_json::to_string_pretty(&agg)?)?;
    std::fs::write(ctx.run_dir.join("table.csv"), format_table(&agg))?;
    Ok(CvOutcome {
        assignment,
        folds: outcomes,
        reports,
        aggregate: agg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let c = TrainConfig::default();
        assert!((c.lr_at(0) - 2e-4).abs() < 1e-18);
        assert!(c.lr_at(59) <= 2e-6);
        assert!((0..59).all(|e| c.lr_at(e + 1) <= c.lr_at(e)));
        assert_eq!(c.lr_at(60), 5e-5);
        assert_eq!(c.lr_at(74), 5e-5);
        assert_eq!(c.total_epochs(), 75);
    }

    #[test]
    fn folds_round_robin() {
        let groups: Vec<String> = (0..10).map(|g| format!("g{g}")).collect();
        let a = assign_folds(&groups, 5, 3).unwrap();
        for f in 0..5 {
            assert_eq!(a.fold_of_group.values().filter(|&&v| v == f).count(), 2);
        }
        assert!(assign_folds(&groups[..4], 5, 3).is_err());
        let five = assign_folds(&groups[..5], 5, 1).unwrap();
        let mut seen: Vec<usize> = five.fold_of_group.values().copied().collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }

    fn marker(c: usize, h: usize, w: usize, range: RangeTag) -> ImageTensor {
        let (lo, hi) = range.bounds();
        let data = (0..c * h * w)
            .map(|i| lo + (hi - lo) * ((i % (h * w)) as f32 / (h * w) as f32))
            .collect();
        ImageTensor::new(c, h, w, range, data).unwrap()
    }

    #[test]
    fn forced_transforms() {
        let rgb = marker(3, 4, 5, RangeTag::SignedPm1);
        let th = marker(1, 4, 5, RangeTag::Unit0To1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, b, d) = augment_pair(&rgb, &th, &AugmentConfig::off(), &mut rng).unwrap();
        assert_eq!(d, AugmentDraw::default());
        assert_eq!((a, b), (rgb.clone(), th.clone()));

        let only_h = AugmentDraw {
            hflip: true,
            ..AugmentDraw::default()
        };
        let (a, b) = apply_augment(&rgb, &th, &only_h, 0.0, &mut rng).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(a.get(1, y, x), rgb.get(1, y, 4 - x));
                assert_eq!(b.get(0, y, x), th.get(0, y, 4 - x));
            }
        }
    }

    #[test]
    fn rot90_four_times_is_identity() {
        let img = marker(1, 3, 5, RangeTag::Unit0To1);
        let once = rot90(&img).unwrap();
        assert_eq!((once.height(), once.width()), (5, 3));
        // counter-clockwise: top-right corner moves to top-left
        assert_eq!(once.get(0, 0, 0), img.get(0, 0, 4));
        let mut r = img.clone();
        for _ in 0..4 {
            r = rot90(&r).unwrap();
        }
        assert_eq!(r, img);
    }

    #[test]
    fn photometric_ops_leave_thermal_alone() {
        let rgb = marker(3, 6, 6, RangeTag::SignedPm1);
        let th = marker(1, 6, 6, RangeTag::Unit0To1);
        let d = AugmentDraw {
            brightness: Some(1.1),
            noise: true,
            ..AugmentDraw::default()
        };
        let (a, b) = apply_augment(&rgb, &th, &d, 0.02, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(b, th);
        assert_ne!(a, rgb);
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn mean_std_uses_sample_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
