//! Pix2Pix variant: a PatchGAN discriminator on channel-concatenated
//! (RGB, thermal) pairs and the adversarial + lambda * L1 objective, with
//! the conditional U-Net as generator.

use candle_core::{DType, Device, Module, ModuleT, Tensor};
use candle_nn::{AdamW, BatchNorm, BatchNormConfig, Optimizer, ParamsAdamW, VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::UNetModel;
use crate::nn::{conv, trainable_vars, Conv, SeededInit};

pub const DEFAULT_LAMBDA_L1: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGanConfig {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub leaky_slope: f64,
}

impl Default for PatchGanConfig {
    fn default() -> Self {
        Self {
            in_channels: 4,
            widths: vec![64, 128, 256, 512],
            kernel: 4,
            leaky_slope: 0.2,
        }
    }
}

impl PatchGanConfig {
    /// Strides of every convolution: all widths but the last downsample,
    /// then the last width and the 1-channel logit layer keep resolution.
    pub fn strides(&self) -> Vec<usize> {
        let n = self.widths.len();
        (0..=n).map(|i| if i + 1 < n { 2 } else { 1 }).collect()
    }

    /// Input pixels seen by one output logit along each axis.
    pub fn receptive_field(&self) -> usize {
        self.strides()
            .iter()
            .rev()
            .fold(1, |rf, &s| (rf - 1) * s + self.kernel)
    }

    /// Logit map side for a square input of side `n` (padding 1).
    pub fn output_side(&self, n: usize) -> usize {
        self.strides()
            .iter()
            .fold(n, |side, &s| (side + 2 - self.kernel) / s + 1)
    }
}

#[derive(Debug, Clone)]
pub struct PatchGan {
    config: PatchGanConfig,
    convs: Vec<Conv>,
    norms: Vec<Option<BatchNorm>>,
}

impl PatchGan {
    pub fn new(config: PatchGanConfig, vb: VarBuilder) -> Result<Self> {
        let strides = config.strides();
        let mut chans = vec![config.in_channels];
        chans.extend(&config.widths);
        chans.push(1);
        let last = strides.len() - 1;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for (i, &s) in strides.iter().enumerate() {
            let normed = i != 0 && i != last;
            let vbi = vb.pp(format!("layer{i}"));
            convs.push(conv(chans[i], chans[i + 1], config.kernel, s, 1, !normed, vbi.pp("conv"))?);
            norms.push(if normed {
                Some(candle_nn::batch_norm(chans[i + 1], BatchNormConfig::default(), vbi.pp("bn"))?)
            } else {
                None
            });
        }
        Ok(Self { config, convs, norms })
    }

    pub fn config(&self) -> &PatchGanConfig {
        &self.config
    }

    /// `rgb` `[N, 3, H, W]` and `thermal` `[N, 1, H, W]`, both in `[-1, 1]`;
    /// returns patch logits `[N, 1, h, w]`.
    pub fn forward_t(&self, rgb: &Tensor, thermal: &Tensor, train: bool) -> Result<Tensor> {
        let (n, _, h, w) = rgb.dims4()?;
        let (tn, tc, th, tw) = thermal.dims4()?;
        if (n, h, w) != (tn, th, tw) || tc != 1 {
            return Err(Error::Shape(format!(
                "discriminator inputs differ: rgb {:?}, thermal {:?}",
                rgb.dims(),
                thermal.dims()
            )));
        }
        let mut x = Tensor::cat(&[rgb, thermal], 1)?;
        let last = self.convs.len() - 1;
        for (i, (c, bn)) in self.convs.iter().zip(&self.norms).enumerate() {
            x = c.forward(&x)?;
            if let Some(bn) = bn {
                x = bn.forward_t(&x, train)?;
            }
            if i != last {
                x = leaky_relu(&x, self.config.leaky_slope)?;
            }
        }
        Ok(x)
    }
}

fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(slope, 0.0)?)?)
}

/// Numerically stable `log(1 + exp(x))`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    Ok((x.relu()? + x.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?)?)
}

/// Mean binary cross-entropy of `logits` against a constant label.
pub fn bce_with_logits(logits: &Tensor, target_is_real: bool) -> Result<Tensor> {
    let z = if target_is_real { logits.neg()? } else { logits.clone() };
    Ok(softplus(&z)?.mean_all()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeneratorLoss {
    pub adversarial: f64,
    pub l1: f64,
    /// `lambda * l1`.
    pub l1_weighted: f64,
    pub total: f64,
}

/// `BCE(D(x, G(x)), 1) + lambda * |G(x) - y|_1`.
pub fn generator_loss(
    logits_fake: &Tensor,
    fake: &Tensor,
    real: &Tensor,
    lambda: f64,
) -> Result<(Tensor, GeneratorLoss)> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    if fake.dims() != real.dims() {
        return Err(Error::Shape(format!("fake {:?} vs real {:?}", fake.dims(), real.dims())));
    }
    let adv = bce_with_logits(logits_fake, true)?;
    let l1 = (fake - real)?.abs()?.mean_all()?;
    let weighted = l1.affine(lambda, 0.0)?;
    let total = (&adv + &weighted)?;
    let s = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
    let parts = GeneratorLoss {
        adversarial: s(&adv)?,
        l1: s(&l1)?,
        l1_weighted: s(&weighted)?,
        total: s(&total)?,
    };
    Ok((total, parts))
}

/// `0.5 * [BCE(real, 1) + BCE(fake, 0)]`.
pub fn discriminator_loss(logits_real: &Tensor, logits_fake: &Tensor) -> Result<Tensor> {
    if logits_real.dims() != logits_fake.dims() {
        return Err(Error::Shape(format!(
            "logit maps differ: {:?} vs {:?}",
            logits_real.dims(),
            logits_fake.dims()
        )));
    }
    Ok(((bce_with_logits(logits_real, true)? + bce_with_logits(logits_fake, false)?)? * 0.5)?)
}

/// A discriminator together with its parameter store.
pub struct PatchGanModel {
    pub varmap: VarMap,
    pub net: PatchGan,
}

impl PatchGanModel {
    pub fn new(config: PatchGanConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let varmap = VarMap::new();
        let vb = SeededInit::builder(&varmap, seed, dtype, device);
        let net = PatchGan::new(config, vb)?;
        Ok(Self { varmap, net })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GanStepLosses {
    pub d_loss: f64,
    pub d_real_acc: f64,
    pub d_fake_acc: f64,
    pub g_adversarial: f64,
    pub g_l1: f64,
    pub g_total: f64,
}

pub fn adamw(varmap: &VarMap, lr: f64, weight_decay: f64) -> Result<AdamW> {
    let vars = trainable_vars(varmap).into_iter().map(|(_, v)| v).collect();
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            weight_decay,
            ..ParamsAdamW::default()
        },
    )?)
}

/// Generator, discriminator and their optimizers.
pub struct Pix2Pix {
    pub generator: UNetModel,
    pub discriminator: PatchGanModel,
    pub opt_g: AdamW,
    pub opt_d: AdamW,
    pub lambda: f64,
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            epoch: 0,
            step: 0,
            detail: format!("{what} = {v}"),
        })
    }
}

fn accuracy(logits: &Tensor, real: bool) -> Result<f64> {
    let v = logits.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    let hits = v.iter().filter(|&&z| (z > 0.0) == real).count();
    Ok(hits as f64 / v.len().max(1) as f64)
}

impl Pix2Pix {
    pub fn new(generator: UNetModel, disc_config: PatchGanConfig, seed: u64, lr: f64, weight_decay: f64, lambda: f64) -> Result<Self> {
        let discriminator = PatchGanModel::new(disc_config, seed ^ 0xD15C, generator.dtype(), generator.device())?;
        let opt_g = adamw(&generator.varmap, lr, weight_decay)?;
        let opt_d = adamw(&discriminator.varmap, lr, weight_decay)?;
        Ok(Self {
            generator,
            discriminator,
            opt_g,
            opt_d,
            lambda,
        })
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.opt_g.set_learning_rate(lr);
        self.opt_d.set_learning_rate(lr);
    }

    /// One discriminator update on (real, detached fake), then one
    /// generator update. `thermal` is the unit-range target. Also returns
    /// the detached generator output.
    pub fn step(&mut self, rgb: &Tensor, cond: &Tensor, thermal: &Tensor) -> Result<(GanStepLosses, Tensor)> {
        let d = &self.discriminator.net;
        let fake = self.generator.net.forward_t(rgb, cond, true)?;
        let to_pm1 = |t: &Tensor| t.affine(2.0, -1.0);
        let real_pm1 = to_pm1(thermal)?;

        let logits_real = d.forward_t(rgb, &real_pm1, true)?;
        let logits_fake = d.forward_t(rgb, &to_pm1(&fake.detach())?, true)?;
        let d_loss = discriminator_loss(&logits_real, &logits_fake)?;
        let d_val = finite(d_loss.to_dtype(DType::F64)?.to_scalar::<f64>()?, "discriminator loss")?;
        let d_real_acc = accuracy(&logits_real, true)?;
        let d_fake_acc = accuracy(&logits_fake, false)?;
        self.opt_d.backward_step(&d_loss)?;

        let logits = d.forward_t(rgb, &to_pm1(&fake)?, true)?;
        let (g_loss, parts) = generator_loss(&logits, &fake, thermal, self.lambda)?;
        finite(parts.total, "generator loss")?;
        // only generator vars are stepped; discriminator grads are discarded
        self.opt_g.backward_step(&g_loss)?;
        let losses = GanStepLosses {
            d_loss: d_val,
            d_real_acc,
            d_fake_acc,
            g_adversarial: parts.adversarial,
            g_l1: parts.l1,
            g_total: parts.total,
        };
        Ok((losses, fake.detach()))
    }
}
