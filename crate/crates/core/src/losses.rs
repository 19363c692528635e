//! Composite training objective and evaluation metrics.
//!
//! Every term takes `[N, C, H, W]` tensors in `[0, 1]` and is differentiable
//! with respect to `pred`. Batched terms are averaged over the batch.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::VarMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv, SeededInit};
use crate::types::ImageTensor;

pub const CHARBONNIER_EPS: f64 = 1e-3;

/// Per-scale MS-SSIM weights for five scales.
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Floor applied to per-scale MS-SSIM factors before the fractional power.
const MSSSIM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub charbonnier: f64,
    pub msssim: f64,
    pub lpips: f64,
    pub grad: f64,
    pub stats: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            charbonnier: 1.0,
            msssim: 0.4,
            lpips: 0.3,
            grad: 0.1,
            stats: 0.05,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            charbonnier: 0.0,
            msssim: 0.0,
            lpips: 0.0,
            grad: 0.0,
            stats: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.charbonnier, self.msssim, self.lpips, self.grad, self.stats]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub charbonnier: f64,
    pub msssim_term: f64,
    pub lpips_term: f64,
    pub grad_term: f64,
    pub stats_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [f64; 5] {
        [self.charbonnier, self.msssim_term, self.lpips_term, self.grad_term, self.stats_term]
    }
}

fn check_pair(pred: &Tensor, target: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ in shape",
            pred.dims(),
            target.dims()
        )));
    }
    Ok(pred.dims4()?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Mean of `sqrt(d^2 + eps^2)` over all elements.
pub fn charbonnier(pred: &Tensor, target: &Tensor, eps: f64) -> Result<Tensor> {
    check_pair(pred, target)?;
    Ok((pred - target)?.sqr()?.affine(1.0, eps * eps)?.sqrt()?.mean_all()?)
}

/// Normalized 1-D Gaussian taps centred on the middle element.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable correlation without padding along the last two axes.
fn filter_valid(x: &Tensor, taps: &[f64]) -> Result<Tensor> {
    let k = taps.len();
    let (_, _, h, w) = x.dims4()?;
    let along = |x: &Tensor, dim: usize, len: usize| -> Result<Tensor> {
        let out_len = len + 1 - k;
        let mut acc = x.narrow(dim, 0, out_len)?.affine(taps[0], 0.0)?;
        for (i, &t) in taps.iter().enumerate().skip(1) {
            acc = (acc + x.narrow(dim, i, out_len)?.affine(t, 0.0)?)?;
        }
        Ok(acc)
    };
    let x = along(x, 3, w)?;
    along(&x, 2, h)
}

/// Mean SSIM and mean contrast-structure per `(n, c)`, each `[N, C]`.
fn ssim_components(x: &Tensor, y: &Tensor, taps: &[f64]) -> Result<(Tensor, Tensor)> {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mu_x = filter_valid(x, taps)?;
    let mu_y = filter_valid(y, taps)?;
    let mu_xx = mu_x.sqr()?;
    let mu_yy = mu_y.sqr()?;
    let mu_xy = (&mu_x * &mu_y)?;
    let s_xx = (filter_valid(&x.sqr()?, taps)? - &mu_xx)?;
    let s_yy = (filter_valid(&y.sqr()?, taps)? - &mu_yy)?;
    let s_xy = (filter_valid(&(x * y)?, taps)? - &mu_xy)?;
    let cs = (s_xy.affine(2.0, c2)? / (s_xx + s_yy)?.affine(1.0, c2)?)?;
    let lum = (mu_xy.affine(2.0, c1)? / (mu_xx + mu_yy)?.affine(1.0, c1)?)?;
    let ssim = (lum * &cs)?;
    Ok((ssim.mean(D::Minus1)?.mean(D::Minus1)?, cs.mean(D::Minus1)?.mean(D::Minus1)?))
}

/// Single-scale SSIM (11x11 Gaussian window, sigma 1.5, data range 1),
/// averaged over batch and channels.
pub fn ssim(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = check_pair(pred, target)?;
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::TooSmall(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (s, _) = ssim_components(pred, target, &taps)?;
    Ok(s.mean_all()?)
}

/// Scale count and window size MS-SSIM uses for a given smaller image side.
///
/// Uses as many scales (up to five) as keep the coarsest 2x-pooled level at
/// least as large as the 11-pixel window. When even one scale cannot fit it,
/// the window shrinks to the largest odd size that fits (minimum 3).
pub fn msssim_plan(min_side: usize) -> Result<(usize, usize)> {
    let scales = (1..=MSSSIM_WEIGHTS.len())
        .filter(|&s| min_side >> (s - 1) >= SSIM_WINDOW)
        .max()
        .unwrap_or(1);
    let coarsest = min_side >> (scales - 1);
    let window = if coarsest >= SSIM_WINDOW {
        SSIM_WINDOW
    } else if coarsest % 2 == 1 {
        coarsest
    } else {
        coarsest.saturating_sub(1)
    };
    if window < 3 {
        return Err(Error::TooSmall(format!("MS-SSIM needs at least 3x3, got side {min_side}")));
    }
    Ok((scales, window))
}

/// Multi-scale SSIM averaged over batch and channels.
pub fn ms_ssim(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = check_pair(pred, target)?;
    let (scales, window) = msssim_plan(h.min(w))?;
    let taps = gaussian_taps(window, SSIM_SIGMA);
    let wsum: f64 = MSSSIM_WEIGHTS[..scales].iter().sum();
    let mut x = pred.clone();
    let mut y = target.clone();
    let mut prod: Option<Tensor> = None;
    for (i, &wt) in MSSSIM_WEIGHTS[..scales].iter().enumerate() {
        let (s, cs) = ssim_components(&x, &y, &taps)?;
        let last = i + 1 == scales;
        let factor = if last { s } else { cs };
        let factor = factor.maximum(MSSSIM_FLOOR)?.powf(wt / wsum)?;
        prod = Some(match prod {
            Some(p) => (p * factor)?,
            None => factor,
        });
        if !last {
            x = x.avg_pool2d(2)?;
            y = y.avg_pool2d(2)?;
        }
    }
    Ok(prod.expect("at least one scale").mean_all()?)
}

/// `1 - MS-SSIM`, in `[0, 2]`.
pub fn msssim_term(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok(ms_ssim(pred, target)?.affine(-1.0, 1.0)?)
}

/// Pads the last two axes by one pixel, mirroring without repeating the edge.
fn reflect_pad1(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let x = Tensor::cat(&[&x.narrow(3, 1, 1)?, x, &x.narrow(3, w - 2, 1)?], 3)?;
    Ok(Tensor::cat(&[&x.narrow(2, 1, 1)?, &x, &x.narrow(2, h - 2, 1)?], 2)?)
}

/// Sobel responses `(gx, gy)` with reflect padding, same size as `x`.
pub fn sobel(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, _, h, w) = x.dims4()?;
    if h < 3 || w < 3 {
        return Err(Error::TooSmall(format!("Sobel needs at least 3x3, got {h}x{w}")));
    }
    let p = reflect_pad1(x)?;
    let rows = |dy: usize| p.narrow(2, dy, h);
    let cols = |t: &Tensor, dx: usize| t.narrow(3, dx, w);
    // smooth [1 2 1] along one axis, difference [-1 0 1] along the other
    let sy = (rows(0)? + rows(1)?.affine(2.0, 0.0)? + rows(2)?)?;
    let gx = (cols(&sy, 2)? - cols(&sy, 0)?)?;
    let dy = (rows(2)? - rows(0)?)?;
    let gy = (cols(&dy, 0)? + cols(&dy, 1)?.affine(2.0, 0.0)? + cols(&dy, 2)?)?;
    Ok((gx, gy))
}

/// Mean absolute difference of Sobel responses, averaged over both axes.
pub fn grad_term(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_pair(pred, target)?;
    let (px, py) = sobel(pred)?;
    let (tx, ty) = sobel(target)?;
    let ex = (px - tx)?.abs()?.mean_all()?;
    let ey = (py - ty)?.abs()?.mean_all()?;
    Ok(((ex + ey)? * 0.5)?)
}

/// Per-image mean and population standard deviation, each `[N]`.
fn moments(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let n = x.dim(0)?;
    let flat = x.reshape((n, ()))?;
    let mean = flat.mean_keepdim(1)?;
    let var = flat.broadcast_sub(&mean)?.sqr()?.mean(1)?;
    // tiny offset keeps the sqrt differentiable on constant images
    Ok((mean.squeeze(1)?, var.affine(1.0, 1e-14)?.sqrt()?))
}

/// `|mean(pred) - mean(target)| + |std(pred) - std(target)|` per image,
/// averaged over the batch.
pub fn stats_term(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_pair(pred, target)?;
    let (pm, ps) = moments(pred)?;
    let (tm, ts) = moments(target)?;
    Ok(((pm - tm)?.abs()? + (ps - ts)?.abs()?)?.mean_all()?)
}

/// Where LPIPS backbone weights come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum LpipsBackbone {
    /// Pretrained AlexNet + linear heads exported to safetensors.
    Pretrained(PathBuf),
    /// Deterministic stand-in: seeded Kaiming features, uniform heads.
    Seeded(u64),
}

impl std::fmt::Display for LpipsBackbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LpipsBackbone::Pretrained(p) => write!(f, "pretrained:{}", p.display()),
            LpipsBackbone::Seeded(s) => write!(f, "seeded:{s}"),
        }
    }
}

/// AlexNet feature stack: (out channels, kernel, stride, padding).
const ALEX_CONVS: [(usize, usize, usize, usize); 5] =
    [(64, 11, 4, 2), (192, 5, 1, 2), (384, 3, 1, 1), (256, 3, 1, 1), (256, 3, 1, 1)];
/// torchvision indices of the convolutions inside `features`.
const ALEX_INDICES: [usize; 5] = [0, 3, 6, 8, 10];
const LPIPS_SHIFT: [f64; 3] = [-0.030, -0.088, -0.188];
const LPIPS_SCALE: [f64; 3] = [0.458, 0.448, 0.450];
const SEEDED_LIN_WEIGHT: f64 = 0.1;

/// Smallest side the AlexNet stack accepts.
pub const LPIPS_MIN_SIDE: usize = 31;

pub const LPIPS_DOWNLOAD_HINT: &str = "export them with `python scripts/export_lpips_alexnet.py OUT.safetensors` \
     (needs torchvision ImageNet AlexNet weights and the `lpips` package), \
     or select the seeded stand-in backbone explicitly";

/// Learned perceptual distance on single-channel maps in `[0, 1]`. The
/// backbone is frozen; gradients flow only to the inputs.
#[derive(Debug, Clone)]
pub struct Lpips {
    convs: Vec<Conv>,
    lins: Vec<Tensor>,
    shift: Tensor,
    scale: Tensor,
    backbone: LpipsBackbone,
}

impl Lpips {
    pub fn new(backbone: &LpipsBackbone, dtype: DType, device: &Device) -> Result<Self> {
        match backbone {
            LpipsBackbone::Pretrained(p) => Self::from_safetensors(p, dtype, device),
            LpipsBackbone::Seeded(s) => Self::seeded(*s, dtype, device),
        }
    }

    /// Loads `features.{0,3,6,8,10}.{weight,bias}` and `lin{0..4}.weight`.
    pub fn from_safetensors(path: &Path, dtype: DType, device: &Device) -> Result<Self> {
        if !path.exists() {
            return Err(Error::LpipsWeights(format!(
                "LPIPS weights not found at {}; {LPIPS_DOWNLOAD_HINT}",
                path.display()
            )));
        }
        let tensors = candle_core::safetensors::load(path, device)
            .map_err(|e| Error::LpipsWeights(format!("{}: {e}", path.display())))?;
        let get = |k: &str| -> Result<Tensor> {
            tensors
                .get(k)
                .ok_or_else(|| Error::LpipsWeights(format!("{} lacks tensor {k}", path.display())))?
                .to_dtype(dtype)
                .map_err(Error::from)
        };
        let mut convs = Vec::new();
        let mut lins = Vec::new();
        let mut c_in = 3;
        for (i, (&(c_out, k, s, p), idx)) in ALEX_CONVS.iter().zip(ALEX_INDICES).enumerate() {
            let w = get(&format!("features.{idx}.weight"))?;
            let b = get(&format!("features.{idx}.bias"))?;
            let lin = get(&format!("lin{i}.weight"))?;
            if w.dims() != [c_out, c_in, k, k] || lin.elem_count() != c_out {
                return Err(Error::LpipsWeights(format!(
                    "layer {i}: unexpected shapes {:?} / {:?}",
                    w.dims(),
                    lin.dims()
                )));
            }
            convs.push(Conv::from_parts(w, Some(b), s, p));
            lins.push(lin.reshape((1, c_out, 1, 1))?);
            c_in = c_out;
        }
        Self::assemble(convs, lins, LpipsBackbone::Pretrained(path.to_path_buf()), dtype, device)
    }

    /// Deterministic backbone for environments without the pretrained
    /// weights. Distances are comparable only between runs using the
    /// same seed.
    pub fn seeded(seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let varmap = VarMap::new();
        let vb = SeededInit::builder(&varmap, seed, dtype, device);
        let mut convs = Vec::new();
        let mut lins = Vec::new();
        let mut c_in = 3;
        for (i, &(c_out, k, s, p)) in ALEX_CONVS.iter().enumerate() {
            let w = vb.pp(format!("features.{i}")).get_with_hints(
                (c_out, c_in, k, k),
                "weight",
                candle_nn::init::DEFAULT_KAIMING_NORMAL,
            )?;
            let w = w.detach();
            convs.push(Conv::from_parts(w, None, s, p));
            lins.push(Tensor::full(SEEDED_LIN_WEIGHT, (1, c_out, 1, 1), device)?.to_dtype(dtype)?);
            c_in = c_out;
        }
        Self::assemble(convs, lins, LpipsBackbone::Seeded(seed), dtype, device)
    }

    fn assemble(
        convs: Vec<Conv>,
        lins: Vec<Tensor>,
        backbone: LpipsBackbone,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let per_channel = |v: [f64; 3]| -> Result<Tensor> {
            Ok(Tensor::from_vec(v.to_vec(), (1, 3, 1, 1), device)?.to_dtype(dtype)?)
        };
        Ok(Self {
            convs,
            lins,
            shift: per_channel(LPIPS_SHIFT)?,
            scale: per_channel(LPIPS_SCALE)?,
            backbone,
        })
    }

    pub fn backbone(&self) -> &LpipsBackbone {
        &self.backbone
    }

    fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let cv = |c: &Conv| -> Result<Conv> {
            Ok(Conv::from_parts(
                c.weight().to_dtype(dtype)?,
                c.bias().map(|b| b.to_dtype(dtype)).transpose()?,
                c.stride(),
                c.padding(),
            ))
        };
        Ok(Self {
            convs: self.convs.iter().map(cv).collect::<Result<_>>()?,
            lins: self.lins.iter().map(|t| t.to_dtype(dtype)).collect::<candle_core::Result<_>>()?,
            shift: self.shift.to_dtype(dtype)?,
            scale: self.scale.to_dtype(dtype)?,
            backbone: self.backbone.clone(),
        })
    }

    /// Five ReLU feature taps for a `[N, 1, H, W]` batch in `[0, 1]`.
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 {
            return Err(Error::Shape(format!("LPIPS expects single-channel maps, got {c} channels")));
        }
        if h.min(w) < LPIPS_MIN_SIDE {
            return Err(Error::TooSmall(format!(
                "LPIPS backbone needs at least {LPIPS_MIN_SIDE}x{LPIPS_MIN_SIDE}, got {h}x{w}"
            )));
        }
        let x = Tensor::cat(&[x, x, x], 1)?.affine(2.0, -1.0)?;
        let mut h = x.broadcast_sub(&self.shift)?.broadcast_div(&self.scale)?;
        let mut taps = Vec::with_capacity(self.convs.len());
        for (i, conv) in self.convs.iter().enumerate() {
            if i == 1 || i == 2 {
                h = crate::ops::max_pool2d(&h, 3, 2)?;
            }
            h = conv.forward(&h)?.relu()?;
            taps.push(h.clone());
        }
        Ok(taps)
    }

    /// Per-image distance, `[N]`.
    pub fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        check_pair(a, b)?;
        let model = if a.dtype() == self.shift.dtype() {
            None
        } else {
            Some(self.to_dtype(a.dtype())?)
        };
        let net = model.as_ref().unwrap_or(self);
        let fa = net.features(a)?;
        let fb = net.features(b)?;
        let mut total: Option<Tensor> = None;
        for ((x, y), lin) in fa.iter().zip(&fb).zip(&net.lins) {
            let d = (unit_normalize(x)? - unit_normalize(y)?)?.sqr()?;
            let layer = d.broadcast_mul(lin)?.sum(1)?.mean(D::Minus1)?.mean(D::Minus1)?;
            total = Some(match total {
                Some(t) => (t + layer)?,
                None => layer,
            });
        }
        Ok(total.expect("five layers"))
    }
}

/// Scales each spatial feature vector to unit length over channels.
fn unit_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(1)?.affine(1.0, 1e-20)?.sqrt()?.affine(1.0, 1e-10)?;
    Ok(x.broadcast_div(&norm)?)
}

/// Batch-mean LPIPS distance (loss mode).
pub fn lpips_term(lpips: &Lpips, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok(lpips.distance(pred, target)?.mean_all()?)
}

/// Weighted composite objective. `lpips` may be `None` only when its weight
/// is 0.
pub fn combined_loss(
    pred: &Tensor,
    target: &Tensor,
    weights: &LossWeights,
    eps: f64,
    lpips: Option<&Lpips>,
) -> Result<(Tensor, LossBreakdown)> {
    check_pair(pred, target)?;
    weights.validate()?;
    let charb = charbonnier(pred, target, eps)?;
    let ms = msssim_term(pred, target)?;
    let lp = match lpips {
        Some(l) => Some(lpips_term(l, pred, target)?),
        None if weights.lpips == 0.0 => None,
        None => {
            return Err(Error::Config(
                "LPIPS weight is non-zero but no LPIPS backbone was supplied".into(),
            ))
        }
    };
    let gr = grad_term(pred, target)?;
    let st = stats_term(pred, target)?;
    let mut total = (charb.affine(weights.charbonnier, 0.0)? + ms.affine(weights.msssim, 0.0)?)?;
    if let Some(lp) = &lp {
        total = (total + lp.affine(weights.lpips, 0.0)?)?;
    }
    total = (total + gr.affine(weights.grad, 0.0)? + st.affine(weights.stats, 0.0)?)?;
    let breakdown = LossBreakdown {
        charbonnier: scalar(&charb)?,
        msssim_term: scalar(&ms)?,
        lpips_term: lp.as_ref().map(scalar).transpose()?.unwrap_or(0.0),
        grad_term: scalar(&gr)?,
        stats_term: scalar(&st)?,
        total: scalar(&total)?,
    };
    Ok((total, breakdown))
}

/// `10 log10(range^2 / MSE)` in dB; `+inf` for identical inputs.
pub fn psnr(pred: &[f32], target: &[f32], data_range: f64) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "PSNR inputs have {} and {} elements",
            pred.len(),
            target.len()
        )));
    }
    let mse = pred
        .iter()
        .zip(target)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

fn image_pair(pred: &ImageTensor, target: &ImageTensor) -> Result<(Tensor, Tensor)> {
    if !pred.same_size(target) || pred.channels() != target.channels() {
        return Err(Error::Shape(format!(
            "metric inputs {}x{}x{} and {}x{}x{} differ",
            pred.channels(),
            pred.height(),
            pred.width(),
            target.channels(),
            target.height(),
            target.width()
        )));
    }
    let t = |img: &ImageTensor| -> Result<Tensor> {
        Ok(img.to_tensor(&Device::Cpu)?.to_dtype(DType::F64)?.unsqueeze(0)?)
    };
    Ok((t(pred)?, t(target)?))
}

pub fn psnr_metric(pred: &ImageTensor, target: &ImageTensor) -> Result<f64> {
    if !pred.same_size(target) {
        return Err(Error::Shape("PSNR inputs differ in size".into()));
    }
    psnr(pred.data(), target.data(), 1.0)
}

/// SSIM of two unit-range images, computed in f64.
pub fn ssim_metric(pred: &ImageTensor, target: &ImageTensor) -> Result<f64> {
    let (p, t) = image_pair(pred, target)?;
    scalar(&ssim(&p, &t)?)
}

/// LPIPS of two unit-range single-channel images (metric mode).
pub fn lpips_metric(lpips: &Lpips, pred: &ImageTensor, target: &ImageTensor) -> Result<f64> {
    let (p, t) = image_pair(pred, target)?;
    let (p, t) = (p.to_dtype(lpips.shift.dtype())?, t.to_dtype(lpips.shift.dtype())?);
    scalar(&lpips_term(lpips, &p.detach(), &t.detach())?)
}
