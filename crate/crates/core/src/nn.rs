//! Small building blocks shared by the generator, discriminator and LPIPS
//! backbone, plus a seeded parameter store.

use std::sync::Mutex;

use candle_core::{DType, Device, Module, ModuleT, Shape, Tensor, Var};
use candle_nn::init::{FanInOut, NormalOrUniform};
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{BatchNorm, BatchNormConfig, Init, VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

/// Parameter store whose random initializers draw from a seeded stream, so
/// that a model built twice with the same seed has identical weights. The
/// CPU device RNG cannot be seeded.
pub struct SeededInit {
    varmap: VarMap,
    rng: Mutex<ChaCha8Rng>,
}

impl SeededInit {
    pub fn new(varmap: VarMap, seed: u64) -> Self {
        Self {
            varmap,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    /// A var builder writing into `varmap`.
    pub fn builder(varmap: &VarMap, seed: u64, dtype: DType, device: &Device) -> VarBuilder<'static> {
        let backend: Box<dyn SimpleBackend> = Box::new(Self::new(varmap.clone(), seed));
        VarBuilder::from_backend(backend, dtype, device.clone())
    }

    fn sample(&self, shape: &Shape, init: Init) -> Vec<f64> {
        let n = shape.elem_count();
        let mut rng = self.rng.lock().expect("rng poisoned");
        let mut uniform = |lo: f64, up: f64| -> Vec<f64> {
            (0..n).map(|_| lo + (up - lo) * rng.random::<f64>()).collect()
        };
        match init {
            Init::Const(v) => vec![v; n],
            Init::Uniform { lo, up } => uniform(lo, up),
            Init::Randn { mean, stdev } => {
                drop(uniform);
                (0..n)
                    .map(|_| mean + stdev * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
            Init::Kaiming {
                dist,
                fan,
                non_linearity,
            } => {
                let fan: usize = FanInOut::for_shape(&fan, shape);
                let std = non_linearity.gain() / (fan.max(1) as f64).sqrt();
                match dist {
                    NormalOrUniform::Uniform => {
                        let bound = 3f64.sqrt() * std;
                        uniform(-bound, bound)
                    }
                    NormalOrUniform::Normal => {
                        drop(uniform);
                        (0..n)
                            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    }
                }
            }
        }
    }
}

impl SimpleBackend for SeededInit {
    fn get(
        &self,
        s: Shape,
        name: &str,
        h: Init,
        dtype: DType,
        dev: &Device,
    ) -> candle_core::Result<Tensor> {
        if let Some(var) = self.varmap.data().lock().expect("varmap poisoned").get(name) {
            if var.shape() != &s {
                candle_core::bail!("shape mismatch on {name}: {s:?} <> {:?}", var.shape());
            }
            return Ok(var.as_tensor().clone());
        }
        let values = self.sample(&s, h);
        let t = Tensor::from_vec(values, s, dev)?.to_dtype(dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.varmap
            .data()
            .lock()
            .expect("varmap poisoned")
            .insert(name.to_string(), var);
        Ok(out)
    }

    fn get_unchecked(&self, name: &str, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        match self.varmap.data().lock().expect("varmap poisoned").get(name) {
            Some(v) => v.as_tensor().to_device(dev)?.to_dtype(dtype),
            None => candle_core::bail!("no variable named {name}"),
        }
    }

    fn contains_tensor(&self, name: &str) -> bool {
        self.varmap
            .data()
            .lock()
            .expect("varmap poisoned")
            .contains_key(name)
    }
}

/// Trainable vars of a map, sorted by name. Norm running statistics are
/// excluded: they are updated by the forward pass, not the optimizer.
pub fn trainable_vars(varmap: &VarMap) -> Vec<(String, Var)> {
    let data = varmap.data().lock().expect("varmap poisoned");
    let mut vars: Vec<(String, Var)> = data
        .iter()
        .filter(|(k, _)| !k.ends_with("running_mean") && !k.ends_with("running_var"))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    vars
}

/// Square-kernel convolution backed by [`crate::ops::conv2d`]. Parameter
/// names and initialization match `candle_nn::conv2d`.
#[derive(Debug, Clone)]
pub struct Conv {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv {
    pub fn from_parts(weight: Tensor, bias: Option<Tensor>, stride: usize, padding: usize) -> Self {
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }
}

impl Module for Conv {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        crate::ops::conv2d(x, &self.weight, self.bias.as_ref(), self.stride, self.padding)
            .map_err(|e| candle_core::Error::Msg(e.to_string()))
    }
}

pub fn conv(
    c_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    bias: bool,
    vb: VarBuilder,
) -> Result<Conv> {
    let weight = vb.get_with_hints(
        (c_out, c_in, kernel, kernel),
        "weight",
        candle_nn::init::DEFAULT_KAIMING_NORMAL,
    )?;
    let bias = if bias {
        let bound = 1.0 / ((c_in * kernel * kernel) as f64).sqrt();
        Some(vb.get_with_hints(c_out, "bias", Init::Uniform { lo: -bound, up: bound })?)
    } else {
        None
    };
    Ok(Conv {
        weight,
        bias,
        stride,
        padding,
    })
}

/// Two 3×3 convolutions, each followed by batch norm and SiLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvBlock {
    pub fn new(c_in: usize, c_out: usize, vb: VarBuilder) -> Result<Self> {
        let bn_cfg = BatchNormConfig::default();
        Ok(Self {
            conv1: conv(c_in, c_out, 3, 1, 1, false, vb.pp("conv1"))?,
            bn1: candle_nn::batch_norm(c_out, bn_cfg, vb.pp("bn1"))?,
            conv2: conv(c_out, c_out, 3, 1, 1, false, vb.pp("conv2"))?,
            bn2: candle_nn::batch_norm(c_out, bn_cfg, vb.pp("bn2"))?,
            in_channels: c_in,
            out_channels: c_out,
        })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let x = self.conv1.forward(x)?;
        let x = self.bn1.forward_t(&x, train)?.silu()?;
        let x = self.conv2.forward(&x)?;
        Ok(self.bn2.forward_t(&x, train)?.silu()?)
    }
}

/// `[out, in]` linear-interpolation matrix for a 2× upscale with half-pixel
/// centres (PyTorch `align_corners=False`).
pub fn upsample_matrix(n_in: usize, scale: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let n_out = n_in * scale;
    let mut m = vec![0f64; n_out * n_in];
    for o in 0..n_out {
        let src = ((o as f64 + 0.5) / scale as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        let frac = src - i0 as f64;
        m[o * n_in + i0] += 1.0 - frac;
        m[o * n_in + i1] += frac;
    }
    Ok(Tensor::from_vec(m, (n_out, n_in), device)?.to_dtype(dtype)?)
}

/// Differentiable bilinear 2× upscale of `[N, C, H, W]`.
pub fn upsample_bilinear2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let uh = upsample_matrix(h, 2, x.dtype(), x.device())?;
    let uw_t = upsample_matrix(w, 2, x.dtype(), x.device())?.t()?.contiguous()?;
    // rows: [N*C*H, W] x [W, 2W]
    let rows = x.reshape((n * c * h, w))?.matmul(&uw_t)?;
    // columns: [2H, H] x [H, 2W] per image plane
    let planes = rows.reshape((n * c, h, 2 * w))?;
    let out = uh.unsqueeze(0)?.broadcast_as((n * c, 2 * h, h))?.contiguous()?.matmul(&planes)?;
    Ok(out.reshape((n, c, 2 * h, 2 * w))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_is_reproducible() {
        let build = |seed| {
            let vm = VarMap::new();
            let vb = SeededInit::builder(&vm, seed, DType::F32, &Device::Cpu);
            let _ = conv(3, 4, 3, 1, 1, true, vb.pp("c")).unwrap();
            let w = vm.data().lock().unwrap()["c.weight"].as_tensor().clone();
            w.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        };
        assert_eq!(build(5), build(5));
        assert_ne!(build(5), build(6));
    }

    #[test]
    fn upsample_matches_direct_bilinear() {
        // 1x1x2x3 -> 4x6, compare with scalar half-pixel interpolation
        let x = Tensor::from_vec(vec![0f64, 1., 4., 2., 3., 9.], (1, 1, 2, 3), &Device::Cpu).unwrap();
        let y = upsample_bilinear2x(&x).unwrap();
        assert_eq!(y.dims(), &[1, 1, 4, 6]);
        let got = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let src = [[0., 1., 4.], [2., 3., 9.]];
        let coord = |o: usize, n: usize| {
            let s = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(n - 1);
            (i0, (i0 + 1).min(n - 1), s - i0 as f64)
        };
        for oy in 0..4 {
            for ox in 0..6 {
                let (y0, y1, fy) = coord(oy, 2);
                let (x0, x1, fx) = coord(ox, 3);
                let top = src[y0][x0] * (1. - fx) + src[y0][x1] * fx;
                let bot = src[y1][x0] * (1. - fx) + src[y1][x1] * fx;
                let want = top * (1. - fy) + bot * fy;
                assert!((got[oy * 6 + ox] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsample_preserves_constants() {
        let x = Tensor::full(0.7f32, (2, 3, 5, 4), &Device::Cpu).unwrap();
        let y = upsample_bilinear2x(&x).unwrap();
        let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|a| (a - 0.7).abs() < 1e-6));
    }
}
