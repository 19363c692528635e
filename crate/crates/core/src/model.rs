//! Four-level conditional U-Net: conv encoder, self-attention bottleneck
//! modulated by metadata through FiLM, bilinear decoder with skip
//! connections and a sigmoid thermal head.

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{GroupNorm, Init, Linear, VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metadata::{MetadataVector, FEATURE_DIM};
use crate::nn::{conv, upsample_bilinear2x, Conv, ConvBlock, SeededInit};
use crate::types::{ImageTensor, RangeTag, MODEL_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub encoder_widths: Vec<usize>,
    pub bottleneck_width: usize,
    pub attention_heads: usize,
    pub cond_dim: usize,
    pub film_hidden: usize,
    pub input_size: usize,
    pub norm_groups: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            out_channels: 1,
            encoder_widths: vec![32, 64, 128, 256],
            bottleneck_width: 512,
            attention_heads: 4,
            cond_dim: FEATURE_DIM,
            film_hidden: 128,
            input_size: MODEL_SIZE,
            norm_groups: 32,
        }
    }
}

impl UNetConfig {
    /// Same architecture at a smaller input size (for tests and demos).
    pub fn reduced_size(input_size: usize) -> Self {
        Self {
            input_size,
            ..Self::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.encoder_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.encoder_widths;
        if w.is_empty() || w.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Config(format!("encoder widths {w:?} must be strictly increasing")));
        }
        if self.bottleneck_width != 2 * w[w.len() - 1] {
            return Err(Error::Config(format!(
                "bottleneck width {} must be twice the last encoder width {}",
                self.bottleneck_width,
                w[w.len() - 1]
            )));
        }
        let div = 1usize << w.len();
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::Config(format!(
                "input size {} must be a positive multiple of {div}",
                self.input_size
            )));
        }
        if self.attention_heads == 0 || self.bottleneck_width % self.attention_heads != 0 {
            return Err(Error::Config(format!(
                "bottleneck width {} not divisible by {} heads",
                self.bottleneck_width, self.attention_heads
            )));
        }
        if self.norm_groups == 0 || self.bottleneck_width % self.norm_groups != 0 {
            return Err(Error::Config(format!(
                "bottleneck width {} not divisible by {} groups",
                self.bottleneck_width, self.norm_groups
            )));
        }
        Ok(())
    }
}

/// One row of the layer table: spatial size and channels in and out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerTrace {
    pub name: String,
    pub in_size: (usize, usize),
    pub in_channels: usize,
    pub out_size: (usize, usize),
    pub out_channels: usize,
}

impl LayerTrace {
    fn between(name: impl Into<String>, input: &Tensor, output: &Tensor) -> Result<Self> {
        let (_, ci, hi, wi) = input.dims4()?;
        let (_, co, ho, wo) = output.dims4()?;
        Ok(Self {
            name: name.into(),
            in_size: (hi, wi),
            in_channels: ci,
            out_size: (ho, wo),
            out_channels: co,
        })
    }
}

/// GroupNorm, multi-head self-attention over the flattened spatial tokens,
/// output projection, residual add.
#[derive(Debug, Clone)]
pub struct SelfAttention2d {
    norm: GroupNorm,
    qkv: Linear,
    proj: Linear,
    heads: usize,
    channels: usize,
}

impl SelfAttention2d {
    pub fn new(channels: usize, heads: usize, groups: usize, vb: VarBuilder) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::Config(format!(
                "{channels} channels not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            norm: candle_nn::group_norm(groups, channels, 1e-5, vb.pp("norm"))?,
            qkv: candle_nn::linear(channels, 3 * channels, vb.pp("qkv"))?,
            proj: candle_nn::linear(channels, channels, vb.pp("proj"))?,
            heads,
            channels,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels {
            return Err(Error::Shape(format!(
                "self-attention expects {} channels, got {c}",
                self.channels
            )));
        }
        let t = h * w;
        let d = c / self.heads;
        let tokens = self.norm.forward(x)?.reshape((n, c, t))?.transpose(1, 2)?;
        let qkv = self.qkv.forward(&tokens.contiguous()?)?;
        let split = |i: usize| -> Result<Tensor> {
            Ok(qkv
                .narrow(2, i * c, c)?
                .reshape((n, t, self.heads, d))?
                .transpose(1, 2)?
                .contiguous()?)
        };
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (d as f64).sqrt())?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let mixed = attn
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((n, t, c))?;
        let out = self
            .proj
            .forward(&mixed)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((n, c, h, w))?;
        Ok((x + out)?)
    }
}

/// Per-channel scale and shift predicted from metadata. `[N, C]` each.
#[derive(Debug, Clone)]
pub struct FilmParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// `out[n, c, :, :] = gamma[n, c] * h[n, c, :, :] + beta[n, c]`.
pub fn film_modulate(h: &Tensor, p: &FilmParams) -> Result<Tensor> {
    let (n, c, _, _) = h.dims4()?;
    for (name, t) in [("gamma", &p.gamma), ("beta", &p.beta)] {
        if t.dims() != [n, c] {
            return Err(Error::Shape(format!(
                "FiLM {name} has shape {:?}, features need [{n}, {c}]",
                t.dims()
            )));
        }
    }
    let gamma = p.gamma.unsqueeze(2)?.unsqueeze(3)?;
    let beta = p.beta.unsqueeze(2)?.unsqueeze(3)?;
    Ok(h.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
}

/// MLP `cond_dim → hidden (SiLU) → 2·C`, split into gamma and beta heads.
/// Output weights start at zero with gamma bias 1, so modulation begins as
/// the identity.
#[derive(Debug, Clone)]
pub struct FilmHead {
    fc: Linear,
    gamma: Linear,
    beta: Linear,
    cond_dim: usize,
}

fn zero_linear(d_in: usize, d_out: usize, bias: f64, vb: VarBuilder) -> Result<Linear> {
    let w = vb.get_with_hints((d_out, d_in), "weight", Init::Const(0.0))?;
    let b = vb.get_with_hints(d_out, "bias", Init::Const(bias))?;
    Ok(Linear::new(w, Some(b)))
}

impl FilmHead {
    pub fn new(cond_dim: usize, hidden: usize, channels: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            fc: candle_nn::linear(cond_dim, hidden, vb.pp("fc"))?,
            gamma: zero_linear(hidden, channels, 1.0, vb.pp("gamma"))?,
            beta: zero_linear(hidden, channels, 0.0, vb.pp("beta"))?,
            cond_dim,
        })
    }

    /// `v` is `[N, cond_dim]`, already standardized.
    pub fn forward(&self, v: &Tensor) -> Result<FilmParams> {
        let (_, d) = v.dims2()?;
        if d != self.cond_dim {
            return Err(Error::Shape(format!(
                "conditioning vector has {d} features, expected {}",
                self.cond_dim
            )));
        }
        let hidden = self.fc.forward(v)?.silu()?;
        Ok(FilmParams {
            gamma: self.gamma.forward(&hidden)?,
            beta: self.beta.forward(&hidden)?,
        })
    }
}

/// Bilinear 2× upscale, 1×1 conv down to the skip width, concatenation
/// `[upscaled ; skip]`.
#[derive(Debug, Clone)]
struct Upscale {
    reduce: Conv,
}

impl Upscale {
    fn forward(&self, x: &Tensor, skip: &Tensor) -> Result<Tensor> {
        let up = self.reduce.forward(&upsample_bilinear2x(x)?)?;
        Ok(Tensor::cat(&[&up, skip], 1)?)
    }
}

#[derive(Debug, Clone)]
pub struct ConditionalUNet {
    config: UNetConfig,
    encoders: Vec<ConvBlock>,
    bottleneck: ConvBlock,
    attention: SelfAttention2d,
    film: FilmHead,
    upscales: Vec<Upscale>,
    decoders: Vec<ConvBlock>,
    head: Conv,
}

impl ConditionalUNet {
    pub fn new(config: UNetConfig, vb: VarBuilder) -> Result<Self> {
        config.validate()?;
        let widths = config.encoder_widths.clone();
        let mut encoders = Vec::with_capacity(widths.len());
        let mut c_in = config.in_channels;
        for (i, &w) in widths.iter().enumerate() {
            encoders.push(ConvBlock::new(c_in, w, vb.pp(format!("enc{}", i + 1)))?);
            c_in = w;
        }
        let bottleneck = ConvBlock::new(c_in, config.bottleneck_width, vb.pp("bottleneck"))?;
        let attention = SelfAttention2d::new(
            config.bottleneck_width,
            config.attention_heads,
            config.norm_groups,
            vb.pp("attn"),
        )?;
        let film = FilmHead::new(
            config.cond_dim,
            config.film_hidden,
            config.bottleneck_width,
            vb.pp("film"),
        )?;
        let mut upscales = Vec::with_capacity(widths.len());
        let mut decoders = Vec::with_capacity(widths.len());
        let mut cur = config.bottleneck_width;
        for (i, &w) in widths.iter().enumerate().rev() {
            let level = i + 1;
            upscales.push(Upscale {
                reduce: conv(cur, w, 1, 1, 0, true, vb.pp(format!("up{level}.reduce")))?,
            });
            decoders.push(ConvBlock::new(2 * w, w, vb.pp(format!("dec{level}")))?);
            cur = w;
        }
        let head = conv(cur, config.out_channels, 3, 1, 1, true, vb.pp("head"))?;
        Ok(Self {
            config,
            encoders,
            bottleneck,
            attention,
            film,
            upscales,
            decoders,
            head,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn encoder_block(&self, level: usize) -> &ConvBlock {
        &self.encoders[level]
    }

    pub fn attention(&self) -> &SelfAttention2d {
        &self.attention
    }

    pub fn film_head(&self) -> &FilmHead {
        &self.film
    }

    pub fn condition_embed(&self, cond: &Tensor) -> Result<FilmParams> {
        self.film.forward(cond)
    }

    fn check_input(&self, rgb: &Tensor) -> Result<()> {
        let (_, c, h, w) = rgb.dims4().map_err(|_| {
            Error::Shape(format!("Encoder 1: expected [N, C, H, W] input, got {:?}", rgb.dims()))
        })?;
        let s = self.config.input_size;
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "Encoder 1: expected {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        if (h, w) != (s, s) {
            return Err(Error::Shape(format!("Encoder 1: expected {s}x{s} input, got {h}x{w}")));
        }
        Ok(())
    }

    /// `rgb` `[N, 3, S, S]` in `[-1, 1]`, `cond` `[N, 15]` standardized;
    /// returns `[N, 1, S, S]` in `(0, 1)`.
    pub fn forward_t(&self, rgb: &Tensor, cond: &Tensor, train: bool) -> Result<Tensor> {
        self.run(rgb, cond, train, None)
    }

    /// As [`Self::forward_t`] in inference mode, also returning one trace
    /// row per layer.
    pub fn forward_traced(&self, rgb: &Tensor, cond: &Tensor) -> Result<(Tensor, Vec<LayerTrace>)> {
        let mut trace = Vec::new();
        let out = self.run(rgb, cond, false, Some(&mut trace))?;
        Ok((out, trace))
    }

    fn run(
        &self,
        rgb: &Tensor,
        cond: &Tensor,
        train: bool,
        mut trace: Option<&mut Vec<LayerTrace>>,
    ) -> Result<Tensor> {
        self.check_input(rgb)?;
        let n = rgb.dim(0)?;
        if cond.dims() != [n, self.config.cond_dim] {
            return Err(Error::Shape(format!(
                "FiLM conditioning: expected [{n}, {}] metadata, got {:?}",
                self.config.cond_dim,
                cond.dims()
            )));
        }
        let mut record = |name: String, input: &Tensor, output: &Tensor| -> Result<()> {
            if let Some(t) = trace.as_deref_mut() {
                t.push(LayerTrace::between(name, input, output)?);
            }
            Ok(())
        };

        let mut x = rgb.clone();
        let mut skips = Vec::with_capacity(self.encoders.len());
        for (i, enc) in self.encoders.iter().enumerate() {
            let y = enc.forward_t(&x, train)?;
            record(format!("Encoder {}", i + 1), &x, &y)?;
            let pooled = crate::ops::max_pool2d(&y, 2, 2)?;
            record(format!("Max Pool {}", i + 1), &y, &pooled)?;
            skips.push(y);
            x = pooled;
        }
        let y = self.bottleneck.forward_t(&x, train)?;
        record("Bottleneck".into(), &x, &y)?;
        let a = self.attention.forward(&y)?;
        record(format!("SelfAttention2d ({} heads)", self.config.attention_heads), &y, &a)?;
        let film = self.film.forward(cond)?;
        let mut x = film_modulate(&a, &film)?;
        record("FiLM conditioning".into(), &a, &x)?;

        for (j, (up, dec)) in self.upscales.iter().zip(&self.decoders).enumerate() {
            let level = self.encoders.len() - j;
            let skip = &skips[level - 1];
            let merged = up.forward(&x, skip)?;
            record(format!("Upscale {level} (Bilinear)"), &x, &merged)?;
            let y = dec.forward_t(&merged, train)?;
            record(format!("Decoder {level}"), &merged, &y)?;
            x = y;
        }
        let logits = self.head.forward(&x)?;
        let out = candle_nn::ops::sigmoid(&logits)?;
        record("Final Conv".into(), &x, &out)?;
        Ok(out)
    }
}

/// A generator together with its parameter store.
pub struct UNetModel {
    pub varmap: VarMap,
    pub net: ConditionalUNet,
    device: Device,
    dtype: DType,
}

impl UNetModel {
    /// Fresh model with seeded initialization.
    pub fn new(config: UNetConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let varmap = VarMap::new();
        let vb = SeededInit::builder(&varmap, seed, dtype, device);
        let net = ConditionalUNet::new(config, vb)?;
        Ok(Self {
            varmap,
            net,
            device: device.clone(),
            dtype,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        self.net.config()
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Stacks images and vectors into model-dtype input tensors.
    pub fn batch_inputs(&self, rgb: &[&ImageTensor], cond: &[&MetadataVector]) -> Result<(Tensor, Tensor)> {
        let imgs = rgb
            .iter()
            .map(|im| {
                im.expect_range(RangeTag::SignedPm1)?;
                im.to_tensor(&self.device)
            })
            .collect::<Result<Vec<_>>>()?;
        let x = Tensor::stack(&imgs, 0)?.to_dtype(self.dtype)?;
        let flat: Vec<f64> = cond.iter().flat_map(|v| v.values).collect();
        let c = Tensor::from_vec(flat, (cond.len(), FEATURE_DIM), &self.device)?.to_dtype(self.dtype)?;
        Ok((x, c))
    }

    /// Inference on one preprocessed image and standardized vector.
    pub fn predict(&self, rgb: &ImageTensor, cond: &MetadataVector) -> Result<ImageTensor> {
        let (x, c) = self.batch_inputs(&[rgb], &[cond])?;
        let y = self.net.forward_t(&x, &c, false)?;
        ImageTensor::from_tensor(&y.squeeze(0)?, RangeTag::Unit0To1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> UNetConfig {
        UNetConfig {
            encoder_widths: vec![4, 8, 16, 32],
            bottleneck_width: 64,
            film_hidden: 8,
            norm_groups: 8,
            input_size: 16,
            ..UNetConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(UNetConfig::default().validate().is_ok());
        assert!(UNetConfig::reduced_size(40).validate().is_err());
        let mut c = UNetConfig::default();
        c.encoder_widths = vec![32, 32, 128, 256];
        assert!(c.validate().is_err());
        let mut c = UNetConfig::default();
        c.bottleneck_width = 500;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.attention_heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn encoder_block_shapes_and_batch() {
        let vm = VarMap::new();
        let vb = SeededInit::builder(&vm, 0, DType::F32, &Device::Cpu);
        let block = ConvBlock::new(3, 32, vb).unwrap();
        let x = Tensor::zeros((4, 3, 20, 20), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(block.forward_t(&x, false).unwrap().dims(), &[4, 32, 20, 20]);
    }

    #[test]
    fn attention_with_zero_projection_is_identity() {
        let vm = VarMap::new();
        let vb = SeededInit::builder(&vm, 1, DType::F64, &Device::Cpu);
        let attn = SelfAttention2d::new(16, 4, 4, vb).unwrap();
        {
            let data = vm.data().lock().unwrap();
            for name in ["proj.weight", "proj.bias"] {
                let v = &data[name];
                v.set(&v.as_tensor().zeros_like().unwrap()).unwrap();
            }
        }
        let x = Tensor::randn(0f64, 1.0, (2, 16, 3, 5), &Device::Cpu).unwrap();
        let y = attn.forward(&x).unwrap();
        let diff = (y - &x).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let vm = VarMap::new();
        let vb = SeededInit::builder(&vm, 2, DType::F64, &Device::Cpu);
        let attn = SelfAttention2d::new(8, 4, 2, vb).unwrap();
        let (h, w) = (3, 4);
        let x = Tensor::randn(0f64, 1.0, (1, 8, h, w), &Device::Cpu).unwrap();
        // fixed permutation of the 12 positions
        let perm: Vec<u32> = vec![5, 0, 11, 3, 7, 1, 9, 2, 10, 4, 8, 6];
        let idx = Tensor::new(perm.as_slice(), &Device::Cpu).unwrap();
        let permute = |t: &Tensor| {
            t.reshape((1, 8, h * w)).unwrap().index_select(&idx, 2).unwrap().reshape((1, 8, h, w)).unwrap()
        };
        let a = permute(&attn.forward(&x).unwrap());
        let b = attn.forward(&permute(&x)).unwrap();
        let diff = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn attention_rejects_bad_heads() {
        let vm = VarMap::new();
        let vb = SeededInit::builder(&vm, 0, DType::F32, &Device::Cpu);
        assert!(SelfAttention2d::new(10, 4, 2, vb).is_err());
    }

    #[test]
    fn film_modulate_cases() {
        let dev = Device::Cpu;
        let h = Tensor::new(&[[[[1f64, -2.], [3., 0.5]], [[4., 5.], [-6., 7.]]]], &dev).unwrap();
        let p = FilmParams {
            gamma: Tensor::new(&[[2f64, -1.]], &dev).unwrap(),
            beta: Tensor::new(&[[0.5f64, 0.]], &dev).unwrap(),
        };
        let got = film_modulate(&h, &p).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let hv = [1., -2., 3., 0.5, 4., 5., -6., 7.];
        let want: Vec<f64> = hv
            .iter()
            .enumerate()
            .map(|(i, &x)| if i < 4 { 2.0 * x + 0.5 } else { -x })
            .collect();
        assert_eq!(got, want);

        let ident = FilmParams {
            gamma: Tensor::ones((1, 2), DType::F64, &dev).unwrap(),
            beta: Tensor::zeros((1, 2), DType::F64, &dev).unwrap(),
        };
        let same = film_modulate(&h, &ident).unwrap();
        assert_eq!(same.flatten_all().unwrap().to_vec1::<f64>().unwrap(), hv);

        let constant = FilmParams {
            gamma: Tensor::zeros((1, 2), DType::F64, &dev).unwrap(),
            beta: Tensor::new(&[[3f64, -4.]], &dev).unwrap(),
        };
        let c = film_modulate(&h, &constant).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(c, vec![3., 3., 3., 3., -4., -4., -4., -4.]);

        let bad = FilmParams {
            gamma: Tensor::ones((1, 3), DType::F64, &dev).unwrap(),
            beta: Tensor::zeros((1, 3), DType::F64, &dev).unwrap(),
        };
        assert!(matches!(film_modulate(&h, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn film_head_is_identity_at_init_and_batches() {
        let m = UNetModel::new(tiny(), 3, DType::F32, &Device::Cpu).unwrap();
        let v = Tensor::randn(0f32, 2.0, (5, FEATURE_DIM), &Device::Cpu).unwrap();
        let p = m.net.condition_embed(&v).unwrap();
        assert_eq!(p.gamma.dims(), &[5, 64]);
        let g = p.gamma.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = p.beta.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(g.iter().all(|x| (x - 1.0).abs() < 1e-6));
        assert!(b.iter().all(|x| x.abs() < 1e-6));
        let wrong = Tensor::zeros((5, 14), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(m.net.condition_embed(&wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn forward_shape_range_and_errors() {
        let m = UNetModel::new(tiny(), 4, DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::randn(0f32, 0.5, (3, 3, 16, 16), &Device::Cpu).unwrap().clamp(-1f32, 1f32).unwrap();
        let c = Tensor::randn(0f32, 1.0, (3, FEATURE_DIM), &Device::Cpu).unwrap();
        let y = m.net.forward_t(&x, &c, false).unwrap();
        assert_eq!(y.dims(), &[3, 1, 16, 16]);
        let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|&p| p > 0.0 && p < 1.0));

        let wrong = Tensor::zeros((1, 3, 24, 24), DType::F32, &Device::Cpu).unwrap();
        let c1 = Tensor::zeros((1, FEATURE_DIM), DType::F32, &Device::Cpu).unwrap();
        match m.net.forward_t(&wrong, &c1, false) {
            Err(Error::Shape(msg)) => assert!(msg.starts_with("Encoder 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let a = UNetModel::new(tiny(), 9, DType::F32, &Device::Cpu).unwrap();
        let b = UNetModel::new(tiny(), 9, DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::ones((1, 3, 16, 16), DType::F32, &Device::Cpu).unwrap();
        let c = Tensor::zeros((1, FEATURE_DIM), DType::F32, &Device::Cpu).unwrap();
        let ya = a.net.forward_t(&x, &c, false).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let yb = b.net.forward_t(&x, &c, false).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(ya, yb);
    }
}
