//! Convolution as im2col + matmul with a cheap scatter backward.
//!
//! candle's CPU conv backward routes the input gradient through a direct
//! transposed convolution that dominates training time. Expressing the
//! convolution as an explicit column gather followed by a single GEMM keeps
//! both directions on the matmul path.
//!
//! Also holds a max pool with a plain argmax backward. candle has none for
//! overlapping windows, and its non-overlapping one scales the gradient by
//! `1 / k^2`.

use candle_core::{CpuStorage, CustomOp1, CustomOp2, Layout, Shape, Tensor, WithDType};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Rows of the column matrix: `C * k * k`.
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    /// Columns of the column matrix: `N * Ho * Wo`.
    fn cols(&self) -> usize {
        self.n * self.out_h() * self.out_w()
    }
}

/// Visits every (column-matrix index, image index) pair that is in bounds.
#[inline]
fn for_each_tap(g: &Geometry, mut f: impl FnMut(usize, usize)) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let cols = g.cols();
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                for n in 0..g.n {
                    let img = (n * g.c + ci) * g.h * g.w;
                    for oy in 0..ho {
                        let y = (oy * g.stride + ky) as isize - g.pad as isize;
                        if y < 0 || y >= g.h as isize {
                            continue;
                        }
                        let src_row = img + y as usize * g.w;
                        let dst_row = row * cols + (n * ho + oy) * wo;
                        for ox in 0..wo {
                            let x = (ox * g.stride + kx) as isize - g.pad as isize;
                            if x >= 0 && x < g.w as isize {
                                f(dst_row + ox, src_row + x as usize);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn contiguous_slice<'a, T: WithDType>(s: &'a [T], l: &Layout) -> candle_core::Result<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&s[a..b]),
        None => candle_core::bail!("im2col expects a contiguous input"),
    }
}

struct Im2Col(Geometry);

impl Im2Col {
    fn gather<T: WithDType>(&self, src: &[T]) -> Vec<T> {
        let g = &self.0;
        let mut out = vec![T::zero(); g.rows() * g.cols()];
        for_each_tap(g, |dst, s| out[dst] = src[s]);
        out
    }
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let shape = Shape::from((g.rows(), g.cols()));
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(self.gather(contiguous_slice(v, l)?)),
            CpuStorage::F64(v) => CpuStorage::F64(self.gather(contiguous_slice(v, l)?)),
            _ => candle_core::bail!("im2col: only f32 and f64 are supported"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Col2Im(self.0))?))
    }
}

struct Col2Im(Geometry);

impl Col2Im {
    fn scatter<T: WithDType>(&self, src: &[T]) -> Vec<T> {
        let g = &self.0;
        let mut out = vec![T::zero(); g.n * g.c * g.h * g.w];
        for_each_tap(g, |col, img| out[img] += src[col]);
        out
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let shape = Shape::from((g.n, g.c, g.h, g.w));
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(self.scatter(contiguous_slice(v, l)?)),
            CpuStorage::F64(v) => CpuStorage::F64(self.scatter(contiguous_slice(v, l)?)),
            _ => candle_core::bail!("col2im: only f32 and f64 are supported"),
        };
        Ok((out, shape))
    }
}

/// 2-D convolution of `x` `[N, C, H, W]` with square kernel `w`
/// `[O, C, k, k]`, differentiable in both arguments.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let (n, c, h, wd) = x.dims4()?;
    let (o, ci, k, k2) = w.dims4()?;
    if ci != c || k != k2 {
        return Err(crate::Error::Shape(format!(
            "conv kernel {:?} does not fit input {:?}",
            w.dims(),
            x.dims()
        )));
    }
    if h + 2 * pad < k || wd + 2 * pad < k {
        return Err(crate::Error::Shape(format!(
            "{k}x{k} kernel larger than padded {h}x{wd} input"
        )));
    }
    let g = Geometry {
        n,
        c,
        h,
        w: wd,
        k,
        stride,
        pad,
    };
    let (ho, wo) = (g.out_h(), g.out_w());
    let cols = x.contiguous()?.apply_op1(Im2Col(g))?;
    let y = w.reshape((o, g.rows()))?.matmul(&cols)?;
    let y = match bias {
        Some(b) => y.broadcast_add(&b.reshape((o, 1))?)?,
        None => y,
    };
    Ok(y.reshape((o, n, ho, wo))?.transpose(0, 1)?.contiguous()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PoolGeometry {
    planes: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
}

impl PoolGeometry {
    fn out_h(&self) -> usize {
        (self.h - self.k) / self.stride + 1
    }

    fn out_w(&self) -> usize {
        (self.w - self.k) / self.stride + 1
    }

    /// Flat input index of the first maximum of every output window.
    fn argmax<T: WithDType>(&self, src: &[T]) -> Vec<usize> {
        let (ho, wo) = (self.out_h(), self.out_w());
        let mut idx = Vec::with_capacity(self.planes * ho * wo);
        for p in 0..self.planes {
            let base = p * self.h * self.w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * self.stride * self.w + ox * self.stride;
                    for ky in 0..self.k {
                        for kx in 0..self.k {
                            let i = base + (oy * self.stride + ky) * self.w + ox * self.stride + kx;
                            if src[i] > src[best] {
                                best = i;
                            }
                        }
                    }
                    idx.push(best);
                }
            }
        }
        idx
    }
}

/// Max pooling with overlapping windows allowed (`k != stride`).
struct MaxPool(PoolGeometry);

impl CustomOp1 for MaxPool {
    fn name(&self) -> &'static str {
        "max-pool"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        fn run<T: WithDType>(g: &PoolGeometry, src: &[T]) -> Vec<T> {
            g.argmax(src).into_iter().map(|i| src[i]).collect()
        }
        let g = &self.0;
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(run(g, contiguous_slice(v, l)?)),
            CpuStorage::F64(v) => CpuStorage::F64(run(g, contiguous_slice(v, l)?)),
            _ => candle_core::bail!("max-pool: only f32 and f64 are supported"),
        };
        Ok((out, Shape::from(g.planes * g.out_h() * g.out_w())))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let g = grad.contiguous()?.apply_op2_no_bwd(arg, &MaxPoolBwd(self.0))?;
        Ok(Some(g))
    }
}

/// Routes each output gradient to the window's argmax in the input.
struct MaxPoolBwd(PoolGeometry);

impl CustomOp2 for MaxPoolBwd {
    fn name(&self) -> &'static str {
        "max-pool-bwd"
    }

    fn cpu_fwd(
        &self,
        gs: &CpuStorage,
        gl: &Layout,
        xs: &CpuStorage,
        xl: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        fn run<T: WithDType>(g: &PoolGeometry, grad: &[T], x: &[T]) -> Vec<T> {
            let mut out = vec![T::zero(); x.len()];
            for (o, i) in g.argmax(x).into_iter().enumerate() {
                out[i] += grad[o];
            }
            out
        }
        let g = &self.0;
        let out = match (gs, xs) {
            (CpuStorage::F32(a), CpuStorage::F32(b)) => {
                CpuStorage::F32(run(g, contiguous_slice(a, gl)?, contiguous_slice(b, xl)?))
            }
            (CpuStorage::F64(a), CpuStorage::F64(b)) => {
                CpuStorage::F64(run(g, contiguous_slice(a, gl)?, contiguous_slice(b, xl)?))
            }
            _ => candle_core::bail!("max-pool-bwd: mismatched or unsupported dtypes"),
        };
        Ok((out, xl.shape().clone()))
    }
}

/// `k x k` max pooling of `[N, C, H, W]` with the given stride, no padding.
pub fn max_pool2d(x: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h < k || w < k || k == 0 || stride == 0 {
        return Err(crate::Error::Shape(format!("cannot pool {h}x{w} with k={k}, stride={stride}")));
    }
    let g = PoolGeometry {
        planes: n * c,
        h,
        w,
        k,
        stride,
    };
    let y = x.contiguous()?.reshape(n * c * h * w)?.apply_op1(MaxPool(g))?;
    Ok(y.reshape((n, c, g.out_h(), g.out_w()))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn max_abs(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn matches_candle_conv_and_its_gradients() {
        let dev = Device::Cpu;
        for &(c, o, hw, k, s, p) in &[(3, 5, 9, 3, 1, 1), (4, 6, 10, 4, 2, 1), (2, 3, 7, 4, 1, 1), (3, 2, 8, 1, 1, 0)] {
            let x = Var::from_tensor(&Tensor::randn(0f64, 1., (2, c, hw, hw), &dev).unwrap()).unwrap();
            let w = Var::from_tensor(&Tensor::randn(0f64, 1., (o, c, k, k), &dev).unwrap()).unwrap();
            let ours = conv2d(x.as_tensor(), w.as_tensor(), None, s, p).unwrap();
            let reference = x.as_tensor().conv2d(w.as_tensor(), p, s, 1, 1).unwrap();
            assert_eq!(ours.dims(), reference.dims());
            assert!(max_abs(&ours, &reference) < 1e-10);
            let probe = Tensor::randn(0f64, 1., ours.shape(), &dev).unwrap();
            let g1 = (ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            let g2 = (reference * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            assert!(max_abs(g1.get(&x).unwrap(), g2.get(&x).unwrap()) < 1e-9);
            assert!(max_abs(g1.get(&w).unwrap(), g2.get(&w).unwrap()) < 1e-9);
        }
    }

    #[test]
    fn bias_is_added_per_output_channel() {
        let dev = Device::Cpu;
        let x = Tensor::zeros((1, 2, 4, 4), candle_core::DType::F32, &dev).unwrap();
        let w = Tensor::ones((3, 2, 3, 3), candle_core::DType::F32, &dev).unwrap();
        let b = Tensor::new(&[1f32, -2., 0.5], &dev).unwrap();
        let y = conv2d(&x, &w, Some(&b), 1, 1).unwrap();
        let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v[..16].iter().all(|&a| a == 1.0));
        assert!(v[16..32].iter().all(|&a| a == -2.0));
        assert!(v[32..].iter().all(|&a| a == 0.5));
    }

    #[test]
    fn max_pool_matches_candle_and_routes_gradient() {
        let dev = Device::Cpu;
        let x = Var::from_tensor(&Tensor::randn(0f64, 1., (2, 3, 9, 9), &dev).unwrap()).unwrap();
        let ours = max_pool2d(x.as_tensor(), 3, 2).unwrap();
        let reference = x.as_tensor().max_pool2d_with_stride(3, 2).unwrap();
        assert_eq!(ours.dims(), &[2, 3, 4, 4]);
        assert!(max_abs(&ours, &reference) < 1e-15);
        // finite differences, overlapping windows
        let probe = Tensor::randn(0f64, 1., ours.shape(), &dev).unwrap();
        let f = |t: &Tensor| (max_pool2d(t, 3, 2).unwrap() * &probe).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
        let grads = (ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        let g = grads.get(&x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let base = x.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for i in (0..base.len()).step_by(7) {
            let mut p = base.clone();
            let mut m = base.clone();
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let tp = Tensor::from_vec(p, x.shape(), &dev).unwrap();
            let tm = Tensor::from_vec(m, x.shape(), &dev).unwrap();
            let num = (f(&tp) - f(&tm)) / 2e-6;
            assert!((num - g[i]).abs() < 1e-6, "{i}: {num} vs {}", g[i]);
        }
    }
}
