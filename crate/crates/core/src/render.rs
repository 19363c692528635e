//! Post-prediction smoothing, percentile normalization and colormap rendering.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::percentile_sorted;
use crate::types::{ImageTensor, RangeTag};

const INFERNO_CSV: &str = include_str!("../assets/inferno.csv");

pub const COLORMAPS: [&str; 2] = ["inferno", "gray"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub blur_sigma: f64,
    pub norm_lo: f64,
    pub norm_hi: f64,
    pub colormap: String,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 0.5,
            norm_lo: 1.0,
            norm_hi: 99.0,
            colormap: "inferno".into(),
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::Config(format!("blur sigma must be >= 0, got {}", self.blur_sigma)));
        }
        if !(0.0 <= self.norm_lo && self.norm_lo < self.norm_hi && self.norm_hi <= 100.0) {
            return Err(Error::Config(format!(
                "normalization percentiles need 0 <= lo < hi <= 100, got {},{}",
                self.norm_lo, self.norm_hi
            )));
        }
        Colormap::named(&self.colormap)?;
        Ok(())
    }
}

/// Normalized Gaussian taps with radius `ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (4.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Mirrors an out-of-range index back into `0..n` without repeating the edge.
fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

fn convolve_axis(src: &[f64], h: usize, w: usize, kernel: &[f64], horizontal: bool) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wt) in kernel.iter().enumerate() {
                let d = k as i64 - r;
                let v = if horizontal {
                    src[y * w + reflect_index(x as i64 + d, w)]
                } else {
                    src[reflect_index(y as i64 + d, h) * w + x]
                };
                acc += wt * v;
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Separable Gaussian blur per channel with reflect padding; `sigma = 0` is
/// the identity.
pub fn gaussian_blur(img: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    if !(sigma >= 0.0) {
        return Err(Error::Config(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane: Vec<f64> = img.plane(ch).iter().map(|&v| v as f64).collect();
        let rows = convolve_axis(&plane, h, w, &kernel, true);
        let both = convolve_axis(&rows, h, w, &kernel, false);
        out.extend(both.into_iter().map(|v| v as f32));
    }
    // clamping only removes float rounding: a normalized positive kernel
    // cannot leave the input range
    ImageTensor::new_clamped(c, h, w, img.range(), out)
}

/// Clips to the `[lo, hi]` percentiles and maps them affinely onto `[0, 1]`.
/// A degenerate range yields a uniform 0.5 image.
pub fn percentile_normalize(img: &ImageTensor, lo: f64, hi: f64) -> Result<ImageTensor> {
    if !(lo < hi) {
        return Err(Error::Config(format!("percentile normalization needs lo < hi, got {lo},{hi}")));
    }
    let mut sorted = img.data().to_vec();
    sorted.sort_by(f32::total_cmp);
    let p_lo = percentile_sorted(&sorted, lo) as f64;
    let p_hi = percentile_sorted(&sorted, hi) as f64;
    let data = if p_hi > p_lo {
        img.data()
            .iter()
            .map(|&v| ((v as f64 - p_lo) / (p_hi - p_lo)).clamp(0.0, 1.0) as f32)
            .collect()
    } else {
        vec![0.5; img.data().len()]
    };
    ImageTensor::new(img.channels(), img.height(), img.width(), RangeTag::Unit0To1, data)
}

/// A 256-entry RGB lookup table with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Colormap {
    pub name: &'static str,
    pub table: Vec<[f32; 3]>,
}

fn parse_table(csv_text: &str) -> Vec<[f32; 3]> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    reader
        .records()
        .map(|r| {
            let r = r.expect("bundled colormap is valid CSV");
            let f = |i: usize| r[i].parse::<f32>().expect("bundled colormap holds numbers");
            [f(1), f(2), f(3)]
        })
        .collect()
}

impl Colormap {
    pub fn named(name: &str) -> Result<&'static Colormap> {
        static INFERNO: OnceLock<Colormap> = OnceLock::new();
        static GRAY: OnceLock<Colormap> = OnceLock::new();
        match name {
            "inferno" => Ok(INFERNO.get_or_init(|| Colormap {
                name: "inferno",
                table: parse_table(INFERNO_CSV),
            })),
            "gray" => Ok(GRAY.get_or_init(|| Colormap {
                name: "gray",
                table: (0..256).map(|i| [i as f32 / 255.0; 3]).collect(),
            })),
            other => Err(Error::Config(format!(
                "unknown colormap {other:?}; available: {}",
                COLORMAPS.join(", ")
            ))),
        }
    }

    /// Colour for `v` in `[0, 1]`, interpolating linearly between entries.
    pub fn lookup(&self, v: f32) -> [f32; 3] {
        let last = self.table.len() - 1;
        let pos = v.clamp(0.0, 1.0) as f64 * last as f64;
        let i0 = (pos.floor() as usize).min(last);
        let i1 = (i0 + 1).min(last);
        let t = (pos - i0 as f64) as f32;
        let (a, b) = (self.table[i0], self.table[i1]);
        [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * t)
    }
}

/// Maps a single-channel unit image through a named colormap to 8-bit RGB.
pub fn render_colormap(img: &ImageTensor, map_id: &str) -> Result<ImageTensor> {
    img.expect_range(RangeTag::Unit0To1)?;
    img.expect_channels(1)?;
    let map = Colormap::named(map_id)?;
    let n = img.height() * img.width();
    let mut out = vec![0f32; 3 * n];
    for (i, &v) in img.data().iter().enumerate() {
        let rgb = map.lookup(v);
        for k in 0..3 {
            out[k * n + i] = rgb[k] * 255.0;
        }
    }
    ImageTensor::new_clamped(3, img.height(), img.width(), RangeTag::Raw0To255, out)
}

/// Blur, then percentile-normalize, then colormap.
pub fn render_prediction(pred: &ImageTensor, cfg: &RenderConfig) -> Result<ImageTensor> {
    cfg.validate()?;
    let blurred = gaussian_blur(pred, cfg.blur_sigma)?;
    let norm = percentile_normalize(&blurred, cfg.norm_lo, cfg.norm_hi)?;
    render_colormap(&norm, &cfg.colormap)
}

/// Converts any image to 8-bit RGB for display.
pub fn to_display_rgb(img: &ImageTensor) -> Result<ImageTensor> {
    let data: Vec<f32> = match img.range() {
        RangeTag::Raw0To255 => img.data().to_vec(),
        RangeTag::Unit0To1 => img.data().iter().map(|v| v * 255.0).collect(),
        RangeTag::SignedPm1 => img.data().iter().map(|v| (v + 1.0) * 127.5).collect(),
    };
    let n = img.height() * img.width();
    let data = if img.channels() == 1 { data.repeat(3) } else { data };
    debug_assert_eq!(data.len(), 3 * n);
    ImageTensor::new_clamped(3, img.height(), img.width(), RangeTag::Raw0To255, data)
}

/// Panels of equal height placed side by side (RGB, 8-bit).
pub fn hconcat(panels: &[&ImageTensor]) -> Result<ImageTensor> {
    let first = panels.first().ok_or_else(|| Error::Shape("no panels to concatenate".into()))?;
    let h = first.height();
    let mut converted = Vec::with_capacity(panels.len());
    for p in panels {
        if p.height() != h {
            return Err(Error::Shape(format!("panel heights {} and {h} differ", p.height())));
        }
        converted.push(to_display_rgb(p)?);
    }
    let total_w: usize = converted.iter().map(|p| p.width()).sum();
    let mut out = vec![0f32; 3 * h * total_w];
    let mut x0 = 0;
    for p in &converted {
        let w = p.width();
        for c in 0..3 {
            let plane = p.plane(c);
            for y in 0..h {
                let dst = c * h * total_w + y * total_w + x0;
                out[dst..dst + w].copy_from_slice(&plane[y * w..(y + 1) * w]);
            }
        }
        x0 += w;
    }
    ImageTensor::new(3, h, total_w, RangeTag::Raw0To255, out)
}

/// RGB input | rendered prediction | rendered ground truth.
pub fn triptych(
    rgb: &ImageTensor,
    pred: &ImageTensor,
    truth: &ImageTensor,
    cfg: &RenderConfig,
) -> Result<ImageTensor> {
    let p = render_prediction(pred, cfg)?;
    let t = render_colormap(&percentile_normalize(truth, cfg.norm_lo, cfg.norm_hi)?, &cfg.colormap)?;
    hconcat(&[rgb, &p, &t])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> ImageTensor {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        ImageTensor::new(1, h, w, RangeTag::Unit0To1, data).unwrap()
    }

    #[test]
    fn kernel_radius_and_mass() {
        let k = gaussian_kernel(0.5);
        assert_eq!(k.len(), 5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
        assert_eq!(gaussian_kernel(1.2).len(), 2 * 5 + 1);
    }

    #[test]
    fn impulse_response_is_outer_product_of_kernel() {
        let img = unit(9, 9, |y, x| if y == 4 && x == 4 { 1.0 } else { 0.0 });
        let out = gaussian_blur(&img, 0.5).unwrap();
        let w: Vec<f64> = [-2i32, -1, 0, 1, 2].iter().map(|d| (-(d * d) as f64 / 0.5).exp()).collect();
        let s: f64 = w.iter().sum();
        for y in 0..9 {
            for x in 0..9 {
                let (dy, dx) = (y as i32 - 4, x as i32 - 4);
                let want = if dy.abs() <= 2 && dx.abs() <= 2 {
                    w[(dy + 2) as usize] * w[(dx + 2) as usize] / (s * s)
                } else {
                    0.0
                };
                assert!((out.get(0, y, x) as f64 - want).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn blur_fixed_points_and_bounds() {
        let c = unit(7, 5, |_, _| 0.37);
        assert_eq!(gaussian_blur(&c, 0.8).unwrap(), c);
        let r = unit(6, 6, |y, x| ((y * 7 + x * 3) % 5) as f32 / 4.0);
        assert_eq!(gaussian_blur(&r, 0.0).unwrap(), r);
        let b = gaussian_blur(&r, 1.5).unwrap();
        assert!(b.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn reflect_index_wraps() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(9, 5), 1);
        assert_eq!(reflect_index(3, 1), 0);
    }

    #[test]
    fn percentile_normalize_cases() {
        let c = unit(4, 4, |_, _| 0.2);
        assert!(percentile_normalize(&c, 1.0, 99.0).unwrap().data().iter().all(|&v| v == 0.5));
        let ramp = unit(1, 1001, |_, x| x as f32 / 1000.0);
        let out = percentile_normalize(&ramp, 1.0, 99.0).unwrap();
        let zeros = out.data().iter().filter(|&&v| v == 0.0).count();
        let ones = out.data().iter().filter(|&&v| v == 1.0).count();
        assert!((10..=12).contains(&zeros) && (10..=12).contains(&ones), "{zeros} {ones}");
        assert!(out.data().windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn colormap_endpoints_and_entries() {
        let m = Colormap::named("inferno").unwrap();
        assert_eq!(m.table.len(), 256);
        assert_eq!(m.lookup(0.0), m.table[0]);
        assert_eq!(m.lookup(1.0), m.table[255]);
        for i in [0usize, 17, 128, 254] {
            let got = m.lookup(i as f32 / 255.0);
            for k in 0..3 {
                assert!((got[k] - m.table[i][k]).abs() < 1e-6);
            }
        }
        let mid = m.lookup(0.5);
        for k in 0..3 {
            let want = (m.table[127][k] + m.table[128][k]) / 2.0;
            assert!((mid[k] - want).abs() < 1e-6);
        }
        match Colormap::named("viridis") {
            Err(Error::Config(msg)) => assert!(msg.contains("inferno")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn triptych_layout() {
        let rgb = ImageTensor::filled(3, 8, 8, RangeTag::SignedPm1, 0.0).unwrap();
        let p = unit(8, 8, |y, _| y as f32 / 7.0);
        let t = triptych(&rgb, &p, &p, &RenderConfig::default()).unwrap();
        assert_eq!((t.channels(), t.height(), t.width()), (3, 8, 24));
    }
}
