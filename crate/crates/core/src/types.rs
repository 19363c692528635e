//! Shared value types and their range contracts.

use candle_core::{Device, Tensor};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length every sample has after preprocessing.
pub const MODEL_SIZE: usize = 384;

/// Declared value interval of an [`ImageTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeTag {
    /// `[0, 255]`, raw 8-bit intensities held as floats.
    Raw0To255,
    /// `[0, 1]`, thermal maps and model output.
    Unit0To1,
    /// `[-1, 1]`, model input.
    SignedPm1,
}

impl RangeTag {
    pub fn bounds(self) -> (f32, f32) {
        match self {
            RangeTag::Raw0To255 => (0.0, 255.0),
            RangeTag::Unit0To1 => (0.0, 1.0),
            RangeTag::SignedPm1 => (-1.0, 1.0),
        }
    }

    pub fn contains(self, v: f32) -> bool {
        let (lo, hi) = self.bounds();
        v >= lo && v <= hi
    }
}

impl std::fmt::Display for RangeTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RangeTag::Raw0To255 => "raw_0_255",
            RangeTag::Unit0To1 => "unit_0_1",
            RangeTag::SignedPm1 => "signed_pm1",
        };
        f.write_str(s)
    }
}

/// Channel-major `[C, H, W]` image with a declared value range.
///
/// Construction checks every invariant, so a value of this type always has
/// `C ∈ {1, 3}`, positive spatial size and all samples inside its range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    range: RangeTag,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        range: RangeTag,
        data: Vec<f32>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("channel count {channels} not in {{1, 3}}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty image {height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "buffer of {} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|&v| !range.contains(v)) {
            return Err(Error::Range(format!(
                "value {} at index {bad} outside {range}",
                data[bad]
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            range,
            data,
        })
    }

    /// Builds an image by clamping every value into `range` first.
    pub fn new_clamped(
        channels: usize,
        height: usize,
        width: usize,
        range: RangeTag,
        mut data: Vec<f32>,
    ) -> Result<Self> {
        let (lo, hi) = range.bounds();
        for v in data.iter_mut() {
            *v = if v.is_nan() { lo } else { v.clamp(lo, hi) };
        }
        Self::new(channels, height, width, range, data)
    }

    pub fn filled(channels: usize, height: usize, width: usize, range: RangeTag, value: f32) -> Result<Self> {
        Self::new(channels, height, width, range, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn range(&self) -> RangeTag {
        self.range
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Returns a contract violation unless the image carries `expected`.
    pub fn expect_range(&self, expected: RangeTag) -> Result<()> {
        if self.range == expected {
            Ok(())
        } else {
            Err(Error::Range(format!("expected {expected} image, got {}", self.range)))
        }
    }

    pub fn expect_channels(&self, expected: usize) -> Result<()> {
        if self.channels == expected {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "expected {expected}-channel image, got {}",
                self.channels
            )))
        }
    }

    pub fn same_size(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// `[C, H, W]` f32 tensor on `device`.
    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(
            &self.data,
            (self.channels, self.height, self.width),
            device,
        )?)
    }

    /// Reads a `[C, H, W]` (or `[1, C, H, W]`) tensor, clamping into `range`.
    pub fn from_tensor(t: &Tensor, range: RangeTag) -> Result<Self> {
        let t = match t.rank() {
            3 => t.clone(),
            4 if t.dim(0)? == 1 => t.squeeze(0)?,
            _ => {
                return Err(Error::Shape(format!(
                    "cannot read image from tensor of shape {:?}",
                    t.dims()
                )))
            }
        };
        let (c, h, w) = t.dims3()?;
        let data = t
            .to_dtype(candle_core::DType::F32)?
            .flatten_all()?
            .to_vec1::<f32>()?;
        Self::new_clamped(c, h, w, range, data)
    }
}

/// Per-image weather and location record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub latitude: f64,
    pub longitude: f64,
    pub timestamp: DateTime<Utc>,
    pub temperature: f64,
    pub relative_humidity: f64,
    pub wind_speed: f64,
    pub wind_direction: f64,
    pub solar_radiation: f64,
    pub cloud_cover: f64,
}

impl MetadataRecord {
    /// Lists every broken field constraint.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let finite = [
            ("latitude", self.latitude),
            ("longitude", self.longitude),
            ("temperature", self.temperature),
            ("relative_humidity", self.relative_humidity),
            ("wind_speed", self.wind_speed),
            ("wind_direction", self.wind_direction),
            ("solar_radiation", self.solar_radiation),
            ("cloud_cover", self.cloud_cover),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                out.push(format!("{name} is not finite"));
            }
        }
        if !(-90.0..=90.0).contains(&self.latitude) {
            out.push("latitude out of [-90,90]".into());
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            out.push("longitude out of [-180,180]".into());
        }
        if !(0.0..=100.0).contains(&self.relative_humidity) {
            out.push("relative_humidity out of [0,100]".into());
        }
        if !(0.0..=100.0).contains(&self.cloud_cover) {
            out.push("cloud_cover out of [0,100]".into());
        }
        if !(0.0..360.0).contains(&self.wind_direction) {
            out.push("wind_direction out of [0,360)".into());
        }
        if !(self.wind_speed >= 0.0) {
            out.push("wind_speed negative".into());
        }
        if !(self.solar_radiation >= 0.0) {
            out.push("solar_radiation negative".into());
        }
        out
    }
}

/// One RGB/thermal pair with its conditioning record and flight group.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub sample_id: String,
    pub rgb: ImageTensor,
    pub thermal: ImageTensor,
    pub metadata: MetadataRecord,
    pub group_id: String,
}

/// Checks every invariant of a sample and reports, never fails.
pub fn validate_sample(sample: &PairedSample) -> Vec<String> {
    let mut out = Vec::new();
    if sample.sample_id.is_empty() {
        out.push("sample_id empty".into());
    }
    if sample.group_id.is_empty() {
        out.push("group_id empty".into());
    }
    if sample.rgb.channels() != 3 {
        out.push(format!("rgb has {} channels, expected 3", sample.rgb.channels()));
    }
    if sample.thermal.channels() != 1 {
        out.push(format!(
            "thermal has {} channels, expected 1",
            sample.thermal.channels()
        ));
    }
    if sample.thermal.range() != RangeTag::Unit0To1 {
        out.push(format!("thermal range {} is not unit_0_1", sample.thermal.range()));
    }
    if !sample.rgb.same_size(&sample.thermal) {
        out.push("thermal size mismatch".into());
    }
    out.extend(sample.metadata.violations());
    out
}

/// Metrics for one evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: String,
    #[serde(with = "crate::types::ext_f64")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub lpips: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    #[serde(with = "crate::types::ext_f64")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub lpips: f64,
}

/// Per-sample rows plus the fold mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fold_id: usize,
    pub per_sample: Vec<SampleMetrics>,
    pub fold_mean: MetricMeans,
}

impl MetricReport {
    /// Builds a report whose `fold_mean` is the arithmetic mean of the rows.
    pub fn from_samples(fold_id: usize, per_sample: Vec<SampleMetrics>) -> Self {
        let n = per_sample.len().max(1) as f64;
        let sum = per_sample.iter().fold((0.0, 0.0, 0.0), |acc, s| {
            (acc.0 + s.psnr_db, acc.1 + s.ssim, acc.2 + s.lpips)
        });
        let fold_mean = if per_sample.is_empty() {
            MetricMeans {
                psnr_db: f64::NAN,
                ssim: f64::NAN,
                lpips: f64::NAN,
            }
        } else {
            MetricMeans {
                psnr_db: sum.0 / n,
                ssim: sum.1 / n,
                lpips: sum.2 / n,
            }
        };
        Self {
            fold_id,
            per_sample,
            fold_mean,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.per_sample {
            if !(-1.0..=1.0).contains(&s.ssim) {
                out.push(format!("{}: ssim {} out of [-1,1]", s.sample_id, s.ssim));
            }
            if !(s.lpips >= 0.0) {
                out.push(format!("{}: lpips {} negative", s.sample_id, s.lpips));
            }
            if !(s.psnr_db > 0.0) {
                out.push(format!("{}: psnr {} not positive", s.sample_id, s.psnr_db));
            }
        }
        let again = MetricReport::from_samples(self.fold_id, self.per_sample.clone());
        let close = |a: f64, b: f64| a == b || (a - b).abs() <= 1e-9;
        if !(close(again.fold_mean.psnr_db, self.fold_mean.psnr_db)
            && close(again.fold_mean.ssim, self.fold_mean.ssim)
            && close(again.fold_mean.lpips, self.fold_mean.lpips))
        {
            out.push("fold_mean differs from the mean of per-sample rows".into());
        }
        out
    }
}

/// JSON has no infinity; PSNR of a perfect prediction is written as `"inf"`.
pub(crate) mod ext_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("bad float `{other}`"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    pub(crate) fn record() -> MetadataRecord {
        MetadataRecord {
            latitude: 42.3,
            longitude: -83.0,
            timestamp: Utc.with_ymd_and_hms(2024, 6, 21, 12, 0, 0).unwrap(),
            temperature: 20.0,
            relative_humidity: 50.0,
            wind_speed: 3.0,
            wind_direction: 270.0,
            solar_radiation: 600.0,
            cloud_cover: 25.0,
        }
    }

    fn sample(th: usize) -> PairedSample {
        PairedSample {
            sample_id: "s0".into(),
            rgb: ImageTensor::filled(3, 384, 384, RangeTag::Raw0To255, 10.0).unwrap(),
            thermal: ImageTensor::filled(1, th, th, RangeTag::Unit0To1, 0.5).unwrap(),
            metadata: record(),
            group_id: "flight-a".into(),
        }
    }

    #[test]
    fn well_formed_pair_has_no_violations() {
        assert!(validate_sample(&sample(384)).is_empty());
    }

    #[test]
    fn thermal_size_mismatch_is_reported() {
        assert_eq!(validate_sample(&sample(256)), vec!["thermal size mismatch"]);
    }

    #[test]
    fn wind_direction_out_of_range_is_reported() {
        let mut s = sample(384);
        s.metadata.wind_direction = 400.0;
        assert_eq!(validate_sample(&s), vec!["wind_direction out of [0,360)"]);
    }

    #[test]
    fn image_constructor_rejects_out_of_range() {
        let err = ImageTensor::new(1, 1, 2, RangeTag::Unit0To1, vec![0.5, 1.5]).unwrap_err();
        assert!(matches!(err, Error::Range(_)));
        assert!(ImageTensor::new(2, 1, 1, RangeTag::Unit0To1, vec![0.0, 0.0]).is_err());
        assert!(ImageTensor::new(1, 0, 1, RangeTag::Unit0To1, vec![]).is_err());
    }

    #[test]
    fn range_tag_mismatch_is_detectable() {
        let raw = ImageTensor::filled(3, 2, 2, RangeTag::Raw0To255, 200.0).unwrap();
        assert!(raw.expect_range(RangeTag::SignedPm1).is_err());
        assert!(raw.expect_range(RangeTag::Raw0To255).is_ok());
    }

    #[test]
    fn report_mean_and_infinite_psnr_json() {
        let rows = vec![
            SampleMetrics {
                sample_id: "a".into(),
                psnr_db: 20.0,
                ssim: 0.5,
                lpips: 0.1,
            },
            SampleMetrics {
                sample_id: "b".into(),
                psnr_db: 30.0,
                ssim: 0.7,
                lpips: 0.3,
            },
        ];
        let r = MetricReport::from_samples(2, rows);
        assert!((r.fold_mean.psnr_db - 25.0).abs() < 1e-12);
        assert!((r.fold_mean.lpips - 0.2).abs() < 1e-12);
        assert!(r.violations().is_empty());

        let perfect = MetricMeans {
            psnr_db: f64::INFINITY,
            ssim: 1.0,
            lpips: 0.0,
        };
        let js = serde_json::to_string(&perfect).unwrap();
        assert!(js.contains("\"inf\""));
        let back: MetricMeans = serde_json::from_str(&js).unwrap();
        assert_eq!(back.psnr_db, f64::INFINITY);
    }
}
