//! On-disk dataset layout.
//!
//! ```text
//! <root>/rgb/<id>.png
//! <root>/thermal/<id>.png
//! <root>/metadata.csv
//! ```
//!
//! Images are 8-bit on disk; RGB loads as `raw_0_255`, thermal as
//! single-channel `unit_0_1`.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{condition_rgb, preprocess_thermal, PreprocessConfig, PIPELINE_VERSION};
use crate::types::{ImageTensor, MetadataRecord, PairedSample, RangeTag};

pub const METADATA_FILE: &str = "metadata.csv";
pub const PREPROCESS_MANIFEST: &str = "preprocess.json";

/// Column order of `metadata.csv`.
pub const METADATA_COLUMNS: [&str; 11] = [
    "sample_id",
    "group_id",
    "latitude",
    "longitude",
    "timestamp_iso8601",
    "temperature_c",
    "relative_humidity_pct",
    "wind_speed_ms",
    "wind_direction_deg",
    "solar_radiation_wm2",
    "cloud_cover_pct",
];

#[derive(Debug, Clone)]
pub struct DatasetLayout {
    root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn rgb_dir(&self) -> PathBuf {
        self.root.join("rgb")
    }

    pub fn thermal_dir(&self) -> PathBuf {
        self.root.join("thermal")
    }

    pub fn rgb_path(&self, id: &str) -> PathBuf {
        self.rgb_dir().join(format!("{id}.png"))
    }

    pub fn thermal_path(&self, id: &str) -> PathBuf {
        self.thermal_dir().join(format!("{id}.png"))
    }

    pub fn metadata_path(&self) -> PathBuf {
        self.root.join(METADATA_FILE)
    }

    pub fn create_dirs(&self) -> Result<()> {
        std::fs::create_dir_all(self.rgb_dir())?;
        std::fs::create_dir_all(self.thermal_dir())?;
        Ok(())
    }
}

/// One `metadata.csv` row. Every measurement is optional so that a missing
/// cell can be reported by name instead of as a generic parse failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataRow {
    pub sample_id: String,
    pub group_id: String,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub timestamp_iso8601: Option<DateTime<Utc>>,
    pub temperature_c: Option<f64>,
    pub relative_humidity_pct: Option<f64>,
    pub wind_speed_ms: Option<f64>,
    pub wind_direction_deg: Option<f64>,
    pub solar_radiation_wm2: Option<f64>,
    pub cloud_cover_pct: Option<f64>,
}

impl MetadataRow {
    pub fn from_record(sample_id: &str, group_id: &str, r: &MetadataRecord) -> Self {
        Self {
            sample_id: sample_id.to_string(),
            group_id: group_id.to_string(),
            latitude: Some(r.latitude),
            longitude: Some(r.longitude),
            timestamp_iso8601: Some(r.timestamp),
            temperature_c: Some(r.temperature),
            relative_humidity_pct: Some(r.relative_humidity),
            wind_speed_ms: Some(r.wind_speed),
            wind_direction_deg: Some(r.wind_direction),
            solar_radiation_wm2: Some(r.solar_radiation),
            cloud_cover_pct: Some(r.cloud_cover),
        }
    }

    /// Completes the row into a record, naming the first missing column.
    pub fn to_record(&self) -> Result<MetadataRecord> {
        fn need<T: Copy>(v: Option<T>, name: &str) -> Result<T> {
            v.ok_or_else(|| Error::MissingField(name.to_string()))
        }
        Ok(MetadataRecord {
            latitude: need(self.latitude, "latitude")?,
            longitude: need(self.longitude, "longitude")?,
            timestamp: need(self.timestamp_iso8601, "timestamp_iso8601")?,
            temperature: need(self.temperature_c, "temperature_c")?,
            relative_humidity: need(self.relative_humidity_pct, "relative_humidity_pct")?,
            wind_speed: need(self.wind_speed_ms, "wind_speed_ms")?,
            wind_direction: need(self.wind_direction_deg, "wind_direction_deg")?,
            solar_radiation: need(self.solar_radiation_wm2, "solar_radiation_wm2")?,
            cloud_cover: need(self.cloud_cover_pct, "cloud_cover_pct")?,
        })
    }
}

pub fn write_metadata_csv(path: &Path, rows: &[MetadataRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(METADATA_COLUMNS)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metadata_csv(path: &Path) -> Result<Vec<MetadataRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let found: Vec<&str> = headers.iter().collect();
    if found != METADATA_COLUMNS {
        return Err(Error::Dataset(format!(
            "{} has columns {found:?}, expected {METADATA_COLUMNS:?}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn load_rgb_png(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = p[c] as f32;
        }
    }
    ImageTensor::new(3, h, w, RangeTag::Raw0To255, data)
}

pub fn load_thermal_png(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    ImageTensor::new(1, h as usize, w as usize, RangeTag::Unit0To1, data)
}

fn to_u8(v: f32, scale: f32, offset: f32) -> u8 {
    ((v + offset) * scale).round().clamp(0.0, 255.0) as u8
}

/// Quantizes to 8 bits and writes a PNG. Three-channel images become RGB,
/// single-channel images grayscale.
pub fn save_png(img: &ImageTensor, path: &Path) -> Result<()> {
    let (scale, offset) = match img.range() {
        RangeTag::Raw0To255 => (1.0, 0.0),
        RangeTag::Unit0To1 => (255.0, 0.0),
        RangeTag::SignedPm1 => (127.5, 1.0),
    };
    let (h, w) = (img.height(), img.width());
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    match img.channels() {
        3 => {
            let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let (x, y) = (x as usize, y as usize);
                image::Rgb([0, 1, 2].map(|c| to_u8(img.get(c, y, x), scale, offset)))
            });
            out.save(path)?;
        }
        _ => {
            let out = GrayImage::from_fn(w as u32, h as u32, |x, y| {
                image::Luma([to_u8(img.get(0, y as usize, x as usize), scale, offset)])
            });
            out.save(path)?;
        }
    }
    Ok(())
}

pub fn write_dataset(root: &Path, samples: &[PairedSample]) -> Result<()> {
    let layout = DatasetLayout::new(root);
    layout.create_dirs()?;
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        save_png(&s.rgb, &layout.rgb_path(&s.sample_id))?;
        save_png(&s.thermal, &layout.thermal_path(&s.sample_id))?;
        rows.push(MetadataRow::from_record(&s.sample_id, &s.group_id, &s.metadata));
    }
    write_metadata_csv(&layout.metadata_path(), &rows)
}

/// Loads every sample listed in `metadata.csv`, in file order.
pub fn read_dataset(root: &Path) -> Result<Vec<PairedSample>> {
    let layout = DatasetLayout::new(root);
    let rows = read_metadata_csv(&layout.metadata_path())?;
    rows.iter().map(|row| read_sample(&layout, row)).collect()
}

pub fn read_sample(layout: &DatasetLayout, row: &MetadataRow) -> Result<PairedSample> {
    let metadata = row.to_record().map_err(|e| match e {
        Error::MissingField(f) => Error::MissingField(format!("{f} (sample {})", row.sample_id)),
        other => other,
    })?;
    Ok(PairedSample {
        sample_id: row.sample_id.clone(),
        rgb: load_rgb_png(&layout.rgb_path(&row.sample_id))?,
        thermal: load_thermal_png(&layout.thermal_path(&row.sample_id))?,
        metadata,
        group_id: row.group_id.clone(),
    })
}

/// Written next to a processed dataset; records how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessManifest {
    pub pipeline_version: String,
    pub config: PreprocessConfig,
    pub config_hash: String,
    pub samples: Vec<String>,
}

pub fn read_preprocess_manifest(root: &Path) -> Result<PreprocessManifest> {
    let path = root.join(PREPROCESS_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        Error::Dataset(format!(
            "{} is not a processed dataset ({}: {e}); run `preprocess` first",
            root.display(),
            path.display()
        ))
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Applies the RGB pipeline (stored before the `[-1, 1]` step) and the
/// thermal letterbox to one raw sample.
pub fn preprocess_sample(sample: &PairedSample, cfg: &PreprocessConfig) -> Result<PairedSample> {
    Ok(PairedSample {
        rgb: condition_rgb(&sample.rgb, cfg)?.image,
        thermal: preprocess_thermal(&sample.thermal, cfg)?,
        ..sample.clone()
    })
}

/// Processes every sample of the dataset at `input` into `output` and
/// writes the manifest.
pub fn preprocess_dataset(input: &Path, output: &Path, cfg: &PreprocessConfig) -> Result<PreprocessManifest> {
    cfg.validate()?;
    let samples = read_dataset(input)?;
    let processed = samples
        .iter()
        .map(|s| preprocess_sample(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    write_dataset(output, &processed)?;
    let manifest = PreprocessManifest {
        pipeline_version: PIPELINE_VERSION.into(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        samples: processed.iter().map(|s| s.sample_id.clone()).collect(),
    };
    std::fs::write(output.join(PREPROCESS_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
