//! Seeded synthetic RGB/thermal pairs for tests and demos.
//!
//! Each scene is a set of coloured blobs on a textured background. The
//! thermal map is the blob mask whose polarity depends on air temperature:
//! warm scenes show hot blobs on a cool background, cold scenes the reverse.
//! The RGB image carries no temperature cue, so predicting the thermal map
//! requires the metadata.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metadata::WeatherObservation;
use crate::types::{ImageTensor, MetadataRecord, PairedSample, RangeTag};

pub const WARM_C: f64 = 25.0;
pub const COLD_C: f64 = 5.0;
/// Temperatures above this render hot-on-cool.
pub const POLARITY_SPLIT_C: f64 = 15.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub samples: usize,
    pub groups: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            samples: 20,
            groups: 5,
            height: 120,
            width: 160,
            seed: 0,
        }
    }
}

/// Blob layout in `[0, 1]` plus the matching 8-bit RGB rendering.
pub fn scene(seed: u64, height: usize, width: usize) -> (ImageTensor, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f32, f32, f32, [f32; 3])> = (0..rng.random_range(2..=4))
        .map(|_| {
            let cy = rng.random_range(0.2..0.8) * height as f32;
            let cx = rng.random_range(0.2..0.8) * width as f32;
            let r = rng.random_range(0.12..0.25) * height.min(width) as f32;
            let col = [rng.random_range(40.0..220.0), rng.random_range(40.0..220.0), rng.random_range(40.0..220.0)];
            (cy, cx, r, col)
        })
        .collect();
    let bg = [rng.random_range(60.0..120.0), rng.random_range(80.0..140.0), rng.random_range(60.0..120.0)];
    let phase: f32 = rng.random_range(0.0..6.28);
    let n = height * width;
    let mut rgb = vec![0f32; 3 * n];
    let mut mask = vec![0f32; n];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let texture = 12.0 * ((x as f32 * 0.35 + phase).sin() * (y as f32 * 0.27).cos());
            let mut px = [bg[0] + texture, bg[1] + texture, bg[2] + texture];
            let mut m = 0f32;
            for &(cy, cx, r, col) in &blobs {
                let d2 = ((y as f32 - cy).powi(2) + (x as f32 - cx).powi(2)) / (r * r);
                let a = (-d2 * d2).exp();
                m = m.max(a);
                for k in 0..3 {
                    px[k] = px[k] * (1.0 - a) + col[k] * a;
                }
            }
            for k in 0..3 {
                rgb[k * n + i] = px[k].clamp(0.0, 255.0);
            }
            mask[i] = m;
        }
    }
    let img = ImageTensor::new(3, height, width, RangeTag::Raw0To255, rgb).expect("clamped scene");
    (img, mask)
}

/// Thermal map for a blob mask at a given air temperature.
pub fn thermal_for(mask: &[f32], height: usize, width: usize, temperature_c: f64) -> ImageTensor {
    let warm = temperature_c > POLARITY_SPLIT_C;
    let data = mask
        .iter()
        .map(|&m| if warm { 0.2 + 0.6 * m } else { 0.8 - 0.6 * m })
        .collect();
    ImageTensor::new(1, height, width, RangeTag::Unit0To1, data).expect("unit thermal")
}

/// Location of a group: nearby flights over one area.
pub fn group_location(group: usize) -> (f64, f64) {
    (42.30 + 0.01 * group as f64, -83.00 - 0.01 * group as f64)
}

pub fn sample_timestamp(index: usize) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 6, 21, 9, 0, 0).unwrap() + Duration::hours(index as i64)
}

/// Weather for sample `index`: warm and cold alternate, everything else is
/// mildly varied.
pub fn sample_weather(index: usize) -> WeatherObservation {
    let warm = index % 2 == 0;
    WeatherObservation {
        temperature_c: if warm { WARM_C } else { COLD_C },
        relative_humidity_pct: 40.0 + (index % 5) as f64 * 5.0,
        wind_speed_ms: 1.0 + (index % 3) as f64,
        wind_direction_deg: (index * 47 % 360) as f64,
        solar_radiation_wm2: 300.0 + (index % 4) as f64 * 100.0,
        cloud_cover_pct: (index % 5) as f64 * 20.0,
    }
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:03}")
}

pub fn group_id(group: usize) -> String {
    format!("flight{group:02}")
}

/// `cfg.samples` raw pairs; sample `i` belongs to group `i % groups` and
/// pairs `2k`, `2k + 1` share a scene with opposite temperatures.
pub fn synthetic_samples(cfg: &SynthConfig) -> Vec<PairedSample> {
    (0..cfg.samples)
        .map(|i| {
            let (rgb, mask) = scene(cfg.seed.wrapping_mul(1000).wrapping_add((i / 2) as u64), cfg.height, cfg.width);
            let group = i % cfg.groups.max(1);
            let (lat, lon) = group_location(group);
            let metadata: MetadataRecord = sample_weather(i).into_record(lat, lon, sample_timestamp(i));
            PairedSample {
                sample_id: sample_id(i),
                thermal: thermal_for(&mask, cfg.height, cfg.width, metadata.temperature),
                rgb,
                metadata,
                group_id: group_id(group),
            }
        })
        .collect()
}
