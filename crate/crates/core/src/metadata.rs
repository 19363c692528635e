//! Conditioning metadata: weather lookup, the 15-slot feature vector and
//! per-fold standardization.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Duration, FixedOffset, NaiveDateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::MetadataRecord;

/// Number of conditioning features.
pub const FEATURE_DIM: usize = 15;

/// Identifies the slot layout below. Bump when slots change meaning.
pub const LAYOUT_VERSION: &str = "wx15-v1";

/// Slot names in vector order.
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "latitude",
    "longitude",
    "temperature",
    "relative_humidity",
    "wind_speed",
    "wind_dir_sin",
    "wind_dir_cos",
    "solar_radiation",
    "cloud_cover",
    "time_of_day_sin",
    "time_of_day_cos",
    "day_of_year_sin",
    "day_of_year_cos",
    "solar_elevation_proxy",
    "is_daylight",
];

pub const SLOT_TEMPERATURE: usize = 2;
pub const SLOT_CLOUD_COVER: usize = 8;

/// Solar radiation above this (W/m²) counts as daylight.
pub const DAYLIGHT_THRESHOLD_WM2: f64 = 10.0;

const SECONDS_PER_DAY: f64 = 86_400.0;
const DAYS_PER_YEAR: f64 = 365.25;
const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataVector {
    pub values: [f64; FEATURE_DIM],
    pub layout_version: String,
}

impl MetadataVector {
    pub fn from_values(values: [f64; FEATURE_DIM]) -> Self {
        Self {
            values,
            layout_version: LAYOUT_VERSION.to_string(),
        }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let values: [f64; FEATURE_DIM] = values.try_into().map_err(|_| {
            Error::Shape(format!(
                "metadata vector needs {FEATURE_DIM} values, got {}",
                values.len()
            ))
        })?;
        Ok(Self::from_values(values))
    }

    pub fn as_f32(&self) -> [f32; FEATURE_DIM] {
        self.values.map(|v| v as f32)
    }
}

fn angle_pair(theta: f64) -> (f64, f64) {
    (theta.sin(), theta.cos())
}

/// Time-of-day angle in radians for a UTC clock.
pub fn time_of_day_angle(ts: &DateTime<Utc>) -> f64 {
    let secs = ts.num_seconds_from_midnight() as f64 + ts.nanosecond() as f64 * 1e-9;
    2.0 * PI * secs / SECONDS_PER_DAY
}

/// `(sin, cos)` of the time of day measured from UTC midnight.
pub fn encode_time_of_day(ts: &DateTime<Utc>) -> (f64, f64) {
    angle_pair(time_of_day_angle(ts))
}

/// Same as [`encode_time_of_day`] but against local midnight at `offset`.
pub fn encode_time_of_day_local(ts: &DateTime<Utc>, offset: FixedOffset) -> (f64, f64) {
    let local = ts.with_timezone(&offset);
    let secs = local.num_seconds_from_midnight() as f64 + local.nanosecond() as f64 * 1e-9;
    angle_pair(2.0 * PI * secs / SECONDS_PER_DAY)
}

/// `(sin, cos)` of the day of year; Jan 1 is angle zero.
pub fn encode_day_of_year(ts: &DateTime<Utc>) -> (f64, f64) {
    angle_pair(2.0 * PI * ts.ordinal0() as f64 / DAYS_PER_YEAR)
}

pub fn encode_wind_direction(deg: f64) -> Result<(f64, f64)> {
    if !(0.0..360.0).contains(&deg) {
        return Err(Error::Range(format!("wind_direction {deg} out of [0,360)")));
    }
    Ok(angle_pair(deg.to_radians()))
}

/// Builds the conditioning vector with the time of day taken in UTC.
pub fn build_feature_vector(record: &MetadataRecord) -> Result<MetadataVector> {
    build_feature_vector_at(record, FixedOffset::east_opt(0).expect("zero offset"))
}

/// Builds the conditioning vector with the time of day taken at `offset`.
///
/// Slots: latitude, longitude, temperature, relative humidity, wind speed,
/// wind direction sin/cos, solar radiation, cloud cover, time of day
/// sin/cos, day of year sin/cos, `time_cos * doy_cos`, daylight flag.
pub fn build_feature_vector_at(record: &MetadataRecord, offset: FixedOffset) -> Result<MetadataVector> {
    if let Some(v) = record.violations().into_iter().next() {
        return Err(Error::Range(v));
    }
    let (wind_sin, wind_cos) = encode_wind_direction(record.wind_direction)?;
    let (tod_sin, tod_cos) = encode_time_of_day_local(&record.timestamp, offset);
    let (doy_sin, doy_cos) = encode_day_of_year(&record.timestamp);
    let daylight = if record.solar_radiation > DAYLIGHT_THRESHOLD_WM2 { 1.0 } else { 0.0 };
    Ok(MetadataVector::from_values([
        record.latitude,
        record.longitude,
        record.temperature,
        record.relative_humidity,
        record.wind_speed,
        wind_sin,
        wind_cos,
        record.solar_radiation,
        record.cloud_cover,
        tod_sin,
        tod_cos,
        doy_sin,
        doy_cos,
        tod_cos * doy_cos,
        daylight,
    ]))
}

/// Per-slot mean and standard deviation of one training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; FEATURE_DIM],
    pub std: [f64; FEATURE_DIM],
    pub fitted_on_fold: usize,
}

/// Fits population mean/std over `vectors`, clamping std at `1e-6`.
pub fn fit_standardizer(vectors: &[MetadataVector], fold: usize) -> Result<Standardizer> {
    if vectors.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 vectors, got {}",
            vectors.len()
        )));
    }
    let n = vectors.len() as f64;
    let mut mean = [0.0; FEATURE_DIM];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.values) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; FEATURE_DIM];
    for v in vectors {
        for i in 0..FEATURE_DIM {
            let d = v.values[i] - mean[i];
            var[i] += d * d;
        }
    }
    let std = var.map(|s| (s / n).sqrt().max(STD_FLOOR));
    Ok(Standardizer {
        mean,
        std,
        fitted_on_fold: fold,
    })
}

impl Standardizer {
    pub fn apply(&self, v: &MetadataVector) -> MetadataVector {
        let mut out = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            out[i] = (v.values[i] - self.mean[i]) / self.std[i];
        }
        MetadataVector {
            values: out,
            layout_version: v.layout_version.clone(),
        }
    }

    pub fn invert(&self, v: &MetadataVector) -> MetadataVector {
        let mut out = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            out[i] = v.values[i] * self.std[i] + self.mean[i];
        }
        MetadataVector {
            values: out,
            layout_version: v.layout_version.clone(),
        }
    }
}

pub fn apply_standardizer(v: &MetadataVector, s: &Standardizer) -> MetadataVector {
    s.apply(v)
}

// ---------------------------------------------------------------------------
// Weather
// ---------------------------------------------------------------------------

/// The six weather fields of one hourly observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherObservation {
    pub temperature_c: f64,
    pub relative_humidity_pct: f64,
    pub wind_speed_ms: f64,
    pub wind_direction_deg: f64,
    pub solar_radiation_wm2: f64,
    pub cloud_cover_pct: f64,
}

impl WeatherObservation {
    pub fn into_record(self, lat: f64, lon: f64, timestamp: DateTime<Utc>) -> MetadataRecord {
        MetadataRecord {
            latitude: lat,
            longitude: lon,
            timestamp,
            temperature: self.temperature_c,
            relative_humidity: self.relative_humidity_pct,
            wind_speed: self.wind_speed_ms,
            wind_direction: self.wind_direction_deg.rem_euclid(360.0),
            solar_radiation: self.solar_radiation_wm2,
            cloud_cover: self.cloud_cover_pct,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatherMode {
    Live,
    Fixture,
}

impl std::str::FromStr for WeatherMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(Self::Live),
            "fixture" => Ok(Self::Fixture),
            other => Err(Error::Config(format!(
                "unknown weather mode `{other}` (expected live or fixture)"
            ))),
        }
    }
}

pub trait WeatherSource: Send + Sync {
    /// Observation for the hour nearest `ts` at `(lat, lon)`.
    fn observation(&self, lat: f64, lon: f64, ts: DateTime<Utc>) -> Result<WeatherObservation>;
}

/// Rounds to the nearest whole UTC hour (half past rounds up).
pub fn nearest_hour(ts: DateTime<Utc>) -> DateTime<Utc> {
    let shifted = ts + Duration::minutes(30);
    shifted
        .with_minute(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_nanosecond(0))
        .expect("valid truncation")
}

/// Fixture key `<lat .2>_<lon .2>_<YYYY-MM-DDTHH>`.
pub fn fixture_key(lat: f64, lon: f64, ts: DateTime<Utc>) -> String {
    format!(
        "{:.2}_{:.2}_{}",
        lat,
        lon,
        nearest_hour(ts).format("%Y-%m-%dT%H")
    )
}

/// Replays recorded observations, one JSON file per key.
#[derive(Debug, Clone)]
pub struct FixtureWeather {
    dir: PathBuf,
}

impl FixtureWeather {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn store(&self, lat: f64, lon: f64, ts: DateTime<Utc>, obs: &WeatherObservation) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.path_for(&fixture_key(lat, lon, ts));
        std::fs::write(&path, serde_json::to_vec_pretty(obs)?)?;
        Ok(path)
    }
}

impl WeatherSource for FixtureWeather {
    fn observation(&self, lat: f64, lon: f64, ts: DateTime<Utc>) -> Result<WeatherObservation> {
        let key = fixture_key(lat, lon, ts);
        let path = self.path_for(&key);
        let raw = match std::fs::read_to_string(&path) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::FixtureMiss {
                    key,
                    dir: self.dir.clone(),
                })
            }
            Err(e) => return Err(e.into()),
        };
        serde_json::from_str(&raw).map_err(|e| Error::WeatherParse {
            message: format!("{}: {e}", path.display()),
            raw,
        })
    }
}

/// Looks up weather at a location/time and assembles the full record.
pub fn fetch_weather(
    source: &dyn WeatherSource,
    lat: f64,
    lon: f64,
    ts: DateTime<Utc>,
) -> Result<MetadataRecord> {
    Ok(source.observation(lat, lon, ts)?.into_record(lat, lon, ts))
}

pub const OPEN_METEO_HOURLY: &str = "temperature_2m,relative_humidity_2m,wind_speed_10m,wind_direction_10m,shortwave_radiation,cloud_cover";

#[derive(Deserialize)]
struct OpenMeteoResponse {
    hourly: OpenMeteoHourly,
}

#[derive(Deserialize)]
struct OpenMeteoHourly {
    time: Vec<String>,
    temperature_2m: Vec<Option<f64>>,
    relative_humidity_2m: Vec<Option<f64>>,
    wind_speed_10m: Vec<Option<f64>>,
    wind_direction_10m: Vec<Option<f64>>,
    shortwave_radiation: Vec<Option<f64>>,
    cloud_cover: Vec<Option<f64>>,
}

/// Picks the hourly row nearest `ts` out of an Open-Meteo JSON payload
/// requested with `timezone=GMT` and `wind_speed_unit=ms`.
pub fn parse_open_meteo_hourly(raw: &str, ts: DateTime<Utc>) -> Result<WeatherObservation> {
    let bad = |message: String| Error::WeatherParse {
        message,
        raw: raw.to_string(),
    };
    let resp: OpenMeteoResponse =
        serde_json::from_str(raw).map_err(|e| bad(format!("not an hourly payload: {e}")))?;
    let h = resp.hourly;
    let n = h.time.len();
    let columns = [
        h.temperature_2m.len(),
        h.relative_humidity_2m.len(),
        h.wind_speed_10m.len(),
        h.wind_direction_10m.len(),
        h.shortwave_radiation.len(),
        h.cloud_cover.len(),
    ];
    if n == 0 || columns.iter().any(|&c| c != n) {
        return Err(bad(format!("ragged hourly arrays: time={n}, columns={columns:?}")));
    }
    let mut best: Option<(i64, usize)> = None;
    for (i, t) in h.time.iter().enumerate() {
        let parsed = NaiveDateTime::parse_from_str(t, "%Y-%m-%dT%H:%M")
            .map_err(|e| bad(format!("bad time `{t}`: {e}")))?
            .and_utc();
        let dist = (parsed - ts).num_seconds().abs();
        if best.is_none_or(|(d, _)| dist < d) {
            best = Some((dist, i));
        }
    }
    let (_, i) = best.expect("non-empty");
    let pick = |col: &[Option<f64>], name: &str| {
        col[i].ok_or_else(|| bad(format!("{name} is null at {}", h.time[i])))
    };
    Ok(WeatherObservation {
        temperature_c: pick(&h.temperature_2m, "temperature_2m")?,
        relative_humidity_pct: pick(&h.relative_humidity_2m, "relative_humidity_2m")?,
        wind_speed_ms: pick(&h.wind_speed_10m, "wind_speed_10m")?,
        wind_direction_deg: pick(&h.wind_direction_10m, "wind_direction_10m")?.rem_euclid(360.0),
        solar_radiation_wm2: pick(&h.shortwave_radiation, "shortwave_radiation")?,
        cloud_cover_pct: pick(&h.cloud_cover, "cloud_cover")?,
    })
}

/// Request URL for one UTC day of hourly observations.
pub fn open_meteo_url(base: &str, lat: f64, lon: f64, ts: DateTime<Utc>) -> String {
    let day = nearest_hour(ts).format("%Y-%m-%d");
    format!(
        "{base}?latitude={lat:.4}&longitude={lon:.4}&start_date={day}&end_date={day}\
         &hourly={OPEN_METEO_HOURLY}&wind_speed_unit=ms&timezone=GMT"
    )
}

/// Live client for the Open-Meteo historical archive.
#[cfg(feature = "live-weather")]
#[derive(Debug, Clone)]
pub struct OpenMeteoClient {
    pub base_url: String,
    pub retries: usize,
    pub timeout: std::time::Duration,
}

#[cfg(feature = "live-weather")]
impl Default for OpenMeteoClient {
    fn default() -> Self {
        Self {
            base_url: "https://archive-api.open-meteo.com/v1/archive".into(),
            retries: 3,
            timeout: std::time::Duration::from_secs(20),
        }
    }
}

#[cfg(feature = "live-weather")]
impl WeatherSource for OpenMeteoClient {
    fn observation(&self, lat: f64, lon: f64, ts: DateTime<Utc>) -> Result<WeatherObservation> {
        let url = open_meteo_url(&self.base_url, lat, lon, ts);
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(std::time::Duration::from_millis(250 << attempt));
            }
            match agent.get(&url).call() {
                Ok(resp) => {
                    let body = resp.into_string().map_err(|e| Error::Fetch(e.to_string()))?;
                    return parse_open_meteo_hourly(&body, ts);
                }
                Err(ureq::Error::Status(code, resp)) if code < 500 && code != 429 => {
                    let body = resp.into_string().unwrap_or_default();
                    return Err(Error::WeatherParse {
                        message: format!("HTTP {code} from {url}"),
                        raw: body,
                    });
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::Fetch(format!("{url}: {last}")))
    }
}

/// Builds the configured weather source.
pub fn weather_source(mode: WeatherMode, fixture_dir: Option<&Path>) -> Result<Box<dyn WeatherSource>> {
    match mode {
        WeatherMode::Fixture => {
            let dir = fixture_dir
                .ok_or_else(|| Error::Config("fixture mode needs --fixture-dir".into()))?;
            Ok(Box::new(FixtureWeather::new(dir)))
        }
        #[cfg(feature = "live-weather")]
        WeatherMode::Live => Ok(Box::new(OpenMeteoClient::default())),
        #[cfg(not(feature = "live-weather"))]
        WeatherMode::Live => Err(Error::Config(
            "built without the live-weather feature".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn at(h: u32, m: u32, s: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 10, h, m, s).unwrap()
    }

    fn close(a: (f64, f64), b: (f64, f64)) -> bool {
        (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12
    }

    #[test]
    fn time_of_day_cardinal_points() {
        assert!(close(encode_time_of_day(&at(0, 0, 0)), (0.0, 1.0)));
        assert!(close(encode_time_of_day(&at(6, 0, 0)), (1.0, 0.0)));
        assert!(close(encode_time_of_day(&at(18, 0, 0)), (-1.0, 0.0)));
    }

    #[test]
    fn midnight_is_continuous() {
        let a = time_of_day_angle(&at(23, 59, 59));
        let b = time_of_day_angle(&at(0, 0, 1));
        // wrap-aware angular distance
        let d = (a - b).rem_euclid(2.0 * PI);
        let d = d.min(2.0 * PI - d);
        assert!(d < 2.0 * PI * 2.0 / SECONDS_PER_DAY + 1e-6);
    }

    #[test]
    fn wind_direction_encoding() {
        assert!(close(encode_wind_direction(0.0).unwrap(), (0.0, 1.0)));
        assert!(close(encode_wind_direction(90.0).unwrap(), (1.0, 0.0)));
        let a = encode_wind_direction(359.9).unwrap();
        let b = encode_wind_direction(0.1).unwrap();
        assert!(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() < 0.01);
        assert!(matches!(encode_wind_direction(360.0), Err(Error::Range(_))));
        assert!(encode_wind_direction(-1.0).is_err());
    }

    #[test]
    fn local_offset_shifts_time_of_day() {
        let plus6 = FixedOffset::east_opt(6 * 3600).unwrap();
        assert!(close(encode_time_of_day_local(&at(0, 0, 0), plus6), (1.0, 0.0)));
    }

    #[test]
    fn nearest_hour_rounding() {
        assert_eq!(nearest_hour(at(10, 29, 59)), at(10, 0, 0));
        assert_eq!(nearest_hour(at(10, 30, 0)), at(11, 0, 0));
        assert_eq!(fixture_key(42.3, -83.0, at(10, 45, 0)), "42.30_-83.00_2024-03-10T11");
    }

    #[test]
    fn standardizer_rejects_single_vector() {
        let v = MetadataVector::from_values([1.0; FEATURE_DIM]);
        assert!(matches!(fit_standardizer(&[v], 0), Err(Error::Fit(_))));
    }

    #[test]
    fn weather_mode_parses() {
        assert_eq!("live".parse::<WeatherMode>().unwrap(), WeatherMode::Live);
        assert!("offline".parse::<WeatherMode>().is_err());
    }
}
