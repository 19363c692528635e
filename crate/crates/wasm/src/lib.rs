//! WebAssembly bindings for the demo page in `www/`.
//!
//! Images cross the boundary as RGBA bytes (the layout of `ImageData`).

use rgbt_core::metadata::{build_feature_vector, FEATURE_NAMES};
use rgbt_core::preprocess::{preprocess_pipeline, PreprocessConfig};
use rgbt_core::render::{render_prediction, RenderConfig};
use rgbt_core::types::{ImageTensor, MetadataRecord, RangeTag};
use wasm_bindgen::prelude::*;

fn rgba_to_image(rgba: &[u8], width: usize, height: usize) -> Result<ImageTensor, String> {
    let n = width * height;
    if rgba.len() != 4 * n {
        return Err(format!("expected {} RGBA bytes for {width}x{height}, got {}", 4 * n, rgba.len()));
    }
    let mut data = vec![0f32; 3 * n];
    for (i, px) in rgba.chunks_exact(4).enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c] as f32;
        }
    }
    ImageTensor::new(3, height, width, RangeTag::Raw0To255, data).map_err(|e| e.to_string())
}

fn image_to_rgba(img: &ImageTensor) -> Vec<u8> {
    let n = img.height() * img.width();
    let (scale, offset) = match img.range() {
        RangeTag::Raw0To255 => (1.0, 0.0),
        RangeTag::Unit0To1 => (255.0, 0.0),
        RangeTag::SignedPm1 => (127.5, 1.0),
    };
    let mut out = vec![255u8; 4 * n];
    for i in 0..n {
        for c in 0..3 {
            let ch = if img.channels() == 3 { c } else { 0 };
            let v = (img.plane(ch)[i] + offset) * scale;
            out[4 * i + c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Letterboxed, saturated, stretched square preview of an RGBA image.
pub fn preview(rgba: &[u8], width: usize, height: usize, cfg: &PreprocessConfig) -> Result<Vec<u8>, String> {
    let img = rgba_to_image(rgba, width, height)?;
    let out = preprocess_pipeline(&img, cfg).map_err(|e| e.to_string())?;
    Ok(image_to_rgba(&out.image))
}

/// Renders the red channel of an RGBA image as a thermal map.
pub fn thermal_render(rgba: &[u8], width: usize, height: usize, cfg: &RenderConfig) -> Result<Vec<u8>, String> {
    let img = rgba_to_image(rgba, width, height)?;
    let unit: Vec<f32> = img.plane(0).iter().map(|v| v / 255.0).collect();
    let gray = ImageTensor::new(1, height, width, RangeTag::Unit0To1, unit).map_err(|e| e.to_string())?;
    let out = render_prediction(&gray, cfg).map_err(|e| e.to_string())?;
    Ok(image_to_rgba(&out))
}

/// The 15-slot conditioning vector for a JSON metadata record.
pub fn encode(json: &str) -> Result<Vec<f64>, String> {
    let record: MetadataRecord = serde_json::from_str(json).map_err(|e| e.to_string())?;
    let problems = record.violations();
    if !problems.is_empty() {
        return Err(problems.join("; "));
    }
    build_feature_vector(&record).map(|v| v.values.to_vec()).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn preprocess_preview(
    rgba: &[u8],
    width: usize,
    height: usize,
    size: usize,
    saturation: f32,
    stretch_lo: f32,
    stretch_hi: f32,
) -> Result<Vec<u8>, JsError> {
    let cfg = PreprocessConfig {
        target_size: size,
        saturation_factor: saturation,
        stretch_lo,
        stretch_hi,
    };
    preview(rgba, width, height, &cfg).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn render_thermal(
    rgba: &[u8],
    width: usize,
    height: usize,
    sigma: f64,
    norm_lo: f64,
    norm_hi: f64,
    colormap: &str,
) -> Result<Vec<u8>, JsError> {
    let cfg = RenderConfig {
        blur_sigma: sigma,
        norm_lo,
        norm_hi,
        colormap: colormap.to_string(),
    };
    thermal_render(rgba, width, height, &cfg).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn encode_metadata(json: &str) -> Result<Vec<f64>, JsError> {
    encode(json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preview_is_square_rgba() {
        let (w, h) = (8, 4);
        let rgba: Vec<u8> = (0..4 * w * h).map(|i| (i * 7 % 256) as u8).collect();
        let cfg = PreprocessConfig {
            target_size: 6,
            ..PreprocessConfig::default()
        };
        let out = preview(&rgba, w, h, &cfg).unwrap();
        assert_eq!(out.len(), 4 * 36);
        assert!(out.chunks(4).all(|p| p[3] == 255));
        assert!(preview(&rgba[1..], w, h, &cfg).is_err());
    }

    #[test]
    fn render_ends_of_a_ramp_hit_the_table_ends() {
        let w = 256;
        let rgba: Vec<u8> = (0..w).flat_map(|x| [x as u8, 0, 0, 255]).collect();
        let cfg = RenderConfig {
            blur_sigma: 0.0,
            norm_lo: 0.0,
            norm_hi: 100.0,
            colormap: "gray".into(),
        };
        let out = thermal_render(&rgba, w, 1, &cfg).unwrap();
        assert_eq!(&out[..3], &[0, 0, 0]);
        assert_eq!(&out[4 * 255..4 * 255 + 3], &[255, 255, 255]);
    }

    #[test]
    fn encodes_fifteen_slots() {
        let json = r#"{"latitude":42.3,"longitude":-83.0,"timestamp":"2024-06-21T06:00:00Z",
            "temperature":20.0,"relative_humidity":50.0,"wind_speed":2.0,"wind_direction":90.0,
            "solar_radiation":400.0,"cloud_cover":10.0}"#;
        let v = encode(json).unwrap();
        assert_eq!(v.len(), 15);
        assert_eq!(v[2], 20.0);
        assert!((v[9] - 1.0).abs() < 1e-12);
        assert_eq!(v[14], 1.0);
        assert!(encode("{}").is_err());
    }
}
