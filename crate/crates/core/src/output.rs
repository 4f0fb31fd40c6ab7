//! Files written by a detection run.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use serde::Serialize;

use crate::aggregate::{BinaryMask, DynamicProbabilityMap};
use crate::epigeom::{GeometrySource, PairFailure, SupportGraph};
use crate::probmap::MatchingProbabilityMap;
use crate::scalar::Real;

/// Probability in [0, 1] to a 16-bit gray level.
#[inline]
pub fn to_u16(p: f64) -> u16 {
    (p.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn save_u16(values: impl Iterator<Item = f64>, w: u32, h: u32, path: &Path) -> image::ImageResult<()> {
    let data: Vec<u16> = values.map(to_u16).collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w, h, data).expect("buffer matches size");
    img.save(path)
}

pub fn save_dynamic_map<T: Real>(map: &DynamicProbabilityMap<T>, path: &Path) -> image::ImageResult<()> {
    save_u16(map.values.iter().map(|v| v.to_f64_lossy()), map.width, map.height, path)
}

pub fn save_matching_map<T: Real>(map: &MatchingProbabilityMap<T>, path: &Path) -> image::ImageResult<()> {
    save_u16(map.values.iter().map(|v| v.to_f64_lossy()), map.width, map.height, path)
}

/// Dynamic pixels white, others black.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> image::ImageResult<()> {
    let data = mask.values.iter().map(|&v| if v { 255 } else { 0 }).collect();
    GrayImage::from_raw(mask.width, mask.height, data)
        .expect("buffer matches size")
        .save(path)
}

/// The 256-entry heat palette: piecewise linear blue, cyan, yellow, red,
/// starting and ending at half intensity.
pub fn heat_palette() -> [[u8; 3]; 256] {
    let mut out = [[0u8; 3]; 256];
    for (i, px) in out.iter_mut().enumerate() {
        let x = i as f64 / 255.0;
        let ramp = |c: f64| (1.5 - (4.0 * x - c).abs()).clamp(0.0, 1.0);
        *px = [ramp(3.0), ramp(2.0), ramp(1.0)].map(|v| (v * 255.0).round() as u8);
    }
    out
}

pub fn save_heatmap<T: Real>(map: &DynamicProbabilityMap<T>, path: &Path) -> image::ImageResult<()> {
    let palette = heat_palette();
    let mut data = Vec::with_capacity(map.values.len() * 3);
    for v in &map.values {
        let idx = (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as usize;
        data.extend_from_slice(&palette[idx]);
    }
    RgbImage::from_raw(map.width, map.height, data)
        .expect("buffer matches size")
        .save(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeRecord {
    pub reference: String,
    pub support: String,
    pub source: GeometrySource,
    pub inliers: usize,
    pub inlier_ratio: f64,
    pub mean_sampson_error: f64,
    pub f: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphRecord {
    pub images: Vec<String>,
    pub edges: Vec<EdgeRecord>,
    pub failures: Vec<PairFailure>,
}

impl GraphRecord {
    /// One record per unordered pair, reference first in set order.
    pub fn from_graph(g: &SupportGraph) -> Self {
        let edges = g
            .edges
            .iter()
            .filter(|((a, b), _)| a < b)
            .map(|((a, b), pg)| EdgeRecord {
                reference: g.ids[*a].clone(),
                support: g.ids[*b].clone(),
                source: pg.source,
                inliers: pg.inliers.len(),
                inlier_ratio: pg.inlier_ratio,
                mean_sampson_error: pg.mean_sampson_error,
                f: pg.f.to_row_vec(),
            })
            .collect();
        Self {
            images: g.ids.clone(),
            edges,
            failures: g.failures.clone(),
        }
    }
}

pub fn write_json<S: Serialize>(value: &S, path: &Path) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_endpoints_and_monotone_hue() {
        let p = heat_palette();
        assert_eq!(p[0], [0, 0, 128]);
        assert_eq!(p[255], [128, 0, 0]);
        assert_eq!(p[128][1], 255);
    }

    #[test]
    fn sixteen_bit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let map = DynamicProbabilityMap {
            width: 64,
            height: 64,
            values: (0..4096).map(|i| i as f64 / 4095.0).collect::<Vec<f64>>(),
            support_count: vec![1; 4096],
        };
        save_dynamic_map(&map, &path).unwrap();
        let back = image::open(&path).unwrap().into_luma16();
        assert_eq!(back.get_pixel(0, 0)[0], 0);
        assert_eq!(back.get_pixel(63, 63)[0], 65535);
        assert_eq!(back.get_pixel(1, 0)[0], to_u16(1.0 / 4095.0));
    }
}
