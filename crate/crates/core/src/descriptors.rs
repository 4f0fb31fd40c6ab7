//! Patch descriptors: HOG and a joint hue/saturation histogram.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patches::CanonicalPatch;
use crate::scalar::Real;

pub const HOG_BINS: usize = 9;
pub const HOG_CELLS: usize = 2;
pub const HOG_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorKind {
    Hog,
    HsHist,
}

impl DescriptorKind {
    pub fn name(self) -> &'static str {
        match self {
            DescriptorKind::Hog => "hog",
            DescriptorKind::HsHist => "hs_hist",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedDescriptor {
    pub kind: DescriptorKind,
    pub weight: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescriptorError {
    #[error("at least one descriptor must be enabled")]
    NoneEnabled,
    #[error("descriptor weight for {0:?} must be positive, got {1}")]
    BadWeight(DescriptorKind, f64),
    #[error("histogram needs at least one bin per channel")]
    BadBins,
}

/// Enabled descriptors and their weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorConfig {
    pub descriptors: Vec<WeightedDescriptor>,
    pub hs_bins: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            descriptors: vec![
                WeightedDescriptor {
                    kind: DescriptorKind::Hog,
                    weight: 2.0,
                },
                WeightedDescriptor {
                    kind: DescriptorKind::HsHist,
                    weight: 1.0,
                },
            ],
            hs_bins: 10,
        }
    }
}

impl DescriptorConfig {
    pub fn validate(&self) -> Result<(), DescriptorError> {
        if self.descriptors.is_empty() {
            return Err(DescriptorError::NoneEnabled);
        }
        for d in &self.descriptors {
            if !(d.weight > 0.0 && d.weight.is_finite()) {
                return Err(DescriptorError::BadWeight(d.kind, d.weight));
            }
        }
        if self.hs_bins == 0 {
            return Err(DescriptorError::BadBins);
        }
        Ok(())
    }

    pub fn weight(&self, kind: DescriptorKind) -> Option<f64> {
        self.descriptors.iter().find(|d| d.kind == kind).map(|d| d.weight)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorVector<T: Real> {
    pub kind: DescriptorKind,
    pub values: Vec<T>,
}

impl<T: Real> DescriptorVector<T> {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.is_zero())
    }
}

/// HOG of a square luma grid: 2×2 cells, 9 unsigned orientation bins
/// centered at multiples of 20°, votes split linearly between the two
/// nearest bins, one L2-normalized block.
pub fn hog<T: Real>(luma: &[T], size: usize) -> DescriptorVector<T> {
    assert_eq!(luma.len(), size * size, "hog expects a square grid");
    let cell = size / HOG_CELLS;
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, size as isize - 1) as usize;
        let y = y.clamp(0, size as isize - 1) as usize;
        luma[y * size + x]
    };
    let mut v = vec![T::zero(); HOG_CELLS * HOG_CELLS * HOG_BINS];
    let pi = T::lit(std::f64::consts::PI);
    let bin_width = pi / T::lit(HOG_BINS as f64);
    for y in 0..size {
        for x in 0..size {
            let (xi, yi) = (x as isize, y as isize);
            let gx = at(xi + 1, yi) - at(xi - 1, yi);
            let gy = at(xi, yi + 1) - at(xi, yi - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag.is_zero() {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < T::zero() {
                theta = theta + pi;
            }
            if theta >= pi {
                theta = theta - pi;
            }
            let f = theta / bin_width;
            let k0f = f.floor();
            let frac = f - k0f;
            let k0 = k0f.to_usize().unwrap_or(0) % HOG_BINS;
            let k1 = (k0 + 1) % HOG_BINS;
            let cx = (x / cell).min(HOG_CELLS - 1);
            let cy = (y / cell).min(HOG_CELLS - 1);
            let base = (cy * HOG_CELLS + cx) * HOG_BINS;
            v[base + k0] = v[base + k0] + mag * (T::one() - frac);
            v[base + k1] = v[base + k1] + mag * frac;
        }
    }
    let eps = T::lit(HOG_EPSILON);
    let norm = (v.iter().fold(T::zero(), |a, &b| a + b * b) + eps * eps).sqrt();
    for e in &mut v {
        *e = *e / norm;
    }
    DescriptorVector {
        kind: DescriptorKind::Hog,
        values: v,
    }
}

/// HOG of the horizontally mirrored grid, obtained by permuting cells and
/// orientation bins.
pub fn hog_mirror<T: Real>(values: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); values.len()];
    for cy in 0..HOG_CELLS {
        for cx in 0..HOG_CELLS {
            let src = (cy * HOG_CELLS + cx) * HOG_BINS;
            let dst = (cy * HOG_CELLS + (HOG_CELLS - 1 - cx)) * HOG_BINS;
            for k in 0..HOG_BINS {
                out[dst + (HOG_BINS - k) % HOG_BINS] = values[src + k];
            }
        }
    }
    out
}

/// Joint hue/saturation histogram normalized to unit mass. Flagged samples
/// are ignored; an all-flagged grid gives the zero histogram.
pub fn hs_histogram<T: Real>(hsv: &[[T; 3]], outside: &[bool], bins: usize) -> DescriptorVector<T> {
    let mut v = vec![T::zero(); bins * bins];
    let mut n = 0usize;
    let b = T::lit(bins as f64);
    for (px, &out) in hsv.iter().zip(outside) {
        if out {
            continue;
        }
        let hb = (px[0] * b).floor().to_usize().unwrap_or(0).min(bins - 1);
        let sb = (px[1] * b).floor().to_usize().unwrap_or(0).min(bins - 1);
        v[hb * bins + sb] = v[hb * bins + sb] + T::one();
        n += 1;
    }
    if n > 0 {
        let nt = T::lit(n as f64);
        for e in &mut v {
            *e = *e / nt;
        }
    }
    DescriptorVector {
        kind: DescriptorKind::HsHist,
        values: v,
    }
}

/// Cosine similarity clamped to [0, 1]; 0 when either vector is zero.
pub fn cosine<T: Real>(a: &[T], b: &[T]) -> T {
    let mut dot = T::zero();
    let mut na = T::zero();
    let mut nb = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    if na.is_zero() || nb.is_zero() {
        return T::zero();
    }
    (dot / (na.sqrt() * nb.sqrt())).max(T::zero()).min(T::one())
}

/// Histogram intersection over union, `Σ min / Σ max`; 0 when either
/// histogram is empty.
pub fn histogram_iou<T: Real>(a: &[T], b: &[T]) -> T {
    let mut mn = T::zero();
    let mut mx = T::zero();
    let mut sa = T::zero();
    let mut sb = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        mn = mn + x.min(y);
        mx = mx + x.max(y);
        sa = sa + x;
        sb = sb + y;
    }
    if sa.is_zero() || sb.is_zero() || mx.is_zero() {
        return T::zero();
    }
    (mn / mx).min(T::one())
}

/// Similarity in [0, 1] between two descriptors of the same kind.
///
/// # Panics
/// When the kinds differ.
pub fn similarity<T: Real>(a: &DescriptorVector<T>, b: &DescriptorVector<T>) -> T {
    assert_eq!(a.kind, b.kind, "similarity between different descriptor kinds");
    match a.kind {
        DescriptorKind::Hog => cosine(&a.values, &b.values),
        DescriptorKind::HsHist => histogram_iou(&a.values, &b.values),
    }
}

/// Both descriptors of a canonical patch, in `f32`. HOG is `None` when the
/// patch has no gradient energy.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDescriptors {
    pub hog: Vec<f32>,
    pub hog_mirror: Vec<f32>,
    pub hs: Vec<f32>,
}

pub fn describe(patch: &CanonicalPatch, bins: usize) -> PatchDescriptors {
    assert_eq!(patch.width, patch.height, "canonical patches are square");
    let h = hog(&patch.luma(), patch.width).values;
    let m = hog_mirror(&h);
    let hs = hs_histogram(&patch.hsv(), &patch.outside, bins).values;
    PatchDescriptors {
        hog: h,
        hog_mirror: m,
        hs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        (0..256).map(|i| f(i % 16, i / 16)).collect()
    }

    #[test]
    fn constant_patch_is_zero() {
        let d = hog(&grid(|_, _| 77.0), 16);
        assert_eq!(d.values.len(), 36);
        assert!(d.is_zero());
        assert_eq!(similarity(&d, &d), 0.0);
    }

    #[test]
    fn vertical_step_votes_in_horizontal_bin() {
        let d = hog(&grid(|x, _| if x < 8 { 10.0 } else { 200.0 }), 16);
        for cell in 0..4 {
            let c = &d.values[cell * 9..cell * 9 + 9];
            for k in 1..9 {
                assert_eq!(c[k], 0.0, "cell {cell} bin {k}");
            }
            assert!(c[0] > 0.0);
        }
        assert!((similarity(&d, &d) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mirror_permutation_matches_mirrored_grid() {
        let g = grid(|x, y| ((x * 7 + y * 3) % 11) as f64 * 13.0 + (x * y) as f64);
        let m = grid(|x, y| ((((15 - x) * 7 + y * 3) % 11) as f64) * 13.0 + ((15 - x) * y) as f64);
        let a = hog_mirror(&hog(&g, 16).values);
        let b = hog(&m, 16).values;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "{x} {y}");
        }
    }

    #[test]
    fn hs_delta_and_two_tone() {
        let out = vec![false; 256];
        let red = vec![[0.0f64, 1.0, 1.0]; 256];
        let d = hs_histogram(&red, &out, 10);
        assert_eq!(d.values[9], 1.0);
        assert_eq!(d.values.iter().filter(|v| **v > 0.0).count(), 1);

        let two: Vec<[f64; 3]> = (0..256)
            .map(|i| if i < 128 { [0.05, 0.95, 1.0] } else { [0.55, 0.35, 1.0] })
            .collect();
        let d2 = hs_histogram(&two, &out, 10);
        assert_eq!(d2.values[9], 0.5);
        assert_eq!(d2.values[5 * 10 + 3], 0.5);
        assert_eq!(similarity(&d2, &d2), 1.0);

        let all_out = vec![true; 256];
        assert!(hs_histogram(&red, &all_out, 10).is_zero());
    }

    #[test]
    fn histogram_hand_cases() {
        let a = DescriptorVector {
            kind: DescriptorKind::HsHist,
            values: vec![0.5f64, 0.5, 0.0],
        };
        let b = DescriptorVector {
            kind: DescriptorKind::HsHist,
            values: vec![0.5, 0.0, 0.5],
        };
        assert!((similarity(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        let c = DescriptorVector {
            kind: DescriptorKind::HsHist,
            values: vec![0.0, 0.0, 1.0],
        };
        let d = DescriptorVector {
            kind: DescriptorKind::HsHist,
            values: vec![1.0, 0.0, 0.0],
        };
        assert_eq!(similarity(&c, &d), 0.0);
    }

    #[test]
    #[should_panic]
    fn kind_mismatch_panics() {
        let a = DescriptorVector::<f32> {
            kind: DescriptorKind::Hog,
            values: vec![1.0],
        };
        let b = DescriptorVector::<f32> {
            kind: DescriptorKind::HsHist,
            values: vec![1.0],
        };
        similarity(&a, &b);
    }

    #[test]
    fn config_validation() {
        assert!(DescriptorConfig::default().validate().is_ok());
        let mut c = DescriptorConfig::default();
        c.descriptors[0].weight = 0.0;
        assert!(c.validate().is_err());
        c.descriptors.clear();
        assert_eq!(c.validate(), Err(DescriptorError::NoneEnabled));
    }

    proptest! {
        #[test]
        fn similarity_symmetric_and_bounded(a in proptest::collection::vec(0.0f64..1.0, 12), b in proptest::collection::vec(0.0f64..1.0, 12)) {
            for kind in [DescriptorKind::Hog, DescriptorKind::HsHist] {
                let x = DescriptorVector { kind, values: a.clone() };
                let y = DescriptorVector { kind, values: b.clone() };
                let s = similarity(&x, &y);
                prop_assert!((0.0..=1.0).contains(&s));
                prop_assert!((s - similarity(&y, &x)).abs() < 1e-12);
                if !x.is_zero() {
                    prop_assert!((similarity(&x, &x) - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn hs_is_a_bag_of_colors(px in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 256), seed in any::<u64>()) {
            let hsv: Vec<[f64; 3]> = px.iter().map(|&(h, s)| [h, s, 0.5]).collect();
            let mut shuffled = hsv.clone();
            // deterministic Fisher-Yates
            let mut st = seed | 1;
            for i in (1..shuffled.len()).rev() {
                st ^= st << 13; st ^= st >> 7; st ^= st << 17;
                shuffled.swap(i, (st % (i as u64 + 1)) as usize);
            }
            let out = vec![false; 256];
            prop_assert_eq!(hs_histogram(&hsv, &out, 10), hs_histogram(&shuffled, &out, 10));
        }

        #[test]
        fn hog_ignores_intensity_offset(vals in proptest::collection::vec(0.0f64..200.0, 256), offset in -50.0f64..50.0) {
            let shifted: Vec<f64> = vals.iter().map(|v| v + offset).collect();
            let a = hog(&vals, 16);
            let b = hog(&shifted, 16);
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
