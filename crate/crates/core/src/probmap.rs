//! Patch confidences and per-pair matching probability maps.
//!
//! For each reference patch the raw confidence under a descriptor is the
//! best similarity among its candidates in the support image. Raw values are
//! min-max normalized per descriptor over the whole run and spread back onto
//! pixels with a Gaussian weight on the distance to each covering patch's
//! center.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::descriptors::{
    cosine, describe, histogram_iou, similarity, DescriptorConfig, DescriptorKind, DescriptorVector, PatchDescriptors,
};
use crate::epigeom::PairGeometry;
use crate::patches::{candidate_strip, warp_quad, PatchSet, RgbPlanes};
use crate::scalar::Real;

/// Best similarity of `r` among `candidates`; 0 for an empty set.
pub fn patch_confidence<T: Real>(r: &DescriptorVector<T>, candidates: &[DescriptorVector<T>]) -> T {
    candidates
        .iter()
        .map(|c| similarity(r, c))
        .fold(T::zero(), |a, b| a.max(b))
}

/// Raw confidences of every reference patch of one (reference, support)
/// pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairConfidences<T: Real> {
    pub reference: usize,
    pub support: usize,
    pub raw: BTreeMap<DescriptorKind, Vec<T>>,
    /// False where the candidate set was empty.
    pub measured: Vec<bool>,
}

/// Raw confidences for every pair of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfidenceTable<T: Real> {
    pub pairs: Vec<PairConfidences<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range<T: Real> {
    pub min: T,
    pub max: T,
}

/// Per-descriptor range of measured raw confidences.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormalizationStats<T: Real> {
    pub ranges: BTreeMap<DescriptorKind, Range<T>>,
}

impl<T: Real> NormalizationStats<T> {
    /// Affine min-max map; a degenerate range maps everything to 0.5.
    pub fn apply(&self, kind: DescriptorKind, raw: T) -> T {
        match self.ranges.get(&kind) {
            Some(r) if r.max > r.min => ((raw - r.min) / (r.max - r.min)).max(T::zero()).min(T::one()),
            _ => T::lit(0.5),
        }
    }
}

/// Computes the run-wide ranges and the normalized table.
///
/// Ranges span measured entries only. Entries whose candidate set was empty
/// normalize to 0.
pub fn normalize_confidences<T: Real>(table: &ConfidenceTable<T>) -> (NormalizationStats<T>, ConfidenceTable<T>) {
    let mut stats = NormalizationStats::default();
    for pair in &table.pairs {
        for (kind, values) in &pair.raw {
            for (v, &m) in values.iter().zip(&pair.measured) {
                if !m {
                    continue;
                }
                let r = stats.ranges.entry(*kind).or_insert(Range { min: *v, max: *v });
                r.min = r.min.min(*v);
                r.max = r.max.max(*v);
            }
        }
    }
    let pairs = table
        .pairs
        .iter()
        .map(|p| PairConfidences {
            reference: p.reference,
            support: p.support,
            measured: p.measured.clone(),
            raw: p
                .raw
                .iter()
                .map(|(k, vals)| {
                    let norm = vals
                        .iter()
                        .zip(&p.measured)
                        .map(|(&v, &m)| if m { stats.apply(*k, v) } else { T::zero() })
                        .collect();
                    (*k, norm)
                })
                .collect(),
        })
        .collect();
    (stats, ConfidenceTable { pairs })
}

/// Per-pixel probability that a reference pixel has a static, visible match
/// in one support image.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingProbabilityMap<T: Real> {
    pub width: u32,
    pub height: u32,
    pub values: Vec<T>,
    pub covered: Vec<bool>,
}

impl<T: Real> MatchingProbabilityMap<T> {
    pub fn neutral(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        Self {
            width,
            height,
            values: vec![T::lit(0.5); n],
            covered: vec![false; n],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> T {
        self.values[(y * self.width + x) as usize]
    }
}

/// Gaussian bandwidth: a third of the largest pixel to patch-center
/// distance over all patch sets of the run.
pub fn sigma_from_sets<'a>(sets: impl IntoIterator<Item = &'a PatchSet>) -> f64 {
    sets.into_iter().map(|s| s.max_center_distance).fold(0.0, f64::max) / 3.0
}

/// Weighted expectation of normalized confidences over the patches
/// covering each pixel and the enabled descriptors. Weights are normalized
/// per pixel; uncovered pixels get 0.5.
///
/// `normalized[kind][patch_id]` holds the normalized confidence.
pub fn matching_probability_map<T: Real>(
    patchset: &PatchSet,
    normalized: &BTreeMap<DescriptorKind, Vec<T>>,
    config: &DescriptorConfig,
    sigma: f64,
) -> MatchingProbabilityMap<T> {
    let (w, h) = (patchset.width, patchset.height);
    let kinds: Vec<(&Vec<T>, T)> = config
        .descriptors
        .iter()
        .filter_map(|d| normalized.get(&d.kind).map(|v| (v, T::lit(d.weight))))
        .collect();
    let two_s2 = 2.0 * sigma * sigma;
    let rows: Vec<(Vec<T>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut vals = Vec::with_capacity(w as usize);
            let mut cov = Vec::with_capacity(w as usize);
            for x in 0..w {
                let ids = patchset.patches_covering(x, y);
                if ids.is_empty() || kinds.is_empty() {
                    vals.push(T::lit(0.5));
                    cov.push(false);
                    continue;
                }
                let mut num = T::zero();
                let mut den = T::zero();
                for &id in ids {
                    let c = patchset.patches[id as usize].center;
                    let d2 = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
                    let wr = if two_s2 > 0.0 {
                        T::lit((-d2 / two_s2).exp())
                    } else {
                        T::one()
                    };
                    for (vals_k, wt) in &kinds {
                        let wgt = wr * *wt;
                        num = num + wgt * vals_k[id as usize];
                        den = den + wgt;
                    }
                }
                if den > T::zero() {
                    vals.push((num / den).max(T::zero()).min(T::one()));
                    cov.push(true);
                } else {
                    vals.push(T::lit(0.5));
                    cov.push(false);
                }
            }
            (vals, cov)
        })
        .collect();
    let mut values = Vec::with_capacity((w * h) as usize);
    let mut covered = Vec::with_capacity((w * h) as usize);
    for (v, c) in rows {
        values.extend(v);
        covered.extend(c);
    }
    MatchingProbabilityMap {
        width: w,
        height: h,
        values,
        covered,
    }
}

/// Raw confidences of every patch of `patchset` against the support image.
///
/// Rows are processed independently: the candidate set of a row is shared by
/// all of its patches. HOG similarity takes the better of the candidate and
/// its mirror along the epipolar direction, since the orientation of
/// corresponding lines is not fixed by `F`.
pub fn pair_confidences(
    reference: &RgbPlanes,
    support: &RgbPlanes,
    patchset: &PatchSet,
    pg: &PairGeometry,
    config: &DescriptorConfig,
    ids: (usize, usize),
) -> PairConfidences<f32> {
    let size = patchset.params.canonical_size;
    let bins = config.hs_bins;
    let use_hog = config.weight(DescriptorKind::Hog).is_some();
    let use_hs = config.weight(DescriptorKind::HsHist).is_some();

    let per_row: Vec<Vec<(f32, f32, bool)>> = patchset
        .rows
        .par_iter()
        .enumerate()
        .map(|(ri, row)| {
            let cands = candidate_strip(
                &row.strip,
                row.t_range,
                pg,
                support.width,
                support.height,
                &patchset.params,
            );
            let cand_desc: Vec<PatchDescriptors> = cands
                .candidates
                .iter()
                .filter_map(|c| warp_quad(support, &c.quad, size, size).ok())
                .map(|p| describe(&p, bins))
                .collect();
            patchset
                .row_patches(ri)
                .iter()
                .map(|patch| {
                    if cand_desc.is_empty() {
                        return (0.0, 0.0, false);
                    }
                    let Ok(rp) = warp_quad(reference, &patch.quad, size, size) else {
                        return (0.0, 0.0, false);
                    };
                    let rd = describe(&rp, bins);
                    let mut best_hog = 0.0f32;
                    let mut best_hs = 0.0f32;
                    for c in &cand_desc {
                        if use_hog {
                            best_hog = best_hog
                                .max(cosine(&rd.hog, &c.hog))
                                .max(cosine(&rd.hog, &c.hog_mirror));
                        }
                        if use_hs {
                            best_hs = best_hs.max(histogram_iou(&rd.hs, &c.hs));
                        }
                    }
                    (best_hog, best_hs, true)
                })
                .collect()
        })
        .collect();

    let flat: Vec<(f32, f32, bool)> = per_row.into_iter().flatten().collect();
    let mut raw = BTreeMap::new();
    if use_hog {
        raw.insert(DescriptorKind::Hog, flat.iter().map(|v| v.0).collect());
    }
    if use_hs {
        raw.insert(DescriptorKind::HsHist, flat.iter().map(|v| v.1).collect());
    }
    PairConfidences {
        reference: ids.0,
        support: ids.1,
        raw,
        measured: flat.iter().map(|v| v.2).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epigeom::Epipole;
    use crate::patches::{build_pencil_for, decompose_reference_for, PatchParams};
    use nalgebra::Vector3;

    fn table(values: &[f64]) -> ConfidenceTable<f64> {
        ConfidenceTable {
            pairs: vec![PairConfidences {
                reference: 0,
                support: 1,
                raw: [(DescriptorKind::Hog, values.to_vec())].into_iter().collect(),
                measured: vec![true; values.len()],
            }],
        }
    }

    #[test]
    fn min_max_hand_case() {
        let (stats, norm) = normalize_confidences(&table(&[0.2, 0.6, 1.0]));
        assert_eq!(stats.ranges[&DescriptorKind::Hog], Range { min: 0.2, max: 1.0 });
        let v = &norm.pairs[0].raw[&DescriptorKind::Hog];
        assert!((v[0] - 0.0).abs() < 1e-15 && (v[1] - 0.5).abs() < 1e-15 && (v[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_table_maps_to_half() {
        let (_, norm) = normalize_confidences(&table(&[0.4, 0.4, 0.4]));
        assert!(norm.pairs[0].raw[&DescriptorKind::Hog].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn unmeasured_entries_are_zero_and_outside_the_range() {
        let mut t = table(&[0.5, 0.0, 0.9, 0.7]);
        t.pairs[0].measured[1] = false;
        let (stats, norm) = normalize_confidences(&t);
        assert_eq!(stats.ranges[&DescriptorKind::Hog].min, 0.5);
        assert_eq!(norm.pairs[0].raw[&DescriptorKind::Hog][1], 0.0);
    }

    #[test]
    fn confidence_is_best_candidate() {
        let r = DescriptorVector {
            kind: DescriptorKind::HsHist,
            values: vec![0.5f64, 0.5, 0.0],
        };
        let others = vec![
            DescriptorVector {
                kind: DescriptorKind::HsHist,
                values: vec![0.0, 0.0, 1.0],
            },
            r.clone(),
        ];
        assert_eq!(patch_confidence(&r, &others), 1.0);
        assert_eq!(patch_confidence(&r, &[]), 0.0);
        assert_eq!(patch_confidence(&r, &others[..1]), 0.0);
    }

    fn rectified_set() -> PatchSet {
        let e = Epipole::from_homogeneous(Vector3::new(1.0, 0.0, 0.0));
        let p = build_pencil_for(128, 96, &e, 16.0, 2.0);
        decompose_reference_for("r", 128, 96, &p, &PatchParams::default())
    }

    #[test]
    fn convex_combination_endpoints_and_weights() {
        let set = rectified_set();
        let n = set.patches.len();
        let cfg = DescriptorConfig::default();
        let sigma = sigma_from_sets([&set]);
        for c in [0.0, 0.37, 1.0] {
            let norm: BTreeMap<_, _> = [(DescriptorKind::Hog, vec![c; n]), (DescriptorKind::HsHist, vec![c; n])]
                .into_iter()
                .collect();
            let m: MatchingProbabilityMap<f64> = matching_probability_map(&set, &norm, &cfg, sigma);
            for y in 20..70 {
                for x in 20..100 {
                    assert!((m.get(x, y) - c).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn weighted_descriptors_at_single_patch_center() {
        let set = rectified_set();
        // keep only one patch so it is the sole cover of its center pixel
        let target = set
            .patches
            .iter()
            .find(|p| p.center.x > 40.0 && p.center.y > 40.0)
            .unwrap()
            .clone();
        let (cx, cy) = (target.center.x.round() as u32, target.center.y.round() as u32);
        let n = set.patches.len();
        let mut hog = vec![0.0; n];
        let mut hs = vec![0.0; n];
        for &id in set.patches_covering(cx, cy) {
            hog[id as usize] = 1.0;
            hs[id as usize] = 0.4;
        }
        let norm: BTreeMap<_, _> = [(DescriptorKind::Hog, hog), (DescriptorKind::HsHist, hs)]
            .into_iter()
            .collect();
        let m: MatchingProbabilityMap<f64> = matching_probability_map(&set, &norm, &DescriptorConfig::default(), 5.0);
        assert!((m.get(cx, cy) - 0.8).abs() < 1e-12);
    }
}
