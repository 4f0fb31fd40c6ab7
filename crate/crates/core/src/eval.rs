//! Jaccard evaluation against ground-truth masks, with per-image and
//! per-set threshold selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{BinaryMask, DynamicProbabilityMap};
use crate::imageset::{GroundTruthMask, Label};
use crate::scalar::Real;

/// Number of thresholds on the search grid `k / 100`, `k = 0..=100`.
pub const GRID_STEPS: usize = 101;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("mask is {mask:?} but ground truth is {gt:?}")]
    DimensionMismatch { mask: (u32, u32), gt: (u32, u32) },
    #[error("no images to evaluate")]
    Empty,
}

#[inline]
pub fn grid_threshold(k: usize) -> f64 {
    k as f64 / 100.0
}

fn ratio(inter: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Intersection over union of the predicted and ground-truth dynamic sets,
/// ignoring `DontCare` pixels. Two empty sets score 1.
pub fn jaccard(mask: &BinaryMask, gt: &GroundTruthMask) -> Result<f64, EvalError> {
    jaccard_where(mask, gt, None)
}

/// As [`jaccard`], restricted to pixels where `valid` is true.
pub fn jaccard_where(mask: &BinaryMask, gt: &GroundTruthMask, valid: Option<&[bool]>) -> Result<f64, EvalError> {
    if (mask.width, mask.height) != (gt.width, gt.height) {
        return Err(EvalError::DimensionMismatch {
            mask: (mask.width, mask.height),
            gt: (gt.width, gt.height),
        });
    }
    let (mut inter, mut union) = (0, 0);
    for (i, (&m, &l)) in mask.values.iter().zip(&gt.labels).enumerate() {
        if l == Label::DontCare || valid.is_some_and(|v| !v[i]) {
            continue;
        }
        let g = l == Label::Dynamic;
        inter += (m && g) as usize;
        union += (m || g) as usize;
    }
    Ok(ratio(inter, union))
}

/// Jaccard of `map >= t_k` for every grid threshold. Pixels with no
/// covering support are left out together with `DontCare` pixels.
pub fn jaccard_curve<T: Real>(map: &DynamicProbabilityMap<T>, gt: &GroundTruthMask) -> Result<Vec<f64>, EvalError> {
    if (map.width, map.height) != (gt.width, gt.height) {
        return Err(EvalError::DimensionMismatch {
            mask: (map.width, map.height),
            gt: (gt.width, gt.height),
        });
    }
    // pixels whose highest passing grid index is k pass every threshold <= k
    let mut dyn_hist = [0usize; GRID_STEPS];
    let mut stat_hist = [0usize; GRID_STEPS];
    let mut total_dyn = 0usize;
    for (i, (&p, &l)) in map.values.iter().zip(&gt.labels).enumerate() {
        if l == Label::DontCare || !map.is_covered(i) {
            continue;
        }
        let p = p.to_f64_lossy();
        let is_dyn = l == Label::Dynamic;
        total_dyn += is_dyn as usize;
        match highest_passing(p) {
            Some(k) if is_dyn => dyn_hist[k] += 1,
            Some(k) => stat_hist[k] += 1,
            None => {}
        }
    }
    let mut curve = vec![0.0; GRID_STEPS];
    let (mut tp, mut fp) = (0usize, 0usize);
    for k in (0..GRID_STEPS).rev() {
        tp += dyn_hist[k];
        fp += stat_hist[k];
        curve[k] = ratio(tp, total_dyn + fp);
    }
    Ok(curve)
}

fn highest_passing(p: f64) -> Option<usize> {
    if !(p >= 0.0) {
        return None;
    }
    let mut k = ((p * 100.0).floor() as i64).clamp(0, 100) as usize;
    while k < 100 && grid_threshold(k + 1) <= p {
        k += 1;
    }
    while grid_threshold(k) > p {
        if k == 0 {
            return None;
        }
        k -= 1;
    }
    Some(k)
}

fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}

/// Grid threshold maximizing the Jaccard of one image; ties go to the
/// smaller threshold.
pub fn best_threshold_per_image<T: Real>(
    map: &DynamicProbabilityMap<T>,
    gt: &GroundTruthMask,
) -> Result<(f64, f64), EvalError> {
    let curve = jaccard_curve(map, gt)?;
    let (k, j) = argmax_first(&curve);
    Ok((grid_threshold(k), j))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetThreshold {
    pub threshold: f64,
    pub jaccards: Vec<f64>,
    pub summary: MeanStd,
}

/// One threshold for the whole set, maximizing the mean Jaccard.
pub fn best_threshold_per_set<T: Real>(
    items: &[(&DynamicProbabilityMap<T>, &GroundTruthMask)],
) -> Result<SetThreshold, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let curves = items
        .par_iter()
        .map(|(m, g)| jaccard_curve(m, g))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(set_from_curves(&curves))
}

fn set_from_curves(curves: &[Vec<f64>]) -> SetThreshold {
    let means: Vec<f64> = (0..GRID_STEPS)
        .map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / curves.len() as f64)
        .collect();
    let (k, _) = argmax_first(&means);
    let jaccards: Vec<f64> = curves.iter().map(|c| c[k]).collect();
    SetThreshold {
        threshold: grid_threshold(k),
        summary: MeanStd::of(&jaccards),
        jaccards,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub id: String,
    pub best_threshold: f64,
    pub best_jaccard: f64,
    /// Jaccard at the common per-set threshold.
    pub set_jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ImageEval>,
    pub per_image: MeanStd,
    pub set_threshold: f64,
    pub per_set: MeanStd,
}

impl EvalReport {
    pub fn image(&self, id: &str) -> Option<&ImageEval> {
        self.images.iter().find(|e| e.id == id)
    }
}

/// Evaluates a set of dynamic maps under both protocols.
pub fn evaluate<T: Real>(
    items: &[(&str, &DynamicProbabilityMap<T>, &GroundTruthMask)],
) -> Result<EvalReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let curves = items
        .par_iter()
        .map(|(_, m, g)| jaccard_curve(m, g))
        .collect::<Result<Vec<_>, _>>()?;
    let set = set_from_curves(&curves);
    let images: Vec<ImageEval> = items
        .iter()
        .zip(&curves)
        .zip(&set.jaccards)
        .map(|(((id, _, _), c), &sj)| {
            let (k, j) = argmax_first(c);
            ImageEval {
                id: id.to_string(),
                best_threshold: grid_threshold(k),
                best_jaccard: j,
                set_jaccard: sj,
            }
        })
        .collect();
    let best: Vec<f64> = images.iter().map(|e| e.best_jaccard).collect();
    Ok(EvalReport {
        per_image: MeanStd::of(&best),
        set_threshold: set.threshold,
        per_set: set.summary,
        images,
    })
}
