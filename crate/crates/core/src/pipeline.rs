//! End-to-end detection over an image set.

use std::collections::BTreeMap;

use log::{info, warn};
use rayon::prelude::*;
use thiserror::Error;

use crate::aggregate::{fuse, DynamicProbabilityMap};
use crate::descriptors::{DescriptorConfig, DescriptorError};
use crate::epigeom::{build_support_graph_with, FMatrixFile, MatchingParams, PairFailure, RansacParams, SupportGraph};
use crate::imageset::ImageSet;
use crate::patches::{build_pencil_for, decompose_reference_for, PatchParams, PatchSet, RgbPlanes};
use crate::probmap::{
    matching_probability_map, normalize_confidences, pair_confidences, ConfidenceTable, MatchingProbabilityMap,
    NormalizationStats,
};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub patch: PatchParams,
    pub descriptors: DescriptorConfig,
    pub matching: MatchingParams,
    pub ransac: RansacParams,
    /// Keep an SVG drawing of every pair's reference patches.
    pub debug_patches: bool,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no image pair has usable geometry:\n{}", format_failures(.0))]
    NoGeometry(Vec<PairFailure>),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

fn format_failures(f: &[PairFailure]) -> String {
    f.iter()
        .map(|p| format!("  {}|{}: {}", p.reference, p.support, p.reason))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone)]
pub struct PairMap {
    pub support: usize,
    pub map: MatchingProbabilityMap<f64>,
    pub svg: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ReferenceResult {
    pub index: usize,
    pub id: String,
    pub pairs: Vec<PairMap>,
    pub dynamic: DynamicProbabilityMap<f64>,
}

impl ReferenceResult {
    pub fn pair(&self, support: usize) -> Option<&PairMap> {
        self.pairs.iter().find(|p| p.support == support)
    }
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub graph: SupportGraph,
    pub references: Vec<ReferenceResult>,
    /// Images without any support.
    pub skipped: Vec<String>,
    pub normalization: NormalizationStats<f32>,
    pub sigma: f64,
}

impl Detection {
    pub fn reference(&self, id: &str) -> Option<&ReferenceResult> {
        self.references.iter().find(|r| r.id == id)
    }
}

fn patch_set(set: &ImageSet, graph: &SupportGraph, r: usize, s: usize, params: &PatchParams) -> PatchSet {
    let img = &set.images[r];
    let pg = graph.geometry(r, s).expect("edge present");
    let pencil = build_pencil_for(
        img.width,
        img.height,
        &pg.e_ref,
        params.target_height,
        params.exclusion_factor,
    );
    decompose_reference_for(&img.id, img.width, img.height, &pencil, params)
}

/// Runs the whole pipeline. Pairs found in `provided` use that geometry;
/// the rest are estimated.
pub fn detect(set: &ImageSet, provided: &FMatrixFile, cfg: &PipelineConfig) -> Result<Detection, PipelineError> {
    cfg.descriptors.validate()?;
    let graph = build_support_graph_with(set, cfg.seed, &cfg.matching, &cfg.ransac, provided);
    if graph.edges.is_empty() {
        return Err(PipelineError::NoGeometry(graph.failures.clone()));
    }
    let planes: Vec<RgbPlanes> = set.images.iter().map(RgbPlanes::from_image).collect();
    let pairs: Vec<(usize, usize)> = graph.edges.keys().copied().collect();

    // Pass 1: raw confidences. Coverage tables are large, so patch sets are
    // rebuilt in pass 2 rather than kept.
    let first: Vec<(_, f64)> = pairs
        .par_iter()
        .map(|&(r, s)| {
            let ps = patch_set(set, &graph, r, s, &cfg.patch);
            let pg = graph.geometry(r, s).expect("edge present");
            let conf = pair_confidences(&planes[r], &planes[s], &ps, pg, &cfg.descriptors, (r, s));
            info!(
                "pair {}|{}: {} patches in {} rows",
                set.images[r].id,
                set.images[s].id,
                ps.patches.len(),
                ps.rows.len()
            );
            (conf, ps.max_center_distance)
        })
        .collect();
    let sigma = first.iter().map(|(_, d)| *d).fold(0.0, f64::max) / 3.0;
    let table = ConfidenceTable {
        pairs: first.into_iter().map(|(c, _)| c).collect(),
    };
    let (stats, normalized) = normalize_confidences(&table);

    // Pass 2: per-pair maps.
    let maps: Vec<PairMap> = pairs
        .par_iter()
        .zip(normalized.pairs.par_iter())
        .map(|(&(r, s), conf)| {
            let ps = patch_set(set, &graph, r, s, &cfg.patch);
            let raw: BTreeMap<_, Vec<f64>> = conf
                .raw
                .iter()
                .map(|(k, v)| (*k, v.iter().map(|&x| x as f64).collect()))
                .collect();
            let map = matching_probability_map(&ps, &raw, &cfg.descriptors, sigma);
            PairMap {
                support: s,
                map,
                svg: cfg.debug_patches.then(|| ps.to_svg(None)),
            }
        })
        .collect();

    let mut by_ref: BTreeMap<usize, Vec<PairMap>> = BTreeMap::new();
    for (&(r, _), m) in pairs.iter().zip(maps) {
        by_ref.entry(r).or_default().push(m);
    }
    let mut references = Vec::new();
    let mut skipped = Vec::new();
    for (i, img) in set.images.iter().enumerate() {
        let Some(pair_maps) = by_ref.remove(&i) else {
            warn!("skipping {}: no support images", img.id);
            skipped.push(img.id.clone());
            continue;
        };
        let mats: Vec<_> = pair_maps.iter().map(|p| p.map.clone()).collect();
        let dynamic = fuse(&mats).expect("maps of one reference share its size");
        info!("{}: fused {} support maps", img.id, pair_maps.len());
        references.push(ReferenceResult {
            index: i,
            id: img.id.clone(),
            pairs: pair_maps,
            dynamic,
        });
    }
    Ok(Detection {
        graph,
        references,
        skipped,
        normalization: stats,
        sigma,
    })
}
