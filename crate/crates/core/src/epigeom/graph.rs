//! Pairwise geometry over an image set.

use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    detect_and_match, estimate_fundamental_ransac, FundamentalMatrix, MatchingParams, PairGeometry, RansacParams,
};
use crate::imageset::ImageSet;

/// `fmatrices.json`: `"refId|supId"` to 9 row-major values of `F` with
/// `x_supᵀ F x_ref = 0`.
pub type FMatrixFile = BTreeMap<String, [f64; 9]>;

pub fn read_fmatrices(path: &Path) -> std::io::Result<FMatrixFile> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

pub fn write_fmatrices(path: &Path, file: &FMatrixFile) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(file).map_err(std::io::Error::other)?;
    std::fs::write(path, text)
}

fn pair_key(a: &str, b: &str) -> String {
    format!("{a}|{b}")
}

/// Looks up `a|b`, falling back to the transpose of `b|a`.
fn lookup(file: &FMatrixFile, a: &str, b: &str) -> Option<Result<FundamentalMatrix<f64>, super::EpigeomError>> {
    if let Some(v) = file.get(&pair_key(a, b)) {
        return Some(FundamentalMatrix::from_row_slice(v));
    }
    file.get(&pair_key(b, a))
        .map(|v| FundamentalMatrix::from_row_slice(v).map(|f| f.transpose()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub reference: String,
    pub support: String,
    pub reason: String,
}

/// Accepted pair geometries, stored in both directions.
#[derive(Debug, Clone)]
pub struct SupportGraph {
    pub ids: Vec<String>,
    pub edges: BTreeMap<(usize, usize), PairGeometry>,
    pub failures: Vec<PairFailure>,
}

impl SupportGraph {
    pub fn supports(&self, reference: usize) -> Vec<usize> {
        self.edges
            .keys()
            .filter(|(r, _)| *r == reference)
            .map(|(_, s)| *s)
            .collect()
    }

    pub fn geometry(&self, reference: usize, support: usize) -> Option<&PairGeometry> {
        self.edges.get(&(reference, support))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.supports(i).len()
    }

    pub fn average_support_size(&self) -> f64 {
        if self.ids.is_empty() {
            return 0.0;
        }
        self.edges.len() as f64 / self.ids.len() as f64
    }

    /// Inserts `g` for (a, b) and its reverse for (b, a).
    pub fn insert(&mut self, a: usize, b: usize, g: PairGeometry) {
        self.edges.insert((b, a), g.reversed());
        self.edges.insert((a, b), g);
    }
}

/// Deterministic per-pair seed, independent of scheduling order.
pub(crate) fn pair_seed(seed: u64, a: &str, b: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for byte in a.bytes().chain(*b"|").chain(b.bytes()) {
        h ^= byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub fn build_support_graph(set: &ImageSet, seed: u64) -> SupportGraph {
    build_support_graph_with(
        set,
        seed,
        &MatchingParams::default(),
        &RansacParams::default(),
        &FMatrixFile::new(),
    )
}

/// Estimates every unordered pair once (in set order) and stores accepted
/// geometry in both directions. Pairs present in `provided` skip estimation.
pub fn build_support_graph_with(
    set: &ImageSet,
    seed: u64,
    matching: &MatchingParams,
    ransac: &RansacParams,
    provided: &FMatrixFile,
) -> SupportGraph {
    let n = set.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let results: Vec<((usize, usize), Result<PairGeometry, String>)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (&set.images[i], &set.images[j]);
            let res = match lookup(provided, &a.id, &b.id) {
                Some(Ok(f)) => Ok(PairGeometry::from_fundamental(f)),
                Some(Err(e)) => Err(format!("invalid provided matrix: {e}")),
                None => {
                    let matches = detect_and_match(a, b, matching);
                    estimate_fundamental_ransac(&matches, pair_seed(seed, &a.id, &b.id), ransac)
                        .map_err(|e| format!("{e} ({} putative matches)", matches.len()))
                }
            };
            ((i, j), res)
        })
        .collect();

    let mut graph = SupportGraph {
        ids: set.ids(),
        edges: BTreeMap::new(),
        failures: Vec::new(),
    };
    for ((i, j), res) in results {
        let (a, b) = (&set.images[i].id, &set.images[j].id);
        match res {
            Ok(g) => {
                info!(
                    "pair {a}|{b}: {} inliers, ratio {:.2}, mean Sampson {:.3}px",
                    g.inliers.len(),
                    g.inlier_ratio,
                    g.mean_sampson_error
                );
                graph.insert(i, j, g);
            }
            Err(reason) => {
                info!("pair {a}|{b} rejected: {reason}");
                graph.failures.push(PairFailure {
                    reference: a.clone(),
                    support: b.clone(),
                    reason,
                });
            }
        }
    }
    for (i, id) in graph.ids.iter().enumerate() {
        if graph.degree(i) == 0 {
            warn!("image {id} has an empty support set");
        }
    }
    graph
}
