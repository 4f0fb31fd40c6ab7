//! Run configuration and the `detect` / `synth` drivers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::aggregate::threshold;
use crate::descriptors::{DescriptorConfig, DescriptorKind, WeightedDescriptor};
use crate::epigeom::{read_fmatrices, FMatrixFile, MatchingParams, RansacParams};
use crate::eval::{evaluate, EvalError, EvalReport};
use crate::imageset::{load_ground_truth, load_image_set, GroundTruthMask, ImageSetError};
use crate::output::{save_dynamic_map, save_heatmap, save_mask, save_matching_map, write_json, GraphRecord};
use crate::patches::PatchParams;
use crate::pipeline::{detect, Detection, PipelineConfig, PipelineError};
use crate::synth::{preset, render, write_dataset, Preset, SynthError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    ImageSet(#[from] ImageSetError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("thread pool: {0}")]
    Threads(#[from] rayon::ThreadPoolBuildError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn img_err(path: &Path) -> impl FnOnce(image::ImageError) -> CliError + '_ {
    move |source| CliError::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// How the threshold for the written binary masks is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdProtocol {
    PerImage,
    PerSet,
    Fixed,
}

impl FromStr for ThresholdProtocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-image" | "per_image" => Ok(Self::PerImage),
            "per-set" | "per_set" => Ok(Self::PerSet),
            "fixed" => Ok(Self::Fixed),
            _ => Err(format!("unknown threshold protocol {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Ground-truth directory; `<input>/gt` is used when absent and present.
    pub gt: Option<PathBuf>,
    pub fmatrices: Option<PathBuf>,
    pub seed: u64,
    /// Worker threads; `None` lets the pool decide.
    pub threads: Option<usize>,
    pub debug_patches: bool,
    pub target_height: f64,
    pub width_factors: [f64; 3],
    /// Zero disables the descriptor.
    pub hog_weight: f64,
    pub hs_weight: f64,
    pub hs_bins: usize,
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    pub ransac_confidence: f64,
    pub min_inliers: usize,
    pub min_inlier_ratio: f64,
    pub threshold_protocol: ThresholdProtocol,
    /// Used for masks without ground truth, or with the fixed protocol.
    pub mask_threshold: f64,
}

/// Keys accepted in config files and as `--<key>` flags.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "threads",
    "target_height",
    "width_factors",
    "hog_weight",
    "hs_weight",
    "hs_bins",
    "ransac_threshold",
    "ransac_iterations",
    "ransac_confidence",
    "min_inliers",
    "min_inlier_ratio",
    "threshold_protocol",
    "mask_threshold",
];

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        let r = RansacParams::default();
        let p = PatchParams::default();
        Self {
            input: input.into(),
            output: output.into(),
            gt: None,
            fmatrices: None,
            seed: 0,
            threads: None,
            debug_patches: false,
            target_height: p.target_height,
            width_factors: p.width_factors,
            hog_weight: 2.0,
            hs_weight: 1.0,
            hs_bins: 10,
            ransac_threshold: r.threshold,
            ransac_iterations: r.max_iterations,
            ransac_confidence: r.confidence,
            min_inliers: r.min_inliers,
            min_inlier_ratio: r.min_inlier_ratio,
            threshold_protocol: ThresholdProtocol::PerSet,
            mask_threshold: 0.5,
        }
    }

    /// Sets one key; `-` and `_` are interchangeable in the name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
            v.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad value {v:?} for {key}")))
        }
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "seed" => self.seed = parse(&key, v)?,
            "threads" => self.threads = Some(parse(&key, v)?),
            "target_height" => self.target_height = parse(&key, v)?,
            "width_factors" => {
                let parts: Vec<f64> = v.split(',').map(|p| parse(&key, p)).collect::<Result<_, _>>()?;
                self.width_factors = parts
                    .try_into()
                    .map_err(|_| CliError::Config("width_factors needs three values".into()))?;
            }
            "hog_weight" => self.hog_weight = parse(&key, v)?,
            "hs_weight" => self.hs_weight = parse(&key, v)?,
            "hs_bins" => self.hs_bins = parse(&key, v)?,
            "ransac_threshold" => self.ransac_threshold = parse(&key, v)?,
            "ransac_iterations" => self.ransac_iterations = parse(&key, v)?,
            "ransac_confidence" => self.ransac_confidence = parse(&key, v)?,
            "min_inliers" => self.min_inliers = parse(&key, v)?,
            "min_inlier_ratio" => self.min_inlier_ratio = parse(&key, v)?,
            "threshold_protocol" => self.threshold_protocol = v.parse().map_err(CliError::Config)?,
            "mask_threshold" => self.mask_threshold = parse(&key, v)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if !(self.target_height >= 2.0 && self.target_height <= 256.0) {
            return bad("target_height must be in [2, 256]");
        }
        if self.width_factors.iter().any(|w| !(*w > 0.0 && *w <= 16.0)) {
            return bad("width_factors must be in (0, 16]");
        }
        if !(self.hog_weight >= 0.0 && self.hs_weight >= 0.0 && self.hog_weight + self.hs_weight > 0.0) {
            return bad("descriptor weights must be non-negative and not both zero");
        }
        if self.hs_bins == 0 || self.hs_bins > 64 {
            return bad("hs_bins must be in [1, 64]");
        }
        if !(self.ransac_threshold > 0.0) || self.ransac_iterations == 0 {
            return bad("RANSAC threshold and iterations must be positive");
        }
        if !(self.ransac_confidence > 0.0 && self.ransac_confidence < 1.0) {
            return bad("ransac_confidence must be in (0, 1)");
        }
        if self.min_inliers < 8 || !(0.0..=1.0).contains(&self.min_inlier_ratio) {
            return bad("min_inliers must be at least 8 and min_inlier_ratio in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.mask_threshold) {
            return bad("mask_threshold must be in [0, 1]");
        }
        if self.threads == Some(0) {
            return bad("threads must be positive");
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let mut descriptors = Vec::new();
        if self.hog_weight > 0.0 {
            descriptors.push(WeightedDescriptor {
                kind: DescriptorKind::Hog,
                weight: self.hog_weight,
            });
        }
        if self.hs_weight > 0.0 {
            descriptors.push(WeightedDescriptor {
                kind: DescriptorKind::HsHist,
                weight: self.hs_weight,
            });
        }
        PipelineConfig {
            seed: self.seed,
            patch: PatchParams {
                target_height: self.target_height,
                width_factors: self.width_factors,
                ..PatchParams::default()
            },
            descriptors: DescriptorConfig {
                descriptors,
                hs_bins: self.hs_bins,
            },
            matching: MatchingParams::default(),
            ransac: RansacParams {
                threshold: self.ransac_threshold,
                max_iterations: self.ransac_iterations,
                confidence: self.ransac_confidence,
                min_inliers: self.min_inliers,
                min_inlier_ratio: self.min_inlier_ratio,
            },
            debug_patches: self.debug_patches,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageMetrics {
    pub id: String,
    pub supports: Vec<String>,
    pub skipped: bool,
    pub mask_threshold: Option<f64>,
    pub best_threshold: Option<f64>,
    pub best_jaccard: Option<f64>,
    pub set_jaccard: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub set_size: usize,
    pub resolution: [u32; 2],
    pub average_support_size: f64,
    pub seed: u64,
    pub threshold_protocol: ThresholdProtocol,
    pub sigma: f64,
    pub normalization: BTreeMap<String, [f64; 2]>,
    pub images: Vec<ImageMetrics>,
    pub skipped: Vec<String>,
    pub evaluation: Option<EvalReport>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub detection: Detection,
    pub report: Option<EvalReport>,
    pub metrics: Metrics,
}

fn load_gt_masks(
    cfg: &RunConfig,
    det: &Detection,
    set: &crate::imageset::ImageSet,
) -> Result<BTreeMap<String, GroundTruthMask>, CliError> {
    let dir = match &cfg.gt {
        Some(d) => d.clone(),
        None => cfg.input.join("gt"),
    };
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        if cfg.gt.is_some() {
            return Err(CliError::Config(format!(
                "ground-truth directory {} not found",
                dir.display()
            )));
        }
        return Ok(out);
    }
    for r in &det.references {
        let img = &set.images[r.index];
        let path = ["png", "PNG"]
            .iter()
            .map(|e| dir.join(format!("{}.{e}", img.id)))
            .find(|p| p.is_file());
        match path {
            Some(p) => {
                out.insert(img.id.clone(), load_ground_truth(&p, img)?);
            }
            None => warn!("no ground truth for {}", img.id),
        }
    }
    Ok(out)
}

/// Runs detection and writes every artifact into `cfg.output`.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    builder.build()?.install(|| run_inner(cfg))
}

fn run_inner(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let set = load_image_set(&cfg.input)?;
    info!("loaded {} images from {}", set.len(), cfg.input.display());
    let provided = match &cfg.fmatrices {
        Some(p) => read_fmatrices(p).map_err(io_err(p))?,
        None => FMatrixFile::new(),
    };
    let det = detect(&set, &provided, &cfg.pipeline())?;
    let out = &cfg.output;
    std::fs::create_dir_all(out).map_err(io_err(out))?;

    let gts = load_gt_masks(cfg, &det, &set)?;
    let report = if gts.is_empty() {
        None
    } else {
        let items: Vec<_> = det
            .references
            .iter()
            .filter_map(|r| gts.get(&r.id).map(|g| (r.id.as_str(), &r.dynamic, g)))
            .collect();
        Some(evaluate(&items)?)
    };

    let mut images = Vec::new();
    for (i, img) in set.images.iter().enumerate() {
        let supports = det
            .graph
            .supports(i)
            .iter()
            .map(|&s| set.images[s].id.clone())
            .collect();
        let Some(r) = det.references.iter().find(|r| r.index == i) else {
            images.push(ImageMetrics {
                id: img.id.clone(),
                supports,
                skipped: true,
                mask_threshold: None,
                best_threshold: None,
                best_jaccard: None,
                set_jaccard: None,
            });
            continue;
        };
        let eval = report.as_ref().and_then(|rep| rep.image(&r.id));
        let t = match (eval, cfg.threshold_protocol) {
            (Some(e), ThresholdProtocol::PerImage) => e.best_threshold,
            (Some(_), ThresholdProtocol::PerSet) => report
                .as_ref()
                .map(|rep| rep.set_threshold)
                .unwrap_or(cfg.mask_threshold),
            _ => cfg.mask_threshold,
        };
        let p = out.join(format!("dynmap_{}.png", r.id));
        save_dynamic_map(&r.dynamic, &p).map_err(img_err(&p))?;
        let p = out.join(format!("dynmap_{}_heat.png", r.id));
        save_heatmap(&r.dynamic, &p).map_err(img_err(&p))?;
        let p = out.join(format!("mask_{}.png", r.id));
        save_mask(&threshold(&r.dynamic, t), &p).map_err(img_err(&p))?;
        if cfg.debug_patches {
            for pm in &r.pairs {
                let sid = &set.images[pm.support].id;
                let p = out.join(format!("pmap_{}_{}.png", r.id, sid));
                save_matching_map(&pm.map, &p).map_err(img_err(&p))?;
                if let Some(svg) = &pm.svg {
                    let p = out.join(format!("patches_{}_{}.svg", r.id, sid));
                    std::fs::write(&p, svg).map_err(io_err(&p))?;
                }
            }
        }
        images.push(ImageMetrics {
            id: r.id.clone(),
            supports,
            skipped: false,
            mask_threshold: Some(t),
            best_threshold: eval.map(|e| e.best_threshold),
            best_jaccard: eval.map(|e| e.best_jaccard),
            set_jaccard: eval.map(|e| e.set_jaccard),
        });
    }

    let first = &set.images[0];
    let metrics = Metrics {
        set_size: set.len(),
        resolution: [first.width, first.height],
        average_support_size: det.graph.average_support_size(),
        seed: cfg.seed,
        threshold_protocol: cfg.threshold_protocol,
        sigma: det.sigma,
        normalization: det
            .normalization
            .ranges
            .iter()
            .map(|(k, r)| (k.name().to_string(), [r.min as f64, r.max as f64]))
            .collect(),
        images,
        skipped: det.skipped.clone(),
        evaluation: report.clone(),
    };
    let p = out.join("metrics.json");
    write_json(&metrics, &p).map_err(io_err(&p))?;
    let p = out.join("support_graph.json");
    write_json(&GraphRecord::from_graph(&det.graph), &p).map_err(io_err(&p))?;
    if let Some(rep) = &report {
        info!(
            "Jaccard per image {:.3} ± {:.3}, per set {:.3} ± {:.3} at t = {:.2}",
            rep.per_image.mean, rep.per_image.std, rep.per_set.mean, rep.per_set.std, rep.set_threshold
        );
    }
    Ok(RunSummary {
        detection: det,
        report,
        metrics,
    })
}

/// Renders a preset scene and writes it in the layout `detect` reads.
pub fn run_synth(p: Preset, output: &Path, seed: u64) -> Result<(), CliError> {
    let scene = preset(p, seed);
    let rendered = render(&scene)?;
    write_dataset(&rendered, output)?;
    info!("wrote {} views of {} to {}", rendered.images.len(), p, output.display());
    Ok(())
}
