//! Detection of moving regions in small, unordered sets of photos of one
//! scene taken from different viewpoints at different times.
//!
//! Each image is compared with every other image that has usable epipolar
//! geometry to it. Patches bounded by neighbouring epipolar lines are
//! matched against the strip between the corresponding lines in the other
//! view, the resulting per-pair matching probabilities are fused, and the
//! complement gives the probability that a pixel belongs to a moving object.

pub mod aggregate;
pub mod cli;
pub mod descriptors;
pub mod epigeom;
pub mod eval;
pub mod imageset;
pub mod output;
pub mod patches;
pub mod pipeline;
pub mod probmap;
pub mod scalar;
pub mod synth;

pub use aggregate::{fuse, fuse_values, remap, threshold, BinaryMask, DynamicProbabilityMap};
pub use cli::{run, RunConfig};
pub use epigeom::{FundamentalMatrix, PairGeometry, SupportGraph};
pub use eval::{evaluate, jaccard, EvalReport};
pub use imageset::{GroundTruthMask, Image, ImageSet, Label};
pub use pipeline::{detect, Detection, PipelineConfig};
pub use probmap::MatchingProbabilityMap;
pub use scalar::Real;

/// Double precision fundamental matrix, as used by the pipeline.
pub type Fundamental = FundamentalMatrix<f64>;
/// Fused per-pixel probability of motion.
pub type DynamicMap = DynamicProbabilityMap<f64>;
/// Per-pair matching probabilities.
pub type MatchingMap = MatchingProbabilityMap<f64>;
