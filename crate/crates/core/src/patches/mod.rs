//! Epipolar pencils, reference patch decomposition and support candidates.
//!
//! A reference image is cut by a pencil of epipolar lines through the
//! epipole. Three families of rows, offset by a third of the line spacing,
//! are each split into patches along the lines with a stride of a third of
//! the patch length, so interior pixels are covered by nine patches.

mod strip;
mod warp;

pub use strip::{candidate_strip, corresponding_strip, CandidatePatch, CandidateSet, Strip, StripLine, WidthClass};
pub use warp::{rgb_to_hsv, warp_patch, warp_quad, CanonicalPatch, Quad, RgbPlanes};

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epigeom::{Epipole, PairGeometry};
use crate::imageset::Image;

/// Epipoles farther than this many image diagonals from the image center
/// are treated as points at infinity.
pub const FAR_EPIPOLE_FACTOR: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatchError {
    #[error("degenerate patch (area {area:.3} px²)")]
    Degenerate { area: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchParams {
    /// Spacing of base epipolar lines at the image center distance, pixels.
    pub target_height: f64,
    /// Patch length along the lines as a multiple of `target_height`.
    pub width_ratio: f64,
    /// Candidate width factors for the narrow, nominal and wide classes.
    pub width_factors: [f64; 3],
    /// Exclusion disk radius around an in-view epipole, in target heights.
    pub exclusion_factor: f64,
    pub canonical_size: usize,
}

impl Default for PatchParams {
    fn default() -> Self {
        Self {
            target_height: 16.0,
            width_ratio: 1.0,
            width_factors: [0.5, 1.0, 2.0],
            exclusion_factor: 2.0,
            canonical_size: 16,
        }
    }
}

impl PatchParams {
    pub fn nominal_width(&self) -> f64 {
        self.target_height * self.width_ratio
    }

    pub fn stride(&self) -> f64 {
        self.nominal_width() / 3.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ShiftClass {
    Base,
    Third,
    TwoThirds,
}

impl ShiftClass {
    pub const ALL: [ShiftClass; 3] = [ShiftClass::Base, ShiftClass::Third, ShiftClass::TwoThirds];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn fraction(self) -> f64 {
        self.index() as f64 / 3.0
    }
}

/// How pencil lines are parametrized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PencilMode {
    /// Lines through a finite epipole, parameter = angle in radians.
    Radial { apex: Vector2<f64> },
    /// Parallel lines (epipole at infinity), parameter = offset along
    /// `normal`.
    Parallel {
        direction: Vector2<f64>,
        normal: Vector2<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PencilLine {
    pub param: f64,
    pub shift: ShiftClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpipolarPencil {
    pub epipole: Epipole<f64>,
    pub mode: PencilMode,
    /// Parameter of the first base line.
    pub start: f64,
    /// Parameter gap between adjacent base lines.
    pub step: f64,
    pub gaps: usize,
    pub full_circle: bool,
    /// Sorted lines of all three families; angles are wrapped to [0, 2π).
    pub lines: Vec<PencilLine>,
    /// Radius of the uncovered disk around a finite epipole.
    pub exclusion_radius: f64,
}

impl EpipolarPencil {
    /// Parameter of a pixel, relative to `start`.
    #[inline]
    fn relative_param(&self, p: &Vector2<f64>) -> f64 {
        match self.mode {
            PencilMode::Radial { apex } => {
                let d = p - apex;
                let phi = d.y.atan2(d.x);
                if self.full_circle {
                    (phi - self.start).rem_euclid(TAU)
                } else {
                    wrap_pi(phi - self.start)
                }
            }
            PencilMode::Parallel { normal, .. } => normal.dot(p) - self.start,
        }
    }

    /// Strip between parameters `lo` and `hi`.
    pub fn strip(&self, lo: f64, hi: f64) -> Strip {
        match self.mode {
            PencilMode::Radial { apex } => {
                let dir = |phi: f64| Vector2::new(phi.cos(), phi.sin());
                Strip {
                    a: StripLine {
                        point: apex,
                        dir: dir(lo),
                    },
                    b: StripLine {
                        point: apex,
                        dir: dir(hi),
                    },
                    origin: apex,
                    axis: dir(0.5 * (lo + hi)),
                    half: true,
                }
            }
            PencilMode::Parallel { direction, normal } => Strip {
                a: StripLine {
                    point: normal * lo,
                    dir: direction,
                },
                b: StripLine {
                    point: normal * hi,
                    dir: direction,
                },
                origin: Vector2::zeros(),
                axis: direction,
                half: false,
            },
        }
    }

    fn is_excluded(&self, p: &Vector2<f64>) -> bool {
        match self.mode {
            PencilMode::Radial { apex } => (p - apex).norm() < self.exclusion_radius,
            PencilMode::Parallel { .. } => false,
        }
    }
}

fn wrap_pi(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

fn image_center(w: u32, h: u32) -> Vector2<f64> {
    Vector2::new((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0)
}

fn image_corners(w: u32, h: u32) -> [Vector2<f64>; 4] {
    let (x1, y1) = (w as f64 - 0.5, h as f64 - 0.5);
    [
        Vector2::new(-0.5, -0.5),
        Vector2::new(x1, -0.5),
        Vector2::new(x1, y1),
        Vector2::new(-0.5, y1),
    ]
}

/// Pencil of epipolar lines covering an image of the given size.
pub fn build_pencil_for(
    width: u32,
    height: u32,
    e: &Epipole<f64>,
    target_height: f64,
    exclusion_factor: f64,
) -> EpipolarPencil {
    let center = image_center(width, height);
    let corners = image_corners(width, height);
    let diag = ((width * width + height * height) as f64).sqrt();
    let apex = e
        .to_pixel()
        .filter(|a| (a - center).norm() <= FAR_EPIPOLE_FACTOR * diag);

    let (mode, start, step, gaps, full_circle, exclusion_radius) = match apex {
        None => {
            let direction = e.direction();
            let normal = Vector2::new(-direction.y, direction.x);
            let offs = corners.map(|c| normal.dot(&c));
            let lo = offs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = offs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let gaps = ((hi - lo) / target_height).round().max(1.0) as usize;
            (
                PencilMode::Parallel { direction, normal },
                lo,
                (hi - lo) / gaps as f64,
                gaps,
                false,
                0.0,
            )
        }
        Some(apex) => {
            let mean_corner = corners.iter().map(|c| (c - apex).norm()).sum::<f64>() / 4.0;
            let radius = (center - apex).norm().max(0.5 * mean_corner);
            let d_phi = target_height / radius;
            let inside =
                corners[0].x <= apex.x && apex.x <= corners[2].x && corners[0].y <= apex.y && apex.y <= corners[2].y;
            let exclusion = exclusion_factor * target_height;
            if inside {
                let gaps = ((TAU / d_phi).round() as usize).max(8);
                (
                    PencilMode::Radial { apex },
                    0.0,
                    TAU / gaps as f64,
                    gaps,
                    true,
                    exclusion,
                )
            } else {
                let toward = center - apex;
                let phi_c = toward.y.atan2(toward.x);
                let rel = corners.map(|c| {
                    let d = c - apex;
                    wrap_pi(d.y.atan2(d.x) - phi_c)
                });
                let lo = rel.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = rel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let gaps = ((hi - lo) / d_phi).round().max(1.0) as usize;
                (
                    PencilMode::Radial { apex },
                    phi_c + lo,
                    (hi - lo) / gaps as f64,
                    gaps,
                    false,
                    exclusion,
                )
            }
        }
    };

    let mut lines = Vec::with_capacity(3 * gaps);
    for i in 0..gaps {
        for shift in ShiftClass::ALL {
            let mut param = start + (i as f64 + shift.fraction()) * step;
            if matches!(mode, PencilMode::Radial { .. }) {
                param = param.rem_euclid(TAU);
            }
            lines.push(PencilLine { param, shift });
        }
    }
    lines.sort_by(|a, b| a.param.total_cmp(&b.param).then(a.shift.cmp(&b.shift)));

    EpipolarPencil {
        epipole: *e,
        mode,
        start,
        step,
        gaps,
        full_circle,
        lines,
        exclusion_radius,
    }
}

pub fn build_pencil(image: &Image, e: &Epipole<f64>, params: &PatchParams) -> EpipolarPencil {
    build_pencil_for(
        image.width,
        image.height,
        e,
        params.target_height,
        params.exclusion_factor,
    )
}

/// One row of patches: the strip between two adjacent lines of a family.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRow {
    pub shift: ShiftClass,
    pub index: usize,
    pub strip: Strip,
    /// In-image `t` range of the strip.
    pub t_range: (f64, f64),
    pub t_start: f64,
    pub count: usize,
    pub first_patch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpipolarPatch {
    pub id: usize,
    pub row: usize,
    pub owner: String,
    pub shift: ShiftClass,
    /// Bounding line parameters (angles, or offsets for parallel pencils).
    pub bounds: (f64, f64),
    pub t0: f64,
    pub t1: f64,
    pub quad: Quad,
    pub center: Vector2<f64>,
}

/// Patches of a reference image for one pencil, with the per-pixel list of
/// covering patches in compressed row form.
#[derive(Debug, Clone)]
pub struct PatchSet {
    pub width: u32,
    pub height: u32,
    pub pencil: EpipolarPencil,
    pub params: PatchParams,
    pub rows: Vec<PatchRow>,
    pub patches: Vec<EpipolarPatch>,
    coverage_offsets: Vec<u32>,
    coverage_ids: Vec<u32>,
    /// Largest distance between a pixel and the center of a patch covering it.
    pub max_center_distance: f64,
}

impl PatchSet {
    /// Ids of the patches covering pixel (x, y).
    pub fn patches_covering(&self, x: u32, y: u32) -> &[u32] {
        let i = (y * self.width + x) as usize;
        &self.coverage_ids[self.coverage_offsets[i] as usize..self.coverage_offsets[i + 1] as usize]
    }

    pub fn coverage_count(&self, x: u32, y: u32) -> usize {
        self.patches_covering(x, y).len()
    }

    pub fn row_patches(&self, row: usize) -> &[EpipolarPatch] {
        let r = &self.rows[row];
        &self.patches[r.first_patch..r.first_patch + r.count]
    }

    pub fn is_excluded(&self, x: u32, y: u32) -> bool {
        self.pencil.is_excluded(&Vector2::new(x as f64, y as f64))
    }

    /// Patch outlines as an SVG document sized to the image.
    pub fn to_svg(&self, shift: Option<ShiftClass>) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="-0.5 -0.5 {} {}">"#,
            self.width, self.height, self.width, self.height
        );
        let colors = ["#ff3030", "#30c030", "#3060ff"];
        for p in &self.patches {
            if shift.is_some_and(|s| s != p.shift) {
                continue;
            }
            let pts: Vec<String> = p
                .quad
                .corners
                .iter()
                .map(|c| format!("{:.2},{:.2}", c.x, c.y))
                .collect();
            let _ = writeln!(
                s,
                r#"<polygon points="{}" fill="none" stroke="{}" stroke-width="0.3"/>"#,
                pts.join(" "),
                colors[p.shift.index()]
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Splits every row of the three pencil families into overlapping patches
/// and builds the coverage index.
pub fn decompose_reference(image: &Image, pencil: &EpipolarPencil, params: &PatchParams) -> PatchSet {
    decompose_reference_for(&image.id, image.width, image.height, pencil, params)
}

pub fn decompose_reference_for(
    owner: &str,
    width: u32,
    height: u32,
    pencil: &EpipolarPencil,
    params: &PatchParams,
) -> PatchSet {
    let w_len = params.nominal_width();
    let stride = params.stride();
    let mut rows = Vec::new();
    let mut patches = Vec::new();
    // (family, gap index) -> row
    let mut row_lookup = vec![u32::MAX; 3 * pencil.gaps];

    for shift in ShiftClass::ALL {
        for i in 0..pencil.gaps {
            let lo = pencil.start + (i as f64 + shift.fraction()) * pencil.step;
            let hi = lo + pencil.step;
            let strip = pencil.strip(lo, hi);
            let Some((t_min, t_max)) = strip.t_range_in_image(width, height) else {
                continue;
            };
            let t_start = match pencil.mode {
                PencilMode::Radial { .. } => t_min.max(pencil.exclusion_radius - 2.0 * stride),
                PencilMode::Parallel { .. } => t_min,
            };
            if t_start >= t_max {
                continue;
            }
            let len = t_max - t_start;
            let count = if len <= w_len {
                1
            } else {
                ((len - w_len) / stride - 1e-9).ceil() as usize + 1
            };
            let row_id = rows.len();
            row_lookup[shift.index() * pencil.gaps + i] = row_id as u32;
            let first = patches.len();
            for j in 0..count {
                let t0 = t_start + j as f64 * stride;
                let t1 = t0 + w_len;
                let quad = strip.quad(t0, t1);
                patches.push(EpipolarPatch {
                    id: patches.len(),
                    row: row_id,
                    owner: owner.to_string(),
                    shift,
                    bounds: (lo, hi),
                    t0,
                    t1,
                    center: quad.center(),
                    quad,
                });
            }
            rows.push(PatchRow {
                shift,
                index: i,
                strip,
                t_range: (t_min, t_max),
                t_start,
                count,
                first_patch: first,
            });
        }
    }

    // Per-pixel coverage, computed analytically from each pixel's pencil
    // parameter and its axis coordinate within the covering row.
    let per_line: Vec<(Vec<u32>, Vec<u32>, f64)> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut counts = Vec::with_capacity(width as usize);
            let mut ids = Vec::new();
            let mut max_d = 0.0f64;
            for x in 0..width {
                let p = Vector2::new(x as f64, y as f64);
                let before = ids.len();
                if !pencil.is_excluded(&p) {
                    let rel = pencil.relative_param(&p);
                    for shift in ShiftClass::ALL {
                        let f = (rel - shift.fraction() * pencil.step) / pencil.step;
                        let mut gi = f.floor() as i64;
                        if pencil.full_circle {
                            gi = gi.rem_euclid(pencil.gaps as i64);
                        } else if gi < 0 || gi >= pencil.gaps as i64 {
                            continue;
                        }
                        let r = row_lookup[shift.index() * pencil.gaps + gi as usize];
                        if r == u32::MAX {
                            continue;
                        }
                        let row = &rows[r as usize];
                        let t = row.strip.t_of(&p);
                        let rel_t = t - row.t_start;
                        let j_hi = (rel_t / stride).floor() as i64;
                        let j_lo = ((rel_t - w_len) / stride).floor() as i64 + 1;
                        for j in j_lo.max(0)..=j_hi.min(row.count as i64 - 1) {
                            let pid = row.first_patch + j as usize;
                            let patch = &patches[pid];
                            if t >= patch.t0 && t < patch.t1 {
                                ids.push(pid as u32);
                                max_d = max_d.max((p - patch.center).norm());
                            }
                        }
                    }
                }
                counts.push((ids.len() - before) as u32);
            }
            (counts, ids, max_d)
        })
        .collect();

    let mut coverage_offsets = Vec::with_capacity((width * height) as usize + 1);
    let mut coverage_ids = Vec::new();
    let mut max_center_distance = 0.0f64;
    coverage_offsets.push(0u32);
    for (counts, ids, max_d) in per_line {
        let mut acc = *coverage_offsets.last().unwrap();
        for c in counts {
            acc += c;
            coverage_offsets.push(acc);
        }
        coverage_ids.extend(ids);
        max_center_distance = max_center_distance.max(max_d);
    }

    PatchSet {
        width,
        height,
        pencil: pencil.clone(),
        params: *params,
        rows,
        patches,
        coverage_offsets,
        coverage_ids,
        max_center_distance,
    }
}

/// Candidate support patches for reference patch `r` of `set`.
pub fn candidate_patches(r: &EpipolarPatch, set: &PatchSet, pg: &PairGeometry, support: &Image) -> CandidateSet {
    let row = &set.rows[r.row];
    candidate_strip(&row.strip, row.t_range, pg, support.width, support.height, &set.params)
}
