//! Regions bounded by two epipolar lines, and candidate patches inside them.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::warp::Quad;
use super::PatchParams;
use crate::epigeom::{corresponding_line_via, EpigeomError, Line, PairGeometry};

/// One bounding line of a strip, `point + s·dir`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripLine {
    pub point: Vector2<f64>,
    pub dir: Vector2<f64>,
}

impl StripLine {
    pub fn to_line(&self) -> Line<f64> {
        Line::through(&self.point, &self.dir)
    }
}

/// The region between two lines, parametrized by `t`, the coordinate along
/// `axis` measured from `origin`.
///
/// For a finite epipole both lines pass through it, `origin` is the epipole
/// and `axis` their bisector; `half` restricts the region to `t >= 0`. For an
/// epipole at infinity the lines are parallel to `axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strip {
    pub a: StripLine,
    pub b: StripLine,
    pub origin: Vector2<f64>,
    pub axis: Vector2<f64>,
    pub half: bool,
}

impl Strip {
    #[inline]
    pub fn t_of(&self, p: &Vector2<f64>) -> f64 {
        self.axis.dot(&(p - self.origin))
    }

    /// Point of `line` whose axis coordinate is `t`.
    #[inline]
    pub fn corner(&self, line: &StripLine, t: f64) -> Vector2<f64> {
        let s = (t - self.axis.dot(&(line.point - self.origin))) / self.axis.dot(&line.dir);
        line.point + line.dir * s
    }

    /// Width of the strip across its lines at coordinate `t`.
    pub fn height_at(&self, t: f64) -> f64 {
        (self.corner(&self.b, t) - self.corner(&self.a, t)).norm()
    }

    /// Quadrilateral between `t0` and `t1`, corners ordered
    /// (a,t0) (a,t1) (b,t1) (b,t0).
    pub fn quad(&self, t0: f64, t1: f64) -> Quad {
        Quad {
            corners: [
                self.corner(&self.a, t0),
                self.corner(&self.a, t1),
                self.corner(&self.b, t1),
                self.corner(&self.b, t0),
            ],
        }
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let t = self.t_of(p);
        if self.half && t < 0.0 {
            return false;
        }
        let ca = self.corner(&self.a, t);
        let cb = self.corner(&self.b, t);
        let ab = cb - ca;
        let len2 = ab.norm_squared();
        if len2 < 1e-18 {
            return (p - ca).norm_squared() < 1e-12;
        }
        let lam = (p - ca).dot(&ab) / len2;
        (-1e-9..=1.0 + 1e-9).contains(&lam)
    }

    /// Range of `t` over the part of the strip inside the image rectangle
    /// `[-0.5, w-0.5] x [-0.5, h-0.5]`.
    pub fn t_range_in_image(&self, w: u32, h: u32) -> Option<(f64, f64)> {
        let (x0, y0, x1, y1) = (-0.5, -0.5, w as f64 - 0.5, h as f64 - 0.5);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut push = |t: f64| {
            lo = lo.min(t);
            hi = hi.max(t);
        };
        for line in [&self.a, &self.b] {
            if let Some((s0, s1)) = clip_line(line, x0, y0, x1, y1, self.half) {
                push(self.t_of(&(line.point + line.dir * s0)));
                push(self.t_of(&(line.point + line.dir * s1)));
            }
        }
        for c in [
            Vector2::new(x0, y0),
            Vector2::new(x1, y0),
            Vector2::new(x1, y1),
            Vector2::new(x0, y1),
        ] {
            if self.contains(&c) {
                push(self.t_of(&c));
            }
        }
        if lo.is_finite() && hi >= lo {
            Some((lo, hi))
        } else {
            None
        }
    }

    /// Mean height over `[t0, t1]`, sampled at 9 points.
    pub fn mean_height(&self, t0: f64, t1: f64) -> f64 {
        (0..9)
            .map(|i| self.height_at(t0 + (t1 - t0) * i as f64 / 8.0))
            .sum::<f64>()
            / 9.0
    }
}

/// Liang-Barsky clip of `point + s·dir` to a rectangle, optionally with
/// `s >= 0`.
fn clip_line(line: &StripLine, x0: f64, y0: f64, x1: f64, y1: f64, ray: bool) -> Option<(f64, f64)> {
    let mut s0 = if ray { 0.0 } else { f64::NEG_INFINITY };
    let mut s1 = f64::INFINITY;
    for (p, d, lo, hi) in [(line.point.x, line.dir.x, x0, x1), (line.point.y, line.dir.y, y0, y1)] {
        if d.abs() < 1e-15 {
            if p < lo || p > hi {
                return None;
            }
        } else {
            let a = (lo - p) / d;
            let b = (hi - p) / d;
            s0 = s0.max(a.min(b));
            s1 = s1.min(a.max(b));
        }
    }
    if s0 <= s1 && s0.is_finite() && s1.is_finite() {
        Some((s0, s1))
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthClass {
    Narrow,
    Nominal,
    Wide,
}

impl WidthClass {
    pub const ALL: [WidthClass; 3] = [WidthClass::Narrow, WidthClass::Nominal, WidthClass::Wide];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePatch {
    pub quad: Quad,
    pub t0: f64,
    pub t1: f64,
    pub width_class: WidthClass,
}

/// Candidate support patches for one reference strip. Empty when the
/// corresponding strip misses the support image.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub strip: Option<Strip>,
    /// Support strip height over reference strip height.
    pub scale: f64,
    pub candidates: Vec<CandidatePatch>,
}

impl CandidateSet {
    pub fn empty() -> Self {
        Self {
            strip: None,
            scale: 1.0,
            candidates: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }
}

/// Maps a reference strip to the strip between the corresponding support
/// lines. `sample_t` picks the reference points that are pushed through `F`.
pub fn corresponding_strip(
    reference: &Strip,
    sample_t: f64,
    pg: &PairGeometry,
    support_w: u32,
    support_h: u32,
) -> Result<Strip, EpigeomError> {
    let la = corresponding_line_via(&pg.f, &reference.a.to_line(), &reference.corner(&reference.a, sample_t))?;
    let lb = corresponding_line_via(&pg.f, &reference.b.to_line(), &reference.corner(&reference.b, sample_t))?;
    let da = la.direction();
    let mut db = lb.direction();
    if da.dot(&db) < 0.0 {
        db = -db;
    }
    let center = Vector2::new((support_w as f64 - 1.0) / 2.0, (support_h as f64 - 1.0) / 2.0);
    let diag = ((support_w * support_w + support_h * support_h) as f64).sqrt();
    match pg.e_sup.to_pixel() {
        Some(apex) if (apex - center).norm() <= super::FAR_EPIPOLE_FACTOR * diag => {
            let axis = (da + db).normalize();
            Ok(Strip {
                a: StripLine { point: apex, dir: da },
                b: StripLine { point: apex, dir: db },
                origin: apex,
                axis,
                half: false,
            })
        }
        _ => Ok(Strip {
            a: StripLine {
                point: la.project(&center),
                dir: da,
            },
            b: StripLine {
                point: lb.project(&center),
                dir: db,
            },
            origin: center,
            axis: da,
            half: false,
        }),
    }
}

/// Slides three widths of candidate patches along the support strip
/// corresponding to `reference`, stride one third of the width.
///
/// `ref_range` is the in-image `t` range of the reference strip; it sets the
/// sample points and the height ratio that scales the candidate widths.
pub fn candidate_strip(
    reference: &Strip,
    ref_range: (f64, f64),
    pg: &PairGeometry,
    support_w: u32,
    support_h: u32,
    params: &PatchParams,
) -> CandidateSet {
    let mid = 0.5 * (ref_range.0 + ref_range.1);
    let Ok(strip) = corresponding_strip(reference, mid, pg, support_w, support_h) else {
        return CandidateSet::empty();
    };
    let Some((t_lo, t_hi)) = strip.t_range_in_image(support_w, support_h) else {
        return CandidateSet::empty();
    };
    let h_ref = reference.mean_height(ref_range.0, ref_range.1);
    let h_sup = strip.mean_height(t_lo, t_hi);
    let scale = if h_ref > 1e-9 {
        (h_sup / h_ref).clamp(0.25, 4.0)
    } else {
        1.0
    };
    let len = t_hi - t_lo;
    let mut candidates = Vec::new();
    for (class, factor) in WidthClass::ALL.iter().zip(params.width_factors) {
        let w = params.nominal_width() * factor * scale;
        let stride = w / 3.0;
        let count = ((len / stride) - 1e-9).ceil().max(1.0) as usize;
        for k in 0..count {
            let t0 = t_lo + k as f64 * stride;
            let t1 = t0 + w;
            let quad = strip.quad(t0, t1);
            if quad.area() < 1.0 {
                continue;
            }
            candidates.push(CandidatePatch {
                quad,
                t0,
                t1,
                width_class: *class,
            });
        }
    }
    CandidateSet {
        strip: Some(strip),
        scale,
        candidates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn horizontal(y0: f64, y1: f64) -> Strip {
        Strip {
            a: StripLine {
                point: Vector2::new(0.0, y0),
                dir: Vector2::new(1.0, 0.0),
            },
            b: StripLine {
                point: Vector2::new(0.0, y1),
                dir: Vector2::new(1.0, 0.0),
            },
            origin: Vector2::zeros(),
            axis: Vector2::new(1.0, 0.0),
            half: false,
        }
    }

    #[test]
    fn parallel_strip_range_and_height() {
        let s = horizontal(10.0, 26.0);
        let (lo, hi) = s.t_range_in_image(100, 80).unwrap();
        assert!((lo + 0.5).abs() < 1e-12 && (hi - 99.5).abs() < 1e-12);
        assert!((s.height_at(40.0) - 16.0).abs() < 1e-12);
        assert!(s.contains(&Vector2::new(50.0, 20.0)));
        assert!(!s.contains(&Vector2::new(50.0, 30.0)));
        assert!(horizontal(200.0, 216.0).t_range_in_image(100, 80).is_none());
    }

    #[test]
    fn wedge_range_starts_at_the_apex_inside_the_image() {
        let apex = Vector2::new(50.0, 40.0);
        let (a, b) = (0.1f64, 0.3f64);
        let s = Strip {
            a: StripLine {
                point: apex,
                dir: Vector2::new(a.cos(), a.sin()),
            },
            b: StripLine {
                point: apex,
                dir: Vector2::new(b.cos(), b.sin()),
            },
            origin: apex,
            axis: Vector2::new(0.2f64.cos(), 0.2f64.sin()),
            half: true,
        };
        let (lo, hi) = s.t_range_in_image(100, 80).unwrap();
        assert!(lo.abs() < 1e-9);
        assert!(hi > 40.0 && hi < 60.0, "{hi}");
        assert!(!s.contains(&Vector2::new(20.0, 35.0)));
    }
}
