//! Two-view epipolar geometry.
//!
//! Conventions: pixel centers sit at integer coordinates with the origin at
//! the top-left pixel. A fundamental matrix `F` for the ordered pair
//! (reference, support) maps a reference point `x` to the support line
//! `F·x`, so that `x'ᵀ F x = 0` for every static correspondence.

mod features;
mod graph;
mod ransac;

pub use features::{detect_and_match, harris_corners, Corner, MatchingParams};
pub use graph::{
    build_support_graph, build_support_graph_with, read_fmatrices, write_fmatrices, FMatrixFile, PairFailure,
    SupportGraph,
};
pub use ransac::{eight_point, estimate_fundamental_ransac, RansacParams};

use nalgebra::{Matrix3, RealField, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpigeomError {
    #[error("fundamental matrix is zero or not finite")]
    DegenerateMatrix,
    #[error("point maps to a degenerate epipolar line (point is the epipole)")]
    DegenerateLine,
    #[error("line does not pass through the epipole (residual {0:e})")]
    InvalidPencilMember(f64),
    #[error("need at least 8 matches, got {0}")]
    TooFewMatches(usize),
    #[error("no consensus: {inliers} inliers, ratio {ratio:.3}")]
    NoConsensus { inliers: usize, ratio: f64 },
}

/// Rank-2 fundamental matrix with unit Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix<T: RealField + Copy> {
    m: Matrix3<T>,
}

impl<T: RealField + Copy> FundamentalMatrix<T> {
    /// Enforces rank 2 by zeroing the smallest singular value, then scales to
    /// unit Frobenius norm. The sign is fixed so the largest-magnitude entry is
    /// positive, which makes the representation unique.
    pub fn new(m: Matrix3<T>) -> Result<Self, EpigeomError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(EpigeomError::DegenerateMatrix);
        }
        let norm = m.norm();
        if norm <= T::default_epsilon() {
            return Err(EpigeomError::DegenerateMatrix);
        }
        let m = m / norm;
        let svd = m.svd(true, true);
        let (u, vt) = match (svd.u, svd.v_t) {
            (Some(u), Some(vt)) => (u, vt),
            _ => return Err(EpigeomError::DegenerateMatrix),
        };
        let mut s = svd.singular_values;
        let imin = argmin(s.as_slice());
        s[imin] = T::zero();
        let mut r = u * Matrix3::from_diagonal(&s) * vt;
        let n = r.norm();
        if n <= T::default_epsilon() {
            return Err(EpigeomError::DegenerateMatrix);
        }
        r /= n;
        let mut big = r[0];
        for v in r.iter() {
            if v.abs() > big.abs() {
                big = *v;
            }
        }
        if big < T::zero() {
            r = -r;
        }
        Ok(Self { m: r })
    }

    /// Builds from 9 row-major entries, normalized as in [`Self::new`].
    pub fn from_row_slice(values: &[T]) -> Result<Self, EpigeomError> {
        assert_eq!(values.len(), 9, "fundamental matrix needs 9 entries");
        Self::new(Matrix3::from_row_slice(values))
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.m
    }

    pub fn transpose(&self) -> Self {
        Self { m: self.m.transpose() }
    }

    pub fn to_row_vec(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(9);
        for r in 0..3 {
            for c in 0..3 {
                out.push(self.m[(r, c)]);
            }
        }
        out
    }

    pub fn determinant(&self) -> T {
        self.m.determinant()
    }

    pub fn frobenius_norm(&self) -> T {
        self.m.norm()
    }

    /// First-order geometric residual of (x, x') in pixels.
    pub fn sampson_error(&self, x: &Vector2<T>, xp: &Vector2<T>) -> T {
        let xh = Vector3::new(x.x, x.y, T::one());
        let xph = Vector3::new(xp.x, xp.y, T::one());
        let fx = self.m * xh;
        let ftxp = self.m.transpose() * xph;
        let num = xph.dot(&fx);
        let den = fx.x * fx.x + fx.y * fx.y + ftxp.x * ftxp.x + ftxp.y * ftxp.y;
        if den <= T::zero() {
            return T::max_value().unwrap_or_else(T::one);
        }
        num.abs() / den.sqrt()
    }
}

fn argmin<T: RealField + Copy>(s: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in s.iter().enumerate() {
        if *v < s[best] {
            best = i;
        }
    }
    best
}

/// Homogeneous 2-D point, stored as a unit 3-vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epipole<T: RealField + Copy> {
    pub h: Vector3<T>,
}

impl<T: RealField + Copy> Epipole<T> {
    /// Normalizes to unit length with a non-negative last coordinate (or, at
    /// infinity, a positive first non-zero coordinate).
    pub fn from_homogeneous(h: Vector3<T>) -> Self {
        let mut h = h / h.norm();
        let eps = T::default_epsilon();
        let flip = if h.z.abs() > eps {
            h.z < T::zero()
        } else if h.x.abs() > eps {
            h.x < T::zero()
        } else {
            h.y < T::zero()
        };
        if flip {
            h = -h;
        }
        Self { h }
    }

    /// Pixel position, or `None` when the epipole lies at infinity.
    pub fn to_pixel(&self) -> Option<Vector2<T>> {
        if self.h.z.abs() <= T::default_epsilon() {
            None
        } else {
            Some(Vector2::new(self.h.x / self.h.z, self.h.y / self.h.z))
        }
    }

    /// In-plane direction of the epipole (meaningful for points at infinity).
    pub fn direction(&self) -> Vector2<T> {
        Vector2::new(self.h.x, self.h.y).normalize()
    }
}

/// Homogeneous line `a x + b y + c = 0` with `a² + b² = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line<T: RealField + Copy> {
    pub a: T,
    pub b: T,
    pub c: T,
}

impl<T: RealField + Copy> Line<T> {
    pub fn from_homogeneous(h: Vector3<T>) -> Result<Self, EpigeomError> {
        let n = (h.x * h.x + h.y * h.y).sqrt();
        let scale = h.norm();
        if !n.is_finite() || n <= scale * T::from_f64(1e-12).unwrap() || n <= T::zero() {
            return Err(EpigeomError::DegenerateLine);
        }
        Ok(Self {
            a: h.x / n,
            b: h.y / n,
            c: h.z / n,
        })
    }

    pub fn through(p: &Vector2<T>, dir: &Vector2<T>) -> Self {
        let n = Vector2::new(-dir.y, dir.x).normalize();
        Self {
            a: n.x,
            b: n.y,
            c: -(n.x * p.x + n.y * p.y),
        }
    }

    pub fn homogeneous(&self) -> Vector3<T> {
        Vector3::new(self.a, self.b, self.c)
    }

    /// Signed distance of a pixel to the line.
    pub fn signed_distance(&self, p: &Vector2<T>) -> T {
        self.a * p.x + self.b * p.y + self.c
    }

    pub fn normal(&self) -> Vector2<T> {
        Vector2::new(self.a, self.b)
    }

    pub fn direction(&self) -> Vector2<T> {
        Vector2::new(-self.b, self.a)
    }

    /// Foot of the perpendicular from `p`.
    pub fn project(&self, p: &Vector2<T>) -> Vector2<T> {
        p - self.normal() * self.signed_distance(p)
    }

    /// True when both represent the same line, up to sign.
    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        let d1 = (self.homogeneous() - other.homogeneous()).norm();
        let d2 = (self.homogeneous() + other.homogeneous()).norm();
        d1.min(d2) <= tol
    }
}

/// Support-image line `F·x` for a reference point `x`.
pub fn epipolar_line<T: RealField + Copy>(f: &FundamentalMatrix<T>, x: &Vector2<T>) -> Result<Line<T>, EpigeomError> {
    let h = f.m * Vector3::new(x.x, x.y, T::one());
    let n = (h.x * h.x + h.y * h.y).sqrt();
    // |F x| is bounded by |x|·‖F‖ = |x|, so compare against the point scale.
    let scale = (x.x * x.x + x.y * x.y + T::one()).sqrt();
    if n <= scale * T::from_f64(1e-12).unwrap() {
        return Err(EpigeomError::DegenerateLine);
    }
    Line::from_homogeneous(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Reference,
    Support,
}

/// Null vector of `F` (reference side) or of `Fᵀ` (support side).
pub fn epipole_of<T: RealField + Copy>(f: &FundamentalMatrix<T>, side: Side) -> Epipole<T> {
    let m = match side {
        Side::Reference => f.m,
        Side::Support => f.m.transpose(),
    };
    // Pixel-unit matrices have tiny entries in the first two columns; scaling
    // them up first keeps the null vector well conditioned.
    let (c0, c1, c2) = (m.column(0).norm(), m.column(1).norm(), m.column(2).norm());
    let lo = T::from_f64(1e-6).unwrap();
    let hi = T::from_f64(1e6).unwrap();
    let two = T::from_f64(2.0).unwrap();
    let s = if c0 + c1 > T::zero() && c2 > T::zero() {
        (c2 * c2 * two / (c0 * c0 + c1 * c1)).sqrt().max(lo).min(hi)
    } else {
        T::one()
    };
    let scale = Matrix3::from_diagonal(&Vector3::new(s, s, T::one()));
    let svd = (m * scale).svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let i = argmin(svd.singular_values.as_slice());
    let v = scale * vt.row(i).transpose();
    Epipole::from_homogeneous(v)
}

/// Maps a reference line through `e_ref` to the corresponding support line.
///
/// The sample point is the foot of the perpendicular from the origin; when
/// that lands on the epipole it is moved along the line.
pub fn corresponding_line<T: RealField + Copy>(
    f: &FundamentalMatrix<T>,
    e_ref: &Epipole<T>,
    line_ref: &Line<T>,
) -> Result<Line<T>, EpigeomError> {
    check_pencil_member(e_ref, line_ref)?;
    let mut x = line_ref.project(&Vector2::zeros());
    if let Some(e) = e_ref.to_pixel() {
        if (x - e).norm() < T::one() {
            x += line_ref.direction() * T::from_f64(100.0).unwrap();
        }
    }
    corresponding_line_via(f, line_ref, &x)
}

/// Same as [`corresponding_line`] but with an explicit sample point on the
/// line. The pencil membership is the caller's responsibility.
pub fn corresponding_line_via<T: RealField + Copy>(
    f: &FundamentalMatrix<T>,
    line_ref: &Line<T>,
    x: &Vector2<T>,
) -> Result<Line<T>, EpigeomError> {
    let on_line = line_ref.project(x);
    epipolar_line(f, &on_line)
}

pub fn check_pencil_member<T: RealField + Copy>(e: &Epipole<T>, line: &Line<T>) -> Result<(), EpigeomError> {
    let r = line.homogeneous().dot(&e.h).abs();
    if r > T::from_f64(1e-6).unwrap() {
        let r64 = nalgebra::try_convert::<T, f64>(r).unwrap_or(f64::NAN);
        return Err(EpigeomError::InvalidPencilMember(r64));
    }
    Ok(())
}

/// A putative point match between two images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub x_ref: [f64; 2],
    pub x_sup: [f64; 2],
    pub score: f64,
}

impl Correspondence {
    pub fn new(x_ref: [f64; 2], x_sup: [f64; 2], score: f64) -> Self {
        Self { x_ref, x_sup, score }
    }

    pub fn reference(&self) -> Vector2<f64> {
        Vector2::new(self.x_ref[0], self.x_ref[1])
    }

    pub fn support(&self) -> Vector2<f64> {
        Vector2::new(self.x_sup[0], self.x_sup[1])
    }

    pub fn swapped(&self) -> Self {
        Self {
            x_ref: self.x_sup,
            x_sup: self.x_ref,
            score: self.score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometrySource {
    Estimated,
    Provided,
}

/// Epipolar geometry of an ordered (reference, support) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGeometry {
    pub f: FundamentalMatrix<f64>,
    pub e_ref: Epipole<f64>,
    pub e_sup: Epipole<f64>,
    pub inliers: Vec<Correspondence>,
    pub inlier_ratio: f64,
    pub mean_sampson_error: f64,
    pub source: GeometrySource,
}

impl PairGeometry {
    /// Geometry from a known matrix, with no inlier statistics.
    pub fn from_fundamental(f: FundamentalMatrix<f64>) -> Self {
        Self {
            e_ref: epipole_of(&f, Side::Reference),
            e_sup: epipole_of(&f, Side::Support),
            f,
            inliers: Vec::new(),
            inlier_ratio: 1.0,
            mean_sampson_error: 0.0,
            source: GeometrySource::Provided,
        }
    }

    /// The same geometry seen from the support image.
    pub fn reversed(&self) -> Self {
        Self {
            f: self.f.transpose(),
            e_ref: self.e_sup,
            e_sup: self.e_ref,
            inliers: self.inliers.iter().map(Correspondence::swapped).collect(),
            inlier_ratio: self.inlier_ratio,
            mean_sampson_error: self.mean_sampson_error,
            source: self.source,
        }
    }

    pub fn epipolar_line(&self, x: &Vector2<f64>) -> Result<Line<f64>, EpigeomError> {
        epipolar_line(&self.f, x)
    }

    pub fn corresponding_line(&self, line_ref: &Line<f64>) -> Result<Line<f64>, EpigeomError> {
        corresponding_line(&self.f, &self.e_ref, line_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rectified() -> FundamentalMatrix<f64> {
        FundamentalMatrix::from_row_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0]).unwrap()
    }

    fn general() -> FundamentalMatrix<f64> {
        // [t]x R for a small rotation and a generic translation, pre-scaled by
        // an intrinsic matrix.
        let k = Matrix3::new(500.0, 0.0, 320.0, 0.0, 500.0, 240.0, 0.0, 0.0, 1.0);
        let kinv = k.try_inverse().unwrap();
        let r = nalgebra::Rotation3::from_euler_angles(0.02, -0.15, 0.01).into_inner();
        let t = Vector3::new(0.9, 0.2, 0.1);
        let e = t.cross_matrix() * r;
        FundamentalMatrix::new(kinv.transpose() * e * kinv).unwrap()
    }

    #[test]
    fn invariants_after_construction() {
        let f = FundamentalMatrix::new(Matrix3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0)).unwrap();
        assert_abs_diff_eq!(f.frobenius_norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.determinant(), 0.0, epsilon = 1e-12);
        assert!(FundamentalMatrix::new(Matrix3::<f64>::zeros()).is_err());
    }

    #[test]
    fn works_in_f32() {
        let f = FundamentalMatrix::<f32>::from_row_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0]).unwrap();
        let l = epipolar_line(&f, &Vector2::new(3.0f32, 7.0)).unwrap();
        assert!((l.signed_distance(&Vector2::new(100.0, 7.0))).abs() < 1e-4);
    }

    #[test]
    fn rectified_line_is_horizontal() {
        let f = rectified();
        let l = epipolar_line(&f, &Vector2::new(12.0, 37.5)).unwrap();
        assert_abs_diff_eq!(l.a, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.signed_distance(&Vector2::new(-400.0, 37.5)), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(l.signed_distance(&Vector2::new(0.0, 38.5)).abs(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rectified_epipoles_at_infinity() {
        let f = rectified();
        let e = epipole_of(&f, Side::Reference);
        assert_abs_diff_eq!(e.h, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert!(e.to_pixel().is_none());
        let es = epipole_of(&f, Side::Support);
        assert_abs_diff_eq!(es.h, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        let et = epipole_of(&f.transpose(), Side::Support);
        assert_abs_diff_eq!(et.h, e.h, epsilon = 1e-12);
    }

    #[test]
    fn epipole_maps_to_degenerate_line() {
        let f = general();
        let e = epipole_of(&f, Side::Reference).to_pixel().unwrap();
        assert_eq!(epipolar_line(&f, &e), Err(EpigeomError::DegenerateLine));
        let es = epipole_of(&f, Side::Support);
        assert!((f.matrix() * epipole_of(&f, Side::Reference).h).norm() < 1e-9);
        assert!((f.matrix().transpose() * es.h).norm() < 1e-9);
    }

    #[test]
    fn rectified_pencil_is_identity() {
        let f = rectified();
        let e = epipole_of(&f, Side::Reference);
        let l = Line::through(&Vector2::new(0.0, 42.0), &Vector2::new(1.0, 0.0));
        let lp = corresponding_line(&f, &e, &l).unwrap();
        assert!(lp.approx_eq(&l, 1e-12));
    }

    #[test]
    fn line_off_the_pencil_is_rejected() {
        let f = general();
        let e = epipole_of(&f, Side::Reference);
        let l = Line::through(&Vector2::new(10.0, 10.0), &Vector2::new(1.0, 0.3));
        assert!(matches!(
            corresponding_line(&f, &e, &l),
            Err(EpigeomError::InvalidPencilMember(_))
        ));
    }

    proptest! {
        #[test]
        fn corresponding_line_ignores_sample_point(x in 0.0f64..640.0, y in 0.0f64..480.0, u in -800.0f64..800.0) {
            // sample points on the pencil line through an image pixel, within
            // the extent of the image
            let f = general();
            let e_ref = epipole_of(&f, Side::Reference);
            let e_sup = epipole_of(&f, Side::Support);
            let ep = e_ref.to_pixel().unwrap();
            let p = Vector2::new(x, y);
            let dir = (p - ep).normalize();
            let l = Line::through(&ep, &dir);
            let a = corresponding_line_via(&f, &l, &p).unwrap();
            let b = corresponding_line_via(&f, &l, &(p + dir * u)).unwrap();
            prop_assert!(a.approx_eq(&b, 1e-9));
            prop_assert!(a.homogeneous().dot(&e_sup.h).abs() < 1e-9);
            let c = corresponding_line(&f, &e_ref, &l).unwrap();
            prop_assert!(a.approx_eq(&c, 1e-9));
        }
    }
}
