//! Bilinear resampling of quadrilateral patches onto a square grid.

use nalgebra::Vector2;

use super::PatchError;
use crate::imageset::Image;

/// Quadrilateral with corners ordered c0 c1 c2 c3; the canonical `u` axis
/// runs c0 → c1 and `v` runs c0 → c3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub corners: [Vector2<f64>; 4],
}

impl Quad {
    /// Shoelace area.
    pub fn area(&self) -> f64 {
        let c = &self.corners;
        let mut s = 0.0;
        for i in 0..4 {
            let (p, q) = (c[i], c[(i + 1) % 4]);
            s += p.x * q.y - q.x * p.y;
        }
        0.5 * s.abs()
    }

    pub fn center(&self) -> Vector2<f64> {
        self.map(0.5, 0.5)
    }

    #[inline]
    pub fn map(&self, u: f64, v: f64) -> Vector2<f64> {
        let c = &self.corners;
        c[0] * ((1.0 - u) * (1.0 - v)) + c[1] * (u * (1.0 - v)) + c[2] * (u * v) + c[3] * ((1.0 - u) * v)
    }

    /// Inverse of the bilinear map by Newton iteration; `None` when it does
    /// not converge.
    pub fn inverse(&self, p: &Vector2<f64>) -> Option<(f64, f64)> {
        let c = &self.corners;
        let (mut u, mut v) = (0.5, 0.5);
        for _ in 0..30 {
            let r = self.map(u, v) - p;
            if r.norm() < 1e-10 {
                return Some((u, v));
            }
            let du = (c[1] - c[0]) * (1.0 - v) + (c[2] - c[3]) * v;
            let dv = (c[3] - c[0]) * (1.0 - u) + (c[2] - c[1]) * u;
            let det = du.x * dv.y - du.y * dv.x;
            if det.abs() < 1e-14 {
                return None;
            }
            u -= (r.x * dv.y - r.y * dv.x) / det;
            v -= (du.x * r.y - du.y * r.x) / det;
        }
        let r = self.map(u, v) - p;
        (r.norm() < 1e-6).then_some((u, v))
    }
}

/// Planar float copy of an image for fast sampling.
#[derive(Debug, Clone)]
pub struct RgbPlanes {
    pub width: u32,
    pub height: u32,
    planes: [Vec<f32>; 3],
}

impl RgbPlanes {
    pub fn from_image(img: &Image) -> Self {
        let n = img.pixel_count();
        let mut planes = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        for px in img.pixels.chunks_exact(3) {
            for c in 0..3 {
                planes[c].push(px[c] as f32);
            }
        }
        Self {
            width: img.width,
            height: img.height,
            planes,
        }
    }

    /// Bilinear sample with edge clamping. The flag is set when the point is
    /// outside the image rectangle.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> ([f32; 3], bool) {
        let (w, h) = (self.width as f64, self.height as f64);
        let outside = !(x >= -0.5 && x <= w - 0.5 && y >= -0.5 && y <= h - 0.5);
        let xc = x.clamp(0.0, w - 1.0);
        let yc = y.clamp(0.0, h - 1.0);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width as usize - 1);
        let y1 = (y0 + 1).min(self.height as usize - 1);
        let fx = (xc - x0 as f64) as f32;
        let fy = (yc - y0 as f64) as f32;
        let wi = self.width as usize;
        let mut out = [0.0f32; 3];
        for (c, plane) in self.planes.iter().enumerate() {
            let top = plane[y0 * wi + x0] * (1.0 - fx) + plane[y0 * wi + x1] * fx;
            let bot = plane[y1 * wi + x0] * (1.0 - fx) + plane[y1 * wi + x1] * fx;
            out[c] = top * (1.0 - fy) + bot * fy;
        }
        (out, outside)
    }
}

/// A resampled patch: row-major RGB samples plus out-of-image flags.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalPatch {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f32; 3]>,
    pub outside: Vec<bool>,
}

impl CanonicalPatch {
    pub fn luma(&self) -> Vec<f32> {
        self.rgb
            .iter()
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    /// HSV with every channel in [0, 1]; hue 0 for gray samples.
    pub fn hsv(&self) -> Vec<[f32; 3]> {
        self.rgb.iter().map(|p| rgb_to_hsv(*p)).collect()
    }

    pub fn all_outside(&self) -> bool {
        self.outside.iter().all(|&o| o)
    }
}

/// `rgb` in [0, 255]; returns (h, s, v) with h in [0, 1).
pub fn rgb_to_hsv(rgb: [f32; 3]) -> [f32; 3] {
    let [r, g, b] = rgb.map(|c| (c / 255.0).clamp(0.0, 1.0));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let mut h = if d <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    } / 6.0;
    if h >= 1.0 {
        h -= 1.0;
    }
    [h, s, max]
}

pub fn warp_quad(img: &RgbPlanes, quad: &Quad, out_w: usize, out_h: usize) -> Result<CanonicalPatch, PatchError> {
    let area = quad.area();
    if !(area >= 1.0) {
        return Err(PatchError::Degenerate { area });
    }
    let mut rgb = Vec::with_capacity(out_w * out_h);
    let mut outside = Vec::with_capacity(out_w * out_h);
    for j in 0..out_h {
        let v = (j as f64 + 0.5) / out_h as f64;
        for i in 0..out_w {
            let u = (i as f64 + 0.5) / out_w as f64;
            let p = quad.map(u, v);
            let (s, o) = img.sample(p.x, p.y);
            rgb.push(s);
            outside.push(o);
        }
    }
    Ok(CanonicalPatch {
        width: out_w,
        height: out_h,
        rgb,
        outside,
    })
}

/// Resamples the quadrilateral of `quad` from `image` onto an
/// `out_w x out_h` grid.
pub fn warp_patch(image: &Image, quad: &Quad, out_w: usize, out_h: usize) -> Result<CanonicalPatch, PatchError> {
    warp_quad(&RgbPlanes::from_image(image), quad, out_w, out_h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: u32, h: u32) -> Image {
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                px.push((x * 3 + y * 5) as u8);
                px.push((x * y % 251) as u8);
                px.push(((x ^ y) * 7 % 256) as u8);
            }
        }
        Image::new("t", w, h, px).unwrap()
    }

    fn rect(x0: f64, y0: f64, w: f64, h: f64) -> Quad {
        Quad {
            corners: [
                Vector2::new(x0 - 0.5, y0 - 0.5),
                Vector2::new(x0 + w - 0.5, y0 - 0.5),
                Vector2::new(x0 + w - 0.5, y0 + h - 0.5),
                Vector2::new(x0 - 0.5, y0 + h - 0.5),
            ],
        }
    }

    #[test]
    fn axis_aligned_identity_is_exact() {
        let img = textured(80, 70);
        let p = warp_patch(&img, &rect(10.0, 20.0, 16.0, 12.0), 16, 12).unwrap();
        for j in 0..12 {
            for i in 0..16 {
                let px = img.rgb(10 + i as u32, 20 + j as u32);
                assert_eq!(p.rgb[j * 16 + i], px.map(|c| c as f32));
                assert!(!p.outside[j * 16 + i]);
            }
        }
    }

    #[test]
    fn zero_area_is_degenerate() {
        let q = Quad {
            corners: [Vector2::new(1.0, 1.0); 4],
        };
        assert!(matches!(
            warp_patch(&textured(64, 64), &q, 16, 16),
            Err(PatchError::Degenerate { .. })
        ));
    }

    #[test]
    fn samples_outside_are_flagged() {
        let p = warp_patch(&textured(64, 64), &rect(-8.0, 0.0, 16.0, 16.0), 16, 16).unwrap();
        assert!(p.outside[0] && !p.outside[15]);
    }

    #[test]
    fn inverse_recovers_parameters() {
        let q = Quad {
            corners: [
                Vector2::new(10.0, 12.0),
                Vector2::new(40.0, 8.0),
                Vector2::new(44.0, 30.0),
                Vector2::new(12.0, 25.0),
            ],
        };
        for &(u, v) in &[(0.1, 0.2), (0.5, 0.5), (0.9, 0.95)] {
            let (a, b) = q.inverse(&q.map(u, v)).unwrap();
            assert!((a - u).abs() < 1e-9 && (b - v).abs() < 1e-9);
        }
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(rgb_to_hsv([255.0, 0.0, 0.0]), [0.0, 1.0, 1.0]);
        let g = rgb_to_hsv([0.0, 255.0, 0.0]);
        assert!((g[0] - 1.0 / 3.0).abs() < 1e-6);
        assert_eq!(rgb_to_hsv([90.0, 90.0, 90.0])[1], 0.0);
    }
}
