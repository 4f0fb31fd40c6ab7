//! Harris corners and normalized cross-correlation matching.

use rayon::prelude::*;

use super::Correspondence;
use crate::imageset::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingParams {
    pub max_corners: usize,
    pub harris_k: f32,
    /// Corners below this fraction of the strongest response are dropped.
    pub relative_threshold: f32,
    pub nms_radius: i32,
    /// Side of the square correlation window; odd.
    pub window: usize,
    pub ratio: f32,
    pub min_ncc: f32,
}

impl Default for MatchingParams {
    fn default() -> Self {
        Self {
            max_corners: 2000,
            harris_k: 0.04,
            relative_threshold: 0.001,
            nms_radius: 3,
            window: 11,
            ratio: 0.8,
            min_ncc: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub x: f64,
    pub y: f64,
    pub response: f32,
}

struct Gray {
    w: usize,
    h: usize,
    v: Vec<f32>,
}

impl Gray {
    fn from_image(img: &Image) -> Self {
        let v = img
            .pixels
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
            .collect();
        Self {
            w: img.width as usize,
            h: img.height as usize,
            v,
        }
    }

    #[inline]
    fn at(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.v[y * self.w + x]
    }
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as i32;
    let mut k: Vec<f32> = (-r..=r)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn blur(src: &[f32], w: usize, h: usize, k: &[f32]) -> Vec<f32> {
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * src[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn harris_response(g: &Gray, k: f32) -> Vec<f32> {
    let (w, h) = (g.w, g.h);
    let mut ixx = vec![0.0f32; w * h];
    let mut iyy = vec![0.0f32; w * h];
    let mut ixy = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            // Sobel
            let gx = (g.at(x + 1, y - 1) + 2.0 * g.at(x + 1, y) + g.at(x + 1, y + 1))
                - (g.at(x - 1, y - 1) + 2.0 * g.at(x - 1, y) + g.at(x - 1, y + 1));
            let gy = (g.at(x - 1, y + 1) + 2.0 * g.at(x, y + 1) + g.at(x + 1, y + 1))
                - (g.at(x - 1, y - 1) + 2.0 * g.at(x, y - 1) + g.at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let kern = gaussian_kernel(1.5);
    let sxx = blur(&ixx, w, h, &kern);
    let syy = blur(&iyy, w, h, &kern);
    let sxy = blur(&ixy, w, h, &kern);
    (0..w * h)
        .map(|i| {
            let tr = sxx[i] + syy[i];
            sxx[i] * syy[i] - sxy[i] * sxy[i] - k * tr * tr
        })
        .collect()
}

/// Harris corners with non-maximal suppression and parabolic sub-pixel
/// refinement, strongest first.
pub fn harris_corners(img: &Image, params: &MatchingParams) -> Vec<Corner> {
    let g = Gray::from_image(img);
    corners_from_gray(&g, params)
}

fn corners_from_gray(g: &Gray, params: &MatchingParams) -> Vec<Corner> {
    let (w, h) = (g.w, g.h);
    let resp = harris_response(g, params.harris_k);
    let max_r = resp.iter().cloned().fold(0.0f32, f32::max);
    if max_r <= 0.0 {
        return Vec::new();
    }
    let thresh = max_r * params.relative_threshold;
    let border = (params.window / 2 + 2) as i32;
    let r = params.nms_radius;
    let at = |x: i32, y: i32| resp[y as usize * w + x as usize];
    let mut out = Vec::new();
    for y in border..h as i32 - border {
        for x in border..w as i32 - border {
            let v = at(x, y);
            if v <= thresh {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (xx, yy) = (x + dx, y + dy);
                    if xx < 0 || yy < 0 || xx >= w as i32 || yy >= h as i32 {
                        continue;
                    }
                    let n = at(xx, yy);
                    // strict on one side so plateaus keep exactly one winner
                    if n > v || (n == v && (dy < 0 || (dy == 0 && dx < 0))) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let sub = |m: f32, c: f32, p: f32| {
                let den = m - 2.0 * c + p;
                if den.abs() < 1e-12 {
                    0.0
                } else {
                    (0.5 * (m - p) / den).clamp(-0.5, 0.5)
                }
            };
            let ox = sub(at(x - 1, y), v, at(x + 1, y));
            let oy = sub(at(x, y - 1), v, at(x, y + 1));
            out.push(Corner {
                x: x as f64 + ox as f64,
                y: y as f64 + oy as f64,
                response: v,
            });
        }
    }
    out.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    out.truncate(params.max_corners);
    out
}

/// Zero-mean, unit-norm correlation window around a corner; `None` for flat
/// windows.
fn ncc_descriptor(g: &Gray, c: &Corner, window: usize) -> Option<Vec<f32>> {
    let r = (window / 2) as isize;
    let cx = c.x.round() as isize;
    let cy = c.y.round() as isize;
    let mut d = Vec::with_capacity(window * window);
    for dy in -r..=r {
        for dx in -r..=r {
            d.push(g.at(cx + dx, cy + dy));
        }
    }
    let mean = d.iter().sum::<f32>() / d.len() as f32;
    d.iter_mut().for_each(|v| *v -= mean);
    let n = d.iter().map(|v| v * v).sum::<f32>().sqrt();
    if n < 1e-3 * window as f32 {
        return None;
    }
    d.iter_mut().for_each(|v| *v /= n);
    Some(d)
}

/// Putative matches from Harris corners, nearest neighbor under NCC and a
/// distance ratio test.
pub fn detect_and_match(a: &Image, b: &Image, params: &MatchingParams) -> Vec<Correspondence> {
    let ga = Gray::from_image(a);
    let gb = Gray::from_image(b);
    let (ca, cb) = rayon::join(|| corners_from_gray(&ga, params), || corners_from_gray(&gb, params));
    let da: Vec<(Corner, Vec<f32>)> = ca
        .iter()
        .filter_map(|c| ncc_descriptor(&ga, c, params.window).map(|d| (*c, d)))
        .collect();
    let db: Vec<(Corner, Vec<f32>)> = cb
        .iter()
        .filter_map(|c| ncc_descriptor(&gb, c, params.window).map(|d| (*c, d)))
        .collect();
    if db.len() < 2 {
        return Vec::new();
    }
    da.par_iter()
        .filter_map(|(c, d)| {
            let mut best = (f32::NEG_INFINITY, usize::MAX);
            let mut second = f32::NEG_INFINITY;
            for (j, (_, e)) in db.iter().enumerate() {
                let s: f32 = d.iter().zip(e).map(|(x, y)| x * y).sum();
                if s > best.0 {
                    second = best.0;
                    best = (s, j);
                } else if s > second {
                    second = s;
                }
            }
            if best.0 < params.min_ncc {
                return None;
            }
            let d1 = (2.0 - 2.0 * best.0).max(0.0).sqrt();
            let d2 = (2.0 - 2.0 * second).max(0.0).sqrt();
            if d1 >= params.ratio * d2 {
                return None;
            }
            let m = db[best.1].0;
            Some(Correspondence::new(
                [c.x, c.y],
                [m.x, m.y],
                best.0.clamp(0.0, 1.0) as f64,
            ))
        })
        .collect()
}
