//! Procedural textures evaluated in plane coordinates (world units).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    /// Value noise mixed with a checker, in muted earth tones.
    Natural,
    /// Regular checker and stripes with little noise.
    Periodic,
    /// Saturated magenta or cyan diagonal bands.
    Sprite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub kind: TextureKind,
    pub seed: u64,
}

fn hash(seed: u64, ix: i64, iy: i64, octave: u64) -> f64 {
    let mut z = seed
        ^ (ix as u64).wrapping_mul(0x9E3779B97F4A7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2AE3D27D4EB4F)
        ^ octave.wrapping_mul(0x165667B19E3779F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise in [0, 1].
pub fn value_noise(seed: u64, octave: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (smooth(x - fx), smooth(y - fy));
    let v00 = hash(seed, ix, iy, octave);
    let v10 = hash(seed, ix + 1, iy, octave);
    let v01 = hash(seed, ix, iy + 1, octave);
    let v11 = hash(seed, ix + 1, iy + 1, octave);
    let top = v00 + (v10 - v00) * tx;
    let bot = v01 + (v11 - v01) * tx;
    top + (bot - top) * ty
}

fn fractal(seed: u64, x: f64, y: f64, freqs: &[(f64, f64)]) -> f64 {
    let mut s = 0.0;
    let mut wsum = 0.0;
    for (o, &(f, w)) in freqs.iter().enumerate() {
        // a rotated lattice per octave keeps gradients from favoring the axes
        let (sn, cs) = (0.9 * o as f64 + 0.3).sin_cos();
        let (rx, ry) = (cs * x - sn * y, sn * x + cs * y);
        s += w * value_noise(seed, o as u64, rx * f, ry * f);
        wsum += w;
    }
    s / wsum
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

const EARTH: [[f64; 3]; 4] = [
    [150.0, 122.0, 86.0],
    [104.0, 112.0, 82.0],
    [96.0, 100.0, 108.0],
    [138.0, 108.0, 96.0],
];

impl Texture {
    pub fn new(kind: TextureKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    /// RGB in [0, 255] at plane coordinates `(u, v)`.
    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        match self.kind {
            TextureKind::Natural => self.natural(u, v),
            TextureKind::Periodic => self.periodic(u, v),
            TextureKind::Sprite => self.sprite(u, v),
        }
    }

    fn natural(&self, u: f64, v: f64) -> [f64; 3] {
        let detail = fractal(self.seed, u, v, &[(1.3, 0.15), (8.0, 0.3), (14.0, 0.35), (22.0, 0.2)]);
        let hue = value_noise(self.seed ^ 0xA5A5, 7, u * 0.6, v * 0.6) * 3.0;
        let k = (hue.floor() as usize).min(2);
        let base = lerp3(EARTH[k], EARTH[k + 1], hue - k as f64);
        let checker = if ((u * 2.0).floor() as i64 + (v * 2.0).floor() as i64).rem_euclid(2) == 0 {
            1.0
        } else {
            0.9
        };
        let gain = (0.45 + 1.1 * detail) * checker;
        base.map(|c| (c * gain).clamp(0.0, 255.0))
    }

    fn periodic(&self, u: f64, v: f64) -> [f64; 3] {
        let period = 0.4;
        let cell = ((u / period).floor() as i64 + (v / period).floor() as i64).rem_euclid(2);
        let stripe = 0.5 + 0.5 * (u * std::f64::consts::TAU / (period / 2.0)).sin();
        let jitter = value_noise(self.seed, 0, u * 6.0, v * 6.0);
        let g = if cell == 0 { 0.55 } else { 1.05 } * (0.85 + 0.2 * stripe) + 0.08 * jitter;
        EARTH[0].map(|c| (c * g).clamp(0.0, 255.0))
    }

    fn sprite(&self, u: f64, v: f64) -> [f64; 3] {
        // diagonal bands, hue switched by low-frequency noise
        let n = value_noise(self.seed, 0, u * 2.0, v * 2.0);
        let band = ((u + v) * std::f64::consts::TAU / 0.2).sin();
        let magenta = [215.0, 40.0, 185.0];
        let cyan = [30.0, 195.0, 215.0];
        let c = if n > 0.5 { magenta } else { cyan };
        let shade = 0.55 + 0.45 * band;
        c.map(|x| (x * shade).clamp(0.0, 255.0))
    }
}
