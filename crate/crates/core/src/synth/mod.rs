//! Synthetic image sets with known cameras, fundamental matrices and
//! dynamic-region masks.
//!
//! Scenes are ray cast: a textured background made of planes, and an
//! optional textured square sprite that can take a different pose in every
//! shot.

mod presets;
mod texture;

pub use presets::{preset, sprite_separated, Preset};
pub use texture::{value_noise, Texture, TextureKind};

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::epigeom::{write_fmatrices, FMatrixFile, FundamentalMatrix};
use crate::imageset::{GroundTruthMask, Image, ImageSet, ImageSetError, Label};

/// Smallest share of pixel centers that must see the background.
pub const MIN_BACKGROUND_COVERAGE: f64 = 0.6;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("camera {camera} sees the background on only {fraction:.2} of its pixels")]
    SceneInvalid { camera: usize, fraction: f64 },
    #[error("sprite has {poses} poses for {cameras} cameras")]
    PoseCount { poses: usize, cameras: usize },
    #[error("degenerate camera pair {0}|{1}")]
    DegeneratePair(String, String),
    #[error(transparent)]
    ImageSet(#[from] ImageSetError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("png: {0}")]
    Png(#[from] image::ImageError),
}

/// Pinhole camera with `x ~ K R (X - C)`; camera axes are x right, y down,
/// z forward.
#[derive(Debug, Clone, PartialEq)]
pub struct PinholeCamera {
    pub k: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub c: Vector3<f64>,
    pub width: u32,
    pub height: u32,
}

impl PinholeCamera {
    pub fn intrinsics(f: f64, width: u32, height: u32) -> Matrix3<f64> {
        Matrix3::new(
            f,
            0.0,
            (width as f64 - 1.0) / 2.0,
            0.0,
            f,
            (height as f64 - 1.0) / 2.0,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Camera at `c` looking at `target`, world y pointing down, rolled by
    /// `roll` radians about its optical axis.
    pub fn look_at(k: Matrix3<f64>, width: u32, height: u32, c: Vector3<f64>, target: Vector3<f64>, roll: f64) -> Self {
        let z = (target - c).normalize();
        let x = Vector3::new(0.0, 1.0, 0.0).cross(&z).normalize();
        let y = z.cross(&x);
        let (s, co) = roll.sin_cos();
        let xr = x * co + y * s;
        let yr = y * co - x * s;
        let r = Matrix3::from_rows(&[xr.transpose(), yr.transpose(), z.transpose()]);
        Self { k, r, c, width, height }
    }

    /// Pixel coordinates and depth of a world point; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
        let q = self.k * (self.r * (p - self.c));
        (q.z > 1e-9).then(|| (Vector2::new(q.x / q.z, q.y / q.z), q.z))
    }

    /// World direction (not normalized) of the ray through pixel `(x, y)`.
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        let k_inv = self.k.try_inverse().expect("invertible intrinsics");
        self.r.transpose() * (k_inv * Vector3::new(x, y, 1.0))
    }

    pub fn in_view(&self, p: &Vector2<f64>) -> bool {
        p.x >= -0.5 && p.y >= -0.5 && p.x <= self.width as f64 - 0.5 && p.y <= self.height as f64 - 0.5
    }
}

/// Fundamental matrix with `x_bᵀ F x_a = 0`.
pub fn fundamental_between(a: &PinholeCamera, b: &PinholeCamera) -> Option<FundamentalMatrix<f64>> {
    let r = b.r * a.r.transpose();
    let t = b.r * (a.c - b.c);
    let e = t.cross_matrix() * r;
    let f = b.k.try_inverse()?.transpose() * e * a.k.try_inverse()?;
    FundamentalMatrix::new(f).ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TexturedPlane {
    pub origin: Vector3<f64>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub texture: Texture,
}

impl TexturedPlane {
    pub fn normal(&self) -> Vector3<f64> {
        self.u.cross(&self.v)
    }

    /// Ray parameter of the hit and the plane coordinates there.
    pub fn intersect(&self, c: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let n = self.normal();
        let den = n.dot(d);
        if den.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&(self.origin - c)) / den;
        if t <= 1e-9 {
            return None;
        }
        let q = c + d * t - self.origin;
        Some((t, q.dot(&self.u), q.dot(&self.v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpritePose {
    pub center: Vector3<f64>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl SpritePose {
    pub fn corners(&self, half: f64) -> [Vector3<f64>; 4] {
        let (u, v) = (self.u * half, self.v * half);
        [
            self.center - u - v,
            self.center + u - v,
            self.center + u + v,
            self.center - u + v,
        ]
    }
}

/// Square sprite of side `2 * half_size`, one pose per camera shot.
#[derive(Debug, Clone, PartialEq)]
pub struct Sprite {
    pub half_size: f64,
    pub texture: Texture,
    pub poses: Vec<SpritePose>,
}

impl Sprite {
    fn intersect(&self, shot: usize, c: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let pose = &self.poses[shot];
        let plane = TexturedPlane {
            origin: pose.center,
            u: pose.u,
            v: pose.v,
            texture: self.texture,
        };
        let (t, a, b) = plane.intersect(c, d)?;
        (a.abs() <= self.half_size && b.abs() <= self.half_size).then_some((t, a + self.half_size, b + self.half_size))
    }

    /// True when consecutive poses differ.
    pub fn moves(&self) -> bool {
        self.poses.windows(2).any(|w| w[0] != w[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub background: Vec<TexturedPlane>,
    pub cameras: Vec<PinholeCamera>,
    pub sprite: Option<Sprite>,
    /// Gaussian noise standard deviation in gray levels.
    pub noise: f64,
    pub seed: u64,
}

/// Rendered images, masks (dynamic where a moving sprite is visible at the
/// pixel center) and ground-truth fundamental matrices.
#[derive(Debug, Clone)]
pub struct RenderedSet {
    pub images: ImageSet,
    pub masks: Vec<GroundTruthMask>,
    pub fmatrices: FMatrixFile,
}

pub fn view_id(i: usize) -> String {
    format!("view{i:02}")
}

enum Hit {
    Background(usize, f64, f64),
    Sprite(f64, f64),
    None,
}

impl SyntheticScene {
    fn trace(&self, shot: usize, c: &Vector3<f64>, d: &Vector3<f64>) -> Hit {
        let mut best = (f64::INFINITY, Hit::None);
        for (i, p) in self.background.iter().enumerate() {
            if let Some((t, u, v)) = p.intersect(c, d) {
                if t < best.0 {
                    best = (t, Hit::Background(i, u, v));
                }
            }
        }
        if let Some(s) = &self.sprite {
            if let Some((t, u, v)) = s.intersect(shot, c, d) {
                if t < best.0 {
                    best = (t, Hit::Sprite(u, v));
                }
            }
        }
        best.1
    }

    fn shade(&self, hit: &Hit) -> [f64; 3] {
        match hit {
            Hit::Background(i, u, v) => self.background[*i].texture.sample(*u, *v),
            Hit::Sprite(u, v) => self
                .sprite
                .as_ref()
                .map(|s| s.texture.sample(*u, *v))
                .unwrap_or([0.0; 3]),
            Hit::None => [0.0; 3],
        }
    }

    /// True when the sprite is the nearest surface at pixel `(x, y)` of
    /// camera `i`.
    pub fn sprite_at(&self, i: usize, x: f64, y: f64) -> bool {
        let cam = &self.cameras[i];
        matches!(self.trace(i, &cam.c, &cam.ray(x, y)), Hit::Sprite(..))
    }
}

fn render_camera(scene: &SyntheticScene, i: usize) -> Result<(Image, GroundTruthMask), SynthError> {
    let cam = &scene.cameras[i];
    let (w, h) = (cam.width, cam.height);
    let moving = scene.sprite.as_ref().is_some_and(|s| s.moves());
    let k_inv = cam.k.try_inverse().expect("invertible intrinsics");
    let rt = cam.r.transpose();
    let ray = |x: f64, y: f64| rt * (k_inv * Vector3::new(x, y, 1.0));
    let mut pixels = vec![0.0f64; (w * h * 3) as usize];
    let mut mask = GroundTruthMask::filled(w, h, Label::Static);
    let mut background_hits = 0usize;
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let center = scene.trace(i, &cam.c, &ray(xf, yf));
            match center {
                Hit::Sprite(..) if moving => mask.set(x, y, Label::Dynamic),
                Hit::Background(..) => background_hits += 1,
                _ => {}
            }
            let mut acc = [0.0; 3];
            for (dx, dy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                let c = scene.shade(&scene.trace(i, &cam.c, &ray(xf + dx, yf + dy)));
                for k in 0..3 {
                    acc[k] += c[k] / 4.0;
                }
            }
            let o = ((y * w + x) * 3) as usize;
            pixels[o..o + 3].copy_from_slice(&acc);
        }
    }
    let fraction = background_hits as f64 / (w * h) as f64;
    let sprite_px = mask.counts().dynamic_px as f64 / (w * h) as f64;
    if fraction + sprite_px < MIN_BACKGROUND_COVERAGE {
        return Err(SynthError::SceneInvalid { camera: i, fraction });
    }
    if scene.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ (0x5EED_0000 + i as u64));
        let normal = Normal::new(0.0, scene.noise).expect("finite sigma");
        for p in pixels.iter_mut() {
            *p += normal.sample(&mut rng);
        }
    }
    let bytes = pixels.iter().map(|p| p.round().clamp(0.0, 255.0) as u8).collect();
    Ok((Image::new(view_id(i), w, h, bytes)?, mask))
}

/// Renders every camera of the scene in parallel.
pub fn render(scene: &SyntheticScene) -> Result<RenderedSet, SynthError> {
    if let Some(s) = &scene.sprite {
        if s.poses.len() != scene.cameras.len() {
            return Err(SynthError::PoseCount {
                poses: s.poses.len(),
                cameras: scene.cameras.len(),
            });
        }
    }
    let rendered = (0..scene.cameras.len())
        .into_par_iter()
        .map(|i| render_camera(scene, i))
        .collect::<Result<Vec<_>, _>>()?;
    let (images, masks): (Vec<_>, Vec<_>) = rendered.into_iter().unzip();
    let mut fmatrices = FMatrixFile::new();
    for (a, ca) in scene.cameras.iter().enumerate() {
        for (b, cb) in scene.cameras.iter().enumerate().skip(a + 1) {
            let f = fundamental_between(ca, cb).ok_or_else(|| SynthError::DegeneratePair(view_id(a), view_id(b)))?;
            let v = f.to_row_vec();
            let mut row = [0.0; 9];
            row.copy_from_slice(&v);
            fmatrices.insert(format!("{}|{}", view_id(a), view_id(b)), row);
        }
    }
    Ok(RenderedSet {
        images: ImageSet::new("synthetic", images)?,
        masks,
        fmatrices,
    })
}

/// Writes `<id>.png`, `gt/<id>.png` and `fmatrices.json` under `dir`.
pub fn write_dataset(set: &RenderedSet, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir.join("gt"))?;
    for (img, mask) in set.images.images.iter().zip(&set.masks) {
        img.save_png(&dir.join(format!("{}.png", img.id)))?;
        mask.save_png(&dir.join("gt").join(format!("{}.png", img.id)))?;
    }
    write_fmatrices(&dir.join("fmatrices.json"), &set.fmatrices)?;
    Ok(())
}
