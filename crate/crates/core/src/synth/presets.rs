//! Ready-made scenes.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    fundamental_between, PinholeCamera, Sprite, SpritePose, SyntheticScene, Texture, TextureKind, TexturedPlane,
};

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 480;
pub const FOCAL: f64 = 600.0;
/// Half side of the sprite in world units; about 5% of the image at depth 6.
pub const SPRITE_HALF: f64 = 0.62;
pub const NOISE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Five views, the sprite in a different place in every shot.
    Basic,
    /// Three views; the sprite moves along the baseline of the first two.
    EpipolarMotion,
    /// Four views, the sprite never moves.
    StaticControl,
    /// As `Basic` on a periodic background.
    Periodic,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Basic,
        Preset::EpipolarMotion,
        Preset::StaticControl,
        Preset::Periodic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Basic => "basic",
            Preset::EpipolarMotion => "epipolar-motion",
            Preset::StaticControl => "static-control",
            Preset::Periodic => "periodic",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown preset {s:?}"))
    }
}

fn background(kind: TextureKind, seed: u64) -> Vec<TexturedPlane> {
    vec![
        TexturedPlane {
            origin: Vector3::new(0.0, 0.0, 10.0),
            u: Vector3::new(1.0, 0.0, 0.0),
            v: Vector3::new(0.0, 1.0, 0.0),
            texture: Texture::new(kind, seed ^ 0x11),
        },
        TexturedPlane {
            origin: Vector3::new(0.0, 2.0, 0.0),
            u: Vector3::new(1.0, 0.0, 0.0),
            v: Vector3::new(0.0, 0.0, 1.0),
            texture: Texture::new(kind, seed ^ 0x22),
        },
    ]
}

fn camera(c: Vector3<f64>, target: Vector3<f64>, roll: f64) -> PinholeCamera {
    let k = PinholeCamera::intrinsics(FOCAL, WIDTH, HEIGHT);
    PinholeCamera::look_at(k, WIDTH, HEIGHT, c, target, roll)
}

fn ring_cameras(n: usize, rng: &mut ChaCha8Rng) -> Vec<PinholeCamera> {
    let phase = rng.random_range(0.0..TAU);
    (0..n)
        .map(|i| {
            let phi = phase + TAU * i as f64 / n as f64 + rng.random_range(-0.25..0.25);
            let c = Vector3::new(0.85 * phi.cos(), 0.45 * phi.sin(), rng.random_range(-0.3..0.3));
            let target = Vector3::new(rng.random_range(-0.15..0.15), rng.random_range(0.2..0.4), 10.0);
            camera(c, target, rng.random_range(-0.05..0.05))
        })
        .collect()
}

/// Sprite facing `cam`, centered on pixel `(x, y)` at depth `depth`, rotated
/// in its plane by `angle`.
fn pose_facing(cam: &PinholeCamera, x: f64, y: f64, depth: f64, angle: f64) -> SpritePose {
    let center = cam.c + cam.ray(x, y) * depth;
    let right = cam.r.row(0).transpose();
    let down = cam.r.row(1).transpose();
    let (s, c) = angle.sin_cos();
    SpritePose {
        center,
        u: right * c + down * s,
        v: down * c - right * s,
    }
}

fn random_pose(cam: &PinholeCamera, rng: &mut ChaCha8Rng) -> SpritePose {
    let x = rng.random_range(110.0..(WIDTH as f64 - 110.0));
    let y = rng.random_range(110.0..(HEIGHT as f64 - 110.0));
    pose_facing(cam, x, y, rng.random_range(5.5..6.5), rng.random_range(0.0..TAU))
}

fn projected_corners(scene: &SyntheticScene, shot: usize) -> Option<Vec<Vector2<f64>>> {
    let sprite = scene.sprite.as_ref()?;
    sprite.poses[shot]
        .corners(sprite.half_size)
        .iter()
        .map(|p| scene.cameras[shot].project(p).map(|(x, _)| x))
        .collect()
}

/// True when the sprite seen in shot `i` and the sprite seen in shot `j` lie
/// on disjoint sets of epipolar lines of the pair, with at least `margin`
/// pixels to spare in image `j`.
pub fn sprite_separated(scene: &SyntheticScene, i: usize, j: usize, margin: f64) -> bool {
    let (Some(ci), Some(cj)) = (projected_corners(scene, i), projected_corners(scene, j)) else {
        return false;
    };
    let Some(f) = fundamental_between(&scene.cameras[i], &scene.cameras[j]) else {
        return false;
    };
    let mut sign = 0.0;
    for x in &ci {
        let l = f.matrix() * Vector3::new(x.x, x.y, 1.0);
        let norm = (l.x * l.x + l.y * l.y).sqrt();
        for y in &cj {
            let d = l.dot(&Vector3::new(y.x, y.y, 1.0)) / norm;
            if d.abs() < margin {
                return false;
            }
            if sign == 0.0 {
                sign = d.signum();
            } else if d.signum() != sign {
                return false;
            }
        }
    }
    true
}

fn moving_scene(n: usize, kind: TextureKind, seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cameras = ring_cameras(n, &mut rng);
    let mut scene = SyntheticScene {
        background: background(kind, seed),
        cameras,
        sprite: None,
        noise: NOISE,
        seed,
    };
    let texture = Texture::new(TextureKind::Sprite, seed ^ 0x33);
    let mut best: Option<((usize, usize), Vec<SpritePose>)> = None;
    for _ in 0..4000 {
        let poses: Vec<SpritePose> = scene.cameras.iter().map(|c| random_pose(c, &mut rng)).collect();
        scene.sprite = Some(Sprite {
            half_size: SPRITE_HALF,
            texture,
            poses: poses.clone(),
        });
        let per_ref: Vec<usize> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && sprite_separated(&scene, i, j, 8.0))
                    .count()
            })
            .collect();
        let score = (*per_ref.iter().min().unwrap(), per_ref.iter().sum());
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, poses));
        }
        if score.0 == n - 1 {
            break;
        }
    }
    let (_, poses) = best.expect("at least one attempt");
    scene.sprite = Some(Sprite {
        half_size: SPRITE_HALF,
        texture,
        poses,
    });
    scene
}

fn static_scene(seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cameras = ring_cameras(4, &mut rng);
    let center = Vector3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.4..0.6), 6.0);
    let angle: f64 = rng.random_range(0.0..TAU);
    let pose = SpritePose {
        center,
        u: Vector3::new(angle.cos(), angle.sin(), 0.0),
        v: Vector3::new(-angle.sin(), angle.cos(), 0.0),
    };
    SyntheticScene {
        background: background(TextureKind::Natural, seed),
        sprite: Some(Sprite {
            half_size: SPRITE_HALF,
            texture: Texture::new(TextureKind::Sprite, seed ^ 0x33),
            poses: vec![pose; cameras.len()],
        }),
        cameras,
        noise: NOISE,
        seed,
    }
}

/// Cameras 0 and 1 share a horizontal baseline and the sprite moves along
/// it, so its motion stays on the epipolar lines of that pair. In the shot
/// of camera 2 it moves vertically instead.
fn epipolar_motion_scene(seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = Vector3::new(0.0, 0.3, 10.0);
    let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-0.05..0.05);
    let c0 = Vector3::new(-0.8, jitter(&mut rng), 0.0);
    let c1 = Vector3::new(0.8, jitter(&mut rng), 0.0);
    let c2 = Vector3::new(2.4, 0.1 + jitter(&mut rng), -0.2);
    let cameras = vec![
        camera(c0, target, 0.0),
        camera(c1, target, 0.0),
        camera(c2, target, 0.0),
    ];
    let p0 = pose_facing(
        &cameras[0],
        rng.random_range(250.0..330.0),
        rng.random_range(290.0..310.0),
        6.0,
        rng.random_range(0.0..TAU),
    );
    let mut p1 = p0;
    p1.center += (c1 - c0) * 0.5;
    let mut p2 = p0;
    p2.center.y -= 1.8;
    SyntheticScene {
        background: background(TextureKind::Natural, seed),
        sprite: Some(Sprite {
            half_size: SPRITE_HALF,
            texture: Texture::new(TextureKind::Sprite, seed ^ 0x33),
            poses: vec![p0, p1, p2],
        }),
        cameras,
        noise: NOISE,
        seed,
    }
}

pub fn preset(p: Preset, seed: u64) -> SyntheticScene {
    match p {
        Preset::Basic => moving_scene(5, TextureKind::Natural, seed),
        Preset::Periodic => moving_scene(5, TextureKind::Periodic, seed),
        Preset::StaticControl => static_scene(seed),
        Preset::EpipolarMotion => epipolar_motion_scene(seed),
    }
}
