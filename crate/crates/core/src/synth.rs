//! Procedural reference scenes. Each is a hand-authored Gaussian scene
//! rendered from a ring of cameras, so the targets are exactly representable.

use crate::octree::Aabb;
use crate::raster::{render, RenderSettings};
use crate::splat::{normalize_quaternion, Camera, GaussianPrimitive, Image, Scene};
use crate::trainer::{TargetSet, View};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, TAU};
use thiserror::Error;

pub const SCENE_NAMES: [&str; 2] = ["thin-board", "checker-sphere"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("unknown scene {0:?} (expected one of: thin-board, checker-sphere)")]
    UnknownScene(String),
    #[error("need between 8 and 64 cameras, got {0}")]
    CameraCount(usize),
    #[error("image size must be at least 16, got {0}")]
    ImageSize(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub image_size: u32,
    pub cameras: usize,
    pub surface_points: usize,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { image_size: 48, cameras: 12, surface_points: 20_000, seed: 0 }
    }
}

/// A reference scene and points sampled uniformly by area on its surfaces.
pub struct Reference {
    pub scene: Scene,
    pub points: Vec<Vector3<f64>>,
}

fn prim(center: Vector3<f64>, sigma: Vector3<f64>, rot: [f64; 4], color: Vector3<f64>) -> GaussianPrimitive {
    GaussianPrimitive {
        center,
        log_scale: sigma.map(f64::ln),
        rotation: normalize_quaternion(rot),
        opacity_logit: 4.0,
        color,
    }
}

/// Quaternion turning the local z axis onto the unit vector `n`.
fn align_z(n: &Vector3<f64>) -> [f64; 4] {
    if n.z < -1.0 + 1e-9 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    normalize_quaternion([1.0 + n.z, -n.y, n.x, 0.0])
}

const BOARD_Y: f64 = -0.4;
const BOARD_HALF: f64 = 0.7;
const POLE_X: f64 = 0.2;
const POLE_Z: f64 = 0.1;
const POLE_R: f64 = 0.025;
const POLE_TOP: f64 = 0.6;
const RING_R: f64 = 0.35;
const RING_Y: f64 = 0.25;

fn board_color(x: f64, z: f64) -> Vector3<f64> {
    Vector3::new(0.55 + 0.12 * x, 0.5 + 0.05 * z, 0.42 - 0.08 * x)
}

fn pole_color(y: f64) -> Vector3<f64> {
    if ((y - BOARD_Y) / 0.1).floor() as i64 % 2 == 0 {
        Vector3::new(0.95, 0.95, 0.9)
    } else {
        Vector3::new(0.05, 0.05, 0.1)
    }
}

fn ring_color(phi: f64) -> Vector3<f64> {
    if (phi / (TAU / 12.0)).floor() as i64 % 2 == 0 {
        Vector3::new(0.9, 0.15, 0.1)
    } else {
        Vector3::new(0.1, 0.3, 0.95)
    }
}

fn ring_point(phi: f64) -> Vector3<f64> {
    Vector3::new(POLE_X + RING_R * phi.cos(), RING_Y + RING_R * phi.sin(), POLE_Z)
}

/// Smooth low-texture board with a thin striped pole and a thin ring.
fn thin_board(rng: &mut ChaCha8Rng, n_points: usize) -> Reference {
    let mut prims = Vec::new();
    let step = 0.05;
    let cells = (2.0 * BOARD_HALF / step).round() as usize;
    for i in 0..=cells {
        for j in 0..=cells {
            let x = -BOARD_HALF + i as f64 * step;
            let z = -BOARD_HALF + j as f64 * step;
            prims.push(prim(
                Vector3::new(x, BOARD_Y, z),
                Vector3::new(0.035, 0.004, 0.035),
                [1.0, 0.0, 0.0, 0.0],
                board_color(x, z),
            ));
        }
    }
    let mut y = BOARD_Y;
    while y <= POLE_TOP {
        for a in 0..3 {
            let phi = a as f64 * TAU / 3.0;
            let c = Vector3::new(POLE_X + 0.6 * POLE_R * phi.cos(), y, POLE_Z + 0.6 * POLE_R * phi.sin());
            prims.push(prim(c, Vector3::new(0.014, 0.012, 0.014), [1.0, 0.0, 0.0, 0.0], pole_color(y)));
        }
        y += 0.02;
    }
    let ring_n = 110;
    for r in 0..ring_n {
        let phi = r as f64 * TAU / ring_n as f64;
        prims.push(prim(ring_point(phi), Vector3::repeat(0.013), [1.0, 0.0, 0.0, 0.0], ring_color(phi)));
    }

    let board_area = (2.0 * BOARD_HALF).powi(2);
    let pole_area = TAU * POLE_R * (POLE_TOP - BOARD_Y);
    let ring_tube = 0.012;
    let ring_area = TAU * RING_R * TAU * ring_tube;
    let total = board_area + pole_area + ring_area;
    let points = (0..n_points)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * total;
            if u < board_area {
                Vector3::new(
                    rng.random_range(-BOARD_HALF..BOARD_HALF),
                    BOARD_Y,
                    rng.random_range(-BOARD_HALF..BOARD_HALF),
                )
            } else if u < board_area + pole_area {
                let phi = rng.random_range(0.0..TAU);
                Vector3::new(
                    POLE_X + POLE_R * phi.cos(),
                    rng.random_range(BOARD_Y..POLE_TOP),
                    POLE_Z + POLE_R * phi.sin(),
                )
            } else {
                let phi = rng.random_range(0.0..TAU);
                let psi = rng.random_range(0.0..TAU);
                let c = ring_point(phi);
                let radial = Vector3::new(phi.cos(), phi.sin(), 0.0);
                c + ring_tube * (psi.cos() * radial + psi.sin() * Vector3::z())
            }
        })
        .collect();
    Reference { scene: Scene::new(prims, Vector3::new(0.08, 0.08, 0.1)), points }
}

const SPHERE_R: f64 = 0.6;

fn checker(n: &Vector3<f64>) -> Vector3<f64> {
    let theta = n.y.clamp(-1.0, 1.0).acos();
    let phi = n.z.atan2(n.x) + PI;
    let a = (theta / (PI / 6.0)).floor() as i64;
    let b = (phi / (TAU / 12.0)).floor() as i64;
    if (a + b) % 2 == 0 {
        Vector3::new(0.92, 0.9, 0.85)
    } else {
        Vector3::new(0.1, 0.12, 0.2)
    }
}

/// Sphere tiled with flat Gaussians in a black-and-white checker pattern.
fn checker_sphere(rng: &mut ChaCha8Rng, n_points: usize) -> Reference {
    let n = 900;
    let golden = PI * (3.0 - 5f64.sqrt());
    let prims = (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            let normal = Vector3::new(r * phi.cos(), y, r * phi.sin());
            prim(normal * SPHERE_R, Vector3::new(0.04, 0.04, 0.005), align_z(&normal), checker(&normal))
        })
        .collect();
    let points = (0..n_points)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi = rng.random_range(0.0..TAU);
            let r = (1.0 - z * z).sqrt();
            Vector3::new(r * phi.cos(), r * phi.sin(), z) * SPHERE_R
        })
        .collect();
    Reference { scene: Scene::new(prims, Vector3::new(0.3, 0.3, 0.35)), points }
}

pub fn reference_scene(name: &str, seed: u64, surface_points: usize) -> Result<Reference, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match name {
        "thin-board" => Ok(thin_board(&mut rng, surface_points)),
        "checker-sphere" => Ok(checker_sphere(&mut rng, surface_points)),
        other => Err(SynthError::UnknownScene(other.to_string())),
    }
}

/// Cameras on a ring above the scene looking at the origin, with jittered
/// azimuths and alternating elevations.
pub fn ring_cameras(count: usize, size: u32, seed: u64) -> Vec<Camera> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
    (0..count)
        .map(|i| {
            let az = TAU * i as f64 / count as f64 + rng.random_range(-0.15..0.15);
            let el: f64 = if i % 2 == 0 { 0.35 } else { 0.75 } + rng.random_range(-0.05..0.05);
            let dist = 3.0;
            let eye = Vector3::new(dist * el.cos() * az.sin(), dist * el.sin(), dist * el.cos() * az.cos());
            Camera::look_at(eye, Vector3::zeros(), Vector3::y(), 1.5 * size as f64, size, size)
                .expect("ring camera is valid")
        })
        .collect()
}

/// Renders a named reference scene into a target set.
pub fn synth_scene(name: &str, opts: &SynthOptions) -> Result<TargetSet, SynthError> {
    if !(8..=64).contains(&opts.cameras) {
        return Err(SynthError::CameraCount(opts.cameras));
    }
    if opts.image_size < 16 {
        return Err(SynthError::ImageSize(opts.image_size));
    }
    let reference = reference_scene(name, opts.seed, opts.surface_points)?;
    let settings = RenderSettings::default();
    let views = ring_cameras(opts.cameras, opts.image_size, opts.seed)
        .into_iter()
        .map(|camera| {
            let image: Image = render(&reference.scene, &camera, &settings).image;
            View { camera, image }
        })
        .collect();
    Ok(TargetSet {
        name: name.to_string(),
        views,
        points: reference.points,
        background: reference.scene.background,
        domain: Aabb::cube(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_sized() {
        let opts = SynthOptions { image_size: 24, cameras: 8, surface_points: 500, seed: 3 };
        for name in SCENE_NAMES {
            let a = synth_scene(name, &opts).unwrap();
            let b = synth_scene(name, &opts).unwrap();
            assert_eq!(a.views.len(), 8);
            assert_eq!(a.points, b.points);
            for (va, vb) in a.views.iter().zip(&b.views) {
                assert_eq!(va.image, vb.image);
                assert!(va.image.matches(&va.camera));
            }
            assert!(a.points.iter().all(|p| a.domain.contains(p)));
        }
        assert!(matches!(synth_scene("teapot", &opts), Err(SynthError::UnknownScene(_))));
    }

    #[test]
    fn reference_objects_are_mostly_opaque() {
        for name in SCENE_NAMES {
            let r = reference_scene(name, 0, 10).unwrap();
            for cam in ring_cameras(8, 32, 0) {
                let out = render(&r.scene, &cam, &RenderSettings::default());
                let t = &out.final_transmittance;
                let covered: Vec<f64> = t.iter().copied().filter(|v| *v < 0.99).collect();
                assert!(!covered.is_empty());
                let mean = covered.iter().sum::<f64>() / covered.len() as f64;
                assert!(mean < 0.5, "{name}: mean transmittance {mean}");
            }
        }
    }

    #[test]
    fn thin_structures_get_little_surface_mass() {
        let r = reference_scene("thin-board", 1, 20_000).unwrap();
        let on_board = r.points.iter().filter(|p| (p.y - BOARD_Y).abs() < 1e-12).count();
        assert!(on_board as f64 / 20_000.0 > 0.8);
    }
}
