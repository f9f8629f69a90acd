//! Random scenes and cameras for oracle checks, benches and the CLI's
//! `oracle-check` command.

use crate::splat::{normalize_quaternion, Camera, GaussianPrimitive, Image, Scene};
use nalgebra::Vector3;
use rand::Rng;

/// Camera on a sphere of radius `dist` around the origin.
pub fn orbit_camera(rng: &mut impl Rng, dist: f64, size: u32) -> Camera {
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let phi: f64 = rng.random_range(-0.6..0.6);
    let eye = Vector3::new(dist * phi.cos() * theta.sin(), dist * phi.sin(), dist * phi.cos() * theta.cos());
    Camera::look_at(eye, Vector3::zeros(), Vector3::y(), size as f64 * 1.2, size, size).expect("orbit camera is valid")
}

pub fn random_primitive(rng: &mut impl Rng) -> GaussianPrimitive {
    GaussianPrimitive {
        center: Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)),
        log_scale: Vector3::new(
            rng.random_range(-2.8..-1.3),
            rng.random_range(-2.8..-1.3),
            rng.random_range(-2.8..-1.3),
        ),
        rotation: normalize_quaternion([
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]),
        opacity_logit: rng.random_range(-2.0..2.5),
        color: Vector3::new(rng.random(), rng.random(), rng.random()),
    }
}

pub fn random_scene(rng: &mut impl Rng, n: usize) -> Scene {
    let primitives = (0..n).map(|_| random_primitive(rng)).collect();
    Scene::new(primitives, Vector3::new(rng.random(), rng.random(), rng.random()))
}

pub fn random_image(rng: &mut impl Rng, width: u32, height: u32) -> Image {
    let data = (0..width as usize * height as usize * 3).map(|_| rng.random()).collect();
    Image::from_data(width, height, data)
}

/// Image with entries uniform in `[-1, 1]`, used as an upstream gradient.
pub fn random_signed_image(rng: &mut impl Rng, width: u32, height: u32) -> Image {
    let data = (0..width as usize * height as usize * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    Image::from_data(width, height, data)
}

/// Outcome of one contribution-versus-leave-one-out trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleTrial {
    pub primitives: usize,
    pub max_abs_dev: f64,
}

/// Compares the fused contribution pass with explicit leave-one-out renders
/// on `trials` random scenes of 1 to `max_primitives` primitives, rendered at
/// `size × size` with exact settings.
pub fn oracle_suite(seed: u64, trials: usize, max_primitives: usize, size: u32) -> Vec<OracleTrial> {
    use crate::raster::{contribution_pass, leave_one_out_oracle, render, RenderSettings};
    use rand::SeedableRng;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let settings = RenderSettings::exact();
    (0..trials)
        .map(|_| {
            let n = rng.random_range(1..=max_primitives.max(1));
            let scene = random_scene(&mut rng, n);
            let cam = orbit_camera(&mut rng, 4.0, size);
            let target = random_image(&mut rng, size, size);
            let out = render(&scene, &cam, &settings);
            let fused = contribution_pass(&scene, &cam, &out, &target).expect("buffers match");
            let max_abs_dev = (0..n)
                .map(|i| {
                    let reference = leave_one_out_oracle(&scene, &cam, &target, i, &settings).expect("index in range");
                    (fused.delta_l1[i] - reference).abs()
                })
                .fold(0.0, f64::max);
            OracleTrial { primitives: n, max_abs_dev }
        })
        .collect()
}

/// Frozen-decoder setup for checking score-function gradient estimators.
///
/// A random density over a cube is paired with a random decoder; the target is
/// the render of a handful of fixed leaf centers, so the loss varies from
/// leaf to leaf. Anchors are placed at leaf centers.
#[derive(Debug, Clone)]
pub struct ScoreSetup {
    pub density: crate::octree::OctreeDensity,
    pub decoder: crate::decoder::DecoderParams,
    pub camera: Camera,
    pub target: Image,
    pub background: Vector3<f64>,
}

/// Summed L1 loss of one render and the per-anchor contributions to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSample {
    pub loss: f64,
    pub contributions: Vec<f64>,
}

impl ScoreSetup {
    pub fn new(seed: u64, levels: u8, k: usize, size: u32) -> Self {
        use crate::decoder::{DecoderConfig, DecoderParams};
        use crate::octree::{Aabb, CellPath, OctreeDensity};
        use crate::raster::{render, RenderSettings};
        use rand::SeedableRng;

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let domain = Aabb::cube(1.0);
        let mut density = OctreeDensity::new(levels, domain).expect("valid depth");
        let mut frontier = vec![CellPath::ROOT];
        for _ in 0..levels {
            let mut next = Vec::new();
            for cell in frontier {
                density.set_logits(cell, std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
                next.extend((0..8).map(|c| cell.child(c)));
            }
            frontier = next;
        }
        let mut config = DecoderConfig::for_octree(levels, &domain, k);
        config.hidden = [16, 16];
        let decoder = DecoderParams::init(config, domain, &mut rng).expect("valid decoder config");
        let camera =
            Camera::look_at(Vector3::new(0.8, 1.2, 3.5), Vector3::zeros(), Vector3::y(), size as f64, size, size)
                .expect("fixed camera is valid");
        let background = Vector3::new(0.1, 0.1, 0.15);
        let mut setup = Self { density, decoder, camera, target: Image::new(size, size), background };
        let picks: Vec<CellPath> = (0..6).map(|_| frontier[rng.random_range(0..frontier.len())]).collect();
        let scene = setup.decode(&setup.anchors_at(&picks));
        setup.target = render(&scene, &setup.camera, &RenderSettings::exact()).image;
        setup
    }

    /// Anchors at the centers of `leaves`, with log-probabilities under the density.
    pub fn anchors_at(&self, leaves: &[crate::octree::CellPath]) -> crate::octree::AnchorSet {
        let domain = self.density.domain();
        crate::octree::AnchorSet {
            positions: leaves.iter().map(|l| l.bounds(&domain).center()).collect(),
            leaf_indices: leaves.to_vec(),
            log_prob: leaves.iter().map(|l| self.density.log_prob(l).expect("leaf at full depth")).collect(),
        }
    }

    fn decode(&self, anchors: &crate::octree::AnchorSet) -> Scene {
        crate::decoder::decode(anchors, &self.decoder, self.background).scene
    }

    pub fn evaluate(&self, anchors: &crate::octree::AnchorSet) -> ScoreSample {
        use crate::control::group_by_anchor;
        use crate::raster::{contribution_pass, render, RenderSettings};

        let scene = self.decode(anchors);
        let out = render(&scene, &self.camera, &RenderSettings::exact());
        let loss = out.image.data.iter().zip(&self.target.data).map(|(a, b)| (a - b).abs()).sum();
        let contrib = contribution_pass(&scene, &self.camera, &out, &self.target).expect("buffers match");
        let anchor_of = scene.anchor_of.as_deref().expect("decode sets anchor_of");
        let contributions = group_by_anchor(&contrib, anchor_of, anchors.len()).expect("decoded map is complete");
        ScoreSample { loss, contributions }
    }

    /// `∇ Σ_leaf q(leaf) L(leaf)` for single-anchor renders, by enumerating every leaf.
    pub fn exact_gradient(&self) -> crate::octree::LogitGrads {
        let leaves = all_leaves(self.density.levels());
        let anchors = self.anchors_at(&leaves);
        let weights: Vec<f64> = leaves
            .iter()
            .zip(&anchors.log_prob)
            .map(|(leaf, lp)| lp.exp() * self.evaluate(&self.anchors_at(&[*leaf])).loss)
            .collect();
        crate::control::density_gradient(&anchors, &weights, &self.density).expect("paths match the density")
    }
}

/// Every leaf of a full octree with `levels` levels, in code order.
pub fn all_leaves(levels: u8) -> Vec<crate::octree::CellPath> {
    let mut cells = vec![crate::octree::CellPath::ROOT];
    for _ in 0..levels {
        cells = cells.iter().flat_map(|c| (0..8).map(move |k| c.child(k))).collect();
    }
    cells
}
