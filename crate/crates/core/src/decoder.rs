//! Anchor decoder: a Fourier-feature perceptron that expands each anchor
//! into `K` Gaussian primitives placed at bounded offsets around it.
//!
//! Besides its position, each anchor is described by the log of the expected
//! number of anchors sharing its leaf, `ln P + log q(leaf)`, so that cluster
//! size and opacity can adapt to the sampling budget. The feature is treated
//! as a constant: no gradient flows from it into the density.

use crate::octree::{Aabb, AnchorSet};
use crate::raster::ParamGrads;
use crate::splat::{sigmoid, GaussianPrimitive, Scene};
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Outputs per primitive: offset (3), log-scale (3), quaternion (4), opacity logit, rgb (3).
pub const HEAD_WIDTH: usize = 14;

/// Anchors per parallel work item; fixed so reductions do not depend on thread count.
const CHUNK: usize = 32;

const CROWDING_SCALE: f64 = 0.25;

/// `ln P + log q(leaf)` for anchor `j`.
fn crowding(anchors: &AnchorSet, j: usize) -> f64 {
    (anchors.len() as f64).ln() + anchors.log_prob[j]
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid decoder config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub fourier_bands: usize,
    pub hidden: [usize; 2],
    /// Primitives per anchor.
    pub k: usize,
    /// Offsets are `offset_scale · tanh(raw)` per axis.
    pub offset_scale: f64,
    /// Added to the raw log-scale output.
    pub log_scale_base: f64,
    /// Added to the raw opacity-logit output.
    pub opacity_bias: f64,
}

impl DecoderConfig {
    /// Scales tied to the leaf size of an octree over `domain`.
    pub fn for_octree(levels: u8, domain: &Aabb, k: usize) -> Self {
        let edge = domain.extent().max() / (1u64 << levels) as f64;
        Self {
            fourier_bands: 4,
            hidden: [64, 64],
            k,
            offset_scale: 2.0 * edge,
            log_scale_base: (0.5 * edge).ln(),
            opacity_bias: 0.0,
        }
    }

    pub fn input_width(&self) -> usize {
        4 + 6 * self.fourier_bands
    }

    pub fn output_width(&self) -> usize {
        HEAD_WIDTH * self.k
    }

    pub fn weight_count(&self) -> usize {
        let [h1, h2] = self.hidden;
        h1 * self.input_width() + h1 + h2 * h1 + h2 + self.output_width() * h2 + self.output_width()
    }

    pub fn validate(&self) -> Result<(), DecoderError> {
        if self.k == 0 {
            return Err(DecoderError::InvalidConfig("k must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(DecoderError::InvalidConfig("hidden widths must be positive".into()));
        }
        if !(self.offset_scale.is_finite() && self.offset_scale > 0.0) {
            return Err(DecoderError::InvalidConfig(format!("offset_scale {} must be positive", self.offset_scale)));
        }
        if !self.log_scale_base.is_finite() || !self.opacity_bias.is_finite() {
            return Err(DecoderError::InvalidConfig("biases must be finite".into()));
        }
        Ok(())
    }
}

/// Offsets into the flat weight vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

impl Layout {
    fn new(c: &DecoderConfig) -> Self {
        let [h1, h2] = c.hidden;
        let w1 = 0;
        let b1 = w1 + h1 * c.input_width();
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + c.output_width() * h2;
        Self { w1, b1, w2, b2, w3, b3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub config: DecoderConfig,
    /// Anchor positions are normalized to `[-1, 1]³` over this box.
    pub domain: Aabb,
    pub weights: Vec<f64>,
}

/// Decoded primitives plus the offsets that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub scene: Scene,
    /// `center - anchor` for every primitive, anchor-major.
    pub offsets: Vec<Vector3<f64>>,
}

struct Activations {
    input: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    out: Vec<f64>,
}

impl DecoderParams {
    pub fn zeros(config: DecoderConfig, domain: Aabb) -> Result<Self, DecoderError> {
        config.validate()?;
        Ok(Self { weights: vec![0.0; config.weight_count()], config, domain })
    }

    /// Scaled normal initialization; the head starts small so primitives begin
    /// near their anchors with the configured base scale and opacity.
    pub fn init(config: DecoderConfig, domain: Aabb, rng: &mut impl Rng) -> Result<Self, DecoderError> {
        let mut p = Self::zeros(config, domain)?;
        let lay = Layout::new(&config);
        let [h1, h2] = config.hidden;
        let mut fill = |range: std::ops::Range<usize>, std: f64| {
            let n = Normal::new(0.0, std).expect("positive std");
            for v in &mut p.weights[range] {
                *v = n.sample(rng);
            }
        };
        fill(lay.w1..lay.b1, (1.0 / config.input_width() as f64).sqrt());
        fill(lay.w2..lay.b2, (1.0 / h1 as f64).sqrt());
        fill(lay.w3..lay.b3, 0.5 / (h2 as f64).sqrt());
        Ok(p)
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    fn check(&self) -> Result<(), DecoderError> {
        if self.weights.len() != self.config.weight_count() {
            return Err(DecoderError::ShapeMismatch(format!(
                "{} weights for a layout of {}",
                self.weights.len(),
                self.config.weight_count()
            )));
        }
        Ok(())
    }

    fn features(&self, x: &Vector3<f64>, crowding: f64) -> Vec<f64> {
        let ext = self.domain.extent();
        let u: Vec<f64> = (0..3).map(|d| 2.0 * (x[d] - self.domain.min[d]) / ext[d] - 1.0).collect();
        let mut f = Vec::with_capacity(self.config.input_width());
        f.extend_from_slice(&u);
        f.push(CROWDING_SCALE * crowding);
        for b in 0..self.config.fourier_bands {
            let w = std::f64::consts::PI * (1u64 << b) as f64;
            for &ud in &u {
                f.push((w * ud).sin());
                f.push((w * ud).cos());
            }
        }
        f
    }

    fn forward(&self, x: &Vector3<f64>, crowding: f64) -> Activations {
        let c = &self.config;
        let lay = Layout::new(c);
        let [h1, h2] = c.hidden;
        let w = &self.weights;
        let input = self.features(x, crowding);
        let nin = input.len();
        let a1: Vec<f64> = (0..h1)
            .map(|r| {
                let row = &w[lay.w1 + r * nin..lay.w1 + (r + 1) * nin];
                (w[lay.b1 + r] + dot(row, &input)).tanh()
            })
            .collect();
        let a2: Vec<f64> = (0..h2)
            .map(|r| {
                let row = &w[lay.w2 + r * h1..lay.w2 + (r + 1) * h1];
                (w[lay.b2 + r] + dot(row, &a1)).tanh()
            })
            .collect();
        let out: Vec<f64> = (0..c.output_width())
            .map(|r| w[lay.b3 + r] + dot(&w[lay.w3 + r * h2..lay.w3 + (r + 1) * h2], &a2))
            .collect();
        Activations { input, a1, a2, out }
    }

    fn primitives_from(&self, anchor: &Vector3<f64>, out: &[f64]) -> Vec<(GaussianPrimitive, Vector3<f64>)> {
        let c = &self.config;
        out.chunks_exact(HEAD_WIDTH)
            .map(|h| {
                let offset = Vector3::new(h[0].tanh(), h[1].tanh(), h[2].tanh()) * c.offset_scale;
                let g = GaussianPrimitive {
                    center: anchor + offset,
                    log_scale: Vector3::new(h[3], h[4], h[5]).add_scalar(c.log_scale_base),
                    rotation: [h[6] + 1.0, h[7], h[8], h[9]],
                    opacity_logit: h[10] + c.opacity_bias,
                    color: Vector3::new(sigmoid(h[11]), sigmoid(h[12]), sigmoid(h[13])),
                };
                (g, offset)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Expands every anchor into `K` primitives. `background` is copied into the scene.
pub fn decode(anchors: &AnchorSet, params: &DecoderParams, background: Vector3<f64>) -> Decoded {
    params.check().expect("decoder weights match their layout");
    let per_anchor: Vec<Vec<(GaussianPrimitive, Vector3<f64>)>> = anchors
        .positions
        .par_iter()
        .enumerate()
        .with_min_len(CHUNK)
        .map(|(j, x)| params.primitives_from(x, &params.forward(x, crowding(anchors, j)).out))
        .collect();
    let k = params.k();
    let mut primitives = Vec::with_capacity(anchors.len() * k);
    let mut offsets = Vec::with_capacity(anchors.len() * k);
    let mut anchor_of = Vec::with_capacity(anchors.len() * k);
    for (a, prims) in per_anchor.into_iter().enumerate() {
        for (g, o) in prims {
            primitives.push(g);
            offsets.push(o);
            anchor_of.push(a);
        }
    }
    let mut scene = Scene::new(primitives, background);
    scene.anchor_of = Some(anchor_of);
    Decoded { scene, offsets }
}

/// Gradient of a scalar loss with respect to the decoder weights, given its
/// gradient with respect to the decoded primitives (anchor-major).
pub fn decode_backward(
    anchors: &AnchorSet,
    params: &DecoderParams,
    grads: &ParamGrads,
) -> Result<Vec<f64>, DecoderError> {
    params.check()?;
    let k = params.k();
    if grads.len() != anchors.len() * k {
        return Err(DecoderError::ShapeMismatch(format!(
            "{} primitive gradients for {} anchors × {k}",
            grads.len(),
            anchors.len()
        )));
    }
    let n = params.weights.len();
    let partials: Vec<Vec<f64>> = anchors
        .positions
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut acc = vec![0.0; n];
            for (j, x) in chunk.iter().enumerate() {
                let a = ci * CHUNK + j;
                anchor_backward(params, x, crowding(anchors, a), grads, a * k, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; n];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    Ok(total)
}

fn anchor_backward(
    params: &DecoderParams,
    x: &Vector3<f64>,
    crowding: f64,
    grads: &ParamGrads,
    first: usize,
    acc: &mut [f64],
) {
    let c = &params.config;
    let lay = Layout::new(c);
    let [h1, h2] = c.hidden;
    let w = &params.weights;
    let act = params.forward(x, crowding);

    let mut g_out = vec![0.0; c.output_width()];
    for kk in 0..c.k {
        let i = first + kk;
        let h = &act.out[kk * HEAD_WIDTH..(kk + 1) * HEAD_WIDTH];
        let g = &mut g_out[kk * HEAD_WIDTH..(kk + 1) * HEAD_WIDTH];
        for d in 0..3 {
            let t = h[d].tanh();
            g[d] = grads.center[i][d] * c.offset_scale * (1.0 - t * t);
            g[3 + d] = grads.log_scale[i][d];
            let s = sigmoid(h[11 + d]);
            g[11 + d] = grads.color[i][d] * s * (1.0 - s);
        }
        g[6..10].copy_from_slice(&grads.rotation[i]);
        g[10] = grads.opacity_logit[i];
    }
    if g_out.iter().all(|v| *v == 0.0) {
        return;
    }

    let mut g_a2 = vec![0.0; h2];
    for r in 0..c.output_width() {
        let gr = g_out[r];
        if gr == 0.0 {
            continue;
        }
        acc[lay.b3 + r] += gr;
        let base = lay.w3 + r * h2;
        for q in 0..h2 {
            acc[base + q] += gr * act.a2[q];
            g_a2[q] += gr * w[base + q];
        }
    }
    let g_z2: Vec<f64> = (0..h2).map(|q| g_a2[q] * (1.0 - act.a2[q] * act.a2[q])).collect();
    let mut g_a1 = vec![0.0; h1];
    for r in 0..h2 {
        acc[lay.b2 + r] += g_z2[r];
        let base = lay.w2 + r * h1;
        for q in 0..h1 {
            acc[base + q] += g_z2[r] * act.a1[q];
            g_a1[q] += g_z2[r] * w[base + q];
        }
    }
    let nin = act.input.len();
    for r in 0..h1 {
        let gz = g_a1[r] * (1.0 - act.a1[r] * act.a1[r]);
        acc[lay.b1 + r] += gz;
        let base = lay.w1 + r * nin;
        for q in 0..nin {
            acc[base + q] += gz * act.input[q];
        }
    }
}

/// Cluster compactness and separation penalty over decoded offsets.
///
/// Returns the loss and its gradient with respect to every offset.
pub fn offset_reg(
    anchors: &AnchorSet,
    offsets: &[Vector3<f64>],
    k: usize,
    gamma: f64,
) -> Result<(f64, Vec<Vector3<f64>>), DecoderError> {
    let p = anchors.len();
    if k == 0 || offsets.len() != p * k {
        return Err(DecoderError::ShapeMismatch(format!("{} offsets for {p} anchors × {k}", offsets.len())));
    }
    let mut grads = vec![Vector3::zeros(); offsets.len()];
    if p == 0 {
        return Ok((0.0, grads));
    }
    let kf = k as f64;
    let pf = p as f64;
    let mut sigma = vec![0.0; p];
    let mut mean = vec![Vector3::zeros(); p];
    for i in 0..p {
        let cluster = &offsets[i * k..(i + 1) * k];
        mean[i] = cluster.iter().sum::<Vector3<f64>>() / kf;
        sigma[i] = (cluster.iter().map(|d| d.norm_squared()).sum::<f64>() / kf).sqrt();
    }
    // d sigma_i / d delta_ik = delta_ik / (K sigma_i); d |mean_i| / d delta_ik = mean_i / (K |mean_i|)
    let mut g_sigma = vec![0.0; p];
    let mut center = 0.0;
    for i in 0..p {
        let m = mean[i].norm();
        let v = m - gamma * sigma[i];
        if v > 0.0 {
            center += v / pf;
            g_sigma[i] -= gamma / pf;
            if m > 0.0 {
                let gm = mean[i] / (m * kf * pf);
                for d in &mut grads[i * k..(i + 1) * k] {
                    *d += gm;
                }
            }
        }
    }
    let mut sep = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let v = sigma[i] - (anchors.positions[i] - anchors.positions[j]).norm();
            if v > 0.0 {
                sep += v / (pf * pf);
                g_sigma[i] += 1.0 / (pf * pf);
            }
        }
    }
    for i in 0..p {
        if g_sigma[i] != 0.0 && sigma[i] > 0.0 {
            for kk in 0..k {
                let idx = i * k + kk;
                grads[idx] += offsets[idx] * (g_sigma[i] / (kf * sigma[i]));
            }
        }
    }
    Ok((center + sep, grads))
}

/// `λ₁ · mean volume + λ₂ · mean (1 − α)` over the scene's primitives.
pub fn volume_opacity_reg(scene: &Scene, lambda_volume: f64, lambda_opacity: f64) -> (f64, ParamGrads) {
    let n = scene.len();
    let mut grads = ParamGrads::zeros(n);
    if n == 0 {
        return (0.0, grads);
    }
    let nf = n as f64;
    let mut loss = 0.0;
    for (i, g) in scene.primitives.iter().enumerate() {
        let (s, live) = g.scales();
        let vol = s.x * s.y * s.z;
        let a = g.opacity();
        loss += lambda_volume * vol / nf + lambda_opacity * (1.0 - a) / nf;
        for d in 0..3 {
            if live[d] {
                grads.log_scale[i][d] = lambda_volume * vol / nf;
            }
        }
        grads.opacity_logit[i] = -lambda_opacity * a * (1.0 - a) / nf;
    }
    (loss, grads)
}
