//! Central finite-difference checks for the rasterizer backward pass.
//!
//! The checked scalar is `f(scene) = Σ grad_image ⊙ render(scene)`. The α
//! cutoff makes `f` piecewise smooth: when a perturbation moves some pixel's
//! α across 1/255 the hit structure of the ±h renders differs and the
//! difference quotient is meaningless. Such coordinates are retried with a
//! step 100× smaller, and skipped (and counted) if the structure still
//! changes.

use crate::raster::{backward, render, RenderOutput, RenderSettings};
use crate::splat::{Camera, GaussianPrimitive, Image, Scene};

pub const PARAMS_PER_PRIMITIVE: usize = 14;

/// Names of the 14 scalar attributes, in [`get_param`] order.
pub const PARAM_NAMES: [&str; PARAMS_PER_PRIMITIVE] = [
    "center.x",
    "center.y",
    "center.z",
    "log_scale.x",
    "log_scale.y",
    "log_scale.z",
    "rot.w",
    "rot.x",
    "rot.y",
    "rot.z",
    "opacity_logit",
    "color.r",
    "color.g",
    "color.b",
];

pub fn get_param(g: &GaussianPrimitive, k: usize) -> f64 {
    match k {
        0..=2 => g.center[k],
        3..=5 => g.log_scale[k - 3],
        6..=9 => g.rotation[k - 6],
        10 => g.opacity_logit,
        _ => g.color[k - 11],
    }
}

pub fn param_mut(g: &mut GaussianPrimitive, k: usize) -> &mut f64 {
    match k {
        0..=2 => &mut g.center[k],
        3..=5 => &mut g.log_scale[k - 3],
        6..=9 => &mut g.rotation[k - 6],
        10 => &mut g.opacity_logit,
        _ => &mut g.color[k - 11],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradMismatch {
    pub primitive: usize,
    pub param: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub compared: usize,
    /// Coordinates whose hit structure changed even at the smallest step.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub worst: Option<GradMismatch>,
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn weighted_sum(img: &Image, w: &Image) -> f64 {
    img.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
}

fn hit_signature(out: &RenderOutput) -> Vec<u32> {
    let hits = &out.per_pixel_hits;
    let mut sig = Vec::with_capacity(hits.total() + hits.pixel_count());
    for p in 0..hits.pixel_count() {
        sig.extend(hits.pixel(p).iter().map(|h| h.primitive));
        sig.push(u32::MAX);
    }
    sig
}

/// Compares every attribute gradient against central differences with step `h`.
///
/// `floor` bounds the denominator of the relative error from below so that
/// coordinates whose true gradient is numerically zero are compared in
/// absolute terms.
pub fn check_render_gradients(scene: &Scene, cam: &Camera, grad_image: &Image, h: f64, floor: f64) -> GradCheckReport {
    let settings = RenderSettings::exact();
    let out = render(scene, cam, &settings);
    let grads = backward(scene, cam, &out, grad_image).expect("buffers come from render");
    let base_sig = hit_signature(&out);
    let mut report = GradCheckReport::default();
    let mut work = scene.clone();
    for i in 0..scene.len() {
        for k in 0..PARAMS_PER_PRIMITIVE {
            let analytic = match k {
                0..=2 => grads.center[i][k],
                3..=5 => grads.log_scale[i][k - 3],
                6..=9 => grads.rotation[i][k - 6],
                10 => grads.opacity_logit[i],
                _ => grads.color[i][k - 11],
            };
            let x0 = get_param(&scene.primitives[i], k);
            let mut numeric = None;
            let mut step = h;
            for _ in 0..3 {
                *param_mut(&mut work.primitives[i], k) = x0 + step;
                let plus = render(&work, cam, &settings);
                let sig_p = hit_signature(&plus);
                *param_mut(&mut work.primitives[i], k) = x0 - step;
                let minus = render(&work, cam, &settings);
                let sig_m = hit_signature(&minus);
                *param_mut(&mut work.primitives[i], k) = x0;
                if sig_p == base_sig && sig_m == base_sig {
                    numeric = Some(
                        (weighted_sum(&plus.image, grad_image) - weighted_sum(&minus.image, grad_image)) / (2.0 * step),
                    );
                    break;
                }
                step *= 0.01;
            }
            let Some(numeric) = numeric else {
                report.skipped += 1;
                continue;
            };
            report.compared += 1;
            let rel_err = relative_error(analytic, numeric, floor);
            if report.worst.is_none() || rel_err > report.max_rel_err {
                report.max_rel_err = rel_err;
                report.worst = Some(GradMismatch { primitive: i, param: k, analytic, numeric, rel_err });
            }
        }
    }
    report
}
