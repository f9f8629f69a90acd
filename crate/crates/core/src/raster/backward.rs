use super::kernel::{self, prepare_kernels, Kernel, TILE};
use super::{Precision, RasterError, RenderOutput};
use crate::splat::{normalize_quaternion_vjp, project_parts, quaternion_matrix_vjp, Camera, Image, Scene};
use nalgebra::{Matrix2, Matrix3, Vector3};
use num_traits::Float;
use rayon::prelude::*;

/// Gradients of a scalar loss with respect to every primitive attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub center: Vec<Vector3<f64>>,
    pub log_scale: Vec<Vector3<f64>>,
    /// With respect to the raw (unnormalized) quaternion.
    pub rotation: Vec<[f64; 4]>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<Vector3<f64>>,
}

impl ParamGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            center: vec![Vector3::zeros(); n],
            log_scale: vec![Vector3::zeros(); n],
            rotation: vec![[0.0; 4]; n],
            opacity_logit: vec![0.0; n],
            color: vec![Vector3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center.is_empty()
    }

    pub fn add_scaled(&mut self, other: &ParamGrads, s: f64) {
        assert_eq!(self.len(), other.len());
        for i in 0..self.len() {
            self.center[i] += other.center[i] * s;
            self.log_scale[i] += other.log_scale[i] * s;
            for k in 0..4 {
                self.rotation[i][k] += other.rotation[i][k] * s;
            }
            self.opacity_logit[i] += other.opacity_logit[i] * s;
            self.color[i] += other.color[i] * s;
        }
    }

    pub fn is_finite(&self) -> bool {
        (0..self.len()).all(|i| {
            self.center[i].iter().all(|v| v.is_finite())
                && self.log_scale[i].iter().all(|v| v.is_finite())
                && self.rotation[i].iter().all(|v| v.is_finite())
                && self.opacity_logit[i].is_finite()
                && self.color[i].iter().all(|v| v.is_finite())
        })
    }
}

/// Per-primitive change in summed L1 loss caused by the primitive's presence:
/// `delta_l1[i] = L1(I) - L1(I without i)`, summed over pixels and channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionBuffer {
    pub delta_l1: Vec<f64>,
}

/// Screen-space gradient slots: mean (2), conic (3), opacity, color (3).
const G_MEAN: usize = 0;
const G_CONIC: usize = 2;
const G_OPACITY: usize = 5;
const G_COLOR: usize = 6;
const G_LEN: usize = 9;

fn check_buffers(scene: &Scene, cam: &Camera, out: &RenderOutput, extra: &[(&str, &Image)]) -> Result<(), RasterError> {
    if !out.image.matches(cam) {
        return Err(RasterError::MismatchedBuffers(format!(
            "render output is {}x{} but camera is {}x{}",
            out.image.width, out.image.height, cam.width, cam.height
        )));
    }
    if out.final_transmittance.len() != cam.pixel_count() || out.per_pixel_hits.pixel_count() != cam.pixel_count() {
        return Err(RasterError::MismatchedBuffers("per-pixel buffers do not cover the image".into()));
    }
    if out.splats.len() != scene.len() {
        return Err(RasterError::MismatchedBuffers(format!(
            "render output holds {} primitives, scene has {}",
            out.splats.len(),
            scene.len()
        )));
    }
    for (name, img) in extra {
        if !img.matches(cam) {
            return Err(RasterError::MismatchedBuffers(format!(
                "{name} is {}x{} but camera is {}x{}",
                img.width, img.height, cam.width, cam.height
            )));
        }
    }
    Ok(())
}

/// Gradient of `Σ_p grad_image ⊙ I_p` with respect to all primitive attributes.
pub fn backward(
    scene: &Scene,
    cam: &Camera,
    out: &RenderOutput,
    grad_image: &Image,
) -> Result<ParamGrads, RasterError> {
    check_buffers(scene, cam, out, &[("grad_image", grad_image)])?;
    let (screen, _) = traverse(scene, cam, out, Some(grad_image), None);
    Ok(chain_to_params(scene, cam, out, &screen.unwrap()))
}

/// Per-primitive L1 contributions against `target`, without attribute gradients.
pub fn contribution_pass(
    scene: &Scene,
    cam: &Camera,
    out: &RenderOutput,
    target: &Image,
) -> Result<ContributionBuffer, RasterError> {
    check_buffers(scene, cam, out, &[("target", target)])?;
    let (_, delta) = traverse(scene, cam, out, None, Some(target));
    Ok(ContributionBuffer { delta_l1: delta.unwrap() })
}

/// One reverse traversal producing both the attribute gradients and the
/// L1 contribution buffer.
pub fn backward_with_contributions(
    scene: &Scene,
    cam: &Camera,
    out: &RenderOutput,
    grad_image: &Image,
    target: &Image,
) -> Result<(ParamGrads, ContributionBuffer), RasterError> {
    check_buffers(scene, cam, out, &[("grad_image", grad_image), ("target", target)])?;
    let (screen, delta) = traverse(scene, cam, out, Some(grad_image), Some(target));
    Ok((chain_to_params(scene, cam, out, &screen.unwrap()), ContributionBuffer { delta_l1: delta.unwrap() }))
}

type ScreenGrads = Vec<[f64; G_LEN]>;

fn traverse(
    scene: &Scene,
    cam: &Camera,
    out: &RenderOutput,
    grad_image: Option<&Image>,
    target: Option<&Image>,
) -> (Option<ScreenGrads>, Option<Vec<f64>>) {
    match out.settings.precision {
        Precision::High => traverse_in::<f64>(scene, cam, out, grad_image, target),
        Precision::Low => traverse_in::<f32>(scene, cam, out, grad_image, target),
    }
}

struct BandAcc<F> {
    screen: Vec<[F; G_LEN]>,
    delta: Vec<F>,
}

fn traverse_in<F: Float + Send + Sync>(
    scene: &Scene,
    cam: &Camera,
    out: &RenderOutput,
    grad_image: Option<&Image>,
    target: Option<&Image>,
) -> (Option<ScreenGrads>, Option<Vec<f64>>) {
    let n = scene.len();
    let kernels = prepare_kernels::<F>(&out.splats, &out.sorted_order, cam);
    let mut slot_of = vec![u32::MAX; n];
    for (slot, k) in kernels.iter().enumerate() {
        slot_of[k.index as usize] = slot as u32;
    }
    let bg = kernel::rgb::<F>(&scene.background);
    let colors: Vec<[F; 3]> = scene.primitives.iter().map(|g| kernel::rgb::<F>(&g.color)).collect();
    let tiles_y = cam.height.div_ceil(TILE);
    let want_grad = grad_image.is_some();
    let want_delta = target.is_some();
    let hits = &out.per_pixel_hits;

    let do_band = |ty: u32| -> BandAcc<F> {
        let mut acc = BandAcc {
            screen: if want_grad { vec![[F::zero(); G_LEN]; kernels.len()] } else { Vec::new() },
            delta: if want_delta { vec![F::zero(); kernels.len()] } else { Vec::new() },
        };
        let mut trans: Vec<F> = Vec::new();
        let y0 = ty * TILE;
        let y1 = (y0 + TILE).min(cam.height);
        for y in y0..y1 {
            for x in 0..cam.width {
                let p = (y * cam.width + x) as usize;
                let list = hits.pixel(p);
                if list.is_empty() {
                    continue;
                }
                let g = grad_image.map(|gi| {
                    [
                        F::from(gi.data[p * 3]).unwrap(),
                        F::from(gi.data[p * 3 + 1]).unwrap(),
                        F::from(gi.data[p * 3 + 2]).unwrap(),
                    ]
                });
                let residual = target.map(|t| {
                    let mut r = [F::zero(); 3];
                    for ch in 0..3 {
                        r[ch] = F::from(out.image.data[p * 3 + ch] - t.data[p * 3 + ch]).unwrap();
                    }
                    r
                });
                // transmittance in front of each hit, same recurrence as forward
                trans.clear();
                let mut t = F::one();
                for h in list {
                    trans.push(t);
                    t = t * (F::one() - F::from(h.alpha).unwrap());
                }
                let (px, py) = kernel::pixel_center::<F>(x, y);
                // normalized color seen behind the current hit
                let mut back = bg;
                for (k, h) in list.iter().enumerate().rev() {
                    let i = h.primitive as usize;
                    let slot = slot_of[i] as usize;
                    let alpha = F::from(h.alpha).unwrap();
                    let tk = trans[k];
                    let c = colors[i];
                    let w = tk * alpha;
                    if let Some(r) = residual {
                        let mut d = F::zero();
                        for ch in 0..3 {
                            let dc = w * (c[ch] - back[ch]);
                            d = d + r[ch].abs() - (r[ch] - dc).abs();
                        }
                        acc.delta[slot] = acc.delta[slot] + d;
                    }
                    if let Some(g) = g {
                        let s = &mut acc.screen[slot];
                        let mut d_alpha = F::zero();
                        for ch in 0..3 {
                            s[G_COLOR + ch] = s[G_COLOR + ch] + g[ch] * w;
                            d_alpha = d_alpha + g[ch] * tk * (c[ch] - back[ch]);
                        }
                        let kern: &Kernel<F> = &kernels[slot];
                        let ev = kern.eval(px, py).expect("stored hit passed the cutoff");
                        if !ev.saturated {
                            let half = F::from(0.5).unwrap();
                            let two = F::one() + F::one();
                            s[G_OPACITY] = s[G_OPACITY] + d_alpha * ev.gauss;
                            let d_q = -half * ev.alpha * d_alpha;
                            let [ca, cb, cc] = kern.conic;
                            s[G_MEAN] = s[G_MEAN] - two * d_q * (ca * ev.dx + cb * ev.dy);
                            s[G_MEAN + 1] = s[G_MEAN + 1] - two * d_q * (cb * ev.dx + cc * ev.dy);
                            s[G_CONIC] = s[G_CONIC] + d_q * ev.dx * ev.dx;
                            s[G_CONIC + 1] = s[G_CONIC + 1] + d_q * two * ev.dx * ev.dy;
                            s[G_CONIC + 2] = s[G_CONIC + 2] + d_q * ev.dy * ev.dy;
                        }
                    }
                    for ch in 0..3 {
                        back[ch] = alpha * c[ch] + (F::one() - alpha) * back[ch];
                    }
                }
            }
        }
        acc
    };
    let bands: Vec<BandAcc<F>> = if out.settings.parallel {
        (0..tiles_y).into_par_iter().map(do_band).collect()
    } else {
        (0..tiles_y).map(do_band).collect()
    };

    let mut screen = want_grad.then(|| vec![[0.0; G_LEN]; n]);
    let mut delta = want_delta.then(|| vec![0.0; n]);
    for band in &bands {
        for (slot, k) in kernels.iter().enumerate() {
            let i = k.index as usize;
            if let Some(screen) = screen.as_mut() {
                for j in 0..G_LEN {
                    screen[i][j] += band.screen[slot][j].to_f64().unwrap();
                }
            }
            if let Some(delta) = delta.as_mut() {
                delta[i] += band.delta[slot].to_f64().unwrap();
            }
        }
    }
    (screen, delta)
}

/// Chains screen-space gradients through the EWA projection.
fn chain_to_params(scene: &Scene, cam: &Camera, out: &RenderOutput, screen: &ScreenGrads) -> ParamGrads {
    let n = scene.len();
    let mut grads = ParamGrads::zeros(n);
    let f = cam.focal;
    for i in 0..n {
        if out.splats[i].is_none() {
            continue;
        }
        let s = &screen[i];
        if s.iter().all(|v| *v == 0.0) {
            continue;
        }
        let g = &scene.primitives[i];
        let (splat, parts) = project_parts(g, cam).expect("primitive was projected in forward");
        grads.color[i] = Vector3::new(s[G_COLOR], s[G_COLOR + 1], s[G_COLOR + 2]);
        let o = splat.opacity;
        grads.opacity_logit[i] = s[G_OPACITY] * o * (1.0 - o);

        // conic -> 2D covariance: dΣ⁻¹ = -Σ⁻¹ dΣ Σ⁻¹
        let [a, b, c] = splat.conic();
        let q = Matrix2::new(a, b, b, c);
        let g_q = Matrix2::new(s[G_CONIC], 0.5 * s[G_CONIC + 1], 0.5 * s[G_CONIC + 1], s[G_CONIC + 2]);
        let g_cov = -(q * g_q * q);

        // cov2d = J A Jᵀ with A = W Σ Wᵀ
        let j = parts.jacobian;
        let g_a: Matrix3<f64> = j.transpose() * g_cov * j;
        let g_j = 2.0 * g_cov * j * parts.cam_cov;

        let t = parts.t;
        let iz = 1.0 / t.z;
        let iz2 = iz * iz;
        let mut g_t = Vector3::new(
            s[G_MEAN] * f * iz,
            s[G_MEAN + 1] * f * iz,
            -(s[G_MEAN] * f * t.x + s[G_MEAN + 1] * f * t.y) * iz2,
        );
        g_t.x += g_j[(0, 2)] * (-f * iz2);
        g_t.y += g_j[(1, 2)] * (-f * iz2);
        g_t.z += (g_j[(0, 0)] + g_j[(1, 1)]) * (-f * iz2)
            + g_j[(0, 2)] * (2.0 * f * t.x * iz2 * iz)
            + g_j[(1, 2)] * (2.0 * f * t.y * iz2 * iz);
        grads.center[i] = cam.rotation.transpose() * g_t;

        // Σ = M Mᵀ with M = R S
        let g_sigma = cam.rotation.transpose() * g_a * cam.rotation;
        let rot = g.rotation_matrix();
        let (scales, live) = g.scales();
        let m = rot * Matrix3::from_diagonal(&scales);
        let g_m = (g_sigma + g_sigma.transpose()) * m;
        let mut g_r = g_m;
        for col in 0..3 {
            let mut g_s = 0.0;
            for row in 0..3 {
                g_r[(row, col)] *= scales[col];
                g_s += g_m[(row, col)] * rot[(row, col)];
            }
            grads.log_scale[i][col] = if live[col] { g_s * scales[col] } else { 0.0 };
        }
        let g_unit = quaternion_matrix_vjp(g.unit_quaternion(), &g_r);
        grads.rotation[i] = normalize_quaternion_vjp(g.rotation, g_unit);
    }
    grads
}
