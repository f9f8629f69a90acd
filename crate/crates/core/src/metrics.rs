//! Image losses and quality metrics, with gradients where training needs them.

use crate::splat::Image;
use thiserror::Error;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(u32, u32, u32, u32),
    #[error("image {0}x{1} is smaller than the {SSIM_WINDOW}-pixel SSIM window")]
    TooSmall(u32, u32),
}

fn check_sizes(a: &Image, b: &Image) -> Result<(), MetricError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricError::SizeMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// Mean absolute error over pixels and channels, with its gradient.
pub fn l1_mean(img: &Image, target: &Image) -> Result<(f64, Image), MetricError> {
    check_sizes(img, target)?;
    let n = img.data.len() as f64;
    let mut grad = Image::new(img.width, img.height);
    let mut total = 0.0;
    for (i, (a, b)) in img.data.iter().zip(&target.data).enumerate() {
        let d = a - b;
        total += d.abs();
        grad.data[i] = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((total / n, grad))
}

pub fn mse(img: &Image, target: &Image) -> Result<f64, MetricError> {
    check_sizes(img, target)?;
    let n = img.data.len() as f64;
    Ok(img.data.iter().zip(&target.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(img: &Image, target: &Image) -> Result<f64, MetricError> {
    Ok(psnr_from_mse(mse(img, target)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Single-channel plane, row-major.
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel(img: &Image, c: usize) -> Self {
        let v = img.data.iter().skip(c).step_by(3).copied().collect();
        Self { w: img.width as usize, h: img.height as usize, v }
    }

    fn map2(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane { w: self.w, h: self.h, v: self.v.iter().zip(&o.v).map(|(a, b)| f(*a, *b)).collect() }
    }

    /// Valid-mode separable correlation with the window.
    fn filter_valid(&self, k: &[f64; SSIM_WINDOW]) -> Plane {
        let (ow, oh) = (self.w + 1 - SSIM_WINDOW, self.h + 1 - SSIM_WINDOW);
        let mut tmp = vec![0.0; ow * self.h];
        for y in 0..self.h {
            for x in 0..ow {
                tmp[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * self.v[y * self.w + x + i]).sum();
            }
        }
        let mut v = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                v[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
            }
        }
        Plane { w: ow, h: oh, v }
    }

    /// Adjoint of [`Plane::filter_valid`]: scatters a valid-size map back to full size.
    fn filter_adjoint(&self, k: &[f64; SSIM_WINDOW], w: usize, h: usize) -> Plane {
        let mut tmp = vec![0.0; self.w * h];
        for y in 0..self.h {
            for x in 0..self.w {
                let g = self.v[y * self.w + x];
                for i in 0..SSIM_WINDOW {
                    tmp[(y + i) * self.w + x] += k[i] * g;
                }
            }
        }
        let mut v = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..self.w {
                let g = tmp[y * self.w + x];
                for i in 0..SSIM_WINDOW {
                    v[y * w + x + i] += k[i] * g;
                }
            }
        }
        Plane { w, h, v }
    }
}

/// Mean SSIM over valid window positions and channels, with its gradient
/// with respect to `img`.
pub fn ssim(img: &Image, target: &Image) -> Result<(f64, Image), MetricError> {
    check_sizes(img, target)?;
    if (img.width as usize) < SSIM_WINDOW || (img.height as usize) < SSIM_WINDOW {
        return Err(MetricError::TooSmall(img.width, img.height));
    }
    let k = gaussian_kernel();
    let mut grad = Image::new(img.width, img.height);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let x = Plane::channel(img, c);
        let y = Plane::channel(target, c);
        let mx = x.filter_valid(&k);
        let my = y.filter_valid(&k);
        let sxx = x.map2(&x, |a, b| a * b).filter_valid(&k);
        let syy = y.map2(&y, |a, b| a * b).filter_valid(&k);
        let sxy = x.map2(&y, |a, b| a * b).filter_valid(&k);
        let n = mx.v.len();
        let (mut ga, mut gb, mut gc) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for p in 0..n {
            let (ux, uy) = (mx.v[p], my.v[p]);
            let vx = sxx.v[p] - ux * ux;
            let vy = syy.v[p] - uy * uy;
            let cxy = sxy.v[p] - ux * uy;
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * cxy + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = vx + vy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            let ds_dux = s * (2.0 * uy / a1 - 2.0 * ux / b1);
            let ds_dvx = -s / b2;
            let ds_dcxy = 2.0 * s / a2;
            ga[p] = ds_dux - 2.0 * ux * ds_dvx - uy * ds_dcxy;
            gb[p] = 2.0 * ds_dvx;
            gc[p] = ds_dcxy;
        }
        count += n;
        let lift = |v: Vec<f64>| Plane { w: mx.w, h: mx.h, v }.filter_adjoint(&k, x.w, x.h);
        let (fa, fb, fc) = (lift(ga), lift(gb), lift(gc));
        for q in 0..x.v.len() {
            grad.data[q * 3 + c] = fa.v[q] + x.v[q] * fb.v[q] + y.v[q] * fc.v[q];
        }
    }
    let inv = 1.0 / count as f64;
    for g in &mut grad.data {
        *g *= inv;
    }
    Ok((total * inv, grad))
}

/// `mean |img − target| + λ_ssim (1 − SSIM)` and its gradient.
pub fn render_loss(img: &Image, target: &Image, lambda_ssim: f64) -> Result<(f64, Image), MetricError> {
    let (l1, mut grad) = l1_mean(img, target)?;
    if lambda_ssim == 0.0 {
        return Ok((l1, grad));
    }
    let (s, gs) = ssim(img, target)?;
    for (g, d) in grad.data.iter_mut().zip(&gs.data) {
        *g -= lambda_ssim * d;
    }
    Ok((l1 + lambda_ssim * (1.0 - s), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::random_image;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_images() {
        let img = random_image(&mut ChaCha8Rng::seed_from_u64(1), 16, 14);
        let (l, g) = render_loss(&img, &img, 0.2).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(g.data.iter().all(|v| v.abs() < 1e-12));
        assert!((ssim(&img, &img).unwrap().0 - 1.0).abs() < 1e-12);
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP);
    }

    #[test]
    fn constant_offset_l1_and_psnr() {
        let a = Image::filled(12, 12, Vector3::repeat(0.2));
        let b = Image::filled(12, 12, Vector3::repeat(0.5));
        assert!((l1_mean(&a, &b).unwrap().0 - 0.3).abs() < 1e-12);
        assert!((psnr_from_mse(1e-3) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn size_checks() {
        let a = Image::new(12, 12);
        let b = Image::new(12, 13);
        assert!(matches!(render_loss(&a, &b, 0.2), Err(MetricError::SizeMismatch(..))));
        let small = Image::new(8, 8);
        assert!(matches!(ssim(&small, &small), Err(MetricError::TooSmall(..))));
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_image(&mut rng, 14, 13);
        let y = random_image(&mut rng, 14, 13);
        let (_, g) = ssim(&x, &y).unwrap();
        let eps = 1e-6;
        for i in (0..x.data.len()).step_by(7) {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let fd = (ssim(&xp, &y).unwrap().0 - ssim(&xm, &y).unwrap().0) / (2.0 * eps);
            let rel = (fd - g.data[i]).abs() / fd.abs().max(g.data[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "{i}: {fd} vs {}", g.data[i]);
        }
    }

    #[test]
    fn render_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_image(&mut rng, 12, 12);
        let y = random_image(&mut rng, 12, 12);
        let (_, g) = render_loss(&x, &y, 0.2).unwrap();
        let eps = 1e-7;
        for i in (0..x.data.len()).step_by(5) {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let fd = (render_loss(&xp, &y, 0.2).unwrap().0 - render_loss(&xm, &y, 0.2).unwrap().0) / (2.0 * eps);
            assert!((fd - g.data[i]).abs() < 1e-6);
        }
    }
}
