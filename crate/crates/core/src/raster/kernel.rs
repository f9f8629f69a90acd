use crate::splat::{Camera, Splat2D, ALPHA_MAX, ALPHA_MIN};
use nalgebra::Vector3;
use num_traits::Float;

pub(crate) const TILE: u32 = 16;

#[inline]
pub(crate) fn rgb<F: Float>(v: &Vector3<f64>) -> [F; 3] {
    [F::from(v.x).unwrap(), F::from(v.y).unwrap(), F::from(v.z).unwrap()]
}

#[inline]
pub(crate) fn pixel_center<F: Float>(x: u32, y: u32) -> (F, F) {
    (F::from(x as f64 + 0.5).unwrap(), F::from(y as f64 + 0.5).unwrap())
}

/// Screen-space splat in the working precision, plus its pixel footprint.
pub(crate) struct Kernel<F> {
    pub index: u32,
    pub mean: [F; 2],
    pub conic: [F; 3],
    pub opacity: F,
    pub color: [F; 3],
    /// Inclusive-exclusive pixel bounds `[x0, x1) × [y0, y1)`.
    pub bounds: [u32; 4],
}

pub(crate) struct AlphaEval<F> {
    pub alpha: F,
    pub gauss: F,
    /// The 0.999 clamp is active, so α is locally constant.
    pub saturated: bool,
    pub dx: F,
    pub dy: F,
}

impl<F: Float> Kernel<F> {
    #[inline]
    pub fn covers(&self, x: u32, y: u32) -> bool {
        x >= self.bounds[0] && x < self.bounds[1] && y >= self.bounds[2] && y < self.bounds[3]
    }

    /// Blending weight at a pixel center, or `None` below the cutoff.
    #[inline]
    pub fn eval(&self, px: F, py: F) -> Option<AlphaEval<F>> {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        let two = F::one() + F::one();
        let q = self.conic[0] * dx * dx + two * self.conic[1] * dx * dy + self.conic[2] * dy * dy;
        let half = F::from(0.5).unwrap();
        let gauss = (-half * q).exp();
        let raw = self.opacity * gauss;
        let amax = F::from(ALPHA_MAX).unwrap();
        let (alpha, saturated) = if raw > amax { (amax, true) } else { (raw, false) };
        if alpha < F::from(ALPHA_MIN).unwrap() {
            return None;
        }
        Some(AlphaEval { alpha, gauss, saturated, dx, dy })
    }
}

/// Kernels in depth order; culled or invisible splats are dropped.
pub(crate) fn prepare_kernels<F: Float>(splats: &[Option<Splat2D>], order: &[usize], cam: &Camera) -> Vec<Kernel<F>> {
    let mut out = Vec::with_capacity(order.len());
    for &i in order {
        let s = splats[i].as_ref().unwrap();
        if s.opacity * 1.0 < ALPHA_MIN {
            continue;
        }
        // dᵀ Σ⁻¹ d ≤ q_max is required for α ≥ 1/255; its extent along x is
        // sqrt(q_max Σ_xx). One pixel of padding absorbs rounding.
        let q_max = 2.0 * (s.opacity / ALPHA_MIN).ln();
        let rx = (q_max * s.cov2d[(0, 0)]).sqrt() + 1.0;
        let ry = (q_max * s.cov2d[(1, 1)]).sqrt() + 1.0;
        let x0 = (s.mean2d.x - rx - 0.5).ceil().max(0.0);
        let x1 = (s.mean2d.x + rx - 0.5).floor() + 1.0;
        let y0 = (s.mean2d.y - ry - 0.5).ceil().max(0.0);
        let y1 = (s.mean2d.y + ry - 0.5).floor() + 1.0;
        if !(x1 > x0 && y1 > y0) || x0 >= cam.width as f64 || y0 >= cam.height as f64 || x1 <= 0.0 || y1 <= 0.0 {
            continue;
        }
        let bounds = [x0 as u32, x1.min(cam.width as f64) as u32, y0 as u32, y1.min(cam.height as f64) as u32];
        let [a, b, c] = s.conic();
        out.push(Kernel {
            index: i as u32,
            mean: [F::from(s.mean2d.x).unwrap(), F::from(s.mean2d.y).unwrap()],
            conic: [F::from(a).unwrap(), F::from(b).unwrap(), F::from(c).unwrap()],
            opacity: F::from(s.opacity).unwrap(),
            color: rgb(&s.color),
            bounds,
        });
    }
    out
}

/// Depth-ordered kernel slots overlapping each tile.
pub(crate) struct TileBins {
    pub tiles_x: u32,
    pub tiles_y: u32,
    lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn build<F>(kernels: &[Kernel<F>], cam: &Camera) -> Self {
        let tiles_x = cam.width.div_ceil(TILE);
        let tiles_y = cam.height.div_ceil(TILE);
        let mut lists = vec![Vec::new(); (tiles_x * tiles_y) as usize];
        for (slot, k) in kernels.iter().enumerate() {
            let [x0, x1, y0, y1] = k.bounds;
            for ty in y0 / TILE..=(y1 - 1) / TILE {
                for tx in x0 / TILE..=(x1 - 1) / TILE {
                    lists[(ty * tiles_x + tx) as usize].push(slot as u32);
                }
            }
        }
        Self { tiles_x, tiles_y, lists }
    }

    #[inline]
    pub fn list(&self, tx: u32, ty: u32) -> &[u32] {
        &self.lists[(ty * self.tiles_x + tx) as usize]
    }
}
