//! CPU splatting rasterizer: forward alpha compositing, the hand-derived
//! backward pass, and the fused per-primitive L1 contribution pass.
//!
//! Primitives are depth sorted once per camera (global sort, ties broken by
//! index) and binned into 16×16 pixel tiles purely to skip far-away splats.
//! Every pixel keeps the ordered list of `(primitive, α)` pairs that passed
//! the α cutoff, which the backward pass walks in reverse.

mod backward;
mod kernel;
mod oracle;

pub use backward::{backward, backward_with_contributions, contribution_pass, ContributionBuffer, ParamGrads};
pub use oracle::{l1_sum, leave_one_out_oracle};

use crate::splat::{project_gaussian, Camera, Image, Scene, Splat2D};
use kernel::{prepare_kernels, Kernel, TileBins, TILE};
use num_traits::Float;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("buffer shape mismatch: {0}")]
    MismatchedBuffers(String),
    #[error("primitive index {index} out of range for a scene of {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Arithmetic used inside the per-pixel loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    /// f64 everywhere.
    #[default]
    High,
    /// f32 compositing and accumulation; projection stays in f64.
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub precision: Precision,
    /// Stop compositing a pixel once transmittance drops below this value.
    /// `None` composites every hit, which makes the contribution pass an
    /// exact leave-one-out identity.
    pub early_stop: Option<f64>,
    /// Parallelize over tile rows. Results are bit-identical either way.
    pub parallel: bool,
}

pub const DEFAULT_EARLY_STOP: f64 = 1e-4;

impl Default for RenderSettings {
    fn default() -> Self {
        Self { precision: Precision::High, early_stop: Some(DEFAULT_EARLY_STOP), parallel: true }
    }
}

impl RenderSettings {
    /// f64, no early stop, serial.
    pub fn exact() -> Self {
        Self { precision: Precision::High, early_stop: None, parallel: false }
    }

    pub fn low_precision() -> Self {
        Self { precision: Precision::Low, early_stop: None, parallel: true }
    }

    pub fn serial(mut self) -> Self {
        self.parallel = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub primitive: u32,
    pub alpha: f64,
}

/// Per-pixel front-to-back hit lists in compressed row storage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelHits {
    offsets: Vec<usize>,
    entries: Vec<Hit>,
}

impl PixelHits {
    pub fn pixel(&self, p: usize) -> &[Hit] {
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn pixel_count(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn total(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    /// Transmittance left for the background at every pixel.
    pub final_transmittance: Vec<f64>,
    /// Indices of the projected primitives, front to back.
    pub sorted_order: Vec<usize>,
    pub per_pixel_hits: PixelHits,
    /// Screen-space splat for every primitive, `None` when culled.
    pub splats: Vec<Option<Splat2D>>,
    pub settings: RenderSettings,
}

impl RenderOutput {
    /// Rebuilds the image from the stored hits with the forward arithmetic.
    pub fn recompose(&self, scene: &Scene) -> Image {
        match self.settings.precision {
            Precision::High => self.recompose_in::<f64>(scene),
            Precision::Low => self.recompose_in::<f32>(scene),
        }
    }

    fn recompose_in<F: Float>(&self, scene: &Scene) -> Image {
        let mut img = Image::new(self.image.width, self.image.height);
        let bg = kernel::rgb::<F>(&scene.background);
        for p in 0..self.per_pixel_hits.pixel_count() {
            let mut t = F::one();
            let mut acc = [F::zero(); 3];
            for h in self.per_pixel_hits.pixel(p) {
                let a = F::from(h.alpha).unwrap();
                let c = kernel::rgb::<F>(&scene.primitives[h.primitive as usize].color);
                let w = a * t;
                for ch in 0..3 {
                    acc[ch] = acc[ch] + w * c[ch];
                }
                t = t * (F::one() - a);
            }
            for ch in 0..3 {
                img.data[p * 3 + ch] = (acc[ch] + t * bg[ch]).to_f64().unwrap();
            }
        }
        img
    }
}

/// Forward render of `scene` through `cam`.
pub fn render(scene: &Scene, cam: &Camera, settings: &RenderSettings) -> RenderOutput {
    match settings.precision {
        Precision::High => render_in::<f64>(scene, cam, settings),
        Precision::Low => render_in::<f32>(scene, cam, settings),
    }
}

struct Band {
    image: Vec<f64>,
    transmittance: Vec<f64>,
    counts: Vec<usize>,
    hits: Vec<Hit>,
}

fn render_in<F: Float + Send + Sync>(scene: &Scene, cam: &Camera, settings: &RenderSettings) -> RenderOutput {
    let splats: Vec<Option<Splat2D>> = scene.primitives.iter().map(|g| project_gaussian(g, cam).ok()).collect();
    let sorted_order = depth_order(&splats);
    let kernels = prepare_kernels::<F>(&splats, &sorted_order, cam);
    let bins = TileBins::build(&kernels, cam);
    let bg = kernel::rgb::<F>(&scene.background);
    let stop = settings.early_stop.map(|v| F::from(v).unwrap());

    let band_rows: Vec<u32> = (0..bins.tiles_y).collect();
    let do_band = |&ty: &u32| -> Band {
        let y0 = ty * TILE;
        let y1 = (y0 + TILE).min(cam.height);
        let n = ((y1 - y0) * cam.width) as usize;
        let mut band = Band {
            image: Vec::with_capacity(n * 3),
            transmittance: Vec::with_capacity(n),
            counts: Vec::with_capacity(n),
            hits: Vec::new(),
        };
        for y in y0..y1 {
            for x in 0..cam.width {
                let list = bins.list(x / TILE, ty);
                let (px, py) = kernel::pixel_center::<F>(x, y);
                let mut t = F::one();
                let mut acc = [F::zero(); 3];
                let before = band.hits.len();
                for &slot in list {
                    let k: &Kernel<F> = &kernels[slot as usize];
                    if !k.covers(x, y) {
                        continue;
                    }
                    let Some(ev) = k.eval(px, py) else { continue };
                    let w = ev.alpha * t;
                    for ch in 0..3 {
                        acc[ch] = acc[ch] + w * k.color[ch];
                    }
                    band.hits.push(Hit { primitive: k.index, alpha: ev.alpha.to_f64().unwrap() });
                    t = t * (F::one() - ev.alpha);
                    if let Some(th) = stop {
                        if t < th {
                            break;
                        }
                    }
                }
                for ch in 0..3 {
                    band.image.push((acc[ch] + t * bg[ch]).to_f64().unwrap());
                }
                band.transmittance.push(t.to_f64().unwrap());
                band.counts.push(band.hits.len() - before);
            }
        }
        band
    };
    let bands: Vec<Band> = if settings.parallel {
        band_rows.par_iter().map(do_band).collect()
    } else {
        band_rows.iter().map(do_band).collect()
    };

    let npix = cam.pixel_count();
    let mut image = Vec::with_capacity(npix * 3);
    let mut final_transmittance = Vec::with_capacity(npix);
    let mut offsets = Vec::with_capacity(npix + 1);
    let mut entries = Vec::with_capacity(bands.iter().map(|b| b.hits.len()).sum());
    offsets.push(0);
    for band in bands {
        image.extend_from_slice(&band.image);
        final_transmittance.extend_from_slice(&band.transmittance);
        for c in band.counts {
            let last = *offsets.last().unwrap();
            offsets.push(last + c);
        }
        entries.extend_from_slice(&band.hits);
    }
    RenderOutput {
        image: Image::from_data(cam.width, cam.height, image),
        final_transmittance,
        sorted_order,
        per_pixel_hits: PixelHits { offsets, entries },
        splats,
        settings: *settings,
    }
}

fn depth_order(splats: &[Option<Splat2D>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).filter(|&i| splats[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (splats[a].unwrap().depth, splats[b].unwrap().depth);
        da.total_cmp(&db).then(a.cmp(&b))
    });
    order
}

#[cfg(test)]
mod tests;
