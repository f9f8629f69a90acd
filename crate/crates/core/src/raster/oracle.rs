use super::{render, RasterError, RenderSettings};
use crate::splat::{Camera, Image, Scene};

/// Summed absolute error over all pixels and channels.
pub fn l1_sum(img: &Image, target: &Image) -> f64 {
    img.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()).sum()
}

/// `L1(render(scene)) - L1(render(scene without i))` by two full renders.
/// This is the slow reference the fused contribution pass must agree with.
pub fn leave_one_out_oracle(
    scene: &Scene,
    cam: &Camera,
    target: &Image,
    i: usize,
    settings: &RenderSettings,
) -> Result<f64, RasterError> {
    if i >= scene.len() {
        return Err(RasterError::IndexOutOfRange { index: i, len: scene.len() });
    }
    if !target.matches(cam) {
        return Err(RasterError::MismatchedBuffers("target does not match camera".into()));
    }
    let full = render(scene, cam, settings);
    let without = render(&scene.without(i), cam, settings);
    Ok(l1_sum(&full.image, target) - l1_sum(&without.image, target))
}
