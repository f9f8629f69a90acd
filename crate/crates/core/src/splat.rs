//! Domain types shared across the crate and the EWA projection of a 3D
//! Gaussian onto the image plane.
//!
//! Conventions: cameras look down their local +z axis with +x to the right
//! and +y down. Pixel `(px, py)` is sampled at its center `(px + 0.5, py + 0.5)`
//! and the principal point sits at `(width / 2, height / 2)`.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Added to the diagonal of every projected covariance (px²).
pub const COV2D_DILATION: f64 = 0.3;
/// Upper clamp on per-pixel blending weight.
pub const ALPHA_MAX: f64 = 0.999;
/// Blending weights below this are treated as zero.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Valid range of `exp(log_scale)`.
pub const SCALE_MIN: f64 = 1e-6;
pub const SCALE_MAX: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectError {
    #[error("primitive center at depth {depth} is not in front of the near plane {near}")]
    CulledBehindCamera { depth: f64, near: f64 },
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One anisotropic Gaussian splat with degree-0 (plain RGB) color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrimitive {
    pub center: Vector3<f64>,
    /// Per-axis log standard deviation in world units.
    pub log_scale: Vector3<f64>,
    /// Rotation quaternion `(w, x, y, z)`; normalized on use.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
}

impl GaussianPrimitive {
    pub fn isotropic(center: Vector3<f64>, sigma: f64, opacity: f64, color: Vector3<f64>) -> Self {
        Self {
            center,
            log_scale: Vector3::repeat(sigma.ln()),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// Clamped per-axis standard deviations and a mask telling which axes
    /// sit inside the valid range (and thus carry gradient).
    pub fn scales(&self) -> (Vector3<f64>, [bool; 3]) {
        let mut s = Vector3::zeros();
        let mut live = [true; 3];
        for d in 0..3 {
            let e = self.log_scale[d].exp();
            s[d] = e.clamp(SCALE_MIN, SCALE_MAX);
            live[d] = e > SCALE_MIN && e < SCALE_MAX;
        }
        (s, live)
    }

    pub fn unit_quaternion(&self) -> [f64; 4] {
        normalize_quaternion(self.rotation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quaternion_to_matrix(self.unit_quaternion())
    }

    /// World-space covariance `R S Sᵀ Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let m = self.rotation_matrix() * Matrix3::from_diagonal(&self.scales().0);
        m * m.transpose()
    }
}

pub fn normalize_quaternion(q: [f64; 4]) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n == 0.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quaternion_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back to the unit quaternion.
pub fn quaternion_matrix_vjp(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let (g00, g01, g02) = (g[(0, 0)], g[(0, 1)], g[(0, 2)]);
    let (g10, g11, g12) = (g[(1, 0)], g[(1, 1)], g[(1, 2)]);
    let (g20, g21, g22) = (g[(2, 0)], g[(2, 1)], g[(2, 2)]);
    let gw = 2.0 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21);
    let gx = 2.0 * (y * g01 + z * g02 + y * g10 - 2.0 * x * g11 - w * g12 + z * g20 + w * g21 - 2.0 * x * g22);
    let gy = 2.0 * (-2.0 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12 - w * g20 + z * g21 - 2.0 * y * g22);
    let gz = 2.0 * (-2.0 * z * g00 - w * g01 + x * g02 + w * g10 - 2.0 * z * g11 + y * g12 + x * g20 + y * g21);
    [gw, gx, gy, gz]
}

/// Pulls a gradient on `q / |q|` back to the raw quaternion `q`.
pub fn normalize_quaternion_vjp(q: [f64; 4], g_unit: [f64; 4]) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n == 0.0 {
        return [0.0; 4];
    }
    let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let dot = u[0] * g_unit[0] + u[1] * g_unit[1] + u[2] * g_unit[2] + u[3] * g_unit[3];
    [
        (g_unit[0] - u[0] * dot) / n,
        (g_unit[1] - u[1] * dot) / n,
        (g_unit[2] - u[2] * dot) / n,
        (g_unit[3] - u[3] * dot) / n,
    ]
}

/// Pinhole camera. `rotation` maps world directions into the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub focal: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("camera rotation is not orthonormal (max |RᵀR - I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("focal length must be positive, got {0}")]
    BadFocal(f64),
    #[error("near plane must be positive, got {0}")]
    BadNear(f64),
    #[error("image size must be nonzero")]
    EmptyImage,
}

impl Camera {
    pub fn new(
        position: Vector3<f64>,
        rotation: Matrix3<f64>,
        focal: f64,
        width: u32,
        height: u32,
        near: f64,
    ) -> Result<Self, CameraError> {
        let cam = Self { position, rotation, focal, width, height, near };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll (image +y points away from it).
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self::new(eye, rotation, focal, width, height, 0.01)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let dev = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if !(dev <= 1e-9) {
            return Err(CameraError::NotOrthonormal(dev));
        }
        if !(self.focal > 0.0) {
            return Err(CameraError::BadFocal(self.focal));
        }
        if !(self.near > 0.0) {
            return Err(CameraError::BadNear(self.near));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::EmptyImage);
        }
        Ok(())
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.width as f64 * 0.5, self.height as f64 * 0.5)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.position)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Serialized form of a [`Camera`] (used by camera JSON files).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub position: [f64; 3],
    pub rotation: [[f64; 3]; 3],
    pub focal: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_near")]
    pub near: f64,
}

fn default_near() -> f64 {
    0.01
}

impl From<&Camera> for CameraSpec {
    fn from(c: &Camera) -> Self {
        let r = &c.rotation;
        Self {
            position: [c.position.x, c.position.y, c.position.z],
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            focal: c.focal,
            width: c.width,
            height: c.height,
            near: c.near,
        }
    }
}

impl TryFrom<CameraSpec> for Camera {
    type Error = CameraError;

    fn try_from(s: CameraSpec) -> Result<Self, CameraError> {
        let r = s.rotation;
        Camera::new(
            Vector3::from(s.position),
            Matrix3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]),
            s.focal,
            s.width,
            s.height,
            s.near,
        )
    }
}

/// A set of primitives plus background and optional anchor grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<GaussianPrimitive>,
    pub background: Vector3<f64>,
    /// `anchor_of[i]` is the anchor that spawned primitive `i`.
    pub anchor_of: Option<Vec<usize>>,
}

impl Scene {
    pub fn new(primitives: Vec<GaussianPrimitive>, background: Vector3<f64>) -> Self {
        Self { primitives, background, anchor_of: None }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// The same scene with primitive `i` removed (anchor map dropped).
    pub fn without(&self, i: usize) -> Scene {
        let mut primitives = self.primitives.clone();
        primitives.remove(i);
        Scene { primitives, background: self.background, anchor_of: None }
    }
}

/// Row-major `height × width × 3` image with linear values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0.0; width as usize * height as usize * 3] }
    }

    pub fn filled(width: u32, height: u32, rgb: Vector3<f64>) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(rgb.as_slice());
        }
        img
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize * 3, "image buffer size");
        Self { width, height, data }
    }

    #[inline]
    pub fn idx(&self, x: u32, y: u32, c: usize) -> usize {
        (y as usize * self.width as usize + x as usize) * 3 + c
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: usize) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn matches(&self, cam: &Camera) -> bool {
        self.width == cam.width && self.height == cam.height
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A Gaussian projected to screen space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    /// Dilated screen-space covariance (px²).
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub color: Vector3<f64>,
    pub opacity: f64,
}

impl Splat2D {
    /// Inverse covariance packed as `(a, b, c)` with `dᵀ Σ⁻¹ d = a dx² + 2 b dx dy + c dy²`.
    pub fn conic(&self) -> [f64; 3] {
        let (a, b, c) = (self.cov2d[(0, 0)], self.cov2d[(0, 1)], self.cov2d[(1, 1)]);
        let det = a * c - b * b;
        [c / det, -b / det, a / det]
    }
}

/// Intermediate projection quantities reused by the backward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ProjectionParts {
    pub t: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    /// `W Σ Wᵀ`: the world covariance expressed in the camera frame.
    pub cam_cov: Matrix3<f64>,
}

pub(crate) fn project_parts(g: &GaussianPrimitive, cam: &Camera) -> Result<(Splat2D, ProjectionParts), ProjectError> {
    let t = cam.to_camera(&g.center);
    if t.z <= cam.near {
        return Err(ProjectError::CulledBehindCamera { depth: t.z, near: cam.near });
    }
    let f = cam.focal;
    let inv_z = 1.0 / t.z;
    let jacobian = Matrix2x3::new(f * inv_z, 0.0, -f * t.x * inv_z * inv_z, 0.0, f * inv_z, -f * t.y * inv_z * inv_z);
    let cam_cov = cam.rotation * g.covariance() * cam.rotation.transpose();
    let mut cov2d = jacobian * cam_cov * jacobian.transpose();
    cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(1, 0)] = cov2d[(0, 1)];
    cov2d[(0, 0)] += COV2D_DILATION;
    cov2d[(1, 1)] += COV2D_DILATION;
    let mean2d = Vector2::new(f * t.x * inv_z, f * t.y * inv_z) + cam.principal_point();
    let splat = Splat2D { mean2d, cov2d, depth: t.z, color: g.color, opacity: g.opacity() };
    Ok((splat, ProjectionParts { t, jacobian, cam_cov }))
}

/// EWA projection of one primitive into `cam`.
pub fn project_gaussian(g: &GaussianPrimitive, cam: &Camera) -> Result<Splat2D, ProjectError> {
    project_parts(g, cam).map(|(s, _)| s)
}

/// Blending weight of `splat` at a screen position, after the clamp and cutoff.
pub fn alpha_at(splat: &Splat2D, pixel: Vector2<f64>) -> f64 {
    let d = pixel - splat.mean2d;
    let [a, b, c] = splat.conic();
    let q = a * d.x * d.x + 2.0 * b * d.x * d.y + c * d.y * d.y;
    let alpha = (splat.opacity * (-0.5 * q).exp()).min(ALPHA_MAX);
    if alpha < ALPHA_MIN {
        0.0
    } else {
        alpha
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_cam() -> Camera {
        Camera::new(Vector3::zeros(), Matrix3::identity(), 50.0, 64, 48, 0.01).unwrap()
    }

    fn random_unit_quat(rng: &mut impl Rng) -> [f64; 4] {
        normalize_quaternion([
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ])
    }

    #[test]
    fn on_axis_isotropic_projection() {
        let cam = identity_cam();
        let sigma = 0.1;
        let g = GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, 2.0), sigma, 0.5, Vector3::zeros());
        let s = project_gaussian(&g, &cam).unwrap();
        assert_eq!(s.mean2d, Vector2::new(32.0, 24.0));
        let expect = (cam.focal * sigma / 2.0).powi(2) + COV2D_DILATION;
        assert!((s.cov2d[(0, 0)] - expect).abs() < 1e-12);
        assert!((s.cov2d[(1, 1)] - expect).abs() < 1e-12);
        assert!(s.cov2d[(0, 1)].abs() < 1e-15);
        assert_eq!(s.depth, 2.0);
    }

    #[test]
    fn behind_camera_is_culled() {
        let g = GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, -1.0), 0.1, 0.5, Vector3::zeros());
        assert!(matches!(project_gaussian(&g, &identity_cam()), Err(ProjectError::CulledBehindCamera { .. })));
    }

    #[test]
    fn covariance_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let eye =
                Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(3.0..5.0));
            let cam = Camera::look_at(eye, Vector3::zeros(), Vector3::y(), 40.0, 32, 32).unwrap();
            let g = GaussianPrimitive {
                center: Vector3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                ),
                log_scale: Vector3::new(
                    rng.random_range(-3.0..-1.0),
                    rng.random_range(-3.0..-1.0),
                    rng.random_range(-3.0..-1.0),
                ),
                rotation: random_unit_quat(&mut rng),
                opacity_logit: 0.0,
                color: Vector3::zeros(),
            };
            let s = project_gaussian(&g, &cam).unwrap();

            // dense oracle, written out independently of project_parts
            let t = cam.rotation * (g.center - cam.position);
            let f = cam.focal;
            let j = nalgebra::DMatrix::from_row_slice(
                2,
                3,
                &[f / t.z, 0.0, -f * t.x / (t.z * t.z), 0.0, f / t.z, -f * t.y / (t.z * t.z)],
            );
            let w = nalgebra::DMatrix::from_iterator(3, 3, cam.rotation.iter().copied());
            let r = nalgebra::DMatrix::from_iterator(3, 3, g.rotation_matrix().iter().copied());
            let sc = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                3,
                g.log_scale.iter().map(|v| v.exp()),
            ));
            let sigma = &r * &sc * &sc * r.transpose();
            let cov = &j * &w * sigma * w.transpose() * j.transpose();
            for a in 0..2 {
                for b in 0..2 {
                    let dil = if a == b { COV2D_DILATION } else { 0.0 };
                    let want = cov[(a, b)] + dil;
                    assert!(
                        (s.cov2d[(a, b)] - want).abs() < 1e-9 * want.abs().max(1.0),
                        "cov mismatch {} vs {}",
                        s.cov2d[(a, b)],
                        want
                    );
                }
            }
        }
    }

    #[test]
    fn alpha_at_mean_equals_opacity() {
        let g = GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.1, 0.8, Vector3::zeros());
        let s = project_gaussian(&g, &identity_cam()).unwrap();
        assert!((alpha_at(&s, s.mean2d) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_opacity_never_blends() {
        let mut g = GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.1, 0.5, Vector3::zeros());
        g.opacity_logit = f64::NEG_INFINITY;
        let s = project_gaussian(&g, &identity_cam()).unwrap();
        for y in 0..48 {
            for x in 0..64 {
                assert_eq!(alpha_at(&s, Vector2::new(x as f64 + 0.5, y as f64 + 0.5)), 0.0);
            }
        }
    }

    #[test]
    fn alpha_is_clamped() {
        let mut g = GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.1, 0.5, Vector3::zeros());
        g.opacity_logit = 20.0;
        let s = project_gaussian(&g, &identity_cam()).unwrap();
        assert_eq!(alpha_at(&s, s.mean2d), ALPHA_MAX);
    }

    #[test]
    fn alpha_peaks_at_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = identity_cam();
        for _ in 0..50 {
            let g = GaussianPrimitive {
                center: Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 2.0),
                log_scale: Vector3::new(
                    rng.random_range(-3.0..-1.5),
                    rng.random_range(-3.0..-1.5),
                    rng.random_range(-3.0..-1.5),
                ),
                rotation: random_unit_quat(&mut rng),
                opacity_logit: rng.random_range(-2.0..2.0),
                color: Vector3::zeros(),
            };
            let s = project_gaussian(&g, &cam).unwrap();
            let peak = alpha_at(&s, s.mean2d);
            for y in 0..48 {
                for x in 0..64 {
                    let p = Vector2::new(x as f64 * 1.0 + 0.37, y as f64 + 0.61);
                    assert!(alpha_at(&s, p) <= peak);
                }
            }
        }
    }

    #[test]
    fn depth_order_ignores_color() {
        let cam = identity_cam();
        let mut g = GaussianPrimitive::isotropic(Vector3::new(0.1, 0.0, 3.0), 0.1, 0.5, Vector3::zeros());
        let d0 = project_gaussian(&g, &cam).unwrap().depth;
        g.color = Vector3::new(0.9, 0.1, 0.4);
        assert_eq!(project_gaussian(&g, &cam).unwrap().depth, d0);
    }

    #[test]
    fn quaternion_rotations_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let r = quaternion_to_matrix(random_unit_quat(&mut rng));
            let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
            assert!(dev < 1e-9);
        }
    }

    #[test]
    fn quaternion_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let q = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let g = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let f = |q: [f64; 4]| quaternion_to_matrix(normalize_quaternion(q)).component_mul(&g).sum();
            let analytic = normalize_quaternion_vjp(q, quaternion_matrix_vjp(normalize_quaternion(q), &g));
            for k in 0..4 {
                let h = 1e-6;
                let (mut qp, mut qm) = (q, q);
                qp[k] += h;
                qm[k] -= h;
                let fd = (f(qp) - f(qm)) / (2.0 * h);
                assert!((fd - analytic[k]).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn camera_validation() {
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(Camera::new(Vector3::zeros(), bad, 10.0, 4, 4, 0.1), Err(CameraError::NotOrthonormal(_))));
        assert!(matches!(
            Camera::new(Vector3::zeros(), Matrix3::identity(), 0.0, 4, 4, 0.1),
            Err(CameraError::BadFocal(_))
        ));
        let cam = Camera::look_at(Vector3::new(0.0, 0.0, 5.0), Vector3::zeros(), Vector3::y(), 10.0, 8, 8).unwrap();
        let spec = CameraSpec::from(&cam);
        assert_eq!(Camera::try_from(spec).unwrap(), cam);
    }
}
