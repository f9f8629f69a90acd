use nalgebra::Vector3;
use octsplat::fixtures::{orbit_camera, random_scene, random_signed_image};
use octsplat::gradcheck::{check_render_gradients, PARAM_NAMES};
use octsplat::{Camera, GaussianPrimitive, Image, Scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-9;

#[test]
fn single_splat_color_channel_gradients() {
    let cam = Camera::look_at(Vector3::new(0.0, 0.0, 4.0), Vector3::zeros(), Vector3::y(), 24.0, 24, 24).unwrap();
    let mut g = GaussianPrimitive::isotropic(Vector3::new(0.1, 0.05, 0.0), 0.25, 0.6, Vector3::new(0.3, 0.6, 0.9));
    g.log_scale.x -= 0.4;
    g.rotation = [0.9, 0.2, -0.3, 0.1];
    let scene = Scene::new(vec![g], Vector3::new(0.05, 0.1, 0.2));
    let mut gi = Image::new(24, 24);
    for p in 0..24 * 24 {
        gi.data[p * 3] = 1.0;
    }
    let r = check_render_gradients(&scene, &cam, &gi, H, FLOOR);
    assert_eq!(r.compared, 14);
    assert!(r.max_rel_err < REL_TOL, "{:?}", r.worst);
}

#[test]
fn random_scenes_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for s in 0..20 {
        let scene = random_scene(&mut rng, 10);
        let cam = orbit_camera(&mut rng, 4.0, 32);
        let gi = random_signed_image(&mut rng, 32, 32);
        let r = check_render_gradients(&scene, &cam, &gi, H, FLOOR);
        let w = r.worst.unwrap();
        assert!(r.compared >= 130, "scene {s}: too many skipped ({})", r.skipped);
        assert!(
            r.max_rel_err < REL_TOL,
            "scene {s}: {} of primitive {} analytic {:e} numeric {:e}",
            PARAM_NAMES[w.param],
            w.primitive,
            w.analytic,
            w.numeric
        );
    }
}
