use super::*;
use crate::fixtures::{orbit_camera, random_image, random_scene, random_signed_image};
use crate::splat::{alpha_at, GaussianPrimitive};
use nalgebra::{Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn front_cam(size: u32) -> Camera {
    Camera::look_at(Vector3::new(0.0, 0.0, 4.0), Vector3::zeros(), Vector3::y(), size as f64, size, size).unwrap()
}

/// Per-pixel compositor over every primitive, no tiles, no early stop.
fn naive_render(scene: &Scene, cam: &Camera) -> Image {
    let mut splats: Vec<(f64, usize, Splat2D)> = scene
        .primitives
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, cam).ok().map(|s| (s.depth, i, s)))
        .collect();
    splats.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut img = Image::new(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c = Vector3::zeros();
            for (_, _, s) in &splats {
                let a = alpha_at(s, p);
                c += s.color * (t * a);
                t *= 1.0 - a;
            }
            c += scene.background * t;
            for ch in 0..3 {
                let i = img.idx(x, y, ch);
                img.data[i] = c[ch];
            }
        }
    }
    img
}

#[test]
fn empty_scene_is_background() {
    let bg = Vector3::new(0.2, 0.4, 0.6);
    let cam = front_cam(20);
    let out = render(&Scene::new(vec![], bg), &cam, &RenderSettings::default());
    assert!(out.final_transmittance.iter().all(|&t| t == 1.0));
    for px in out.image.data.chunks(3) {
        assert_eq!(px, bg.as_slice());
    }
}

#[test]
fn opaque_splat_composites_single_term() {
    let cam = front_cam(32);
    let c = Vector3::new(0.9, 0.3, 0.1);
    let b = Vector3::new(0.0, 0.5, 1.0);
    let mut g = GaussianPrimitive::isotropic(Vector3::zeros(), 2.0, 0.5, c);
    g.opacity_logit = 20.0;
    let out = render(&Scene::new(vec![g], b), &cam, &RenderSettings::default());
    for ch in 0..3 {
        let v = out.image.get(16, 16, ch);
        assert!((v - (0.999 * c[ch] + 0.001 * b[ch])).abs() < 1e-9, "{v}");
    }
}

#[test]
fn matches_naive_compositor() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let scene = random_scene(&mut rng, 10);
        let cam = orbit_camera(&mut rng, 4.0, 32);
        let out = render(&scene, &cam, &RenderSettings::exact());
        let reference = naive_render(&scene, &cam);
        for (a, b) in out.image.data.iter().zip(&reference.data) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn recomposition_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for settings in [RenderSettings::default(), RenderSettings::exact(), RenderSettings::low_precision()] {
        let scene = random_scene(&mut rng, 15);
        let cam = orbit_camera(&mut rng, 4.0, 40);
        let out = render(&scene, &cam, &settings);
        assert_eq!(out.recompose(&scene).data, out.image.data);
        assert!(out.final_transmittance.iter().all(|t| (0.0..=1.0).contains(t)));
    }
}

#[test]
fn parallel_matches_serial_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let scene = random_scene(&mut rng, 20);
    let cam = orbit_camera(&mut rng, 4.0, 48);
    let target = random_image(&mut rng, 48, 48);
    let gi = random_signed_image(&mut rng, 48, 48);
    let par = render(&scene, &cam, &RenderSettings::default());
    let ser = render(&scene, &cam, &RenderSettings::default().serial());
    assert_eq!(par.image.data, ser.image.data);
    let (gp, cp) = backward_with_contributions(&scene, &cam, &par, &gi, &target).unwrap();
    let (gs, cs) = backward_with_contributions(&scene, &cam, &ser, &gi, &target).unwrap();
    assert_eq!(gp, gs);
    assert_eq!(cp, cs);
}

#[test]
fn early_stop_changes_little() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..10 {
        let mut scene = random_scene(&mut rng, 20);
        for g in &mut scene.primitives {
            g.opacity_logit += 3.0;
        }
        let cam = orbit_camera(&mut rng, 4.0, 32);
        let a = render(&scene, &cam, &RenderSettings::default());
        let b = render(&scene, &cam, &RenderSettings::exact());
        for (x, y) in a.image.data.iter().zip(&b.image.data) {
            assert!((x - y).abs() < 1e-3);
        }
    }
}

#[test]
fn zero_upstream_gives_zero_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let scene = random_scene(&mut rng, 8);
    let cam = orbit_camera(&mut rng, 4.0, 24);
    let out = render(&scene, &cam, &RenderSettings::exact());
    let grads = backward(&scene, &cam, &out, &Image::new(24, 24)).unwrap();
    assert_eq!(grads, ParamGrads::zeros(8));
}

#[test]
fn single_splat_color_gradient_is_weight_sum() {
    let cam = front_cam(24);
    let g = GaussianPrimitive::isotropic(Vector3::new(0.1, -0.05, 0.0), 0.3, 0.7, Vector3::new(0.2, 0.5, 0.8));
    let scene = Scene::new(vec![g], Vector3::new(0.1, 0.1, 0.1));
    let out = render(&scene, &cam, &RenderSettings::exact());
    let mut gi = Image::new(24, 24);
    for p in 0..24 * 24 {
        gi.data[p * 3 + 1] = 1.0;
    }
    let grads = backward(&scene, &cam, &out, &gi).unwrap();
    let splat = out.splats[0].unwrap();
    let mut weight = 0.0;
    for y in 0..24 {
        for x in 0..24 {
            weight += alpha_at(&splat, Vector2::new(x as f64 + 0.5, y as f64 + 0.5));
        }
    }
    assert!((grads.color[0].y - weight).abs() < 1e-10);
    assert_eq!(grads.color[0].x, 0.0);
    assert_eq!(grads.color[0].z, 0.0);
}

#[test]
fn mismatched_buffers_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let scene = random_scene(&mut rng, 3);
    let cam = front_cam(16);
    let out = render(&scene, &cam, &RenderSettings::exact());
    assert!(matches!(backward(&scene, &cam, &out, &Image::new(8, 16)), Err(RasterError::MismatchedBuffers(_))));
    assert!(matches!(
        contribution_pass(&scene.without(0), &cam, &out, &Image::new(16, 16)),
        Err(RasterError::MismatchedBuffers(_))
    ));
}

#[test]
fn invisible_primitive_contributes_nothing() {
    let cam = front_cam(16);
    let visible = GaussianPrimitive::isotropic(Vector3::zeros(), 0.3, 0.6, Vector3::new(1.0, 0.0, 0.0));
    let offscreen = GaussianPrimitive::isotropic(Vector3::new(40.0, 0.0, 0.0), 0.3, 0.6, Vector3::new(0.0, 1.0, 0.0));
    let scene = Scene::new(vec![visible, offscreen], Vector3::zeros());
    let out = render(&scene, &cam, &RenderSettings::exact());
    let c = contribution_pass(&scene, &cam, &out, &Image::new(16, 16)).unwrap();
    assert_eq!(c.delta_l1[1], 0.0);
    assert!(c.delta_l1[0] != 0.0);
}

#[test]
fn matching_splat_has_negative_contribution() {
    let cam = front_cam(24);
    let color = Vector3::new(0.8, 0.2, 0.4);
    let g = GaussianPrimitive::isotropic(Vector3::zeros(), 0.4, 0.9, color);
    let scene = Scene::new(vec![g], Vector3::new(0.0, 0.0, 0.0));
    let out = render(&scene, &cam, &RenderSettings::exact());
    let target = Image::filled(24, 24, color);
    let c = contribution_pass(&scene, &cam, &out, &target).unwrap();
    assert!(c.delta_l1[0] < 0.0);
}

#[test]
fn occluded_primitive_has_zero_leave_one_out() {
    let cam = front_cam(16);
    let mut front = GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, 1.0), 30.0, 0.5, Vector3::new(1.0, 0.0, 0.0));
    front.opacity_logit = 20.0;
    let mut mid = front;
    mid.center.z = 0.5;
    let hidden = GaussianPrimitive::isotropic(Vector3::zeros(), 0.2, 0.9, Vector3::new(0.0, 1.0, 0.0));
    let scene = Scene::new(vec![front, mid, hidden], Vector3::zeros());
    let target = Image::filled(16, 16, Vector3::new(0.3, 0.3, 0.3));
    let d = leave_one_out_oracle(&scene, &cam, &target, 2, &RenderSettings::default()).unwrap();
    assert_eq!(d, 0.0);
    let out = render(&scene, &cam, &RenderSettings::default());
    assert_eq!(contribution_pass(&scene, &cam, &out, &target).unwrap().delta_l1[2], 0.0);
}

#[test]
fn removing_only_primitive_reveals_background() {
    let cam = front_cam(16);
    let bg = Vector3::new(0.1, 0.2, 0.3);
    let g = GaussianPrimitive::isotropic(Vector3::zeros(), 0.3, 0.7, Vector3::new(0.9, 0.9, 0.1));
    let scene = Scene::new(vec![g], bg);
    let target = Image::filled(16, 16, Vector3::new(0.5, 0.5, 0.5));
    let settings = RenderSettings::exact();
    let d = leave_one_out_oracle(&scene, &cam, &target, 0, &settings).unwrap();
    let full = l1_sum(&render(&scene, &cam, &settings).image, &target);
    let empty = l1_sum(&Image::filled(16, 16, bg), &target);
    assert!((d - (full - empty)).abs() < 1e-12);
    assert!(matches!(
        leave_one_out_oracle(&scene, &cam, &target, 1, &settings),
        Err(RasterError::IndexOutOfRange { index: 1, len: 1 })
    ));
}

#[test]
fn contributions_match_leave_one_out() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let settings = RenderSettings::exact();
    for _ in 0..10 {
        let n = 12;
        let scene = random_scene(&mut rng, n);
        let cam = orbit_camera(&mut rng, 4.0, 32);
        let target = random_image(&mut rng, 32, 32);
        let out = render(&scene, &cam, &settings);
        let c = contribution_pass(&scene, &cam, &out, &target).unwrap();
        for i in 0..n {
            let oracle = leave_one_out_oracle(&scene, &cam, &target, i, &settings).unwrap();
            assert!((c.delta_l1[i] - oracle).abs() < 1e-6, "{} vs {}", c.delta_l1[i], oracle);
        }
    }
}

#[test]
fn low_precision_contributions_within_loose_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let settings = RenderSettings::low_precision();
    for _ in 0..5 {
        let scene = random_scene(&mut rng, 10);
        let cam = orbit_camera(&mut rng, 4.0, 32);
        let target = random_image(&mut rng, 32, 32);
        let out = render(&scene, &cam, &settings);
        let c = contribution_pass(&scene, &cam, &out, &target).unwrap();
        for i in 0..10 {
            let oracle = leave_one_out_oracle(&scene, &cam, &target, i, &RenderSettings::exact()).unwrap();
            assert!((c.delta_l1[i] - oracle).abs() < 1e-3, "{} vs {}", c.delta_l1[i], oracle);
        }
    }
}

#[test]
fn fused_pass_equals_separate_passes() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let scene = random_scene(&mut rng, 10);
    let cam = orbit_camera(&mut rng, 4.0, 32);
    let target = random_image(&mut rng, 32, 32);
    let gi = random_signed_image(&mut rng, 32, 32);
    let out = render(&scene, &cam, &RenderSettings::exact());
    let (g, c) = backward_with_contributions(&scene, &cam, &out, &gi, &target).unwrap();
    assert_eq!(g, backward(&scene, &cam, &out, &gi).unwrap());
    assert_eq!(c, contribution_pass(&scene, &cam, &out, &target).unwrap());
}

#[test]
fn rotated_camera_renders_same_as_identity_on_axis() {
    // a camera rotated 180° about its view axis flips the image
    let g = GaussianPrimitive::isotropic(Vector3::new(0.2, 0.1, 3.0), 0.2, 0.8, Vector3::new(1.0, 0.0, 0.0));
    let scene = Scene::new(vec![g], Vector3::zeros());
    let a = Camera::new(Vector3::zeros(), Matrix3::identity(), 20.0, 16, 16, 0.01).unwrap();
    let flip = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
    let b = Camera::new(Vector3::zeros(), flip, 20.0, 16, 16, 0.01).unwrap();
    let ia = render(&scene, &a, &RenderSettings::exact()).image;
    let ib = render(&scene, &b, &RenderSettings::exact()).image;
    for y in 0..16 {
        for x in 0..16 {
            assert!((ia.get(x, y, 0) - ib.get(15 - x, 15 - y, 0)).abs() < 1e-12);
        }
    }
}
