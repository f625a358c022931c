use std::collections::HashMap;
use std::sync::OnceLock;

use proptest::prelude::*;
use uvpose_core::geo_image::{encode_normals, encode_plain_uv, Channel, GeoImage};
use uvpose_core::geometry::{backproject, project, CamPoint, CameraIntrinsics, ModelPoint, PixelSample, Pose, Rotation};
use uvpose_core::harness::{projection_residual, recover_poses, scene_poses, CoordMode};
use uvpose_core::metrics::{add_distance, adds_distance, auc, ModelPoints};
use uvpose_core::scene::{generate_scene, ObjectSpec, PoseBounds, Scene, SceneConfig, Shape};
use uvpose_core::solver::{rms, robust_solve_detailed, umeyama, Correspondences};
use uvpose_core::transforms::{roi_align, Roi, TransformSpec, TransformStep};

fn small_config(seed: u64) -> SceneConfig {
    let obj = |shape, model_seed| ObjectSpec {
        shape,
        n_points: 1500,
        scale: 0.1,
        model_seed,
        name: None,
        symmetric: None,
    };
    SceneConfig {
        seed,
        objects: vec![obj(Shape::Box, 1), obj(Shape::Blob, 2)],
        bounds: PoseBounds { x: [-0.08, 0.08], y: [-0.06, 0.06], depth: [0.7, 0.9] },
        intrinsics: CameraIntrinsics::new(190.0, 190.0, 79.5, 59.5, 160, 120).unwrap(),
        noise_sigma: 0.0,
        occlusion: 0.0,
    }
}

fn small_scene() -> &'static Scene {
    static SCENE: OnceLock<Scene> = OnceLock::new();
    SCENE.get_or_init(|| generate_scene(&small_config(5)).unwrap())
}

#[derive(Debug, Clone)]
enum Op {
    Resize(f64),
    /// Window as fractions of the current extent.
    Crop(f64, f64, f64, f64),
    Hflip,
    Vflip,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0.4f64..2.5).prop_map(Op::Resize),
        (0.0f64..0.5, 0.0f64..0.5, 0.5f64..1.0, 0.5f64..1.0).prop_map(|(a, b, c, d)| Op::Crop(a, b, c, d)),
        Just(Op::Hflip),
        Just(Op::Vflip),
    ]
}

/// Turns relative ops into concrete steps by tracking the running extent.
fn build_spec(ops: &[Op], mut w: usize, mut h: usize) -> TransformSpec {
    let mut steps = Vec::new();
    for o in ops {
        match *o {
            Op::Resize(s) => {
                w = ((w as f64 * s).round() as usize).max(1);
                h = ((h as f64 * s).round() as usize).max(1);
                steps.push(TransformStep::Resize { scale: s });
            }
            Op::Crop(a, b, c, d) => {
                let (u0, v0) = ((a * w as f64).floor(), (b * h as f64).floor());
                let (u1, v1) = ((c * w as f64).ceil().max(u0 + 1.0), (d * h as f64).ceil().max(v0 + 1.0));
                steps.push(TransformStep::Crop { roi: Roi::new(u0, v0, u1, v1).unwrap() });
                w = u1 as usize - u0 as usize;
                h = v1 as usize - v0 as usize;
            }
            Op::Hflip => steps.push(TransformStep::Hflip),
            Op::Vflip => steps.push(TransformStep::Vflip),
        }
    }
    TransformSpec::new(steps).unwrap()
}

fn pixel_lookup(img: &GeoImage) -> HashMap<(i64, i64), usize> {
    let (u, v) = (&img.channel(Channel::U).unwrap()[0], &img.channel(Channel::V).unwrap()[0]);
    (0..img.len()).map(|i| ((u[i] as i64, v[i] as i64), i)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backproject_inverts_project(
        fx in 50.0f64..3000.0, fy in 50.0f64..3000.0, cx in -100.0f64..1500.0, cy in -100.0f64..1500.0,
        x in -5.0f64..5.0, y in -5.0f64..5.0, d in 0.01f64..50.0,
    ) {
        let k = CameraIntrinsics::new(fx, fy, cx, cy, 640, 480).unwrap();
        let p = CamPoint::new(x, y, d);
        let q = backproject(&k, project(&k, p).unwrap()).unwrap();
        let scale = (x * x + y * y + d * d).sqrt();
        prop_assert!(((q.x - x).powi(2) + (q.y - y).powi(2) + (q.d - d).powi(2)).sqrt() <= 1e-9 * scale);
        prop_assert_eq!(q.d, d);
    }

    #[test]
    fn rotation_group_laws(a in prop::array::uniform4(-1.0f64..1.0), b in prop::array::uniform4(-1.0f64..1.0)) {
        prop_assume!(a.iter().map(|x| x * x).sum::<f64>() > 1e-3 && b.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        let ra = Rotation::from_quaternion(a[0], a[1], a[2], a[3]).unwrap();
        let rb = Rotation::from_quaternion(b[0], b[1], b[2], b[3]).unwrap();
        prop_assert!(ra.compose(&ra.inverse()).angle() < 1e-7);
        prop_assert!(ra.wxyz()[0] >= 0.0);
        let m = ra.matrix();
        prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        prop_assert!((m.transpose() * m - nalgebra_identity()).abs().max() < 1e-12);
        // composing matrices agrees with composing quaternions
        let lhs = ra.compose(&rb).matrix();
        prop_assert!((lhs - ra.matrix() * rb.matrix()).abs().max() < 1e-12);
        prop_assert!((ra.angle_to(&rb) - rb.angle_to(&ra)).abs() < 1e-9);
    }

    #[test]
    fn transforms_carry_coordinates_and_preserve_projection(ops in prop::collection::vec(op(), 1..5)) {
        let scene = small_scene();
        let src = encode_plain_uv(&scene.image);
        let spec = build_spec(&ops, src.width(), src.height());
        let out = spec.apply(&src).unwrap();
        let lookup = pixel_lookup(&src);
        let (u, v) = (&out.channel(Channel::U).unwrap()[0], &out.channel(Channel::V).unwrap()[0]);
        let abc = out.channel(Channel::GtAbc).unwrap();
        let src_abc = src.channel(Channel::GtAbc).unwrap();
        for i in 0..out.len() {
            prop_assert_eq!(out.valid()[i], out.depth()[i] > 0.0);
            if !out.valid()[i] {
                continue;
            }
            let j = lookup[&(u[i] as i64, v[i] as i64)];
            prop_assert!(src.valid()[j]);
            prop_assert_eq!(out.depth()[i], src.depth()[j]);
            prop_assert_eq!(out.mask()[i], src.mask()[j]);
            for c in 0..3 {
                prop_assert_eq!(abc[c][i], src_abc[c][j]);
            }
        }
        let k = &scene.config.intrinsics;
        let poses = scene_poses(scene);
        let uv = projection_residual(&out, k, &poses, CoordMode::UvChannel).unwrap();
        let builtin = projection_residual(&out, k, &poses, CoordMode::Builtin).unwrap();
        prop_assert!(uv.max < 1e-6);
        prop_assert!(uv.mean <= builtin.mean + 1e-9);
        prop_assert!(builtin.mean <= builtin.max && builtin.median <= builtin.max);
    }

    #[test]
    fn auc_is_order_free_and_monotone(mut d in prop::collection::vec(0.0f64..0.2, 1..60), bump in 0.0f64..0.05, idx in 0usize..60) {
        let a = auc(&d, 0.1).unwrap();
        prop_assert!((0.0..=100.0).contains(&a));
        let mut rev = d.clone();
        rev.reverse();
        prop_assert_eq!(auc(&rev, 0.1).unwrap().to_bits(), a.to_bits());
        let i = idx % d.len();
        d[i] += bump;
        prop_assert!(auc(&d, 0.1).unwrap() <= a);
    }

    #[test]
    fn adds_bounded_by_add(
        pts in prop::collection::vec(prop::array::uniform3(-0.1f64..0.1), 1..40),
        q in prop::array::uniform4(-1.0f64..1.0),
        t in prop::array::uniform3(-0.05f64..0.05),
    ) {
        prop_assume!(q.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        let m = ModelPoints::new("m", pts.iter().map(|p| ModelPoint::new(p[0], p[1], p[2])).collect(), true).unwrap();
        let gt = Pose::from_translation([0.0, 0.0, 1.0]).unwrap();
        let pred = Pose::new(Rotation::from_quaternion(q[0], q[1], q[2], q[3]).unwrap(), [t[0], t[1], 1.0 + t[2]]).unwrap();
        let (add, adds) = (add_distance(&pred, &gt, &m), adds_distance(&pred, &gt, &m));
        prop_assert!(adds <= add);
        prop_assert!(adds >= 0.0);
        prop_assert!((add - add_distance(&gt, &pred, &m)).abs() < 1e-12);
    }

    #[test]
    fn trimming_never_worsens_inlier_fit(seed in 0u64..1000, outliers in 0usize..12) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let gt = Pose::new(Rotation::from_axis_angle([0.3, 1.0, -0.2], rng.random_range(0.0..3.0)).unwrap(), [0.1, 0.0, 1.0]).unwrap();
        let model: Vec<ModelPoint> = (0..60)
            .map(|_| ModelPoint::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
            .collect();
        let mut obs: Vec<CamPoint> = model
            .iter()
            .map(|p| {
                let c = gt.apply(p.to_array());
                CamPoint::new(c[0] + rng.random_range(-0.002..0.002), c[1], c[2])
            })
            .collect();
        for o in obs.iter_mut().take(outliers) {
            o.d += rng.random_range(0.1..0.6);
        }
        let c = Correspondences::from_camera(model.clone(), obs.clone()).unwrap();
        let fit = robust_solve_detailed(&c, None, 4, 0.25).unwrap();
        prop_assert!(rms(&fit.pose, &model, &obs, &fit.inliers) <= rms(&fit.initial, &model, &obs, &fit.inliers) + 1e-15);
    }
}

fn nalgebra_identity() -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::identity()
}

#[test]
fn consistent_relabeling_recovers_composed_pose() {
    let model: Vec<ModelPoint> = (0..20)
        .map(|i| ModelPoint::new((i as f64 * 0.37).sin() * 0.1, (i as f64 * 0.91).cos() * 0.1, (i % 5) as f64 * 0.02))
        .collect();
    let a = Pose::new(Rotation::from_axis_angle([1.0, 2.0, 0.5], 0.7).unwrap(), [0.0, 0.1, 0.9]).unwrap();
    let b = Pose::new(Rotation::from_axis_angle([0.0, 1.0, 0.0], -1.2).unwrap(), [0.2, 0.0, 0.1]).unwrap();
    let obs = model
        .iter()
        .map(|p| {
            let c = b.apply(a.apply(p.to_array()));
            CamPoint::new(c[0], c[1], c[2])
        })
        .collect();
    let est = umeyama(&Correspondences::from_camera(model, obs).unwrap()).unwrap();
    let (r, t) = est.error_to(&b.compose(&a));
    assert!(r < 1e-9 && t < 1e-9, "{r} {t}");
}

#[test]
fn fresh_encoding_identities() {
    let scene = generate_scene(&SceneConfig::standard(2)).unwrap();
    let k = &scene.config.intrinsics;
    let img = encode_normals(&encode_plain_uv(&scene.image), k);
    let (u, v) = (&img.channel(Channel::U).unwrap()[0], &img.channel(Channel::V).unwrap()[0]);
    let nrm = img.channel(Channel::Nrm).unwrap();
    let mut normals = 0;
    for i in (0..img.len()).filter(|&i| img.valid()[i]) {
        let p = backproject(k, PixelSample::new(u[i], v[i], img.depth()[i])).unwrap();
        assert_eq!(p.d, img.depth()[i]);
        let n = (nrm[0][i].powi(2) + nrm[1][i].powi(2) + nrm[2][i].powi(2)).sqrt();
        if n > 0.0 {
            assert!((n - 1.0).abs() < 1e-9);
            normals += 1;
        }
    }
    assert!(normals > 100);
}

#[test]
fn roi_align_keeps_validity_consistent() {
    let scene = small_scene();
    let img = encode_plain_uv(&scene.image);
    let out = roi_align(&img, Roi::new(20.0, 10.0, 140.0, 110.0).unwrap(), 50, 60, 2).unwrap();
    assert_eq!((out.width(), out.height()), (60, 50));
    for i in 0..out.len() {
        assert_eq!(out.valid()[i], out.depth()[i] > 0.0);
    }
    assert!(out.valid_count() > 0);
}

/// Mean pose error per occlusion level over 20 seeds with 1 mm depth noise.
fn occlusion_errors() -> Vec<(f64, f64)> {
    [0.0, 0.2, 0.4, 0.6]
        .iter()
        .map(|&f| {
            let mut sum_r = 0.0;
            let mut sum_t = 0.0;
            let mut n = 0.0;
            for seed in 0..20 {
                let cfg = SceneConfig { noise_sigma: 0.001, occlusion: f, ..SceneConfig::standard(seed) };
                let scene = generate_scene(&cfg).unwrap();
                let solved = recover_poses(&encode_plain_uv(&scene.image), &cfg.intrinsics, CoordMode::UvChannel, None).unwrap();
                for (i, gt) in scene.poses.iter().enumerate() {
                    let (r, t) = solved[&scene.id_of(i)].as_ref().unwrap().error_to(gt);
                    sum_r += r;
                    sum_t += t;
                    n += 1.0;
                }
            }
            (sum_r / n, sum_t / n)
        })
        .collect()
}

#[test]
fn solver_error_grows_with_occlusion() {
    let errs = occlusion_errors();
    for w in errs.windows(2) {
        assert!(w[1].1 >= w[0].1, "translation error not monotone: {errs:?}");
    }
    // 1 mm depth noise keeps translation well under 5 mm
    assert!(errs.iter().all(|e| e.1 < 0.005), "{errs:?}");
}
