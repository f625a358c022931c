//! Per-pixel projection residuals before and after spatial transforms, under
//! built-in pixel coordinates and under carried U/V channels.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_image::{encode_plain_uv, Channel, GeoImage};
use crate::geometry::{project, transform_point, CameraIntrinsics, ModelPoint, PixelSample, Pose};
use crate::io::fmt_sig;
use crate::scene::{generate_scene, Scene, SceneConfig};
use crate::solver::{robust_solve, solve_pose_from_pixels, Correspondences, Observations};
use crate::transforms::{Roi, TransformSpec, TransformStep};

pub const BREAKDOWN_CSV_HEADER: &str = "spec_id,mode,mean_res_px,max_res_px,rot_err_rad,trans_err_m,n_valid";

/// Source of a pixel's (u, v) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordMode {
    /// The pixel's own column and row.
    Builtin,
    /// The values stored in the U and V channels.
    UvChannel,
}

impl CoordMode {
    pub const BOTH: [CoordMode; 2] = [CoordMode::Builtin, CoordMode::UvChannel];

    pub fn name(self) -> &'static str {
        match self {
            CoordMode::Builtin => "builtin",
            CoordMode::UvChannel => "uv_channel",
        }
    }
}

impl fmt::Display for CoordMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub mode: CoordMode,
    /// Residual in pixels for every evaluated pixel, `None` elsewhere.
    pub residuals: Vec<Option<f64>>,
    pub mean: f64,
    pub max: f64,
    pub median: f64,
    pub n_valid: usize,
}

impl ResidualReport {
    fn from_residuals(mode: CoordMode, residuals: Vec<Option<f64>>) -> Self {
        let mut vals: Vec<f64> = residuals.iter().flatten().copied().collect();
        let n = vals.len();
        if n == 0 {
            return Self { mode, residuals, mean: 0.0, max: 0.0, median: 0.0, n_valid: 0 };
        }
        vals.sort_by(f64::total_cmp);
        let mean = vals.iter().sum::<f64>() / n as f64;
        let max = vals[n - 1];
        let median = if n % 2 == 1 { vals[n / 2] } else { 0.5 * (vals[n / 2 - 1] + vals[n / 2]) };
        // Summation rounding can push the mean of equal values one ulp past them.
        Self { mode, residuals, mean: mean.min(max), max, median, n_valid: n }
    }
}

/// Pixel coordinates of every pixel in the requested mode.
fn coordinates(img: &GeoImage, mode: CoordMode) -> Result<Box<dyn Fn(usize) -> (f64, f64) + '_>> {
    let w = img.width();
    Ok(match mode {
        CoordMode::Builtin => Box::new(move |i| ((i % w) as f64, (i / w) as f64)),
        CoordMode::UvChannel => {
            let u = &img.channel(Channel::U).ok_or(Error::MissingPlane("u"))?[0];
            let v = &img.channel(Channel::V).ok_or(Error::MissingPlane("v"))?[0];
            Box::new(move |i| (u[i], v[i]))
        }
    })
}

/// Distance between where the projection equation puts each valid pixel's
/// ground-truth object point and where the pixel claims to be.
///
/// Pixels whose mask id has no entry in `poses` are skipped.
pub fn projection_residual(
    img: &GeoImage,
    k: &CameraIntrinsics,
    poses: &BTreeMap<u32, Pose>,
    mode: CoordMode,
) -> Result<ResidualReport> {
    let abc = img.channel(Channel::GtAbc).ok_or(Error::MissingPlane("gt_abc"))?;
    let coord = coordinates(img, mode)?;
    let mut residuals = vec![None; img.len()];
    for (i, r) in residuals.iter_mut().enumerate() {
        if !img.valid()[i] {
            continue;
        }
        let Some(pose) = poses.get(&img.mask()[i]) else {
            continue;
        };
        let p = ModelPoint::new(abc[0][i], abc[1][i], abc[2][i]);
        let q = project(k, transform_point(pose, p))?;
        let (u, v) = coord(i);
        *r = Some((q.u - u).hypot(q.v - v));
    }
    Ok(ResidualReport::from_residuals(mode, residuals))
}

/// `GT_ABC ↔ (u, v, D)` pairs of one object, in pixel order.
pub fn object_correspondences(img: &GeoImage, id: u32, mode: CoordMode) -> Result<Correspondences> {
    let abc = img.channel(Channel::GtAbc).ok_or(Error::MissingPlane("gt_abc"))?;
    let coord = coordinates(img, mode)?;
    let mut model = Vec::new();
    let mut obs = Vec::new();
    for i in (0..img.len()).filter(|&i| img.valid()[i] && img.mask()[i] == id) {
        let (u, v) = coord(i);
        model.push(ModelPoint::new(abc[0][i], abc[1][i], abc[2][i]));
        obs.push(PixelSample::new(u, v, img.depth()[i]));
    }
    Correspondences::new(model, Observations::Pixels(obs), None)
}

/// Trimmed refitting parameters for [`recover_poses`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustParams {
    pub iters: usize,
    pub trim: f64,
}

/// Solves every object present in the mask independently.
pub fn recover_poses(
    img: &GeoImage,
    k: &CameraIntrinsics,
    mode: CoordMode,
    robust: Option<RobustParams>,
) -> Result<BTreeMap<u32, Result<Pose>>> {
    img.require(Channel::GtAbc)?;
    if mode == CoordMode::UvChannel {
        img.require(Channel::U)?;
        img.require(Channel::V)?;
    }
    Ok(img
        .object_ids()
        .into_iter()
        .map(|id| {
            let pose = object_correspondences(img, id, mode).and_then(|c| match robust {
                Some(r) => robust_solve(&c, Some(k), r.iters, r.trim),
                None => solve_pose_from_pixels(&c, k),
            });
            (id, pose)
        })
        .collect())
}

/// Mean rotation and translation error over the objects that could be solved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoseErrors {
    pub rot_err_rad: f64,
    pub trans_err_m: f64,
    pub solved: usize,
}

pub fn pose_errors(recovered: &BTreeMap<u32, Result<Pose>>, gt: &BTreeMap<u32, Pose>) -> Result<PoseErrors> {
    let mut rot = 0.0;
    let mut trans = 0.0;
    let mut solved = 0;
    for (id, pose) in recovered {
        if let (Ok(p), Some(g)) = (pose, gt.get(id)) {
            let (r, t) = p.error_to(g);
            rot += r;
            trans += t;
            solved += 1;
        }
    }
    if solved == 0 {
        return Err(Error::EmptyInput("solvable objects"));
    }
    Ok(PoseErrors {
        rot_err_rad: rot / solved as f64,
        trans_err_m: trans / solved as f64,
        solved,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeOutcome {
    pub residual: ResidualReport,
    pub errors: PoseErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownResult {
    pub spec_id: String,
    pub builtin: ModeOutcome,
    pub uv_channel: ModeOutcome,
}

impl BreakdownResult {
    pub fn outcome(&self, mode: CoordMode) -> &ModeOutcome {
        match mode {
            CoordMode::Builtin => &self.builtin,
            CoordMode::UvChannel => &self.uv_channel,
        }
    }

    /// One CSV line per mode, builtin first, without the header.
    pub fn csv_rows(&self) -> Vec<String> {
        CoordMode::BOTH
            .iter()
            .map(|&m| {
                let o = self.outcome(m);
                format!(
                    "{},{},{},{},{},{},{}",
                    self.spec_id,
                    m,
                    fmt_sig(o.residual.mean),
                    fmt_sig(o.residual.max),
                    fmt_sig(o.errors.rot_err_rad),
                    fmt_sig(o.errors.trans_err_m),
                    o.residual.n_valid
                )
            })
            .collect()
    }
}

/// Ground-truth poses keyed by mask id.
pub fn scene_poses(scene: &Scene) -> BTreeMap<u32, Pose> {
    scene.poses.iter().enumerate().map(|(i, &p)| (scene.id_of(i), p)).collect()
}

/// Encodes plain UV on the scene's frame, applies `spec`, and measures both
/// coordinate modes against the scene's original intrinsics.
pub fn run_on_scene(scene: &Scene, spec_id: &str, spec: &TransformSpec) -> Result<BreakdownResult> {
    let k = &scene.config.intrinsics;
    let transformed = spec.apply(&encode_plain_uv(&scene.image))?;
    let gt = scene_poses(scene);
    let run = |mode| -> Result<ModeOutcome> {
        let residual = projection_residual(&transformed, k, &gt, mode)?;
        let errors = pose_errors(&recover_poses(&transformed, k, mode, None)?, &gt)?;
        Ok(ModeOutcome { residual, errors })
    };
    Ok(BreakdownResult {
        spec_id: spec_id.to_string(),
        builtin: run(CoordMode::Builtin)?,
        uv_channel: run(CoordMode::UvChannel)?,
    })
}

pub fn run_breakdown_experiment(config: &SceneConfig, spec_id: &str, spec: &TransformSpec) -> Result<BreakdownResult> {
    run_on_scene(&generate_scene(config)?, spec_id, spec)
}

pub fn identity_spec() -> TransformSpec {
    TransformSpec::new(vec![TransformStep::Resize { scale: 1.0 }]).expect("valid spec")
}

/// The five transform combinations of the standard comparison, in order.
pub fn standard_spec_matrix() -> Vec<(String, TransformSpec)> {
    let resize = TransformStep::Resize { scale: 0.8 };
    // Window inside the 512×384 resized frame that keeps the standard objects.
    let crop_small = TransformStep::Crop { roi: Roi::new(40.0, 30.0, 472.0, 354.0).expect("valid roi") };
    let crop_full = TransformStep::Crop { roi: Roi::new(100.0, 50.0, 540.0, 430.0).expect("valid roi") };
    let rows = vec![
        (
            "resize_crop_hflip_vflip",
            vec![resize, crop_small, TransformStep::Hflip, TransformStep::Vflip],
        ),
        ("resize_crop_hflip", vec![resize, crop_small, TransformStep::Hflip]),
        ("resize_crop_vflip", vec![resize, crop_small, TransformStep::Vflip]),
        ("resize", vec![resize]),
        ("crop", vec![crop_full]),
    ];
    rows.into_iter()
        .map(|(id, steps)| (id.to_string(), TransformSpec::new(steps).expect("valid spec")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ModelPoints;
    use crate::scene::{render_depth, Placement};
    use crate::transforms::{crop, flip, resize, Axis};

    fn scene() -> Scene {
        generate_scene(&SceneConfig::standard(7)).unwrap()
    }

    #[test]
    fn untransformed_frame_has_zero_residual() {
        let s = scene();
        let img = encode_plain_uv(&s.image);
        for mode in CoordMode::BOTH {
            let r = projection_residual(&img, &s.config.intrinsics, &scene_poses(&s), mode).unwrap();
            assert!(r.n_valid > 1000);
            assert!(r.max < 1e-6, "{mode} {}", r.max);
            assert!(r.mean <= r.max);
        }
    }

    #[test]
    fn missing_planes() {
        let s = scene();
        let k = &s.config.intrinsics;
        let poses = scene_poses(&s);
        assert!(matches!(
            projection_residual(&s.image, k, &poses, CoordMode::UvChannel),
            Err(Error::MissingPlane("u"))
        ));
        let bare = s.image.clone().without_channel(Channel::GtAbc);
        assert!(matches!(
            projection_residual(&bare, k, &poses, CoordMode::Builtin),
            Err(Error::MissingPlane("gt_abc"))
        ));
    }

    #[test]
    fn crop_shift_residual() {
        let s = scene();
        let k = &s.config.intrinsics;
        let img = crop(&encode_plain_uv(&s.image), Roi::new(100.0, 50.0, 540.0, 430.0).unwrap()).unwrap();
        let poses = scene_poses(&s);
        let b = projection_residual(&img, k, &poses, CoordMode::Builtin).unwrap();
        let expect = (100f64 * 100.0 + 50.0 * 50.0).sqrt();
        for r in b.residuals.iter().flatten() {
            assert!((r - expect).abs() < 1e-6);
        }
        assert!((b.mean - 111.80).abs() < 0.01);
        let uv = projection_residual(&img, k, &poses, CoordMode::UvChannel).unwrap();
        assert!(uv.mean < 1e-6);
        assert_eq!(uv.n_valid, b.n_valid);
    }

    #[test]
    fn hflip_mirror_formula() {
        let s = scene();
        let k = &s.config.intrinsics;
        let src = encode_plain_uv(&s.image);
        let img = flip(&src, Axis::Horizontal);
        let w = img.width() as f64;
        let r = projection_residual(&img, k, &scene_poses(&s), CoordMode::Builtin).unwrap();
        let u = &img.channel(Channel::U).unwrap()[0];
        for (i, res) in r.residuals.iter().enumerate() {
            if let Some(res) = res {
                // the pixel now at column c came from column W-1-c
                let orig = u[i];
                assert!((res - (w - 1.0 - 2.0 * orig).abs()).abs() < 1e-6);
            }
        }
        let uv = projection_residual(&img, k, &scene_poses(&s), CoordMode::UvChannel).unwrap();
        assert!(uv.max < 1e-6);
    }

    #[test]
    fn resize_preserves_uv_residual() {
        let s = scene();
        let k = &s.config.intrinsics;
        let img = resize(&encode_plain_uv(&s.image), 2.0).unwrap();
        let uv = projection_residual(&img, k, &scene_poses(&s), CoordMode::UvChannel).unwrap();
        assert!(uv.max < 1e-6);
    }

    #[test]
    fn identity_experiment() {
        let r = run_breakdown_experiment(&SceneConfig::standard(7), "identity", &identity_spec()).unwrap();
        for mode in CoordMode::BOTH {
            let o = r.outcome(mode);
            assert!(o.residual.max < 1e-6);
            assert!(o.errors.rot_err_rad < 1e-6 && o.errors.trans_err_m < 1e-6);
            assert_eq!(o.errors.solved, 3);
        }
        let rows = r.csv_rows();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].starts_with("identity,builtin,"));
        assert!(rows[1].starts_with("identity,uv_channel,"));
    }

    #[test]
    fn crop_resize_hflip_pose_error_ratio() {
        let spec = TransformSpec::new(vec![
            TransformStep::Crop { roi: Roi::new(100.0, 50.0, 540.0, 430.0).unwrap() },
            TransformStep::Resize { scale: 0.5 },
            TransformStep::Hflip,
        ])
        .unwrap();
        let r = run_breakdown_experiment(&SceneConfig::standard(7), "mix", &spec).unwrap();
        assert!(r.builtin.errors.trans_err_m > 10.0 * r.uv_channel.errors.trans_err_m);
        assert!(r.uv_channel.errors.trans_err_m < 1e-6);
        assert!(r.uv_channel.errors.rot_err_rad < 1e-6);
    }

    #[test]
    fn standard_matrix_breaks_and_repairs() {
        let s = scene();
        for (id, spec) in standard_spec_matrix() {
            let r = run_on_scene(&s, &id, &spec).unwrap();
            assert!(r.builtin.residual.mean > 1.0, "{id}");
            assert!(r.uv_channel.residual.mean < 1e-6, "{id}");
            assert!(r.uv_channel.residual.max < r.builtin.residual.max, "{id}");
            assert!(r.uv_channel.errors.rot_err_rad < 1e-6 && r.uv_channel.errors.trans_err_m < 1e-6, "{id}");
        }
    }

    #[test]
    fn frontoparallel_crop_shift_matches_analytic_translation() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let pts = (0..40)
            .flat_map(|i| (0..40).map(move |j| ModelPoint::new(i as f64 * 0.002 - 0.039, j as f64 * 0.002 - 0.039, 0.0)))
            .collect();
        let plane = ModelPoints::new("plane", pts, false).unwrap();
        let pose = Pose::from_translation([0.0, 0.0, 0.8]).unwrap();
        let img = render_depth(&[Placement { id: 1, model: &plane, pose }], &k, 640, 480).unwrap();
        let img = crop(&img, Roi::new(100.0, 50.0, 640.0, 480.0).unwrap()).unwrap();
        let got = recover_poses(&img, &k, CoordMode::Builtin, None).unwrap()[&1].as_ref().unwrap().translation;
        let shift = [-100.0 * 0.8 / 500.0, -50.0 * 0.8 / 500.0];
        assert!((got[0] - pose.translation[0] - shift[0]).abs() < 0.1 * shift[0].abs());
        assert!((got[1] - pose.translation[1] - shift[1]).abs() < 0.1 * shift[1].abs());
    }

    #[test]
    fn median_of_even_count() {
        let r = ResidualReport::from_residuals(CoordMode::Builtin, vec![Some(1.0), None, Some(3.0), Some(2.0), Some(4.0)]);
        assert_eq!(r.median, 2.5);
        assert_eq!(r.mean, 2.5);
        assert_eq!(r.max, 4.0);
        assert_eq!(r.n_valid, 4);
    }
}
