//! Closed-form rigid pose recovery from matched model/observation pairs.

use nalgebra::{Matrix3, Vector3, SVD};

use crate::error::{Error, Result};
use crate::geometry::{backproject, CamPoint, CameraIntrinsics, ModelPoint, PixelSample, Pose, Rotation};

/// Second singular value must exceed this fraction of the first.
pub const DEGENERACY_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    Camera(Vec<CamPoint>),
    Pixels(Vec<PixelSample>),
}

impl Observations {
    pub fn len(&self) -> usize {
        match self {
            Observations::Camera(v) => v.len(),
            Observations::Pixels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Matched `(a, b, c) ↔ observation` pairs with non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    model: Vec<ModelPoint>,
    observations: Observations,
    weights: Vec<f64>,
}

impl Correspondences {
    pub fn new(model: Vec<ModelPoint>, observations: Observations, weights: Option<Vec<f64>>) -> Result<Self> {
        let n = model.len();
        if observations.len() != n {
            return Err(Error::ExtentMismatch(format!(
                "{n} model points but {} observations",
                observations.len()
            )));
        }
        if n < 3 {
            return Err(Error::DegenerateConfiguration(format!("{n} pairs, at least 3 required")));
        }
        let weights = weights.unwrap_or_else(|| vec![1.0; n]);
        if weights.len() != n {
            return Err(Error::ExtentMismatch(format!("{n} pairs but {} weights", weights.len())));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        Ok(Self {
            model,
            observations,
            weights,
        })
    }

    pub fn from_camera(model: Vec<ModelPoint>, obs: Vec<CamPoint>) -> Result<Self> {
        Self::new(model, Observations::Camera(obs), None)
    }

    pub fn from_pixels(model: Vec<ModelPoint>, obs: Vec<PixelSample>) -> Result<Self> {
        Self::new(model, Observations::Pixels(obs), None)
    }

    pub fn len(&self) -> usize {
        self.model.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model.is_empty()
    }

    pub fn model(&self) -> &[ModelPoint] {
        &self.model
    }

    pub fn observations(&self) -> &Observations {
        &self.observations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Camera-frame observations, backprojecting pixel samples through `k`.
    pub fn camera_points(&self, k: Option<&CameraIntrinsics>) -> Result<Vec<CamPoint>> {
        match &self.observations {
            Observations::Camera(v) => Ok(v.clone()),
            Observations::Pixels(v) => {
                let k = k.ok_or_else(|| {
                    Error::InvalidArgument("pixel observations need camera intrinsics".into())
                })?;
                v.iter().map(|&s| backproject(k, s)).collect()
            }
        }
    }
}

/// Weighted Kabsch/Umeyama without scale: argmin Σ wᵢ‖R·aᵢ + T − xᵢ‖².
fn fit_rigid(model: &[ModelPoint], obs: &[CamPoint], weights: &[f64]) -> Result<Pose> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateConfiguration("all weights are zero".into()));
    }
    let mut mu_a = Vector3::zeros();
    let mut mu_x = Vector3::zeros();
    for ((a, x), &w) in model.iter().zip(obs).zip(weights) {
        mu_a += w * Vector3::from(a.to_array());
        mu_x += w * Vector3::from(x.to_array());
    }
    mu_a /= total;
    mu_x /= total;

    let mut cov = Matrix3::zeros();
    for ((a, x), &w) in model.iter().zip(obs).zip(weights) {
        let da = Vector3::from(a.to_array()) - mu_a;
        let dx = Vector3::from(x.to_array()) - mu_x;
        cov += w * dx * da.transpose();
    }
    cov /= total;

    let svd = SVD::new(cov, true, true);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let (s1, s2) = (svd.singular_values[order[0]], svd.singular_values[order[1]]);
    if !(s1 > 0.0) || s2 < DEGENERACY_RATIO * s1 {
        return Err(Error::DegenerateConfiguration(format!(
            "cross-covariance singular values {s1:e}, {s2:e}"
        )));
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(order[2], order[2])] = -1.0;
    }
    let r = u * d * v_t;
    let t = mu_x - r * mu_a;
    Pose::new(Rotation::from_matrix(&r)?, [t.x, t.y, t.z])
}

/// Least-squares rigid pose from camera-frame observations.
pub fn umeyama(c: &Correspondences) -> Result<Pose> {
    match &c.observations {
        Observations::Camera(obs) => fit_rigid(&c.model, obs, &c.weights),
        Observations::Pixels(_) => Err(Error::InvalidArgument(
            "umeyama needs camera-frame observations; use solve_pose_from_pixels".into(),
        )),
    }
}

/// Backprojects `(u, v, d)` observations through `k`, then solves rigidly.
pub fn solve_pose_from_pixels(c: &Correspondences, k: &CameraIntrinsics) -> Result<Pose> {
    let obs = c.camera_points(Some(k))?;
    fit_rigid(&c.model, &obs, &c.weights)
}

fn residual(pose: &Pose, a: &ModelPoint, x: &CamPoint) -> f64 {
    let p = pose.apply(a.to_array());
    let d = [p[0] - x.x, p[1] - x.y, p[2] - x.d];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Root-mean-square residual of `pose` over the selected pairs.
pub fn rms(pose: &Pose, model: &[ModelPoint], obs: &[CamPoint], select: &[usize]) -> f64 {
    if select.is_empty() {
        return 0.0;
    }
    let ss: f64 = select.iter().map(|&i| residual(pose, &model[i], &obs[i]).powi(2)).sum();
    (ss / select.len() as f64).sqrt()
}

/// Outcome of [`robust_solve_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct RobustFit {
    pub pose: Pose,
    pub initial: Pose,
    /// Indices of the pairs kept in the final fit, ascending.
    pub inliers: Vec<usize>,
}

/// Trimmed least squares: fit, keep the `1 − trim_fraction` best pairs, refit.
pub fn robust_solve(
    c: &Correspondences,
    k: Option<&CameraIntrinsics>,
    iters: usize,
    trim_fraction: f64,
) -> Result<Pose> {
    robust_solve_detailed(c, k, iters, trim_fraction).map(|f| f.pose)
}

pub fn robust_solve_detailed(
    c: &Correspondences,
    k: Option<&CameraIntrinsics>,
    iters: usize,
    trim_fraction: f64,
) -> Result<RobustFit> {
    if !(0.0..0.5).contains(&trim_fraction) {
        return Err(Error::InvalidArgument(format!(
            "trim fraction must lie in [0, 0.5), got {trim_fraction}"
        )));
    }
    let n = c.len();
    let keep = n - (trim_fraction * n as f64).floor() as usize;
    if keep < 3 {
        return Err(Error::TooFewInliers { kept: keep });
    }
    let obs = c.camera_points(k)?;
    let initial = fit_rigid(&c.model, &obs, &c.weights)?;
    let mut pose = initial;
    let mut inliers: Vec<usize> = (0..n).collect();
    for _ in 0..iters {
        let res: Vec<f64> = (0..n).map(|i| residual(&pose, &c.model[i], &obs[i])).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| res[i].total_cmp(&res[j]).then(i.cmp(&j)));
        order.truncate(keep);
        order.sort_unstable();
        let model: Vec<ModelPoint> = order.iter().map(|&i| c.model[i]).collect();
        let sel_obs: Vec<CamPoint> = order.iter().map(|&i| obs[i]).collect();
        let w: Vec<f64> = order.iter().map(|&i| c.weights[i]).collect();
        pose = fit_rigid(&model, &sel_obs, &w)?;
        inliers = order;
    }
    Ok(RobustFit {
        pose,
        initial,
        inliers,
    })
}
