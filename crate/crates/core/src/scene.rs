//! Seeded synthetic objects, poses and point-splat depth renders with exact
//! ground-truth object coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_image::{Channel, GeoImage};
use crate::geometry::{backproject, project, transform_point, CameraIntrinsics, ModelPoint, PixelSample, Pose, Rotation};
use crate::metrics::ModelPoints;

/// Attempts allowed before [`sample_pose`] gives up.
pub const MAX_POSE_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Box,
    Cylinder,
    Blob,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Box => "box",
            Shape::Cylinder => "cylinder",
            Shape::Blob => "blob",
        }
    }

    /// Whether ADD-S is the appropriate metric for the shape.
    pub fn default_symmetric(self) -> bool {
        matches!(self, Shape::Cylinder)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub n_points: usize,
    /// Edge length (box), height and diameter (cylinder) or mean diameter (blob), meters.
    pub scale: f64,
    /// Seed of the model geometry. Kept apart from the scene seed so an object
    /// looks the same in every frame.
    #[serde(default)]
    pub model_seed: u64,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub symmetric: Option<bool>,
}

impl ObjectSpec {
    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.shape.name().to_string())
    }
}

/// Sampling box for object translations. `x` and `y` bound the lateral
/// translation, `depth` bounds the translation along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseBounds {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub depth: [f64; 2],
}

impl PoseBounds {
    fn validate(&self) -> Result<()> {
        for (name, r) in [("x", self.x), ("y", self.y), ("depth", self.depth)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::InvalidArgument(format!("bound {name} = {r:?} is not an interval")));
            }
        }
        if !(self.depth[0] > 0.0) {
            return Err(Error::InvalidArgument("depth range must be strictly positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub seed: u64,
    pub objects: Vec<ObjectSpec>,
    pub bounds: PoseBounds,
    pub intrinsics: CameraIntrinsics,
    /// Depth noise standard deviation, meters.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Fraction of each object's pixels hidden by a contiguous occluder.
    #[serde(default)]
    pub occlusion: f64,
}

impl SceneConfig {
    /// 640×480 frame with a box, a cylinder and a blob.
    pub fn standard(seed: u64) -> Self {
        let obj = |shape, model_seed| ObjectSpec {
            shape,
            n_points: 4000,
            scale: 0.1,
            model_seed,
            name: None,
            symmetric: None,
        };
        Self {
            seed,
            objects: vec![obj(Shape::Box, 1), obj(Shape::Cylinder, 2), obj(Shape::Blob, 3)],
            bounds: PoseBounds {
                x: [-0.12, 0.12],
                y: [-0.08, 0.08],
                depth: [0.65, 0.85],
            },
            intrinsics: standard_intrinsics(),
            noise_sigma: 0.0,
            occlusion: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.objects.is_empty() {
            return Err(Error::InvalidArgument("scene has no objects".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise sigma {} is negative", self.noise_sigma)));
        }
        if !(0.0..1.0).contains(&self.occlusion) {
            return Err(Error::InvalidArgument(format!("occlusion {} not in [0, 1)", self.occlusion)));
        }
        Ok(())
    }
}

/// LineMOD-like pinhole camera at VGA resolution.
pub fn standard_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(572.4114, 573.57043, 325.2611, 242.04899, 640, 480).expect("valid intrinsics")
}

/// SplitMix64 step, used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn box_points(n: usize, s: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let h = s / 2.0;
    // Opposite corners first so that even tiny boxes span the full diagonal.
    let corners = [
        [-h, -h, -h],
        [h, h, h],
        [h, -h, -h],
        [-h, h, h],
        [-h, h, -h],
        [h, -h, h],
        [-h, -h, h],
        [h, h, -h],
    ];
    let mut pts: Vec<[f64; 3]> = corners.iter().take(n.min(8)).copied().collect();
    while pts.len() < n {
        let axis = rng.random_range(0..3);
        let side = if rng.random_bool(0.5) { h } else { -h };
        let mut p = [rng.random_range(-h..=h), rng.random_range(-h..=h), rng.random_range(-h..=h)];
        p[axis] = side;
        pts.push(p);
    }
    pts
}

fn cylinder_points(n: usize, s: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let (r, h) = (s / 2.0, s / 2.0);
    let mut pts = vec![[r, 0.0, h], [-r, 0.0, -h]];
    // Side area 2πr·2h versus two caps of πr².
    let side_share = (2.0 * r * 2.0 * h) / (2.0 * r * 2.0 * h + r * r);
    while pts.len() < n {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        if rng.random_bool(side_share) {
            pts.push([r * theta.cos(), r * theta.sin(), rng.random_range(-h..=h)]);
        } else {
            let rho = r * rng.random::<f64>().sqrt();
            let z = if rng.random_bool(0.5) { h } else { -h };
            pts.push([rho * theta.cos(), rho * theta.sin(), z]);
        }
    }
    pts.truncate(n);
    pts
}

fn blob_points(n: usize, s: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            let v = unit_vector(rng);
            let azimuth = v[1].atan2(v[0]);
            let elevation = v[2].clamp(-1.0, 1.0).asin();
            let radius = s / 2.0 * (1.0 + 0.3 * (3.0 * azimuth).sin() * (2.0 * elevation).cos());
            [radius * v[0], radius * v[1], radius * v[2]]
        })
        .collect()
}

/// Deterministic point model centered at its centroid.
pub fn make_model(shape: Shape, n_points: usize, scale: f64, seed: u64) -> Result<ModelPoints> {
    if n_points < 4 {
        return Err(Error::InvalidArgument(format!("model needs at least 4 points, got {n_points}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("model scale must be positive, got {scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = match shape {
        Shape::Box => box_points(n_points, scale, &mut rng),
        Shape::Cylinder => cylinder_points(n_points, scale, &mut rng),
        Shape::Blob => blob_points(n_points, scale, &mut rng),
    };
    let n = raw.len() as f64;
    let centroid: [f64; 3] = std::array::from_fn(|a| raw.iter().map(|p| p[a]).sum::<f64>() / n);
    let points = raw
        .iter()
        .map(|p| ModelPoint::new(p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]))
        .collect();
    ModelPoints::new(shape.name(), points, shape.default_symmetric())
}

/// Uniform rotation and box-uniform translation such that every model point
/// lies in front of the camera.
pub fn sample_pose(bounds: &PoseBounds, model: &ModelPoints, seed: u64) -> Result<Pose> {
    bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.random_range(r[0]..=r[1]) };
    for _ in 0..MAX_POSE_ATTEMPTS {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let Ok(rotation) = Rotation::from_quaternion(q[0], q[1], q[2], q[3]) else {
            continue;
        };
        let t = [uniform(&mut rng, bounds.x), uniform(&mut rng, bounds.y), uniform(&mut rng, bounds.depth)];
        let pose = Pose::new(rotation, t)?;
        if model.points().iter().all(|&p| transform_point(&pose, p).d > 0.0) {
            return Ok(pose);
        }
    }
    Err(Error::Unsatisfiable(MAX_POSE_ATTEMPTS))
}

/// One object placed in a render.
#[derive(Debug, Clone, Copy)]
pub struct Placement<'a> {
    pub id: u32,
    pub model: &'a ModelPoints,
    pub pose: Pose,
}

/// Point-splat render with a z-buffer.
///
/// Every model point is projected and splatted to its nearest pixel; the
/// nearest point wins. The winning point's depth becomes `D` and its object
/// coordinates are re-anchored on the ray through the pixel center, so that
/// `GT_ABC`, the pose, `K` and the pixel satisfy the projection equation
/// exactly. RGB is a flat per-object color shaded by depth.
pub fn render_depth(objects: &[Placement<'_>], k: &CameraIntrinsics, width: usize, height: usize) -> Result<GeoImage> {
    if width == 0 || height == 0 {
        return Err(Error::DegenerateOutput { width, height });
    }
    let n = width * height;
    let mut zbuf = vec![f64::INFINITY; n];
    let mut owner = vec![usize::MAX; n];
    for (o, obj) in objects.iter().enumerate() {
        if obj.id == 0 {
            return Err(Error::InvalidArgument("object id 0 is reserved for background".into()));
        }
        for &p in obj.model.points() {
            let cp = transform_point(&obj.pose, p);
            let px = project(k, cp)?;
            let (col, row) = (px.u.round(), px.v.round());
            if col < 0.0 || row < 0.0 || col >= width as f64 || row >= height as f64 {
                continue;
            }
            let i = row as usize * width + col as usize;
            if cp.d < zbuf[i] {
                zbuf[i] = cp.d;
                owner[i] = o;
            }
        }
    }

    let mut depth = vec![0.0; n];
    let mut mask = vec![0u32; n];
    let mut abc = vec![vec![0.0; n]; 3];
    let mut rgb = vec![vec![0.0; n]; 3];
    let inverses: Vec<Pose> = objects.iter().map(|o| o.pose.inverse()).collect();
    for i in 0..n {
        let o = owner[i];
        if o == usize::MAX {
            continue;
        }
        let (col, row) = ((i % width) as f64, (i / width) as f64);
        let d = zbuf[i];
        let cam = backproject(k, PixelSample::new(col, row, d))?;
        let p = inverses[o].apply(cam.to_array());
        depth[i] = d;
        mask[i] = objects[o].id;
        for a in 0..3 {
            abc[a][i] = p[a];
        }
        let color = object_color(objects[o].id);
        let shade = (1.0 / d).clamp(0.0, 1.0);
        for a in 0..3 {
            rgb[a][i] = color[a] * shade;
        }
    }
    GeoImage::from_depth(width, height, depth)?
        .with_mask(mask)?
        .with_channel(Channel::GtAbc, abc)?
        .with_channel(Channel::Rgb, rgb)
}

fn object_color(id: u32) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 6] = [
        [0.9, 0.3, 0.2],
        [0.2, 0.7, 0.3],
        [0.2, 0.4, 0.9],
        [0.9, 0.8, 0.2],
        [0.7, 0.3, 0.8],
        [0.3, 0.8, 0.8],
    ];
    PALETTE[(id as usize - 1) % PALETTE.len()]
}

/// Seeded depth noise plus a contiguous occluder per object.
///
/// For every object id (ascending) a random direction is drawn and the
/// `round(fraction · n)` pixels lying furthest along it are invalidated, a
/// half-plane cut through the object's silhouette. Gaussian noise is then
/// added to the depth of every remaining valid pixel. `GT_ABC` is untouched.
pub fn degrade(img: &GeoImage, sigma: f64, occlusion_fraction: f64, seed: u64) -> Result<GeoImage> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if !(0.0..1.0).contains(&occlusion_fraction) {
        return Err(Error::InvalidArgument(format!(
            "occlusion fraction must lie in [0, 1), got {occlusion_fraction}"
        )));
    }
    let mut out = img.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = img.width();
    if occlusion_fraction > 0.0 {
        for id in img.object_ids() {
            let mut pixels: Vec<usize> = (0..img.len()).filter(|&i| img.valid()[i] && img.mask()[i] == id).collect();
            let hide = (occlusion_fraction * pixels.len() as f64).round() as usize;
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let (s, c) = theta.sin_cos();
            let key = |i: usize| -(((i % w) as f64) * c + ((i / w) as f64) * s);
            pixels.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
            let depth = out.depth_mut();
            for &i in &pixels[..hide] {
                depth[i] = 0.0;
            }
        }
    }
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("finite sigma");
        let depth = out.depth_mut();
        for d in depth.iter_mut().filter(|d| **d > 0.0) {
            *d += noise.sample(&mut rng);
        }
    }
    out.refresh_valid();
    Ok(out)
}

/// Models, poses and the rendered, possibly degraded frame of one scene.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub models: Vec<ModelPoints>,
    /// Pose of object `i` (mask id `i + 1`).
    pub poses: Vec<Pose>,
    pub image: GeoImage,
}

impl Scene {
    pub fn id_of(&self, index: usize) -> u32 {
        index as u32 + 1
    }

    pub fn placements(&self) -> Vec<Placement<'_>> {
        self.models
            .iter()
            .zip(&self.poses)
            .enumerate()
            .map(|(i, (model, &pose))| Placement {
                id: self.id_of(i),
                model,
                pose,
            })
            .collect()
    }
}

pub fn generate_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut models = Vec::with_capacity(config.objects.len());
    for spec in &config.objects {
        let m = make_model(spec.shape, spec.n_points, spec.scale, spec.model_seed)?;
        let symmetric = spec.symmetric.unwrap_or(m.is_symmetric());
        models.push(ModelPoints::with_diameter(spec.name(), m.points().to_vec(), m.diameter(), symmetric)?);
    }
    let poses = models
        .iter()
        .enumerate()
        .map(|(i, m)| sample_pose(&config.bounds, m, derive_seed(config.seed, i as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;
    let k = config.intrinsics;
    let placements: Vec<Placement<'_>> = models
        .iter()
        .zip(&poses)
        .enumerate()
        .map(|(i, (model, &pose))| Placement {
            id: i as u32 + 1,
            model,
            pose,
        })
        .collect();
    let mut image = render_depth(&placements, &k, k.width, k.height)?;
    if config.noise_sigma > 0.0 || config.occlusion > 0.0 {
        image = degrade(&image, config.noise_sigma, config.occlusion, derive_seed(config.seed, 0))?;
    }
    Ok(Scene {
        config: config.clone(),
        models,
        poses,
        image,
    })
}
