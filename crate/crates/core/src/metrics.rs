//! ADD / ADD-S distances and the accuracy summaries built on them.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ModelPoint, Pose};

/// Maximum threshold of the ADD(-S) AUC, meters.
pub const AUC_MAX_THRESHOLD: f64 = 0.1;
/// ADD-0.1d threshold as a fraction of the object diameter.
pub const DIAMETER_FRACTION: f64 = 0.1;
/// ADD-S threshold used for the occlusion study, meters.
pub const OCCLUSION_ADDS_THRESHOLD: f64 = 0.02;
/// Above this many points ADD-S switches to the grid nearest-neighbor search.
pub const EXACT_ADDS_LIMIT: usize = 4096;
/// Tolerance when checking a stored diameter against the point set.
pub const DIAMETER_TOLERANCE: f64 = 1e-6;

/// Vertex set of an object model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPoints {
    name: String,
    points: Vec<ModelPoint>,
    diameter: f64,
    symmetric: bool,
}

impl ModelPoints {
    /// Builds a model and computes its diameter by exhaustive search.
    pub fn new(name: impl Into<String>, points: Vec<ModelPoint>, symmetric: bool) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("model points"));
        }
        if points.iter().any(|p| !(p.a.is_finite() && p.b.is_finite() && p.c.is_finite())) {
            return Err(Error::InvalidArgument("model points must be finite".into()));
        }
        let diameter = max_pairwise_distance(&points);
        Ok(Self {
            name: name.into(),
            points,
            diameter,
            symmetric,
        })
    }

    /// Builds a model from a stored diameter, verifying it within 1e-6.
    pub fn with_diameter(
        name: impl Into<String>,
        points: Vec<ModelPoint>,
        diameter: f64,
        symmetric: bool,
    ) -> Result<Self> {
        let m = Self::new(name, points, symmetric)?;
        if (m.diameter - diameter).abs() > DIAMETER_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "stored diameter {diameter} differs from computed {}",
                m.diameter
            )));
        }
        Ok(m)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[ModelPoint] {
        &self.points
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn dist(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

pub fn max_pairwise_distance(points: &[ModelPoint]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, p) in points.iter().enumerate() {
        let p = p.to_array();
        for q in &points[i + 1..] {
            best = best.max(dist(&p, &q.to_array()));
        }
    }
    best
}

fn transformed(pose: &Pose, model: &ModelPoints) -> Vec<[f64; 3]> {
    model.points.iter().map(|p| pose.apply(p.to_array())).collect()
}

/// Per-point offset `pred(p) − gt(p)`, computed as `(R_pred − R_gt)·p + (t_pred − t_gt)`
/// so that equal rotations leave exactly the translation difference.
fn matched_offsets<'a>(pred: &Pose, gt: &Pose, model: &'a ModelPoints) -> impl Iterator<Item = f64> + 'a {
    let dr = pred.rotation.matrix() - gt.rotation.matrix();
    let dt: [f64; 3] = std::array::from_fn(|a| pred.translation[a] - gt.translation[a]);
    model.points.iter().map(move |p| {
        let d: [f64; 3] =
            std::array::from_fn(|a| dr[(a, 0)] * p.a + dr[(a, 1)] * p.b + dr[(a, 2)] * p.c + dt[a]);
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    })
}

/// `shift + Σ(vᵢ − shift)/n`. Exact when every value equals the shift, and
/// monotone in every value for a fixed shift.
fn shifted_mean(values: impl Iterator<Item = f64>, shift: f64, n: usize) -> f64 {
    shift + values.map(|v| v - shift).sum::<f64>() / n as f64
}

/// Mean distance between matched model points under the two poses.
pub fn add_distance(pred: &Pose, gt: &Pose, model: &ModelPoints) -> f64 {
    let matched: Vec<f64> = matched_offsets(pred, gt, model).collect();
    shifted_mean(matched.iter().copied(), matched[0], matched.len())
}

/// Mean closest-point distance from predicted to ground-truth model points.
pub fn adds_distance(pred: &Pose, gt: &Pose, model: &ModelPoints) -> f64 {
    if model.len() <= EXACT_ADDS_LIMIT {
        adds_distance_exact(pred, gt, model)
    } else {
        adds_distance_grid(pred, gt, model)
    }
}

/// O(m²) ADD-S.
pub fn adds_distance_exact(pred: &Pose, gt: &Pose, model: &ModelPoints) -> f64 {
    let target = transformed(gt, model);
    closest_mean(pred, gt, model, |q| target.iter().map(|t| dist(q, t)).fold(f64::INFINITY, f64::min))
}

/// Averages per-point closest distances. The matched point is itself a
/// candidate, so each term is capped by its ADD term and, with the shared
/// shift, the mean never exceeds ADD.
fn closest_mean(pred: &Pose, gt: &Pose, model: &ModelPoints, nearest: impl Fn(&[f64; 3]) -> f64) -> f64 {
    let matched: Vec<f64> = matched_offsets(pred, gt, model).collect();
    let closest = transformed(pred, model)
        .iter()
        .zip(&matched)
        .map(|(q, &m)| nearest(q).min(m))
        .collect::<Vec<_>>();
    shifted_mean(closest.into_iter(), matched[0], matched.len())
}

/// ADD-S with a uniform-grid nearest-neighbor search; same result as the exact path.
pub fn adds_distance_grid(pred: &Pose, gt: &Pose, model: &ModelPoints) -> f64 {
    let grid = PointGrid::new(transformed(gt, model));
    closest_mean(pred, gt, model, |q| grid.nearest(q))
}

struct PointGrid {
    points: Vec<[f64; 3]>,
    origin: [f64; 3],
    cell: f64,
    dims: [i64; 3],
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl PointGrid {
    fn new(points: Vec<[f64; 3]>) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let per_axis = (points.len() as f64).cbrt().ceil().max(1.0);
        let cell = if extent > 0.0 { extent / per_axis } else { 1.0 };
        let dims = std::array::from_fn(|a| ((hi[a] - lo[a]) / cell).floor() as i64 + 1);
        let mut grid = Self {
            points: Vec::new(),
            origin: lo,
            cell,
            dims,
            cells: HashMap::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let key = grid.cell_of(p);
            grid.cells.entry(key).or_default().push(i);
        }
        grid.points = points;
        grid
    }

    fn cell_of(&self, p: &[f64; 3]) -> [i64; 3] {
        std::array::from_fn(|a| ((p[a] - self.origin[a]) / self.cell).floor() as i64)
    }

    fn nearest(&self, q: &[f64; 3]) -> f64 {
        let c = self.cell_of(q);
        // Rings closer than `first` miss the grid, rings past `last` cannot reach new cells.
        let first = (0..3)
            .map(|a| (-c[a]).max(c[a] - (self.dims[a] - 1)).max(0))
            .max()
            .unwrap_or(0);
        let last = (0..3)
            .map(|a| c[a].abs().max((c[a] - (self.dims[a] - 1)).abs()))
            .max()
            .unwrap_or(0);
        let mut best = f64::INFINITY;
        for r in first..=last {
            self.scan_ring(q, c, r, &mut best);
            // Everything outside the searched block is at least r cells away.
            if best <= r as f64 * self.cell {
                break;
            }
        }
        best
    }

    fn scan_ring(&self, q: &[f64; 3], c: [i64; 3], r: i64, best: &mut f64) {
        let lo: [i64; 3] = std::array::from_fn(|a| (c[a] - r).max(0));
        let hi: [i64; 3] = std::array::from_fn(|a| (c[a] + r).min(self.dims[a] - 1));
        let mut visit = |key: [i64; 3]| {
            if let Some(ids) = self.cells.get(&key) {
                for &i in ids {
                    *best = best.min(dist(q, &self.points[i]));
                }
            }
        };
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                if (x - c[0]).abs() == r || (y - c[1]).abs() == r {
                    for z in lo[2]..=hi[2] {
                        visit([x, y, z]);
                    }
                } else {
                    for z in [c[2] - r, c[2] + r] {
                        if z >= lo[2] && z <= hi[2] && (r > 0 || z == c[2]) {
                            visit([x, y, z]);
                        }
                    }
                }
            }
        }
    }
}

/// ADD-S for symmetric models, ADD otherwise.
pub fn metric_distance(pred: &Pose, gt: &Pose, model: &ModelPoints) -> f64 {
    if model.symmetric {
        adds_distance(pred, gt, model)
    } else {
        add_distance(pred, gt, model)
    }
}

fn check_distances(distances: &[f64]) -> Result<()> {
    if distances.is_empty() {
        return Err(Error::EmptyInput("distances"));
    }
    if distances.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::InvalidArgument("distances must be non-negative".into()));
    }
    Ok(())
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {t}")));
    }
    Ok(())
}

/// Area under accuracy(θ) = fraction{d ≤ θ} for θ ∈ [0, max_threshold], in percent.
///
/// Each distance covers a fraction `max(0, 1 − d / max_threshold)` of the integral, so the
/// value is exact. Distances are summed in sorted order, which makes the result
/// independent of input order bit-for-bit.
pub fn auc(distances: &[f64], max_threshold: f64) -> Result<f64> {
    check_distances(distances)?;
    check_threshold(max_threshold)?;
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let covered: f64 = sorted
        .iter()
        .take_while(|&&d| d < max_threshold)
        .map(|&d| (max_threshold - d) / max_threshold)
        .sum();
    Ok(100.0 * covered / sorted.len() as f64)
}

/// Points `(θ, accuracy %)` of the accuracy-threshold curve, `steps + 1` samples.
pub fn accuracy_curve(distances: &[f64], max_threshold: f64, steps: usize) -> Result<Vec<(f64, f64)>> {
    check_distances(distances)?;
    check_threshold(max_threshold)?;
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok((0..=steps.max(1))
        .map(|i| {
            let theta = max_threshold * i as f64 / steps.max(1) as f64;
            let hits = sorted.partition_point(|&d| d <= theta);
            (theta, 100.0 * hits as f64 / n)
        })
        .collect())
}

/// Percentage of distances strictly below `threshold`.
pub fn threshold_accuracy(distances: &[f64], threshold: f64) -> Result<f64> {
    check_distances(distances)?;
    check_threshold(threshold)?;
    let hits = distances.iter().filter(|&&d| d < threshold).count();
    Ok(100.0 * hits as f64 / distances.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// ADD-S < 2 cm accuracy; `None` for an empty bin.
    pub accuracy: Option<f64>,
}

/// ADD-S < 2 cm accuracy per occlusion-fraction bin.
///
/// `samples` holds `(occlusion fraction, ADD-S distance)`. Bins are
/// `[edges[k], edges[k + 1])`, the last one closed on the right.
pub fn occlusion_bins(samples: &[(f64, f64)], edges: &[f64]) -> Result<Vec<OcclusionBin>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("bin edges must be strictly increasing, at least two".into()));
    }
    if samples.iter().any(|&(f, _)| !(0.0..=1.0).contains(&f)) {
        return Err(Error::InvalidArgument("occlusion fractions must lie in [0, 1]".into()));
    }
    let last = edges.len() - 2;
    (0..=last)
        .map(|k| {
            let (lo, hi) = (edges[k], edges[k + 1]);
            let inside: Vec<f64> = samples
                .iter()
                .filter(|&&(f, _)| f >= lo && (f < hi || (k == last && f <= hi)))
                .map(|&(_, d)| d)
                .collect();
            let accuracy = if inside.is_empty() {
                None
            } else {
                Some(threshold_accuracy(&inside, OCCLUSION_ADDS_THRESHOLD)?)
            };
            Ok(OcclusionBin {
                lo,
                hi,
                count: inside.len(),
                accuracy,
            })
        })
        .collect()
}

/// One object instance in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: String,
    pub object: String,
    pub pred: Pose,
    pub gt: Pose,
    pub occlusion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameDistances {
    pub frame_id: String,
    pub object: String,
    pub add: f64,
    pub adds: f64,
    pub occlusion: f64,
}

/// Per-object summary in the shape of the usual YCB-Video table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectMetrics {
    pub object: String,
    pub frames: usize,
    pub symmetric: bool,
    /// AUC of ADD-S, percent.
    pub adds_auc: f64,
    /// AUC of ADD(S), percent.
    pub add_s_auc: f64,
    /// ADD(S) below 10 % of the diameter, percent.
    pub add_01d: f64,
    /// ADD-S below 2 cm, percent.
    pub adds_2cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub frames: Vec<FrameDistances>,
    pub objects: Vec<ObjectMetrics>,
    pub overall: ObjectMetrics,
    pub occlusion: Vec<OcclusionBin>,
}

/// Scores every record against its model. Output is ordered by object name then frame id.
pub fn evaluate(
    records: &[FrameRecord],
    models: &BTreeMap<String, ModelPoints>,
    occlusion_edges: &[f64],
) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::EmptyInput("frame records"));
    }
    let mut frames: Vec<FrameDistances> = records
        .iter()
        .map(|r| {
            let model = models
                .get(&r.object)
                .ok_or_else(|| Error::InvalidArgument(format!("no model named {:?}", r.object)))?;
            Ok(FrameDistances {
                frame_id: r.frame_id.clone(),
                object: r.object.clone(),
                add: add_distance(&r.pred, &r.gt, model),
                adds: adds_distance(&r.pred, &r.gt, model),
                occlusion: r.occlusion,
            })
        })
        .collect::<Result<_>>()?;
    frames.sort_by(|a, b| a.object.cmp(&b.object).then_with(|| a.frame_id.cmp(&b.frame_id)));

    let summarize = |name: &str, rows: &[&FrameDistances]| -> Result<ObjectMetrics> {
        let adds: Vec<f64> = rows.iter().map(|f| f.adds).collect();
        let mut add_s = Vec::with_capacity(rows.len());
        let mut hits_01d = 0usize;
        let mut any_symmetric = false;
        for f in rows {
            let m = &models[&f.object];
            any_symmetric |= m.is_symmetric();
            let d = if m.is_symmetric() { f.adds } else { f.add };
            if d < DIAMETER_FRACTION * m.diameter() {
                hits_01d += 1;
            }
            add_s.push(d);
        }
        Ok(ObjectMetrics {
            object: name.to_string(),
            frames: rows.len(),
            symmetric: any_symmetric,
            adds_auc: auc(&adds, AUC_MAX_THRESHOLD)?,
            add_s_auc: auc(&add_s, AUC_MAX_THRESHOLD)?,
            add_01d: 100.0 * hits_01d as f64 / rows.len() as f64,
            adds_2cm: threshold_accuracy(&adds, OCCLUSION_ADDS_THRESHOLD)?,
        })
    };

    let mut objects = Vec::new();
    let mut start = 0;
    while start < frames.len() {
        let name = &frames[start].object;
        let end = start + frames[start..].iter().take_while(|f| &f.object == name).count();
        let rows: Vec<&FrameDistances> = frames[start..end].iter().collect();
        objects.push(summarize(name, &rows)?);
        start = end;
    }
    let all: Vec<&FrameDistances> = frames.iter().collect();
    let overall = summarize("ALL", &all)?;
    let samples: Vec<(f64, f64)> = frames.iter().map(|f| (f.occlusion, f.adds)).collect();
    let occlusion = occlusion_bins(&samples, occlusion_edges)?;
    Ok(MetricReport {
        frames,
        objects,
        overall,
        occlusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        Pose::new(
            Rotation::from_quaternion(q[0], q[1], q[2], q[3]).unwrap(),
            std::array::from_fn(|_| rng.random_range(-0.2..0.2)),
        )
        .unwrap()
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize, symmetric: bool) -> ModelPoints {
        let pts = (0..n)
            .map(|_| ModelPoint::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)))
            .collect();
        ModelPoints::new("obj", pts, symmetric).unwrap()
    }

    fn square() -> ModelPoints {
        let pts = vec![
            ModelPoint::new(0.05, 0.05, 0.0),
            ModelPoint::new(-0.05, 0.05, 0.0),
            ModelPoint::new(-0.05, -0.05, 0.0),
            ModelPoint::new(0.05, -0.05, 0.0),
        ];
        ModelPoints::new("square", pts, true).unwrap()
    }

    #[test]
    fn add_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_model(&mut rng, 10, false);
        let gt = random_pose(&mut rng);
        assert_eq!(add_distance(&gt, &gt, &model), 0.0);
        let shifted = Pose::from_translation([0.0, 0.0, 0.05]).unwrap().compose(&gt);
        assert!((add_distance(&shifted, &gt, &model) - 0.05).abs() < 1e-15);
        for _ in 0..50 {
            let t: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.1..0.1));
            let pred = Pose::new(gt.rotation, t).unwrap();
            let d: [f64; 3] = std::array::from_fn(|a| t[a] - gt.translation[a]);
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            assert_eq!(add_distance(&pred, &gt, &model), norm);
        }

        let pred = random_pose(&mut rng);
        let mut brute = 0.0;
        for p in model.points() {
            let a = pred.rotation.matrix() * nalgebra::Vector3::from(p.to_array()) + nalgebra::Vector3::from(pred.translation);
            let b = gt.rotation.matrix() * nalgebra::Vector3::from(p.to_array()) + nalgebra::Vector3::from(gt.translation);
            brute += (a - b).norm();
        }
        assert!((add_distance(&pred, &gt, &model) - brute / 10.0).abs() < 1e-12);
    }

    #[test]
    fn adds_square_symmetry() {
        let m = square();
        let gt = Pose::from_translation([0.0, 0.0, 1.0]).unwrap();
        let turn = Rotation::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2).unwrap();
        let pred = Pose::new(turn, [0.0, 0.0, 1.0]).unwrap();
        let adds = adds_distance(&pred, &gt, &m);
        let add = add_distance(&pred, &gt, &m);
        assert!(adds < 1e-15, "{adds}");
        // each corner moves to its neighbor: side length 0.1
        assert!((add - 0.1).abs() < 1e-12);
        assert_eq!(metric_distance(&pred, &gt, &m), adds);
    }

    #[test]
    fn adds_never_exceeds_add() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.random_range(1..40);
            let m = random_model(&mut rng, n, false);
            let (p, g) = (random_pose(&mut rng), random_pose(&mut rng));
            assert!(adds_distance(&p, &g, &m) <= add_distance(&p, &g, &m));
            assert_eq!(metric_distance(&p, &g, &m), add_distance(&p, &g, &m));
        }
    }

    #[test]
    fn grid_matches_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2, 7, 300, 5000] {
            let m = random_model(&mut rng, n, true);
            let (p, g) = (random_pose(&mut rng), random_pose(&mut rng));
            let near = Pose::from_translation([0.001, 0.0, 0.0]).unwrap().compose(&g);
            for pred in [p, near, g] {
                let e = adds_distance_exact(&pred, &g, &m);
                let q = adds_distance_grid(&pred, &g, &m);
                assert!((e - q).abs() < 1e-12, "n={n}: {e} vs {q}");
            }
        }
        // flat model: one grid axis collapses to a single cell
        let pts = (0..500).map(|i| ModelPoint::new((i % 25) as f64 * 0.01, (i / 25) as f64 * 0.01, 0.0)).collect();
        let m = ModelPoints::new("flat", pts, true).unwrap();
        let (p, g) = (random_pose(&mut rng), random_pose(&mut rng));
        assert!((adds_distance_exact(&p, &g, &m) - adds_distance_grid(&p, &g, &m)).abs() < 1e-12);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.0; 5], 0.1).unwrap(), 100.0);
        assert_eq!(auc(&[0.2, 0.11, 0.1], 0.1).unwrap(), 0.0);
        assert!((auc(&[0.05], 0.1).unwrap() - 50.0).abs() < 1e-12);
        assert!(matches!(auc(&[], 0.1), Err(Error::EmptyInput(_))));
        assert!(auc(&[0.1], 0.0).is_err());
        assert!(auc(&[-0.1], 0.1).is_err());
    }

    #[test]
    fn auc_matches_numeric_integration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let d: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..0.15)).collect();
            let steps = 1_000_000;
            let h = 0.1 / steps as f64;
            let mut integral = 0.0;
            for i in 0..steps {
                let theta = (i as f64 + 0.5) * h;
                integral += d.iter().filter(|&&x| x <= theta).count() as f64 / d.len() as f64 * h;
            }
            let numeric = 100.0 * integral / 0.1;
            assert!((auc(&d, 0.1).unwrap() - numeric).abs() < 1e-4);
        }
    }

    #[test]
    fn auc_monotone_and_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut d: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..0.2)).collect();
        let a = auc(&d, 0.1).unwrap();
        d.reverse();
        assert_eq!(auc(&d, 0.1).unwrap(), a);
        let mut prev = 0.0;
        for t in [0.01, 0.05, 0.1, 0.2, 0.5] {
            let v = auc(&d, t).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn threshold_accuracy_examples() {
        assert_eq!(threshold_accuracy(&[0.0, 0.0], 0.02).unwrap(), 100.0);
        assert_eq!(threshold_accuracy(&[0.01, 0.02, 0.03, 0.0], 0.02).unwrap(), 50.0);
        assert!(threshold_accuracy(&[], 0.02).is_err());
        assert!(threshold_accuracy(&[0.0], 0.0).is_err());
    }

    #[test]
    fn occlusion_bin_policy() {
        let samples = vec![(0.0, 0.0), (0.1, 0.03), (0.5, 0.01), (1.0, 0.05)];
        let one = occlusion_bins(&samples, &[0.0, 1.0]).unwrap();
        let d: Vec<f64> = samples.iter().map(|s| s.1).collect();
        assert_eq!(one[0].accuracy, Some(threshold_accuracy(&d, 0.02).unwrap()));
        assert_eq!(one[0].count, 4);

        let bins = occlusion_bins(&samples, &[0.0, 0.2, 0.4, 0.6, 1.0]).unwrap();
        assert_eq!(bins[0].accuracy, Some(50.0));
        assert_eq!(bins[1].accuracy, None);
        assert_eq!(bins[1].count, 0);
        assert_eq!(bins[2].accuracy, Some(100.0));
        assert_eq!(bins[3].accuracy, Some(0.0));

        assert!(occlusion_bins(&samples, &[0.0]).is_err());
        assert!(occlusion_bins(&samples, &[0.5, 0.2]).is_err());
        assert!(occlusion_bins(&[(1.5, 0.0)], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn occlusion_bins_follow_degradation() {
        // distance grows with occlusion, so accuracy per bin can only drop
        let samples: Vec<(f64, f64)> = (0..100).map(|i| (i as f64 / 100.0, 0.04 * i as f64 / 100.0)).collect();
        let bins = occlusion_bins(&samples, &[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        let acc: Vec<f64> = bins.iter().map(|b| b.accuracy.unwrap()).collect();
        assert!(acc.windows(2).all(|w| w[1] <= w[0]), "{acc:?}");
    }

    #[test]
    fn model_diameter_checks() {
        let pts = vec![ModelPoint::new(0.0, 0.0, 0.0), ModelPoint::new(0.3, 0.4, 0.0)];
        let m = ModelPoints::with_diameter("a", pts.clone(), 0.5, false).unwrap();
        assert_eq!(m.diameter(), 0.5);
        assert!(ModelPoints::with_diameter("a", pts, 0.6, false).is_err());
        assert!(ModelPoints::new("e", vec![], false).is_err());
    }

    #[test]
    fn evaluate_orders_and_summarizes() {
        let m = square();
        let mut models = BTreeMap::new();
        models.insert("square".to_string(), m.clone());
        let flat = ModelPoints::new("bar", vec![ModelPoint::new(0.0, 0.0, 0.0), ModelPoint::new(0.2, 0.0, 0.0)], false).unwrap();
        models.insert("bar".to_string(), flat);
        let gt = Pose::from_translation([0.0, 0.0, 1.0]).unwrap();
        let off = Pose::from_translation([0.0, 0.0, 1.05]).unwrap();
        let records = vec![
            FrameRecord { frame_id: "0002".into(), object: "square".into(), pred: gt, gt, occlusion: 0.0 },
            FrameRecord { frame_id: "0001".into(), object: "square".into(), pred: gt, gt, occlusion: 0.1 },
            FrameRecord { frame_id: "0001".into(), object: "bar".into(), pred: off, gt, occlusion: 0.5 },
        ];
        let report = evaluate(&records, &models, &[0.0, 0.25, 1.0]).unwrap();
        assert_eq!(report.frames[0].object, "bar");
        assert_eq!(report.frames[1].frame_id, "0001");
        assert_eq!(report.objects.len(), 2);
        assert_eq!(report.objects[1].adds_auc, 100.0);
        assert!((report.objects[0].add_s_auc - 50.0).abs() < 1e-9);
        // 0.05 m error vs 0.02 m threshold (10 % of 0.2)
        assert_eq!(report.objects[0].add_01d, 0.0);
        assert_eq!(report.overall.frames, 3);
        assert_eq!(report.occlusion[0].accuracy, Some(100.0));
        assert_eq!(report.occlusion[1].accuracy, Some(0.0));
    }
}
