//! Pose and coordinate-map training losses and their weighted combination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::metrics::{add_distance, ModelPoints};

/// Mean point-pair distance between the model under `pred` and under `gt`.
/// Same formula as ADD.
pub fn rt_loss(pred: &Pose, gt: &Pose, model: &ModelPoints) -> f64 {
    add_distance(pred, gt, model)
}

/// Mean over masked pixels of `|a − a*| + |b − b*| + |c − c*|`.
pub fn abc_loss(pred: [&[f64]; 3], gt: [&[f64]; 3], mask: &[bool]) -> Result<f64> {
    let n = mask.len();
    if pred.iter().chain(gt.iter()).any(|p| p.len() != n) {
        return Err(Error::ExtentMismatch("abc planes and mask differ in length".into()));
    }
    let terms: Vec<f64> = (0..n)
        .filter(|&i| mask[i])
        .map(|i| (0..3).map(|k| (pred[k][i] - gt[k][i]).abs()).sum::<f64>())
        .collect();
    let Some(&shift) = terms.first() else {
        return Err(Error::EmptyMask);
    };
    // Shifted mean: exact when all terms agree.
    Ok(shift + terms.iter().map(|t| t - shift).sum::<f64>() / terms.len() as f64)
}

/// Half-open epoch range `[start, end)` with the λ0 value used inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub start: u32,
    pub end: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda0_schedule: Vec<ScheduleEntry>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl LossWeights {
    pub fn new(schedule: Vec<ScheduleEntry>, lambda1: f64, lambda2: f64, lambda3: f64, lambda4: f64) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::InvalidArgument("λ0 schedule is empty".into()));
        }
        for e in &schedule {
            if !(e.end > e.start) || !(e.value >= 0.0 && e.value.is_finite()) {
                return Err(Error::InvalidArgument(format!("bad schedule entry {e:?}")));
            }
        }
        if schedule.windows(2).any(|w| w[1].start < w[0].end) {
            return Err(Error::InvalidArgument("schedule ranges must be ordered and disjoint".into()));
        }
        if [lambda1, lambda2, lambda3, lambda4].iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        Ok(Self {
            lambda0_schedule: schedule,
            lambda1,
            lambda2,
            lambda3,
            lambda4,
        })
    }

    /// λ0 = 1 on [1, 20), 5 on [20, 30), 20 on [30, 38), 50 on [38, 40].
    pub fn main_text() -> Self {
        Self::new(
            vec![
                ScheduleEntry { start: 1, end: 20, value: 1.0 },
                ScheduleEntry { start: 20, end: 30, value: 5.0 },
                ScheduleEntry { start: 30, end: 38, value: 20.0 },
                ScheduleEntry { start: 38, end: 41, value: 50.0 },
            ],
            1.0,
            1.0,
            1.0,
            1.0,
        )
        .expect("valid preset")
    }

    /// λ0 = 1 for epochs 1-15, 5 for 16-25, 10 for 26-35, 20 for 36-40.
    pub fn supplementary() -> Self {
        Self::new(
            vec![
                ScheduleEntry { start: 1, end: 16, value: 1.0 },
                ScheduleEntry { start: 16, end: 26, value: 5.0 },
                ScheduleEntry { start: 26, end: 36, value: 10.0 },
                ScheduleEntry { start: 36, end: 41, value: 20.0 },
            ],
            1.0,
            1.0,
            1.0,
            1.0,
        )
        .expect("valid preset")
    }

    /// λ0 at `epoch`: the value of the last range starting at or before it,
    /// or the first range's value for epochs before the schedule begins.
    pub fn lambda0(&self, epoch: u32) -> f64 {
        self.lambda0_schedule
            .iter()
            .rev()
            .find(|e| e.start <= epoch)
            .unwrap_or(&self.lambda0_schedule[0])
            .value
    }
}

/// Individual loss terms. Mask, bbox, cls and rpn are supplied by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub rt: f64,
    pub abc: f64,
    pub mask: f64,
    pub bbox: f64,
    pub cls: f64,
    pub rpn: f64,
}

/// `λ0·L_rt + λ1·L_abc + λ2·L_mask + λ3·(L_bbox + L_cls) + λ4·L_rpn`.
pub fn total_loss(parts: &LossParts, w: &LossWeights, epoch: u32) -> Result<f64> {
    let all = [parts.rt, parts.abc, parts.mask, parts.bbox, parts.cls, parts.rpn];
    if all.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument("loss parts must be finite".into()));
    }
    Ok(w.lambda0(epoch) * parts.rt
        + w.lambda1 * parts.abc
        + w.lambda2 * parts.mask
        + w.lambda3 * (parts.bbox + parts.cls)
        + w.lambda4 * parts.rpn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ModelPoint, Rotation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rt_loss_is_add() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = (0..20).map(|_| ModelPoint::new(rng.random(), rng.random(), rng.random())).collect();
        let m = ModelPoints::new("m", pts, false).unwrap();
        for _ in 0..20 {
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let p = Pose::new(Rotation::from_quaternion(q[0], q[1], q[2], q[3]).unwrap(), [rng.random(), 0.0, 1.0]).unwrap();
            let g = Pose::from_translation([0.0, 0.1, 1.0]).unwrap();
            assert_eq!(rt_loss(&p, &g, &m), add_distance(&p, &g, &m));
            assert_eq!(rt_loss(&p, &p, &m), 0.0);
            assert!(rt_loss(&p, &g, &m) >= 0.0);
        }
        let g = Pose::IDENTITY;
        let p = Pose::from_translation([0.01, 0.0, 0.0]).unwrap();
        assert!((rt_loss(&p, &g, &m) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn abc_loss_examples() {
        let gt: Vec<Vec<f64>> = (0..3).map(|k| (0..6).map(|i| (i * k) as f64 * 0.01).collect()).collect();
        let pred: Vec<Vec<f64>> = gt.iter().map(|p| p.iter().map(|v| v + 0.01).collect()).collect();
        let mask = vec![true, false, true, true, false, true];
        let g = [gt[0].as_slice(), gt[1].as_slice(), gt[2].as_slice()];
        let p = [pred[0].as_slice(), pred[1].as_slice(), pred[2].as_slice()];
        assert_eq!(abc_loss(g, g, &mask).unwrap(), 0.0);
        assert!((abc_loss(p, g, &mask).unwrap() - 0.03).abs() < 1e-15);
        let zero = vec![0.0; 6];
        let off = vec![0.01; 6];
        assert_eq!(abc_loss([&off, &off, &off], [&zero, &zero, &zero], &mask).unwrap(), 0.03);
        assert!(matches!(abc_loss(p, g, &[false; 6]), Err(Error::EmptyMask)));
        assert!(abc_loss(p, g, &[true; 5]).is_err());
    }

    #[test]
    fn schedules() {
        let main = LossWeights::main_text();
        let got: Vec<f64> = [10, 22, 32, 39].iter().map(|&e| main.lambda0(e)).collect();
        assert_eq!(got, vec![1.0, 5.0, 20.0, 50.0]);
        assert_eq!(main.lambda0(19), 1.0);
        assert_eq!(main.lambda0(20), 5.0);
        assert_eq!(main.lambda0(40), 50.0);
        assert_eq!(main.lambda0(0), 1.0);

        let sup = LossWeights::supplementary();
        let got: Vec<f64> = [15, 16, 25, 26, 35, 36, 40].iter().map(|&e| sup.lambda0(e)).collect();
        assert_eq!(got, vec![1.0, 5.0, 5.0, 10.0, 10.0, 20.0, 20.0]);

        let overlapping = vec![
            ScheduleEntry { start: 1, end: 10, value: 1.0 },
            ScheduleEntry { start: 5, end: 12, value: 2.0 },
        ];
        assert!(LossWeights::new(overlapping, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::main_text();
        assert_eq!(total_loss(&LossParts::default(), &w, 5).unwrap(), 0.0);
        let unit = LossParts { rt: 1.0, abc: 1.0, mask: 1.0, bbox: 1.0, cls: 1.0, rpn: 1.0 };
        assert_eq!(total_loss(&unit, &w, 10).unwrap(), 6.0);
        assert_eq!(total_loss(&unit, &w, 39).unwrap(), 55.0);
        let nan = LossParts { rt: f64::NAN, ..unit };
        assert!(total_loss(&nan, &w, 1).is_err());
    }
}
