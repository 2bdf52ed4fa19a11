//! Rotation/translation errors and instance-level recall, precision and F1.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuccessThresholds {
    /// Degrees.
    pub re_max: f64,
    pub te_max: f64,
}

impl Default for SuccessThresholds {
    fn default() -> Self {
        Self { re_max: 15.0, te_max: 0.1 }
    }
}

impl SuccessThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.re_max > 0.0 && self.te_max > 0.0) {
            return Err(Error::InvalidConfig("thresholds must be > 0".into()));
        }
        Ok(())
    }
}

/// Geodesic angle between two rotations, in degrees.
pub fn rotation_error_deg(r_pred: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> f64 {
    let c = (((r_pred.transpose() * r_gt).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

pub fn translation_error(t_pred: &Vec3, t_gt: &Vec3) -> f64 {
    (t_pred - t_gt).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub pred: usize,
    pub gt: usize,
    pub re: f64,
    pub te: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub num_pred: usize,
    pub num_gt: usize,
    pub matches: Vec<Match>,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision <= 0.0 || recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// One-to-one greedy matching on ascending rotation error among pairs
/// within both thresholds.
///
/// With no predictions precision is 0 (or 1 if there is also no ground
/// truth); with no ground truth recall is 1.
pub fn score_scene(preds: &[RigidTransform], gts: &[RigidTransform], th: &SuccessThresholds) -> SceneMetrics {
    let mut candidates = Vec::new();
    for (p, pred) in preds.iter().enumerate() {
        for (g, gt) in gts.iter().enumerate() {
            let re = rotation_error_deg(pred.rotation(), gt.rotation());
            let te = translation_error(pred.translation(), gt.translation());
            if re <= th.re_max && te <= th.te_max {
                candidates.push(Match { pred: p, gt: g, re, te });
            }
        }
    }
    candidates.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.te.total_cmp(&b.te)));
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut matches = Vec::new();
    for c in candidates {
        if !pred_used[c.pred] && !gt_used[c.gt] {
            pred_used[c.pred] = true;
            gt_used[c.gt] = true;
            matches.push(c);
        }
    }
    let n = matches.len() as f64;
    let recall = if gts.is_empty() { 1.0 } else { n / gts.len() as f64 };
    let precision = match (preds.is_empty(), gts.is_empty()) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        _ => n / preds.len() as f64,
    };
    SceneMetrics { recall, precision, f1: f1_score(precision, recall), num_pred: preds.len(), num_gt: gts.len(), matches }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mr: f64,
    pub mp: f64,
    /// Mean of per-scene F1, not the harmonic mean of `mr` and `mp`.
    pub mf: f64,
    pub num_scenes: usize,
    pub per_scene: Vec<SceneMetrics>,
}

pub fn aggregate(per_scene: Vec<SceneMetrics>) -> Result<AggregateMetrics> {
    if per_scene.is_empty() {
        return Err(Error::EmptyBenchmark);
    }
    let k = per_scene.len() as f64;
    let mean = |f: fn(&SceneMetrics) -> f64| per_scene.iter().map(f).sum::<f64>() / k;
    Ok(AggregateMetrics {
        mr: mean(|s| s.recall),
        mp: mean(|s| s.precision),
        mf: mean(|s| s.f1),
        num_scenes: per_scene.len(),
        per_scene,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rt(a: f64, b: f64, c: f64, t: [f64; 3]) -> RigidTransform {
        RigidTransform::from_euler_deg(a, b, c, Vec3::from(t))
    }

    #[test]
    fn error_examples() {
        let r = rt(10.0, 20.0, 30.0, [0.0; 3]);
        assert!(rotation_error_deg(r.rotation(), r.rotation()) < 1e-6);
        let flip = rt(180.0, 0.0, 0.0, [0.0; 3]);
        assert!((rotation_error_deg(&Matrix3::identity(), flip.rotation()) - 180.0).abs() < 1e-9);
        assert_eq!(translation_error(&Vec3::zeros(), &Vec3::new(3.0, 4.0, 0.0)), 5.0);
    }

    #[test]
    fn rotation_error_symmetric_and_bounded() {
        let mut rng = crate::seed::rng(1);
        for _ in 0..200 {
            let mut a = || rng.random_range(0.0..360.0);
            let (p, q) = (rt(a(), a(), a(), [0.0; 3]), rt(a(), a(), a(), [0.0; 3]));
            let e = rotation_error_deg(p.rotation(), q.rotation());
            assert!((0.0..=180.0).contains(&e));
            assert!((e - rotation_error_deg(q.rotation(), p.rotation())).abs() < 1e-9);
        }
    }

    #[test]
    fn partial_success_example() {
        let gts = vec![rt(0.0, 0.0, 0.0, [0.0; 3]), rt(90.0, 0.0, 0.0, [1.0, 0.0, 0.0]), rt(0.0, 90.0, 0.0, [0.0, 2.0, 0.0])];
        let preds = vec![
            rt(1.0, 0.0, 0.0, [0.01, 0.0, 0.0]),
            rt(90.0, 2.0, 0.0, [1.0, 0.05, 0.0]),
            rt(0.0, 0.0, 45.0, [5.0, 5.0, 5.0]),
            rt(0.0, 90.0, 0.0, [0.0, 2.5, 0.0]),
        ];
        let m = score_scene(&preds, &gts, &SuccessThresholds::default());
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.precision - 0.5).abs() < 1e-12);
        assert!((m.f1 - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_duplicate_predictions() {
        let gts = vec![rt(5.0, 6.0, 7.0, [1.0, 1.0, 1.0]), rt(50.0, 60.0, 70.0, [3.0, 1.0, 1.0])];
        let m = score_scene(&gts, &gts, &SuccessThresholds::default());
        assert_eq!((m.recall, m.precision, m.f1), (1.0, 1.0, 1.0));
        let one = vec![gts[0]];
        let dup = score_scene(&[gts[0], gts[0]], &one, &SuccessThresholds::default());
        assert_eq!(dup.matches.len(), 1);
        assert_eq!(dup.precision, 0.5);
    }

    #[test]
    fn empty_edges() {
        let gts = vec![rt(0.0, 0.0, 0.0, [0.0; 3])];
        let none = score_scene(&[], &gts, &SuccessThresholds::default());
        assert_eq!((none.recall, none.precision, none.f1), (0.0, 0.0, 0.0));
        let no_gt = score_scene(&gts, &[], &SuccessThresholds::default());
        assert_eq!((no_gt.recall, no_gt.precision), (1.0, 0.0));
    }

    #[test]
    fn order_invariant_and_bounded() {
        let mut rng = crate::seed::rng(2);
        for _ in 0..50 {
            let mut make = |k: usize| -> Vec<RigidTransform> {
                (0..k)
                    .map(|_| {
                        rt(
                            rng.random_range(0.0..20.0),
                            rng.random_range(0.0..20.0),
                            0.0,
                            [rng.random_range(0.0..0.2), 0.0, 0.0],
                        )
                    })
                    .collect()
            };
            let (preds, gts) = (make(6), make(4));
            let th = SuccessThresholds::default();
            let a = score_scene(&preds, &gts, &th);
            let mut rp = preds.clone();
            rp.reverse();
            let mut rg = gts.clone();
            rg.reverse();
            let b = score_scene(&rp, &rg, &th);
            assert_eq!(a.matches.len(), b.matches.len());
            assert!(a.matches.len() <= 4);
            assert!(a.f1 <= 2.0 * a.precision.min(a.recall) + 1e-12);
        }
    }

    #[test]
    fn aggregate_means() {
        let s = |f1: f64| SceneMetrics { recall: f1, precision: f1, f1, num_pred: 1, num_gt: 1, matches: vec![] };
        let agg = aggregate(vec![s(1.0), s(0.0)]).unwrap();
        assert_eq!(agg.mf, 0.5);
        let single = aggregate(vec![s(0.3)]).unwrap();
        assert_eq!((single.mr, single.mp, single.mf), (0.3, 0.3, 0.3));
        assert!(matches!(aggregate(vec![]), Err(Error::EmptyBenchmark)));
    }
}
