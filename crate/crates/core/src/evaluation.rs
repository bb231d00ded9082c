//! Classification accuracy, detection average precision and the
//! before/after report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::{pose_distance, GroundTruthSet, Label, TP_THRESHOLD_FRACTION};
use crate::{Error, ObjectModel, Pose, Result};

/// Counts with "valid" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }
}

/// `pairs` holds `(truth, prediction)`.
pub fn confusion<I: IntoIterator<Item = (Label, Label)>>(pairs: I) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for (truth, pred) in pairs {
        match (truth, pred) {
            (Label::Valid, Label::Valid) => cm.tp += 1,
            (Label::Valid, Label::Invalid) => cm.fn_ += 1,
            (Label::Invalid, Label::Invalid) => cm.tn += 1,
            (Label::Invalid, Label::Valid) => cm.fp += 1,
        }
    }
    cm
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Mean of the two per-class recalls, in percent.
pub fn aca(cm: &ConfusionMatrix) -> f64 {
    100.0 * (ratio(cm.tp, cm.tp + cm.fn_) + ratio(cm.tn, cm.tn + cm.fp)) / 2.0
}

pub fn oa(cm: &ConfusionMatrix) -> f64 {
    100.0 * ratio(cm.tp + cm.tn, cm.total())
}

/// A scored pose estimate in scene `scene` (an index into the ground-truth
/// list).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDetection {
    pub scene: usize,
    pub pose: Pose,
    pub score: f64,
}

/// Detections with their distances to every instance of their scene
/// precomputed, so several scorings can share the geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchTable {
    /// Per detection: scene index and `(instance, distance)` for every
    /// instance within the threshold, nearest first.
    pub candidates: Vec<(usize, Vec<(usize, f64)>)>,
    pub scene_sizes: Vec<usize>,
}

impl MatchTable {
    pub fn new(
        detections: &[(usize, Pose)],
        gts: &[GroundTruthSet],
        model: &ObjectModel,
        threshold_frac: f64,
    ) -> Result<Self> {
        let threshold = threshold_frac * model.diameter;
        let candidates = detections
            .iter()
            .map(|(scene, pose)| {
                let gt = gts
                    .get(*scene)
                    .ok_or_else(|| Error::Format(format!("detection refers to missing scene {scene}")))?;
                let mut c: Vec<(usize, f64)> = gt
                    .poses
                    .iter()
                    .enumerate()
                    .map(|(i, g)| (i, pose_distance(pose, g, model)))
                    .filter(|(_, d)| *d < threshold)
                    .collect();
                c.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                Ok((*scene, c))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            candidates,
            scene_sizes: gts.iter().map(|g| g.poses.len()).collect(),
        })
    }

    pub fn total_gt(&self) -> usize {
        self.scene_sizes.iter().sum()
    }

    /// True-positive flags in ranked order (score descending, ties by
    /// record order).
    pub fn ranked_hits(&self, scores: &[f64]) -> Result<Vec<bool>> {
        if scores.len() != self.candidates.len() {
            return Err(Error::Shape {
                op: "average_precision",
                detail: format!("{} scores for {} detections", scores.len(), self.candidates.len()),
            });
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let mut used: Vec<Vec<bool>> = self.scene_sizes.iter().map(|&n| vec![false; n]).collect();
        Ok(order
            .into_iter()
            .map(|i| {
                let (scene, cands) = &self.candidates[i];
                match cands.iter().find(|(g, _)| !used[*scene][*g]) {
                    Some(&(g, _)) => {
                        used[*scene][g] = true;
                        true
                    }
                    None => false,
                }
            })
            .collect())
    }

    /// `(recall, precision)` after each ranked detection.
    pub fn pr_curve(&self, scores: &[f64]) -> Result<Vec<(f64, f64)>> {
        let total = self.total_gt();
        if total == 0 {
            return Err(Error::NoGroundTruth);
        }
        let mut tp = 0;
        Ok(self
            .ranked_hits(scores)?
            .into_iter()
            .enumerate()
            .map(|(k, hit)| {
                tp += usize::from(hit);
                (tp as f64 / total as f64, tp as f64 / (k + 1) as f64)
            })
            .collect())
    }

    /// All-point interpolated AP in percent.
    pub fn average_precision(&self, scores: &[f64]) -> Result<f64> {
        let curve = self.pr_curve(scores)?;
        let mut envelope: Vec<f64> = curve.iter().map(|c| c.1).collect();
        for k in (0..envelope.len().saturating_sub(1)).rev() {
            envelope[k] = envelope[k].max(envelope[k + 1]);
        }
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for (&(recall, _), p) in curve.iter().zip(envelope) {
            if recall > prev_recall {
                ap += (recall - prev_recall) * p;
                prev_recall = recall;
            }
        }
        Ok(100.0 * ap)
    }
}

pub fn average_precision(
    detections: &[ScoredDetection],
    gts: &[GroundTruthSet],
    model: &ObjectModel,
    threshold_frac: f64,
) -> Result<f64> {
    let dets: Vec<(usize, Pose)> = detections.iter().map(|d| (d.scene, d.pose)).collect();
    let scores: Vec<f64> = detections.iter().map(|d| d.score).collect();
    MatchTable::new(&dets, gts, model, threshold_frac)?.average_precision(&scores)
}

/// A detection with both the detector's confidence and the validator's
/// fused `p_valid`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescoredDetection {
    pub scene: usize,
    pub pose: Pose,
    pub confidence: f64,
    pub p_valid: f64,
}

/// `(AP with detector confidence, AP with validator probability)`.
pub fn confidence_replacement_experiment(
    detections: &[RescoredDetection],
    gts: &[GroundTruthSet],
    model: &ObjectModel,
) -> Result<(f64, f64)> {
    let dets: Vec<(usize, Pose)> = detections.iter().map(|d| (d.scene, d.pose)).collect();
    let table = MatchTable::new(&dets, gts, model, TP_THRESHOLD_FRACTION)?;
    let before: Vec<f64> = detections.iter().map(|d| d.confidence).collect();
    let after: Vec<f64> = detections.iter().map(|d| d.p_valid).collect();
    Ok((table.average_precision(&before)?, table.average_precision(&after)?))
}

/// Rounds half away from zero to two decimals, absorbing binary
/// representation error just below a half.
pub fn round2(x: f64) -> f64 {
    let scaled = x.abs() * 100.0;
    ((scaled + 0.5 + 1e-6).floor() / 100.0).copysign(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectResult {
    pub name: String,
    pub aca: Option<f64>,
    pub oa: Option<f64>,
    pub ap_before: Option<f64>,
    pub ap_after: Option<f64>,
}

impl ObjectResult {
    pub fn classification(name: &str, aca: f64, oa: f64) -> Self {
        Self {
            name: name.to_string(),
            aca: Some(aca),
            oa: Some(oa),
            ap_before: None,
            ap_after: None,
        }
    }

    pub fn detection(name: &str, ap_before: f64, ap_after: f64) -> Self {
        Self {
            name: name.to_string(),
            aca: None,
            oa: None,
            ap_before: Some(ap_before),
            ap_after: Some(ap_after),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub aca: Option<f64>,
    pub oa: Option<f64>,
    pub ap_before: Option<f64>,
    pub ap_after: Option<f64>,
    /// `ap_after − ap_before` of the rounded averages.
    pub ap_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub objects: Vec<ObjectResult>,
    pub average: Averages,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| round2(v.iter().sum::<f64>() / v.len() as f64))
}

pub fn report(objects: Vec<ObjectResult>) -> EvalReport {
    let ap_before = mean_of(objects.iter().map(|o| o.ap_before));
    let ap_after = mean_of(objects.iter().map(|o| o.ap_after));
    let average = Averages {
        aca: mean_of(objects.iter().map(|o| o.aca)),
        oa: mean_of(objects.iter().map(|o| o.oa)),
        ap_before,
        ap_after,
        ap_delta: ap_after.zip(ap_before).map(|(a, b)| round2(a - b)),
    };
    EvalReport { objects, average }
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Aligned text table, one row per object plus the average row.
    pub fn to_text(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
        let width = self.objects.iter().map(|o| o.name.len()).max().unwrap_or(0).max(7);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>7}  {:>9}  {:>9}",
            "object", "ACA", "OA", "AP before", "AP after"
        );
        let mut row = |name: &str, aca, oa, b, a| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>7}  {:>9}  {:>9}",
                name,
                cell(aca),
                cell(oa),
                cell(b),
                cell(a)
            );
        };
        for o in &self.objects {
            row(&o.name, o.aca, o.oa, o.ap_before, o.ap_after);
        }
        let a = &self.average;
        row("average", a.aca, a.oa, a.ap_before, a.ap_after);
        out
    }
}

/// Difference of two rounded averages, itself rounded.
pub fn delta(after: f64, before: f64) -> f64 {
    round2(after - before)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriangleMesh;
    use crate::Symmetry;
    use nalgebra::Vector3;

    fn cm(tp: usize, fn_: usize, tn: usize, fp: usize) -> ConfusionMatrix {
        ConfusionMatrix { tp, fn_, tn, fp }
    }

    #[test]
    fn confusion_examples() {
        use Label::{Invalid as I, Valid as V};
        assert_eq!(confusion([(V, V), (I, I)]), cm(1, 0, 1, 0));
        assert_eq!(confusion([(V, V), (V, V), (I, V), (I, V)]), cm(2, 0, 0, 2));
        assert_eq!(confusion([(V, V), (I, V), (I, I), (V, I)]), cm(1, 1, 1, 1));
    }

    #[test]
    fn accuracy_examples() {
        let perfect = cm(50, 0, 50, 0);
        assert_eq!((aca(&perfect), oa(&perfect)), (100.0, 100.0));
        let skewed = cm(90, 10, 0, 100);
        assert!((oa(&skewed) - 45.0).abs() < 1e-12);
        assert!((aca(&skewed) - 45.0).abs() < 1e-12);
        let sym = cm(40, 10, 40, 10);
        assert_eq!(aca(&sym), oa(&sym));
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round2(97.435), 97.44);
        assert_eq!(round2(92.225), 92.23);
        assert_eq!(round2(95.40625), 95.41);
        assert_eq!(round2(-0.005), -0.01);
        assert_eq!(round2(1.0), 1.0);
    }

    fn model() -> ObjectModel {
        ObjectModel::build(&TriangleMesh::cuboid(Vector3::new(1.0, 0.6, 0.4)), Symmetry::None, 300, 0).unwrap()
    }

    fn gt(n: usize) -> GroundTruthSet {
        GroundTruthSet {
            model_id: "box".into(),
            poses: (0..n).map(|i| Pose::from_translation(Vector3::new(3.0 * i as f64, 0.0, 5.0))).collect(),
        }
    }

    fn wrong() -> Pose {
        Pose::from_translation(Vector3::new(0.0, 2.0, 5.0))
    }

    #[test]
    fn ap_examples() {
        let m = model();
        let gts = vec![gt(2)];
        let all_right: Vec<ScoredDetection> = gts[0]
            .poses
            .iter()
            .zip([0.1, 0.7])
            .map(|(p, s)| ScoredDetection {
                scene: 0,
                pose: *p,
                score: s,
            })
            .collect();
        assert_eq!(average_precision(&all_right, &gts, &m, 0.1).unwrap(), 100.0);

        let one = vec![gt(1)];
        let dets = [
            ScoredDetection {
                scene: 0,
                pose: wrong(),
                score: 0.9,
            },
            ScoredDetection {
                scene: 0,
                pose: one[0].poses[0],
                score: 0.8,
            },
        ];
        assert!((average_precision(&dets, &one, &m, 0.1).unwrap() - 50.0).abs() < 1e-12);

        let dup = [
            ScoredDetection {
                scene: 0,
                pose: one[0].poses[0],
                score: 0.9,
            },
            ScoredDetection {
                scene: 0,
                pose: one[0].poses[0],
                score: 0.8,
            },
        ];
        let dets: Vec<(usize, Pose)> = dup.iter().map(|d| (d.scene, d.pose)).collect();
        let table = MatchTable::new(&dets, &one, &m, 0.1).unwrap();
        assert_eq!(table.ranked_hits(&[0.9, 0.8]).unwrap(), vec![true, false]);
    }

    #[test]
    fn ap_needs_ground_truth() {
        let m = model();
        let dets = [ScoredDetection {
            scene: 0,
            pose: wrong(),
            score: 1.0,
        }];
        assert!(matches!(
            average_precision(&dets, &[gt(0)], &m, 0.1),
            Err(Error::NoGroundTruth)
        ));
    }

    #[test]
    fn replacement_with_identical_scores_changes_nothing() {
        let m = model();
        let gts = vec![gt(2)];
        let dets: Vec<RescoredDetection> = [(gts[0].poses[0], 0.3), (wrong(), 0.9), (gts[0].poses[1], 0.5)]
            .into_iter()
            .map(|(pose, c)| RescoredDetection {
                scene: 0,
                pose,
                confidence: c,
                p_valid: c,
            })
            .collect();
        let (b, a) = confidence_replacement_experiment(&dets, &gts, &m).unwrap();
        assert_eq!(a, b);
        let oracle: Vec<RescoredDetection> = dets
            .iter()
            .enumerate()
            .map(|(i, d)| RescoredDetection {
                p_valid: if i == 1 { 0.0 } else { 1.0 },
                ..*d
            })
            .collect();
        let (b, a) = confidence_replacement_experiment(&oracle, &gts, &m).unwrap();
        assert_eq!(a, 100.0);
        assert!(a >= b);
    }

    #[test]
    fn single_object_report_average_equals_row() {
        let r = report(vec![ObjectResult {
            name: "cross4".into(),
            aca: Some(91.5),
            oa: Some(92.25),
            ap_before: Some(70.0),
            ap_after: Some(80.125),
        }]);
        assert_eq!(r.average.aca, Some(91.5));
        assert_eq!(r.average.oa, Some(92.25));
        assert_eq!(r.average.ap_after, Some(80.13));
        assert_eq!(r.average.ap_delta, Some(10.13));
        let text = r.to_text();
        assert!(text.lines().count() == 3 && text.contains("average"));
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
