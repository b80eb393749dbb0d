//! OKS-based keypoint evaluation: mAP and mAR over the 0.50:0.05:0.95
//! threshold range, with deterministic greedy matching.
//!
//! Matching conventions (shared with the tests' exhaustive reference matcher):
//!
//! - Per frame and per threshold, predictions are visited by descending score
//!   (ties: lower input index first); each takes the unmatched ground-truth
//!   instance with the highest OKS (ties: lowest GT index), and counts as a
//!   true positive when that OKS reaches the threshold.
//! - The global precision-recall curve sorts all predictions by (score
//!   descending, frame order ascending, prediction index ascending).
//! - AP is the 101-point interpolated area; AR is the maximum recall reached.
//! - Ground-truth poses with no visible keypoints are excluded entirely.

use serde::Serialize;

use crate::error::{ensure, Error, Result};
use crate::pose::{InstanceBox, Pose, KEYPOINT_COUNT};

const MODULE: &str = "eval";

/// The ten OKS thresholds 0.50:0.05:0.95.
pub const OKS_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// Per-keypoint falloff constants for OKS.
#[derive(Debug, Clone, PartialEq)]
pub struct Kappas(Vec<f64>);

impl Default for Kappas {
    /// Uniform 0.08 for all 14 keypoints (a config default; the published
    /// per-keypoint constants cover a different 17-keypoint layout).
    fn default() -> Self {
        Kappas(vec![0.08; KEYPOINT_COUNT])
    }
}

impl Kappas {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure!(
            values.len() == KEYPOINT_COUNT,
            MODULE,
            "expected {KEYPOINT_COUNT} kappa values, got {}",
            values.len()
        );
        for &v in &values {
            ensure!(v > 0.0 && v.is_finite(), MODULE, "kappa {v} must be positive");
        }
        Ok(Kappas(values))
    }

    pub fn uniform(value: f64) -> Result<Self> {
        Self::new(vec![value; KEYPOINT_COUNT])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Object keypoint similarity between a predicted and a ground-truth pose:
/// the mean over *visible* GT keypoints of `exp(-d_k^2 / (2 s^2 kappa_k^2))`
/// where `s^2` is the GT box area. `None` when the GT pose has no visible
/// keypoints (such pairs are skipped by the evaluator).
pub fn oks(pred: &Pose, gt: &Pose, gt_box: &InstanceBox, kappas: &Kappas) -> Option<f64> {
    let s2 = gt_box.area();
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..KEYPOINT_COUNT {
        if !gt.visibility[k] {
            continue;
        }
        let dx = pred.keypoints[k][0] - gt.keypoints[k][0];
        let dy = pred.keypoints[k][1] - gt.keypoints[k][1];
        let d2 = dx * dx + dy * dy;
        let kappa = kappas.0[k];
        sum += (-d2 / (2.0 * s2 * kappa * kappa)).exp();
        count += 1;
    }
    if count == 0 {
        None
    } else {
        Some(sum / count as f64)
    }
}

/// Predictions for one frame.
#[derive(Debug, Clone)]
pub struct PredFrame {
    pub id: String,
    pub poses: Vec<Pose>,
}

/// Ground truth for one frame; `boxes` aligns with `poses`.
#[derive(Debug, Clone)]
pub struct GtFrame {
    pub id: String,
    pub poses: Vec<Pose>,
    pub boxes: Vec<InstanceBox>,
}

/// AP/AR at one OKS threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub ap: f64,
    pub ar: f64,
}

/// Evaluation summary over all thresholds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub map: f64,
    pub mar: f64,
    pub per_threshold: Vec<ThresholdMetrics>,
}

/// Evaluates predictions against ground truth, frames aligned by id.
///
/// Every prediction frame id must exist in the ground truth; ground-truth
/// frames without a prediction frame count as having zero predictions.
pub fn evaluate(preds: &[PredFrame], gts: &[GtFrame], kappas: &Kappas) -> Result<EvalResult> {
    // Validate ids.
    let mut gt_ids = std::collections::HashMap::new();
    for (i, frame) in gts.iter().enumerate() {
        ensure!(
            gt_ids.insert(frame.id.clone(), i).is_none(),
            MODULE,
            "duplicate ground-truth frame id {:?}",
            frame.id
        );
        ensure!(
            frame.poses.len() == frame.boxes.len(),
            MODULE,
            "frame {:?}: {} poses but {} boxes",
            frame.id,
            frame.poses.len(),
            frame.boxes.len()
        );
    }
    let mut pred_by_gt: Vec<Option<&PredFrame>> = vec![None; gts.len()];
    for frame in preds {
        let &i = gt_ids.get(&frame.id).ok_or_else(|| {
            Error::validation(
                MODULE,
                format!("prediction frame id {:?} has no ground-truth frame", frame.id),
            )
        })?;
        ensure!(
            pred_by_gt[i].is_none(),
            MODULE,
            "duplicate prediction frame id {:?}",
            frame.id
        );
        pred_by_gt[i] = Some(frame);
    }

    // Precompute per-frame structures shared by all thresholds.
    struct FrameMatch {
        /// Prediction indices by descending score.
        order: Vec<usize>,
        /// Scores aligned with the original prediction indices.
        scores: Vec<f64>,
        /// `oks_matrix[pred][gt]`, `None` where the GT pose is skipped.
        oks_matrix: Vec<Vec<Option<f64>>>,
    }

    let mut frames = Vec::with_capacity(gts.len());
    let mut total_gt = 0usize;
    for (i, gt) in gts.iter().enumerate() {
        let empty = PredFrame {
            id: gt.id.clone(),
            poses: Vec::new(),
        };
        let pf = pred_by_gt[i].unwrap_or(&empty);
        let mut order: Vec<usize> = (0..pf.poses.len()).collect();
        order.sort_by(|&a, &b| {
            pf.poses[b]
                .score
                .partial_cmp(&pf.poses[a].score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        total_gt += gt.poses.iter().filter(|p| p.visible_count() > 0).count();
        let oks_matrix: Vec<Vec<Option<f64>>> = pf
            .poses
            .iter()
            .map(|pred| {
                gt.poses
                    .iter()
                    .zip(&gt.boxes)
                    .map(|(g, b)| oks(pred, g, b, kappas))
                    .collect()
            })
            .collect();
        frames.push(FrameMatch {
            order,
            scores: pf.poses.iter().map(|p| p.score).collect(),
            oks_matrix,
        });
    }
    ensure!(
        total_gt > 0,
        MODULE,
        "no ground-truth instances with visible keypoints"
    );

    let mut per_threshold = Vec::with_capacity(OKS_THRESHOLDS.len());
    for &threshold in &OKS_THRESHOLDS {
        // (score, frame index, pred index, is_tp) for the global PR curve.
        let mut detections: Vec<(f64, usize, usize, bool)> = Vec::new();
        for (fi, frame) in frames.iter().enumerate() {
            let gt_n = frame.oks_matrix.first().map_or(0, |row| row.len());
            let mut gt_taken = vec![false; gt_n];
            for &pi in &frame.order {
                let mut best: Option<(usize, f64)> = None;
                for (gi, entry) in frame.oks_matrix[pi].iter().enumerate() {
                    if gt_taken[gi] {
                        continue;
                    }
                    if let Some(value) = entry {
                        // Strict > keeps the lowest GT index on exact ties.
                        if best.map_or(true, |(_, b)| *value > b) {
                            best = Some((gi, *value));
                        }
                    }
                }
                let is_tp = match best {
                    Some((gi, value)) if value >= threshold => {
                        gt_taken[gi] = true;
                        true
                    }
                    _ => false,
                };
                detections.push((frame.scores[pi], fi, pi, is_tp));
            }
        }

        detections.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });

        let mut precisions = Vec::with_capacity(detections.len());
        let mut recalls = Vec::with_capacity(detections.len());
        let mut tp = 0usize;
        let mut fp = 0usize;
        for &(_, _, _, is_tp) in &detections {
            if is_tp {
                tp += 1;
            } else {
                fp += 1;
            }
            precisions.push(tp as f64 / (tp + fp) as f64);
            recalls.push(tp as f64 / total_gt as f64);
        }
        let ap = interpolated_ap_101(&precisions, &recalls);
        let ar = recalls.last().copied().unwrap_or(0.0);
        per_threshold.push(ThresholdMetrics { threshold, ap, ar });
    }

    let map = per_threshold.iter().map(|t| t.ap).sum::<f64>() / per_threshold.len() as f64;
    let mar = per_threshold.iter().map(|t| t.ar).sum::<f64>() / per_threshold.len() as f64;
    Ok(EvalResult {
        map,
        mar,
        per_threshold,
    })
}

/// 101-point interpolated average precision: the mean over recall grid
/// `0.00, 0.01, ..., 1.00` of the maximum precision at or beyond that recall.
pub fn interpolated_ap_101(precisions: &[f64], recalls: &[f64]) -> f64 {
    debug_assert_eq!(precisions.len(), recalls.len());
    // Right-to-left running max turns the raw curve into its envelope.
    let mut envelope = precisions.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        if envelope[i + 1] > envelope[i] {
            envelope[i] = envelope[i + 1];
        }
    }
    let mut sum = 0.0;
    let mut j = 0usize;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        while j < recalls.len() && recalls[j] < r {
            j += 1;
        }
        if j < envelope.len() {
            sum += envelope[j];
        }
    }
    sum / 101.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::extent_box;

    fn pose_at(cx: f64, cy: f64, score: f64) -> Pose {
        let mut kps = [[0.0; 2]; KEYPOINT_COUNT];
        for (k, kp) in kps.iter_mut().enumerate() {
            *kp = [cx + (k % 4) as f64 * 2.0, cy + (k / 4) as f64 * 3.0];
        }
        let mut p = Pose::new([cx, cy], kps);
        p.score = score;
        p
    }

    #[test]
    fn oks_of_identical_poses_is_one() {
        let p = pose_at(10.0, 10.0, 1.0);
        let b = extent_box(&p);
        assert_eq!(oks(&p, &p, &b, &Kappas::default()), Some(1.0));
    }

    #[test]
    fn oks_vanishes_at_large_distance() {
        let gt = pose_at(10.0, 10.0, 1.0);
        let mut far = gt.clone();
        for kp in far.keypoints.iter_mut() {
            kp[0] += 1e9;
        }
        let v = oks(&far, &gt, &extent_box(&gt), &Kappas::default()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn oks_matches_manual_formula() {
        let gt = pose_at(10.0, 10.0, 1.0);
        let mut pred = gt.clone();
        pred.keypoints[0][0] += 1.5;
        pred.keypoints[5][1] -= 2.0;
        let gt_box = InstanceBox::new(12.0, 9.0).unwrap();
        let kappas = Kappas::default();
        let got = oks(&pred, &gt, &gt_box, &kappas).unwrap();

        let s2 = 12.0 * 9.0;
        let mut expect = 0.0;
        for k in 0..KEYPOINT_COUNT {
            let dx = pred.keypoints[k][0] - gt.keypoints[k][0];
            let dy = pred.keypoints[k][1] - gt.keypoints[k][1];
            expect += (-(dx * dx + dy * dy) / (2.0 * s2 * 0.08 * 0.08)).exp();
        }
        expect /= KEYPOINT_COUNT as f64;
        assert_eq!(got, expect);
    }

    #[test]
    fn oks_skips_invisible_and_handles_all_invisible() {
        let mut gt = pose_at(10.0, 10.0, 1.0);
        let mut pred = gt.clone();
        pred.keypoints[0][0] += 100.0; // would tank OKS if visible
        gt.visibility[0] = false;
        let b = extent_box(&gt);
        let v = oks(&pred, &gt, &b, &Kappas::default()).unwrap();
        assert!(v > 0.99, "invisible keypoint leaked into OKS: {v}");

        gt.visibility = [false; KEYPOINT_COUNT];
        assert_eq!(oks(&pred, &gt, &b, &Kappas::default()), None);
    }

    fn gt_frame(id: &str, poses: Vec<Pose>) -> GtFrame {
        let boxes = poses.iter().map(extent_box).collect();
        GtFrame {
            id: id.to_string(),
            poses,
            boxes,
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gts = vec![
            gt_frame("f0", vec![pose_at(10.0, 10.0, 0.0), pose_at(40.0, 30.0, 0.0)]),
            gt_frame("f1", vec![pose_at(25.0, 25.0, 0.0)]),
        ];
        let preds: Vec<PredFrame> = gts
            .iter()
            .map(|g| PredFrame {
                id: g.id.clone(),
                poses: g
                    .poses
                    .iter()
                    .map(|p| {
                        let mut q = p.clone();
                        q.score = 0.9;
                        q
                    })
                    .collect(),
            })
            .collect();
        let result = evaluate(&preds, &gts, &Kappas::default()).unwrap();
        assert_eq!(result.map, 1.0);
        assert_eq!(result.mar, 1.0);
    }

    #[test]
    fn empty_predictions_score_zero() {
        let gts = vec![gt_frame("f0", vec![pose_at(10.0, 10.0, 0.0)])];
        let preds = vec![PredFrame {
            id: "f0".to_string(),
            poses: vec![],
        }];
        let result = evaluate(&preds, &gts, &Kappas::default()).unwrap();
        assert_eq!(result.map, 0.0);
        assert_eq!(result.mar, 0.0);
    }

    #[test]
    fn duplicate_frame_ids_rejected() {
        let gts = vec![
            gt_frame("f0", vec![pose_at(10.0, 10.0, 0.0)]),
            gt_frame("f0", vec![pose_at(12.0, 10.0, 0.0)]),
        ];
        assert!(evaluate(&[], &gts, &Kappas::default()).is_err());

        let gts = vec![gt_frame("f0", vec![pose_at(10.0, 10.0, 0.0)])];
        let preds = vec![
            PredFrame {
                id: "f0".into(),
                poses: vec![],
            },
            PredFrame {
                id: "f0".into(),
                poses: vec![],
            },
        ];
        assert!(evaluate(&preds, &gts, &Kappas::default()).is_err());
    }

    #[test]
    fn unknown_prediction_frame_rejected() {
        let gts = vec![gt_frame("f0", vec![pose_at(10.0, 10.0, 0.0)])];
        let preds = vec![PredFrame {
            id: "mystery".into(),
            poses: vec![],
        }];
        assert!(evaluate(&preds, &gts, &Kappas::default()).is_err());
    }

    #[test]
    fn duplicate_lower_scored_prediction_does_not_raise_ap() {
        let gts = vec![gt_frame("f0", vec![pose_at(10.0, 10.0, 0.0)])];
        let hit = {
            let mut p = pose_at(10.0, 10.0, 0.0);
            p.score = 0.9;
            p
        };
        let base = evaluate(
            &[PredFrame {
                id: "f0".into(),
                poses: vec![hit.clone()],
            }],
            &gts,
            &Kappas::default(),
        )
        .unwrap();
        let mut dup = hit.clone();
        dup.score = 0.5;
        let doubled = evaluate(
            &[PredFrame {
                id: "f0".into(),
                poses: vec![hit, dup],
            }],
            &gts,
            &Kappas::default(),
        )
        .unwrap();
        for (a, b) in base.per_threshold.iter().zip(&doubled.per_threshold) {
            assert!(b.ap <= a.ap + 1e-12);
        }
    }

    #[test]
    fn map_invariant_under_monotone_score_rescale() {
        let gts = vec![gt_frame(
            "f0",
            vec![pose_at(10.0, 10.0, 0.0), pose_at(40.0, 30.0, 0.0)],
        )];
        let mut a = pose_at(10.2, 10.1, 0.7);
        let mut b = pose_at(52.0, 44.0, 0.4); // far off: false positive
        let result1 = evaluate(
            &[PredFrame {
                id: "f0".into(),
                poses: vec![a.clone(), b.clone()],
            }],
            &gts,
            &Kappas::default(),
        )
        .unwrap();
        // Strictly monotone rescale: x -> 0.1 + x^3 / 2.
        a.score = 0.1 + a.score.powi(3) / 2.0;
        b.score = 0.1 + b.score.powi(3) / 2.0;
        let result2 = evaluate(
            &[PredFrame {
                id: "f0".into(),
                poses: vec![a, b],
            }],
            &gts,
            &Kappas::default(),
        )
        .unwrap();
        assert_eq!(result1, result2);
    }
}
