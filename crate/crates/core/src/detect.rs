//! Detection metrics: box IoU, class-aware greedy matching, PR curves with
//! 101-point interpolated AP, the 0.50:0.05:0.95 threshold sweep, and the
//! precision / recall / F1 / IoU-mean bundle.
//!
//! Matching semantics are pinned so independent oracles can reproduce them
//! exactly: predictions are visited in descending score (ties by input
//! order) and each claims the unclaimed same-class truth with the highest
//! IoU at or above the threshold (ties by lowest truth index). Classes are
//! compared case-insensitively after trimming. Classes with no ground truth
//! anywhere in the dataset are excluded from the mAP mean and reported
//! separately.

use crate::clue::{class_eq, class_key, BoundingBox, ClueSet};
use crate::dataset::ScenePair;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// IoU thresholds for the mAP@0.5:0.95 sweep: 0.50, 0.55, ..., 0.95.
pub fn map_sweep_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty dataset: metrics undefined over zero scenes")]
    EmptyDataset,
    #[error("class {0:?} has no ground truth in the dataset")]
    ZeroTruthClass(String),
    #[error("top-k requires k >= 1, got {0}")]
    InvalidK(usize),
    #[error("ranked lists ({ranked}) and truths ({truths}) differ in length")]
    LengthMismatch { ranked: usize, truths: usize },
    #[error("ranked list at index {0} is empty")]
    EmptyRankedList(usize),
}

/// Intersection area over union area; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.area() + b.area() - inter)
}

/// One matched prediction/truth pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchPair {
    pub pred_index: usize,
    pub truth_index: usize,
    pub iou: f64,
}

/// Prediction-to-truth pairing at one IoU threshold, with the unmatched
/// remainder on both sides. Each index appears at most once across the
/// three lists.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_truths: Vec<usize>,
    pub threshold: f64,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_matched_pred(&self, pred_index: usize) -> bool {
        self.pairs.iter().any(|p| p.pred_index == pred_index)
    }
}

/// Greedy class-aware matching of one scene's predictions onto its truths.
pub fn match_greedy(preds: &ClueSet, truth: &ClueSet, threshold: f64) -> MatchResult {
    debug_assert!((0.0..=1.0).contains(&threshold));
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds
            .score(b)
            .partial_cmp(&preds.score(a))
            .expect("finite scores")
            .then(a.cmp(&b))
    });

    let mut claimed = vec![false; truth.len()];
    let mut pairs = Vec::new();
    let mut unmatched_predictions = Vec::new();
    for &pi in &order {
        let mut best: Option<(usize, f64)> = None;
        for ti in 0..truth.len() {
            if claimed[ti] || !class_eq(&preds.classes[pi], &truth.classes[ti]) {
                continue;
            }
            let v = iou(&preds.boxes[pi], &truth.boxes[ti]);
            if v >= threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((ti, v));
            }
        }
        match best {
            Some((ti, v)) => {
                claimed[ti] = true;
                pairs.push(MatchPair {
                    pred_index: pi,
                    truth_index: ti,
                    iou: v,
                });
            }
            None => unmatched_predictions.push(pi),
        }
    }
    unmatched_predictions.sort_unstable();
    let unmatched_truths: Vec<usize> = (0..truth.len()).filter(|&ti| !claimed[ti]).collect();
    MatchResult {
        pairs,
        unmatched_predictions,
        unmatched_truths,
        threshold,
    }
}

/// TP / FP / FN ledger aggregated over whatever slice was evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl ConfusionCounts {
    pub fn precision(&self) -> f64 {
        ratio_or_zero(
            self.true_positives,
            self.true_positives + self.false_positives,
        )
    }

    pub fn recall(&self) -> f64 {
        ratio_or_zero(
            self.true_positives,
            self.true_positives + self.false_negatives,
        )
    }
}

/// 0/0 is defined as 0 throughout the metric suite.
fn ratio_or_zero(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Per-class average precision with its cumulative PR points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApPerClass {
    pub class: String,
    pub ap: f64,
    /// Cumulative (recall, precision) after each ranked detection; recall is
    /// non-decreasing along the list.
    pub pr_points: Vec<(f64, f64)>,
}

/// Scalar detection bundle. `f1` always satisfies the harmonic-mean
/// identity against `precision` and `recall` (0 when both are 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionReport {
    pub map50: f64,
    pub map5095: f64,
    pub iou_mean: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Full evaluation output: the scalar report plus the per-class curves,
/// classes excluded from the mAP mean (no ground truth), and the raw
/// counts behind precision/recall.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionEvaluation {
    pub report: DetectionReport,
    pub per_class: Vec<ApPerClass>,
    pub excluded_classes: Vec<String>,
    pub counts: ConfusionCounts,
}

/// One ranked detection in the global score sweep.
struct RankedDetection {
    score: f64,
    scene_index: usize,
    pred_index: usize,
    matched: bool,
}

/// Label each prediction of each class TP/FP at `threshold` and return the
/// detections grouped per class key, plus truth counts per class key.
fn labeled_detections(
    scenes: &[ScenePair],
    threshold: f64,
) -> (
    BTreeMap<String, Vec<RankedDetection>>,
    BTreeMap<String, usize>,
) {
    let mut per_class: BTreeMap<String, Vec<RankedDetection>> = BTreeMap::new();
    let mut truth_counts: BTreeMap<String, usize> = BTreeMap::new();
    for (si, pair) in scenes.iter().enumerate() {
        for class in &pair.truth.classes {
            *truth_counts.entry(class_key(class)).or_insert(0) += 1;
        }
        let matches = match_greedy(&pair.pred, &pair.truth, threshold);
        for pi in 0..pair.pred.len() {
            per_class
                .entry(class_key(&pair.pred.classes[pi]))
                .or_default()
                .push(RankedDetection {
                    score: pair.pred.score(pi),
                    scene_index: si,
                    pred_index: pi,
                    matched: matches.is_matched_pred(pi),
                });
        }
    }
    (per_class, truth_counts)
}

fn rank_globally(dets: &mut [RankedDetection]) {
    dets.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then(a.scene_index.cmp(&b.scene_index))
            .then(a.pred_index.cmp(&b.pred_index))
    });
}

/// Cumulative PR points over a globally ranked detection list.
fn pr_points(dets: &[RankedDetection], total_truth: usize) -> Vec<(f64, f64)> {
    let mut points = Vec::with_capacity(dets.len());
    let mut tp = 0usize;
    for (k, d) in dets.iter().enumerate() {
        if d.matched {
            tp += 1;
        }
        points.push((tp as f64 / total_truth as f64, tp as f64 / (k + 1) as f64));
    }
    points
}

/// 101-point interpolated AP: mean over recalls {0.00, 0.01, ..., 1.00} of
/// the maximum precision at any recall at or above that point.
fn interpolated_ap(points: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|&(_, prec)| prec)
            .fold(f64::NEG_INFINITY, f64::max);
        if best.is_finite() {
            total += best;
        }
    }
    total / 101.0
}

/// PR curve and AP for one class at one IoU threshold, swept globally by
/// descending score across the whole dataset.
pub fn pr_curve(
    scenes: &[ScenePair],
    class: &str,
    threshold: f64,
) -> Result<ApPerClass, MetricsError> {
    if scenes.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let key = class_key(class);
    let (mut per_class, truth_counts) = labeled_detections(scenes, threshold);
    let total_truth = truth_counts.get(&key).copied().unwrap_or(0);
    if total_truth == 0 {
        return Err(MetricsError::ZeroTruthClass(key));
    }
    let mut dets = per_class.remove(&key).unwrap_or_default();
    rank_globally(&mut dets);
    let points = pr_points(&dets, total_truth);
    Ok(ApPerClass {
        class: key,
        ap: interpolated_ap(&points),
        pr_points: points,
    })
}

/// Mean AP over all classes with ground truth, at one threshold.
fn map_at(scenes: &[ScenePair], threshold: f64) -> (f64, Vec<ApPerClass>, Vec<String>) {
    let (mut per_class, truth_counts) = labeled_detections(scenes, threshold);
    let truth_classes: BTreeSet<&String> = truth_counts
        .iter()
        .filter(|(_, &n)| n > 0)
        .map(|(k, _)| k)
        .collect();
    let mut curves = Vec::new();
    let mut excluded = Vec::new();
    for key in per_class.keys() {
        if !truth_classes.contains(key) {
            excluded.push(key.clone());
        }
    }
    for key in &truth_classes {
        let mut dets = per_class.remove(*key).unwrap_or_default();
        rank_globally(&mut dets);
        let points = pr_points(&dets, truth_counts[*key]);
        curves.push(ApPerClass {
            class: (*key).clone(),
            ap: interpolated_ap(&points),
            pr_points: points,
        });
    }
    let map = if curves.is_empty() {
        0.0
    } else {
        curves.iter().map(|c| c.ap).sum::<f64>() / curves.len() as f64
    };
    (map, curves, excluded)
}

/// Evaluate a paired dataset: mAP@0.5, mAP@0.5:0.95, and the
/// precision / recall / F1 / IoU-mean bundle from the threshold-0.5 match
/// ledgers. A dataset with zero scenes is an error; scenes with empty truth
/// are legal and a dataset with no truth objects at all reports zeros.
pub fn detection_report(scenes: &[ScenePair]) -> Result<DetectionEvaluation, MetricsError> {
    if scenes.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }

    let mut map_sum = 0.0;
    let mut map50 = 0.0;
    let mut per_class = Vec::new();
    let mut excluded = Vec::new();
    let thresholds = map_sweep_thresholds();
    for (i, &t) in thresholds.iter().enumerate() {
        let (m, curves, excl) = map_at(scenes, t);
        map_sum += m;
        if i == 0 {
            map50 = m;
            per_class = curves;
            excluded = excl;
        }
    }
    let map5095 = map_sum / thresholds.len() as f64;

    let mut counts = ConfusionCounts::default();
    let mut iou_total = 0.0;
    for pair in scenes {
        let m = match_greedy(&pair.pred, &pair.truth, 0.5);
        counts.true_positives += m.pairs.len();
        counts.false_positives += m.unmatched_predictions.len();
        counts.false_negatives += m.unmatched_truths.len();
        iou_total += m.pairs.iter().map(|p| p.iou).sum::<f64>();
    }
    let precision = counts.precision();
    let recall = counts.recall();
    let iou_mean = if counts.true_positives == 0 {
        0.0
    } else {
        iou_total / counts.true_positives as f64
    };

    Ok(DetectionEvaluation {
        report: DetectionReport {
            map50,
            map5095,
            iou_mean,
            precision,
            recall,
            f1: f1_from(precision, recall),
        },
        per_class,
        excluded_classes: excluded,
        counts,
    })
}

/// Fraction of items whose truth class appears within the first `k` entries
/// of its ranked list.
pub fn topk_accuracy(
    ranked: &[Vec<String>],
    truths: &[String],
    k: usize,
) -> Result<f64, MetricsError> {
    if k < 1 {
        return Err(MetricsError::InvalidK(k));
    }
    if ranked.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            ranked: ranked.len(),
            truths: truths.len(),
        });
    }
    if ranked.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let mut hits = 0usize;
    for (i, (list, truth)) in ranked.iter().zip(truths).enumerate() {
        if list.is_empty() {
            return Err(MetricsError::EmptyRankedList(i));
        }
        if list.iter().take(k).any(|c| class_eq(c, truth)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / ranked.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1)
    }

    fn clues(objs: &[(BoundingBox, &str)], scores: Option<Vec<f64>>) -> ClueSet {
        ClueSet {
            boxes: objs.iter().map(|o| o.0).collect(),
            classes: objs.iter().map(|o| o.1.to_string()).collect(),
            object_captions: objs.iter().map(|o| format!("a {}", o.1)).collect(),
            scores,
            context_caption: "scene".into(),
        }
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        // intersection 5x5 = 25, union 100 + 100 - 25 = 175
        let v = iou(&bx(0.0, 0.0, 10.0, 10.0), &bx(5.0, 5.0, 15.0, 15.0));
        assert!((v - 25.0 / 175.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn greedy_match_perfect_pair() {
        let t = clues(&[(bx(0.0, 0.0, 10.0, 10.0), "dog")], None);
        let m = match_greedy(&t, &t, 0.5);
        assert_eq!(m.pairs.len(), 1);
        assert!(m.unmatched_predictions.is_empty());
        assert!(m.unmatched_truths.is_empty());
    }

    #[test]
    fn greedy_match_is_class_aware() {
        let p = clues(&[(bx(0.0, 0.0, 10.0, 10.0), "dog")], None);
        let t = clues(&[(bx(0.0, 0.0, 10.0, 10.0), "cat")], None);
        let m = match_greedy(&p, &t, 0.5);
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_predictions, vec![0]);
        assert_eq!(m.unmatched_truths, vec![0]);
    }

    #[test]
    fn greedy_match_prefers_higher_score() {
        // Hand-trace: pred 0 (score 0.9) visits first and claims the truth;
        // pred 1 (score 0.8) finds it claimed and goes unmatched.
        let p = clues(
            &[
                (bx(0.0, 0.0, 10.0, 10.0), "dog"),
                (bx(1.0, 1.0, 11.0, 11.0), "dog"),
            ],
            Some(vec![0.9, 0.8]),
        );
        let t = clues(&[(bx(0.0, 0.0, 10.0, 10.0), "dog")], None);
        let m = match_greedy(&p, &t, 0.5);
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].pred_index, 0);
        assert_eq!(m.unmatched_predictions, vec![1]);
    }

    #[test]
    fn pr_curve_perfect_prediction() {
        let t = clues(&[(bx(0.0, 0.0, 10.0, 10.0), "dog")], None);
        let scenes = vec![ScenePair {
            image_id: "i".into(),
            pred: t.clone(),
            truth: t,
        }];
        let ap = pr_curve(&scenes, "dog", 0.5).unwrap();
        assert_eq!(ap.ap, 1.0);
    }

    #[test]
    fn pr_curve_below_threshold_is_zero() {
        let p = clues(&[(bx(0.0, 0.0, 10.0, 10.0), "dog")], None);
        let t = clues(&[(bx(9.0, 9.0, 19.0, 19.0), "dog")], None);
        let scenes = vec![ScenePair {
            image_id: "i".into(),
            pred: p,
            truth: t,
        }];
        assert_eq!(pr_curve(&scenes, "dog", 0.5).unwrap().ap, 0.0);
    }

    #[test]
    fn pr_curve_zero_truth_class_errors() {
        let p = clues(&[(bx(0.0, 0.0, 10.0, 10.0), "dog")], None);
        let t = clues(&[(bx(0.0, 0.0, 10.0, 10.0), "cat")], None);
        let scenes = vec![ScenePair {
            image_id: "i".into(),
            pred: p,
            truth: t,
        }];
        assert!(matches!(
            pr_curve(&scenes, "dog", 0.5),
            Err(MetricsError::ZeroTruthClass(_))
        ));
    }

    #[test]
    fn report_perfect_predictions() {
        let t1 = clues(
            &[
                (bx(0.0, 0.0, 10.0, 10.0), "dog"),
                (bx(20.0, 20.0, 40.0, 45.0), "cat"),
            ],
            None,
        );
        let t2 = clues(&[(bx(5.0, 5.0, 25.0, 30.0), "dog")], None);
        let scenes = vec![
            ScenePair {
                image_id: "a".into(),
                pred: t1.clone(),
                truth: t1,
            },
            ScenePair {
                image_id: "b".into(),
                pred: t2.clone(),
                truth: t2,
            },
        ];
        let r = detection_report(&scenes).unwrap().report;
        for v in [r.map50, r.map5095, r.iou_mean, r.precision, r.recall, r.f1] {
            assert!((v - 1.0).abs() < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn report_zero_predictions() {
        let t = clues(&[(bx(0.0, 0.0, 10.0, 10.0), "dog")], None);
        let scenes = vec![ScenePair {
            image_id: "a".into(),
            pred: ClueSet::empty(""),
            truth: t,
        }];
        let r = detection_report(&scenes).unwrap().report;
        assert_eq!(
            (r.map50, r.map5095, r.precision, r.recall, r.f1, r.iou_mean),
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn report_empty_dataset_errors() {
        assert!(matches!(
            detection_report(&[]),
            Err(MetricsError::EmptyDataset)
        ));
    }

    #[test]
    fn report_all_empty_scenes_is_legal() {
        let scenes = vec![ScenePair {
            image_id: "a".into(),
            pred: ClueSet::empty(""),
            truth: ClueSet::empty(""),
        }];
        let e = detection_report(&scenes).unwrap();
        assert_eq!(e.report.map50, 0.0);
        assert_eq!(e.counts, ConfusionCounts::default());
    }

    #[test]
    fn excluded_classes_listed() {
        let p = clues(
            &[
                (bx(0.0, 0.0, 10.0, 10.0), "dog"),
                (bx(0.0, 0.0, 10.0, 10.0), "bird"),
            ],
            None,
        );
        let t = clues(&[(bx(0.0, 0.0, 10.0, 10.0), "dog")], None);
        let e = detection_report(&[ScenePair {
            image_id: "a".into(),
            pred: p,
            truth: t,
        }])
        .unwrap();
        assert_eq!(e.excluded_classes, vec!["bird".to_string()]);
        assert_eq!(e.per_class.len(), 1);
    }

    #[test]
    fn duplicate_prediction_lowers_precision_not_recall() {
        let t = clues(&[(bx(0.0, 0.0, 10.0, 10.0), "dog")], None);
        let dup = clues(
            &[
                (bx(0.0, 0.0, 10.0, 10.0), "dog"),
                (bx(0.0, 0.0, 10.0, 10.0), "dog"),
            ],
            Some(vec![0.9, 0.9]),
        );
        let base = detection_report(&[ScenePair {
            image_id: "a".into(),
            pred: t.clone(),
            truth: t.clone(),
        }])
        .unwrap()
        .report;
        let with_dup = detection_report(&[ScenePair {
            image_id: "a".into(),
            pred: dup,
            truth: t,
        }])
        .unwrap()
        .report;
        assert!(with_dup.precision < base.precision);
        assert_eq!(with_dup.recall, base.recall);
    }

    #[test]
    fn topk_counting() {
        let ranked = vec![
            vec!["dog".to_string(), "cat".to_string()],
            vec!["cat".to_string(), "dog".to_string()],
            vec!["bird".to_string()],
            vec!["Dog".to_string()],
        ];
        let truths: Vec<String> = ["dog", "dog", "dog", "dog"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(topk_accuracy(&ranked, &truths, 1).unwrap(), 0.5);
        assert_eq!(topk_accuracy(&ranked, &truths, 5).unwrap(), 0.75);
        assert!(matches!(
            topk_accuracy(&ranked, &truths, 0),
            Err(MetricsError::InvalidK(0))
        ));
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..90.0f64, 0.0..90.0f64, 1.0..40.0f64, 1.0..40.0f64)
            .prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
    }

    fn arb_int_box() -> impl Strategy<Value = BoundingBox> {
        (0i32..90, 0i32..90, 1i32..40, 1i32..40).prop_map(|(x, y, w, h)| {
            bx(
                f64::from(x),
                f64::from(y),
                f64::from(x + w),
                f64::from(y + h),
            )
        })
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            let ba = iou(&b, &a);
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn iou_translation_invariant(
            a in arb_int_box(), b in arb_int_box(),
            dx in -50i32..50, dy in -50i32..50,
        ) {
            // Integer coordinates and offsets keep every intermediate exact
            // in f64, so the invariance holds bit-for-bit.
            let shift = |v: &BoundingBox| bx(
                v.x_min + f64::from(dx), v.y_min + f64::from(dy),
                v.x_max + f64::from(dx), v.y_max + f64::from(dy),
            );
            prop_assert_eq!(iou(&a, &b), iou(&shift(&a), &shift(&b)));
        }

        #[test]
        fn matching_injective_and_threshold_monotone(
            boxes in prop::collection::vec((arb_box(), 0..3usize, 0.0..1.0f64), 0..6),
            truths in prop::collection::vec((arb_box(), 0..3usize), 0..6),
            lo in 0.1..0.5f64,
            hi in 0.5..0.95f64,
        ) {
            let names = ["dog", "cat", "bird"];
            let preds = ClueSet {
                boxes: boxes.iter().map(|b| b.0).collect(),
                classes: boxes.iter().map(|b| names[b.1].to_string()).collect(),
                object_captions: boxes.iter().map(|_| "x".to_string()).collect(),
                scores: Some(boxes.iter().map(|b| b.2).collect()),
                context_caption: String::new(),
            };
            let truth = ClueSet {
                boxes: truths.iter().map(|t| t.0).collect(),
                classes: truths.iter().map(|t| names[t.1].to_string()).collect(),
                object_captions: truths.iter().map(|_| "x".to_string()).collect(),
                scores: None,
                context_caption: String::new(),
            };
            let m_lo = match_greedy(&preds, &truth, lo);
            let m_hi = match_greedy(&preds, &truth, hi);
            prop_assert!(m_hi.pairs.len() <= m_lo.pairs.len());
            for m in [&m_lo, &m_hi] {
                let mut seen_p = std::collections::HashSet::new();
                let mut seen_t = std::collections::HashSet::new();
                for p in &m.pairs {
                    prop_assert!(seen_p.insert(p.pred_index));
                    prop_assert!(seen_t.insert(p.truth_index));
                    prop_assert!(p.iou >= m.threshold);
                }
                for &pi in &m.unmatched_predictions { prop_assert!(seen_p.insert(pi)); }
                for &ti in &m.unmatched_truths { prop_assert!(seen_t.insert(ti)); }
                prop_assert_eq!(seen_p.len(), preds.len());
                prop_assert_eq!(seen_t.len(), truth.len());
            }
        }

        #[test]
        fn pr_recall_non_decreasing(
            scene_count in 1..4usize,
            seed in 0u64..500,
        ) {
            // Small random dataset; recall along pr_points never decreases.
            let mut scenes = Vec::new();
            let mut state = seed;
            let mut next = || { state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (state >> 33) as f64 / (1u64 << 31) as f64 };
            for si in 0..scene_count {
                let n_t = 1 + (next() * 3.0) as usize;
                let n_p = (next() * 4.0) as usize;
                let mk = |next: &mut dyn FnMut() -> f64| {
                    let x = next() * 50.0; let y = next() * 50.0;
                    bx(x, y, x + 5.0 + next() * 20.0, y + 5.0 + next() * 20.0)
                };
                let truth = ClueSet {
                    boxes: (0..n_t).map(|_| mk(&mut next)).collect(),
                    classes: (0..n_t).map(|_| "dog".to_string()).collect(),
                    object_captions: (0..n_t).map(|_| "x".to_string()).collect(),
                    scores: None,
                    context_caption: String::new(),
                };
                let pred = ClueSet {
                    boxes: (0..n_p).map(|_| mk(&mut next)).collect(),
                    classes: (0..n_p).map(|_| "dog".to_string()).collect(),
                    object_captions: (0..n_p).map(|_| "x".to_string()).collect(),
                    scores: Some((0..n_p).map(|_| next()).collect()),
                    context_caption: String::new(),
                };
                scenes.push(ScenePair { image_id: format!("s{si}"), pred, truth });
            }
            let ap = pr_curve(&scenes, "dog", 0.5).unwrap();
            for w in ap.pr_points.windows(2) {
                prop_assert!(w[1].0 >= w[0].0);
            }
        }
    }
}
