//! Detection metrics: greedy matching, precision/recall curves, 101-point
//! interpolated AP, mAP50 / mAP50-95, max-F1 operating point and the
//! confusion matrix.

use thiserror::Error;

use crate::head::{iou, BBox};
use crate::scalar::Scalar;

/// IoU thresholds 0.50:0.05:0.95.
pub const COCO_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];
/// Recall sample points for interpolated AP.
pub const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no ground truth boxes; metrics are undefined")]
    NoGroundTruth,
    #[error("class id {class} out of range for {num_classes} classes")]
    BadClass { class: usize, num_classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalDetection<S> {
    pub image: usize,
    pub class_id: usize,
    pub score: S,
    pub bbox: BBox<S>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth<S> {
    pub image: usize,
    pub class_id: usize,
    pub bbox: BBox<S>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRecord {
    /// Index into the detection slice.
    pub det_index: usize,
    pub class_id: usize,
    pub score: f64,
    pub true_positive: bool,
    /// Index into the ground-truth slice.
    pub matched_gt: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// One record per detection, in detection input order.
    pub records: Vec<MatchRecord>,
    pub gt_counts: Vec<usize>,
}

impl MatchResult {
    pub fn true_positives(&self, class_id: usize) -> usize {
        self.records
            .iter()
            .filter(|r| r.class_id == class_id && r.true_positive)
            .count()
    }
}

fn check_classes<S>(
    dets: &[EvalDetection<S>],
    gts: &[GroundTruth<S>],
    num_classes: usize,
) -> Result<(), EvalError> {
    let bad = dets
        .iter()
        .map(|d| d.class_id)
        .chain(gts.iter().map(|g| g.class_id))
        .find(|&c| c >= num_classes);
    match bad {
        Some(class) => Err(EvalError::BadClass { class, num_classes }),
        None => Ok(()),
    }
}

/// Detection indices ordered by score descending, input order on ties.
fn score_order<S: Scalar>(dets: &[EvalDetection<S>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

/// One-to-one greedy matching within each (image, class): detections in
/// score order take the unmatched ground truth of highest IoU (first in
/// input order on ties) when that IoU reaches `iou_threshold`.
pub fn match_detections<S: Scalar>(
    dets: &[EvalDetection<S>],
    gts: &[GroundTruth<S>],
    iou_threshold: f64,
    num_classes: usize,
) -> Result<MatchResult, EvalError> {
    check_classes(dets, gts, num_classes)?;
    let mut gt_counts = vec![0; num_classes];
    for g in gts {
        gt_counts[g.class_id] += 1;
    }
    let mut matched = vec![false; gts.len()];
    let mut records: Vec<Option<MatchRecord>> = vec![None; dets.len()];
    for i in score_order(dets) {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if matched[j] || g.image != d.image || g.class_id != d.class_id {
                continue;
            }
            let o = iou(&d.bbox, &g.bbox).widen();
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        let hit = best.filter(|&(_, o)| o >= iou_threshold).map(|(j, _)| j);
        if let Some(j) = hit {
            matched[j] = true;
        }
        records[i] = Some(MatchRecord {
            det_index: i,
            class_id: d.class_id,
            score: d.score.widen(),
            true_positive: hit.is_some(),
            matched_gt: hit,
        });
    }
    Ok(MatchResult {
        records: records
            .into_iter()
            .map(|r| r.expect("every detection visited"))
            .collect(),
        gt_counts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// `(recall, precision)` after each detection in score order.
    pub points: Vec<(f64, f64)>,
    pub gt_count: usize,
    pub num_detections: usize,
}

/// Cumulative precision/recall for one class. With no ground truth the
/// curve has no points.
pub fn pr_curve(m: &MatchResult, class_id: usize) -> PrCurve {
    let mut recs: Vec<&MatchRecord> = m
        .records
        .iter()
        .filter(|r| r.class_id == class_id)
        .collect();
    recs.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.det_index.cmp(&b.det_index))
    });
    let gt_count = m.gt_counts.get(class_id).copied().unwrap_or(0);
    let mut points = Vec::with_capacity(recs.len());
    if gt_count > 0 {
        let (mut tp, mut fp) = (0usize, 0usize);
        for r in &recs {
            if r.true_positive {
                tp += 1;
            } else {
                fp += 1;
            }
            points.push((tp as f64 / gt_count as f64, tp as f64 / (tp + fp) as f64));
        }
    }
    PrCurve {
        points,
        gt_count,
        num_detections: recs.len(),
    }
}

/// 101-point interpolated AP over the monotone precision envelope.
///
/// A class without ground truth scores 1 when it also has no detections
/// and 0 otherwise.
pub fn average_precision(curve: &PrCurve) -> f64 {
    if curve.gt_count == 0 {
        return if curve.num_detections == 0 { 1.0 } else { 0.0 };
    }
    let mut envelope: Vec<f64> = curve.points.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / 100.0;
        let idx = curve.points.partition_point(|p| p.0 < r);
        if idx < envelope.len() {
            sum += envelope[idx];
        }
    }
    sum / RECALL_POINTS as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class_id: usize,
    pub gt_count: usize,
    pub num_detections: usize,
    pub ap50: f64,
    pub ap50_95: f64,
}

/// Precision and recall when keeping detections with score >= `confidence`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub confidence: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub per_class: Vec<ClassMetrics>,
    pub map50: f64,
    pub map50_95: f64,
    /// Max-F1 point of the merged all-class curve at IoU 0.5; `None` when
    /// there are no detections (precision and recall then read 0).
    pub best: Option<OperatingPoint>,
    pub precision: f64,
    pub recall: f64,
    /// Every distinct-confidence point of the merged curve, confidence descending.
    pub operating_points: Vec<OperatingPoint>,
}

/// F1 from counts, `2tp / (predicted + actual)`, which rounds once.
fn f1(tp: usize, predicted: usize, actual: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        (2 * tp) as f64 / (predicted + actual) as f64
    }
}

/// Merged all-class operating points, one per distinct score.
pub fn operating_points(m: &MatchResult) -> Vec<OperatingPoint> {
    let total_gt: usize = m.gt_counts.iter().sum();
    let mut recs: Vec<&MatchRecord> = m.records.iter().collect();
    recs.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = Vec::new();
    let mut tp = 0usize;
    for (i, r) in recs.iter().enumerate() {
        tp += usize::from(r.true_positive);
        let last_of_score = recs.get(i + 1).is_none_or(|n| n.score != r.score);
        if last_of_score {
            let precision = tp as f64 / (i + 1) as f64;
            let recall = if total_gt == 0 {
                0.0
            } else {
                tp as f64 / total_gt as f64
            };
            out.push(OperatingPoint {
                confidence: r.score,
                precision,
                recall,
                f1: f1(tp, i + 1, total_gt),
            });
        }
    }
    out
}

/// Full evaluation: AP50 and AP50-95 per class, their means over classes
/// that have ground truth, and the max-F1 precision / recall.
pub fn evaluate<S: Scalar>(
    dets: &[EvalDetection<S>],
    gts: &[GroundTruth<S>],
    num_classes: usize,
) -> Result<EvalSummary, EvalError> {
    if gts.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    let matches: Vec<MatchResult> = COCO_THRESHOLDS
        .iter()
        .map(|&t| match_detections(dets, gts, t, num_classes))
        .collect::<Result<_, _>>()?;
    let per_class: Vec<ClassMetrics> = (0..num_classes)
        .map(|c| {
            let aps: Vec<f64> = matches
                .iter()
                .map(|m| average_precision(&pr_curve(m, c)))
                .collect();
            ClassMetrics {
                class_id: c,
                gt_count: matches[0].gt_counts[c],
                num_detections: dets.iter().filter(|d| d.class_id == c).count(),
                ap50: aps[0],
                ap50_95: aps.iter().sum::<f64>() / aps.len() as f64,
            }
        })
        .collect();
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.gt_count > 0).collect();
    let map50 = present.iter().map(|c| c.ap50).sum::<f64>() / present.len() as f64;
    let map50_95 = present.iter().map(|c| c.ap50_95).sum::<f64>() / present.len() as f64;

    let operating_points = operating_points(&matches[0]);
    let mut best: Option<OperatingPoint> = None;
    for p in &operating_points {
        if best.is_none_or(|b| p.f1 > b.f1) {
            best = Some(*p);
        }
    }
    Ok(EvalSummary {
        per_class,
        map50,
        map50_95,
        precision: best.map_or(0.0, |b| b.precision),
        recall: best.map_or(0.0, |b| b.recall),
        best,
        operating_points,
    })
}

/// `(num_classes + 1)^2` counts; rows are predicted class, columns actual,
/// index `num_classes` is background. Detections with score above
/// `conf_threshold` are matched per image in score order to the unmatched
/// ground truth of highest IoU regardless of class.
pub fn confusion_matrix<S: Scalar>(
    dets: &[EvalDetection<S>],
    gts: &[GroundTruth<S>],
    num_classes: usize,
    iou_threshold: f64,
    conf_threshold: f64,
) -> Result<Vec<Vec<usize>>, EvalError> {
    check_classes(dets, gts, num_classes)?;
    let bg = num_classes;
    let mut m = vec![vec![0usize; num_classes + 1]; num_classes + 1];
    let mut matched = vec![false; gts.len()];
    for i in score_order(dets) {
        let d = &dets[i];
        if d.score.widen() <= conf_threshold {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if matched[j] || g.image != d.image {
                continue;
            }
            let o = iou(&d.bbox, &g.bbox).widen();
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        match best.filter(|&(_, o)| o >= iou_threshold) {
            Some((j, _)) => {
                matched[j] = true;
                m[d.class_id][gts[j].class_id] += 1;
            }
            None => m[d.class_id][bg] += 1,
        }
    }
    for (j, g) in gts.iter().enumerate() {
        if !matched[j] {
            m[bg][g.class_id] += 1;
        }
    }
    Ok(m)
}
