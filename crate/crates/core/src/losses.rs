//! Detection losses: binary cross-entropy, CIoU, distribution focal loss,
//! and their combination over an explicit target assignment.
//!
//! Every scalar loss returns its analytic gradient alongside the value.

use thiserror::Error;

use crate::head::{distances_to_box, AnchorPoint, BBox, CellPrediction};
use crate::scalar::Scalar;
use crate::tensor::{sigmoid_scalar, softmax_slice};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("target {0} outside [0, 1]")]
    Target(f64),
    #[error("box has non-positive width or height")]
    DegenerateBox,
    #[error("distance target {target} outside [0, {max}]")]
    Distance { target: f64, max: f64 },
    #[error("expected {expected} logits, got {got}")]
    LogitCount { expected: usize, got: usize },
    #[error("assignment refers to prediction {index} but only {len} exist")]
    BadIndex { index: usize, len: usize },
    #[error("class {class} out of range for {num_classes} classes")]
    BadClass { class: usize, num_classes: usize },
    #[error("ground truth center ({x}, {y}) lies outside the {w}x{h} image")]
    CenterOutside { x: f64, y: f64, w: f64, h: f64 },
    #[error("{shapes} level shapes for {strides} strides")]
    LevelCount { shapes: usize, strides: usize },
}

/// Numerically stable BCE on a logit. Returns `(loss, dloss/dlogit)`.
pub fn bce_with_logits<S: Scalar>(logit: S, target: S) -> Result<(S, S), LossError> {
    let y = target.widen();
    if !(0.0..=1.0).contains(&y) {
        return Err(LossError::Target(y));
    }
    let z = logit.widen();
    let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    let grad = sigmoid_scalar(z) - y;
    Ok((S::narrow(loss), S::narrow(grad)))
}

/// The components of a CIoU evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CIoUTerms<S> {
    pub iou: S,
    /// Squared distance between box centers.
    pub center_dist_sq: S,
    /// Squared diagonal of the smallest enclosing box.
    pub enclosing_diag_sq: S,
    /// Aspect-ratio consistency term.
    pub aspect_term: S,
    /// Weight on the aspect term, held constant when differentiating.
    pub tradeoff: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CIoULoss<S> {
    pub loss: S,
    /// d loss / d (x1, y1, x2, y2) of the predicted box.
    pub grad: [S; 4],
    pub terms: CIoUTerms<S>,
}

/// `1 - IoU + rho^2/c^2 + alpha*v`, differentiated with `alpha` frozen.
pub fn ciou_loss<S: Scalar>(pred: &BBox<S>, gt: &BBox<S>) -> Result<CIoULoss<S>, LossError> {
    let [x1, y1, x2, y2] = pred.to_array().map(Scalar::widen);
    let [gx1, gy1, gx2, gy2] = gt.to_array().map(Scalar::widen);
    let (w, h) = (x2 - x1, y2 - y1);
    let (gw, gh) = (gx2 - gx1, gy2 - gy1);
    if !(w > 0.0 && h > 0.0 && gw > 0.0 && gh > 0.0) {
        return Err(LossError::DegenerateBox);
    }

    // Intersection and its partials w.r.t. pred corners.
    let ix = x2.min(gx2) - x1.max(gx1);
    let iy = y2.min(gy2) - y1.max(gy1);
    let (iw, ih) = (ix.max(0.0), iy.max(0.0));
    let inter = iw * ih;
    let d_iw = if ix > 0.0 {
        [
            if x1 > gx1 { -1.0 } else { 0.0 },
            if x2 < gx2 { 1.0 } else { 0.0 },
        ]
    } else {
        [0.0, 0.0]
    };
    let d_ih = if iy > 0.0 {
        [
            if y1 > gy1 { -1.0 } else { 0.0 },
            if y2 < gy2 { 1.0 } else { 0.0 },
        ]
    } else {
        [0.0, 0.0]
    };
    let d_inter = [d_iw[0] * ih, d_ih[0] * iw, d_iw[1] * ih, d_ih[1] * iw];
    let d_area = [-h, -w, h, w];

    let union = w * h + gw * gh - inter;
    let iou = inter / union;
    let d_iou: [f64; 4] = std::array::from_fn(|k| {
        (d_inter[k] * union - inter * (d_area[k] - d_inter[k])) / (union * union)
    });

    // Center distance.
    let dx = (x1 + x2 - gx1 - gx2) / 2.0;
    let dy = (y1 + y2 - gy1 - gy2) / 2.0;
    let rho2 = dx * dx + dy * dy;
    let d_rho2 = [dx, dy, dx, dy];

    // Enclosing box diagonal.
    let cw = x2.max(gx2) - x1.min(gx1);
    let ch = y2.max(gy2) - y1.min(gy1);
    let c2 = cw * cw + ch * ch;
    let d_c2 = [
        if x1 < gx1 { -2.0 * cw } else { 0.0 },
        if y1 < gy1 { -2.0 * ch } else { 0.0 },
        if x2 > gx2 { 2.0 * cw } else { 0.0 },
        if y2 > gy2 { 2.0 * ch } else { 0.0 },
    ];

    // Aspect term.
    let k = 4.0 / (std::f64::consts::PI * std::f64::consts::PI);
    let diff = (gw / gh).atan() - (w / h).atan();
    let v = k * diff * diff;
    let alpha = if v == 0.0 { 0.0 } else { v / ((1.0 - iou) + v) };
    let norm = w * w + h * h;
    // d atan(w/h)/dw = h/(w^2+h^2), d/dh = -w/(w^2+h^2)
    let dv_dw = -2.0 * k * diff * h / norm;
    let dv_dh = 2.0 * k * diff * w / norm;
    let d_v = [-dv_dw, -dv_dh, dv_dw, dv_dh];

    let loss = 1.0 - iou + rho2 / c2 + alpha * v;
    let grad: [S; 4] = std::array::from_fn(|i| {
        S::narrow(-d_iou[i] + (d_rho2[i] * c2 - rho2 * d_c2[i]) / (c2 * c2) + alpha * d_v[i])
    });
    Ok(CIoULoss {
        loss: S::narrow(loss),
        grad,
        terms: CIoUTerms {
            iou: S::narrow(iou),
            center_dist_sq: S::narrow(rho2),
            enclosing_diag_sq: S::narrow(c2),
            aspect_term: S::narrow(v),
            tradeoff: S::narrow(alpha),
        },
    })
}

/// Two-bin cross-entropy against a continuous distance target.
/// Returns `(loss, dloss/dlogits)`.
pub fn dfl_loss<S: Scalar>(bin_logits: &[S], target: S) -> Result<(S, Vec<S>), LossError> {
    let n = bin_logits.len();
    let y = target.widen();
    let max = (n as f64) - 1.0;
    if n < 2 {
        return Err(LossError::LogitCount {
            expected: 2,
            got: n,
        });
    }
    if !(0.0..=max).contains(&y) {
        return Err(LossError::Distance { target: y, max });
    }
    let probs = softmax_slice(bin_logits);
    let left = y.floor() as usize;
    let mut weights = vec![0.0; n];
    if y == left as f64 {
        weights[left] = 1.0;
    } else {
        weights[left] = left as f64 + 1.0 - y;
        weights[left + 1] = y - left as f64;
    }
    // Log-softmax from the logits directly avoids log(0) on saturated bins.
    let m = bin_logits
        .iter()
        .map(|v| v.widen())
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = m + bin_logits
        .iter()
        .map(|v| (v.widen() - m).exp())
        .sum::<f64>()
        .ln();
    let loss: f64 = weights
        .iter()
        .zip(bin_logits)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, z)| -w * (z.widen() - lse))
        .sum();
    let grad = probs
        .iter()
        .zip(&weights)
        .map(|(p, w)| S::narrow(p - w))
        .collect();
    Ok((S::narrow(loss), grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub box_weight: f64,
    pub cls_weight: f64,
    pub dfl_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            box_weight: 7.5,
            cls_weight: 0.5,
            dfl_weight: 1.5,
        }
    }
}

/// Ground truth bound to one prediction cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment<S> {
    pub pred_index: usize,
    pub gt_box: BBox<S>,
    pub gt_class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<S> {
    pub total: S,
    pub box_part: S,
    pub cls_part: S,
    pub dfl_part: S,
}

/// Distances from an anchor to the edges of `gt`, in grid units, clamped to
/// `[0, reg_max - 1 - 0.01]` so the right-hand bin stays in range.
pub fn side_targets<S: Scalar>(anchor: &AnchorPoint, gt: &BBox<S>, reg_max: usize) -> [S; 4] {
    let s = anchor.stride as f64;
    let cap = (reg_max as f64 - 1.0) - 0.01;
    let [x1, y1, x2, y2] = gt.to_array().map(Scalar::widen);
    [
        anchor.cx - x1 / s,
        anchor.cy - y1 / s,
        x2 / s - anchor.cx,
        y2 / s - anchor.cy,
    ]
    .map(|d| S::narrow(d.clamp(0.0, cap)))
}

/// Combined loss over an explicit assignment.
///
/// The box term is the mean CIoU over assignments, the DFL term the mean
/// over all assigned box sides, and the class term the mean BCE over every
/// (cell, class) slot with one-hot targets.
pub fn detection_loss<S: Scalar>(
    preds: &[CellPrediction<S>],
    assignments: &[Assignment<S>],
    num_classes: usize,
    reg_max: usize,
    weights: &LossWeights,
) -> Result<LossBreakdown<S>, LossError> {
    let mut targets = vec![0.0f64; preds.len() * num_classes];
    for a in assignments {
        if a.pred_index >= preds.len() {
            return Err(LossError::BadIndex {
                index: a.pred_index,
                len: preds.len(),
            });
        }
        if a.gt_class >= num_classes {
            return Err(LossError::BadClass {
                class: a.gt_class,
                num_classes,
            });
        }
        targets[a.pred_index * num_classes + a.gt_class] = 1.0;
    }

    let mut cls_sum = 0.0;
    for (i, p) in preds.iter().enumerate() {
        if p.class_logits.len() != num_classes {
            return Err(LossError::LogitCount {
                expected: num_classes,
                got: p.class_logits.len(),
            });
        }
        for (c, &z) in p.class_logits.iter().enumerate() {
            cls_sum += bce_with_logits(z, S::narrow(targets[i * num_classes + c]))?
                .0
                .widen();
        }
    }
    let slots = preds.len() * num_classes;
    let cls_part = if slots == 0 {
        0.0
    } else {
        cls_sum / slots as f64
    };

    let (mut box_sum, mut dfl_sum) = (0.0, 0.0);
    for a in assignments {
        let p = &preds[a.pred_index];
        if p.box_logits.len() != 4 * reg_max {
            return Err(LossError::LogitCount {
                expected: 4 * reg_max,
                got: p.box_logits.len(),
            });
        }
        let dist: Vec<S> = p
            .box_logits
            .chunks(reg_max)
            .map(|bins| {
                let probs = softmax_slice(bins);
                S::narrow(probs.iter().enumerate().map(|(i, q)| i as f64 * q).sum())
            })
            .collect();
        let pred_box = distances_to_box(&p.anchor, [dist[0], dist[1], dist[2], dist[3]]);
        box_sum += ciou_loss(&pred_box, &a.gt_box)?.loss.widen();
        let sides = side_targets(&p.anchor, &a.gt_box, reg_max);
        for (bins, t) in p.box_logits.chunks(reg_max).zip(sides) {
            dfl_sum += dfl_loss(bins, t)?.0.widen();
        }
    }
    let n = assignments.len();
    let (box_part, dfl_part) = if n == 0 {
        (0.0, 0.0)
    } else {
        (box_sum / n as f64, dfl_sum / (4 * n) as f64)
    };
    let total = weights.box_weight * box_part
        + weights.cls_weight * cls_part
        + weights.dfl_weight * dfl_part;
    Ok(LossBreakdown {
        total: S::narrow(total),
        box_part: S::narrow(box_part),
        cls_part: S::narrow(cls_part),
        dfl_part: S::narrow(dfl_part),
    })
}

/// Assigns each ground truth to the cell containing its center, on the
/// level chosen by its longer side: stride 8 below 64 px, 16 below 128 px,
/// 32 otherwise. `level_shapes` and `strides` follow the anchor order.
pub fn assign_targets_center<S: Scalar>(
    gts: &[(BBox<S>, usize)],
    level_shapes: &[(usize, usize)],
    strides: &[usize],
) -> Result<Vec<Assignment<S>>, LossError> {
    if level_shapes.len() != strides.len() || level_shapes.is_empty() {
        return Err(LossError::LevelCount {
            shapes: level_shapes.len(),
            strides: strides.len(),
        });
    }
    let img_h = (level_shapes[0].0 * strides[0]) as f64;
    let img_w = (level_shapes[0].1 * strides[0]) as f64;
    let mut offsets = Vec::with_capacity(level_shapes.len());
    let mut acc = 0;
    for &(h, w) in level_shapes {
        offsets.push(acc);
        acc += h * w;
    }
    gts.iter()
        .map(|(gt, class)| {
            let (cx, cy) = gt.center();
            let (cx, cy) = (cx.widen(), cy.widen());
            if !(0.0..=img_w).contains(&cx) || !(0.0..=img_h).contains(&cy) {
                return Err(LossError::CenterOutside {
                    x: cx,
                    y: cy,
                    w: img_w,
                    h: img_h,
                });
            }
            let size = gt.width().widen().max(gt.height().widen());
            let want = if size < 64.0 {
                8
            } else if size < 128.0 {
                16
            } else {
                32
            };
            let level = strides
                .iter()
                .position(|&s| s == want)
                .unwrap_or(strides.len() - 1);
            let (h, w) = level_shapes[level];
            let s = strides[level] as f64;
            let col = ((cx / s).floor() as usize).min(w - 1);
            let row = ((cy / s).floor() as usize).min(h - 1);
            Ok(Assignment {
                pred_index: offsets[level] + row * w + col,
                gt_box: *gt,
                gt_class: *class,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::make_anchor_points;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox<f64> {
        BBox::new(x1, y1, x2, y2)
    }

    #[test]
    fn bce_values() {
        let (l, g) = bce_with_logits(50.0f64, 1.0).unwrap();
        assert!(l < 1e-20 && g.abs() < 1e-20);
        let (l, g) = bce_with_logits(0.0f64, 1.0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g + 0.5).abs() < 1e-15);
        for z in [-3.0, -0.2, 0.0, 1.7] {
            let a = bce_with_logits(z, 0.5f64).unwrap().0;
            let c = bce_with_logits(-z, 0.5f64).unwrap().0;
            assert!((a - c).abs() < 1e-12);
        }
        assert_eq!(bce_with_logits(0.0f64, 1.5), Err(LossError::Target(1.5)));
        // Stable for huge logits.
        assert!(bce_with_logits(-1e4f64, 1.0).unwrap().0.is_finite());
    }

    #[test]
    fn ciou_identity_and_concentric() {
        let gt = b(0.0, 0.0, 2.0, 2.0);
        let same = ciou_loss(&gt, &gt).unwrap();
        assert_eq!(same.loss, 0.0);
        assert_eq!(same.terms.iou, 1.0);
        assert_eq!(same.terms.center_dist_sq, 0.0);
        assert_eq!(same.terms.aspect_term, 0.0);
        assert_eq!(same.terms.tradeoff, 0.0);

        let inner = ciou_loss(&b(0.5, 0.5, 1.5, 1.5), &gt).unwrap();
        assert!((inner.terms.iou - 0.25).abs() < 1e-15);
        assert_eq!(inner.terms.center_dist_sq, 0.0);
        assert_eq!(inner.terms.aspect_term, 0.0);
        assert!((inner.loss - 0.75).abs() < 1e-15);

        assert_eq!(
            ciou_loss(&b(0.0, 0.0, 0.0, 1.0), &gt),
            Err(LossError::DegenerateBox)
        );
    }

    #[test]
    fn ciou_terms_invariants() {
        let r = ciou_loss(&b(1.0, 2.0, 4.0, 3.0), &b(0.0, 0.0, 2.0, 5.0)).unwrap();
        assert!(r.terms.enclosing_diag_sq >= r.terms.center_dist_sq);
        assert!(r.terms.aspect_term > 0.0 && r.loss > 0.0);
    }

    #[test]
    fn dfl_values() {
        let mut logits = [0.0f64; 16];
        logits[3] = 60.0;
        let (l, _) = dfl_loss(&logits, 3.0).unwrap();
        assert!(l < 1e-20);
        let (l, g) = dfl_loss(&[0.0f64; 16], 3.4).unwrap();
        assert!((l - 16f64.ln()).abs() < 1e-12);
        assert!((g.iter().sum::<f64>()).abs() < 1e-12);
        let (_, g) = dfl_loss(&[0.0f64; 16], 15.0).unwrap();
        assert!((g[15] - (1.0 / 16.0 - 1.0)).abs() < 1e-12);
        assert!(dfl_loss(&[0.0f64; 16], 15.5).is_err());
        assert!(dfl_loss(&[0.0f64; 16], -0.1).is_err());
    }

    #[test]
    fn assignment_levels() {
        let shapes = [(80, 80), (40, 40), (20, 20)];
        let strides = [8, 16, 32];
        let a =
            assign_targets_center(&[(b(80.0, 80.0, 120.0, 120.0), 1)], &shapes, &strides).unwrap();
        assert_eq!(a[0].pred_index, 12 * 80 + 12);
        let full =
            assign_targets_center(&[(b(0.0, 0.0, 640.0, 640.0), 0)], &shapes, &strides).unwrap();
        assert_eq!(full[0].pred_index, 6400 + 1600 + 10 * 20 + 10);
        let mid =
            assign_targets_center(&[(b(0.0, 0.0, 100.0, 20.0), 0)], &shapes, &strides).unwrap();
        // 100 px wide -> stride 16; center (50, 10) -> row 0, col 3.
        assert_eq!(mid[0].pred_index, 6400 + 3);
        let two = assign_targets_center(
            &[
                (b(0.0, 0.0, 10.0, 10.0), 0),
                (b(100.0, 100.0, 110.0, 110.0), 0),
            ],
            &shapes,
            &strides,
        )
        .unwrap();
        assert_ne!(two[0].pred_index, two[1].pred_index);
        assert!(matches!(
            assign_targets_center(&[(b(650.0, 0.0, 700.0, 10.0), 0)], &shapes, &strides),
            Err(LossError::CenterOutside { .. })
        ));
    }

    #[test]
    fn empty_assignment_still_scores_classes() {
        let anchors = make_anchor_points(&[(1, 2)], &[8]).unwrap();
        let preds: Vec<CellPrediction<f64>> = anchors
            .iter()
            .map(|&anchor| CellPrediction {
                box_logits: vec![0.0; 64],
                class_logits: vec![0.0, 0.0],
                anchor,
            })
            .collect();
        let r = detection_loss(&preds, &[], 2, 16, &LossWeights::default()).unwrap();
        assert_eq!(r.box_part, 0.0);
        assert_eq!(r.dfl_part, 0.0);
        assert!((r.cls_part - std::f64::consts::LN_2).abs() < 1e-12);
        let bad = Assignment {
            pred_index: 9,
            gt_box: b(0.0, 0.0, 1.0, 1.0),
            gt_class: 0,
        };
        assert!(matches!(
            detection_loss(&preds, &[bad], 2, 16, &LossWeights::default()),
            Err(LossError::BadIndex { .. })
        ));
    }
}
