//! Turning raw prediction maps into scored pixel-space boxes.

use std::cmp::Ordering;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::{sigmoid_scalar, softmax_slice, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeadError {
    #[error("{shapes} level shapes for {strides} strides")]
    LevelCount { shapes: usize, strides: usize },
    #[error("expected {expected} distribution bins, got {got}")]
    BinCount { expected: usize, got: usize },
    #[error("map {level} has {got} channels, expected {expected}")]
    ChannelMismatch {
        level: usize,
        got: usize,
        expected: usize,
    },
    #[error("maps cover {maps} cells but {anchors} anchors were given")]
    AnchorCount { maps: usize, anchors: usize },
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
}

/// Axis-aligned box in pixels, `(x1, y1)` top-left.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox<S> {
    pub x1: S,
    pub y1: S,
    pub x2: S,
    pub y2: S,
}

impl<S: Scalar> BBox<S> {
    pub fn new(x1: S, y1: S, x2: S, y2: S) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> S {
        self.x2 - self.x1
    }

    pub fn height(&self) -> S {
        self.y2 - self.y1
    }

    pub fn area(&self) -> S {
        (self.width() * self.height()).max(S::zero())
    }

    pub fn center(&self) -> (S, S) {
        let two = S::lit(2.0);
        ((self.x1 + self.x2) / two, (self.y1 + self.y2) / two)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 <= self.x2 && self.y1 <= self.y2
    }

    pub fn scale(&self, factor: S) -> Self {
        Self::new(
            self.x1 * factor,
            self.y1 * factor,
            self.x2 * factor,
            self.y2 * factor,
        )
    }

    pub fn clip(&self, width: S, height: S) -> Self {
        let cx = |v: S| v.max(S::zero()).min(width);
        let cy = |v: S| v.max(S::zero()).min(height);
        Self::new(cx(self.x1), cy(self.y1), cx(self.x2), cy(self.y2))
    }

    pub fn to_array(&self) -> [S; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Intersection over union; zero for disjoint or zero-area boxes.
pub fn iou<S: Scalar>(a: &BBox<S>, b: &BBox<S>) -> S {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(S::zero());
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(S::zero());
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= S::zero() {
        S::zero()
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection<S> {
    pub bbox: BBox<S>,
    pub class_id: usize,
    pub score: S,
}

/// Grid-cell center in grid units for one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorPoint {
    pub cx: f64,
    pub cy: f64,
    pub stride: usize,
}

/// Row-major cell centers for every level, levels in order.
pub fn make_anchor_points(
    level_shapes: &[(usize, usize)],
    strides: &[usize],
) -> Result<Vec<AnchorPoint>, HeadError> {
    if level_shapes.len() != strides.len() {
        return Err(HeadError::LevelCount {
            shapes: level_shapes.len(),
            strides: strides.len(),
        });
    }
    let mut points = Vec::with_capacity(level_shapes.iter().map(|(h, w)| h * w).sum());
    for (&(h, w), &stride) in level_shapes.iter().zip(strides) {
        for i in 0..h {
            for j in 0..w {
                points.push(AnchorPoint {
                    cx: j as f64 + 0.5,
                    cy: i as f64 + 0.5,
                    stride,
                });
            }
        }
    }
    Ok(points)
}

/// Expected bin index under the softmax of `bin_logits`.
pub fn dfl_expectation<S: Scalar>(bin_logits: &[S], reg_max: usize) -> Result<S, HeadError> {
    if bin_logits.len() != reg_max {
        return Err(HeadError::BinCount {
            expected: reg_max,
            got: bin_logits.len(),
        });
    }
    let probs = softmax_slice(bin_logits);
    Ok(S::narrow(
        probs.iter().enumerate().map(|(i, p)| i as f64 * p).sum(),
    ))
}

/// Per-cell view of the raw maps: 4 sides x `reg_max` box logits and
/// `num_classes` class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPrediction<S> {
    pub box_logits: Vec<S>,
    pub class_logits: Vec<S>,
    pub anchor: AnchorPoint,
}

impl<S: Scalar> CellPrediction<S> {
    /// Distances `(l, t, r, b)` in grid units.
    pub fn distances(&self, reg_max: usize) -> Result<[S; 4], HeadError> {
        let mut d = [S::zero(); 4];
        for (side, chunk) in self.box_logits.chunks(reg_max).enumerate() {
            d[side] = dfl_expectation(chunk, reg_max)?;
        }
        Ok(d)
    }

    /// Decoded box in pixels.
    pub fn decode_box(&self, reg_max: usize) -> Result<BBox<S>, HeadError> {
        let [l, t, r, b] = self.distances(reg_max)?;
        Ok(distances_to_box(&self.anchor, [l, t, r, b]))
    }
}

pub fn distances_to_box<S: Scalar>(anchor: &AnchorPoint, [l, t, r, b]: [S; 4]) -> BBox<S> {
    let cx = S::narrow(anchor.cx);
    let cy = S::narrow(anchor.cy);
    let s = S::narrow(anchor.stride as f64);
    BBox::new((cx - l) * s, (cy - t) * s, (cx + r) * s, (cy + b) * s)
}

/// Splits raw `(1, 4*reg_max + nc, H, W)` maps into one record per cell,
/// in the same order as [`make_anchor_points`].
pub fn flatten_predictions<S: Scalar>(
    maps: &[Tensor<S>],
    anchors: &[AnchorPoint],
    reg_max: usize,
) -> Result<Vec<CellPrediction<S>>, HeadError> {
    let cells: usize = maps.iter().map(|m| m.height() * m.width()).sum();
    if cells != anchors.len() {
        return Err(HeadError::AnchorCount {
            maps: cells,
            anchors: anchors.len(),
        });
    }
    let box_ch = 4 * reg_max;
    let channels = maps.first().map_or(box_ch, Tensor::channels);
    let mut out = Vec::with_capacity(cells);
    let mut anchor_iter = anchors.iter();
    for (level, map) in maps.iter().enumerate() {
        if map.channels() != channels || channels <= box_ch {
            return Err(HeadError::ChannelMismatch {
                level,
                got: map.channels(),
                expected: channels.max(box_ch + 1),
            });
        }
        for y in 0..map.height() {
            for x in 0..map.width() {
                let at = |c: usize| map.get([0, c, y, x]);
                out.push(CellPrediction {
                    box_logits: (0..box_ch).map(at).collect(),
                    class_logits: (box_ch..channels).map(at).collect(),
                    anchor: *anchor_iter.next().expect("counted above"),
                });
            }
        }
    }
    Ok(out)
}

/// One candidate per (cell, class) whose sigmoid score exceeds
/// `conf_threshold`. Boxes are not clipped.
pub fn decode_predictions<S: Scalar>(
    maps: &[Tensor<S>],
    anchors: &[AnchorPoint],
    conf_threshold: f64,
    reg_max: usize,
) -> Result<Vec<Detection<S>>, HeadError> {
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(HeadError::Threshold(conf_threshold));
    }
    let mut dets = Vec::new();
    for cell in flatten_predictions(maps, anchors, reg_max)? {
        let mut bbox = None;
        for (class_id, &logit) in cell.class_logits.iter().enumerate() {
            let score = sigmoid_scalar(logit);
            if score.widen() > conf_threshold {
                let b = match bbox {
                    Some(b) => b,
                    None => *bbox.insert(cell.decode_box(reg_max)?),
                };
                dets.push(Detection {
                    bbox: b,
                    class_id,
                    score,
                });
            }
        }
    }
    Ok(dets)
}

pub fn clip_detections<S: Scalar>(dets: &mut [Detection<S>], width: S, height: S) {
    for d in dets {
        d.bbox = d.bbox.clip(width, height);
    }
}

/// Order used everywhere detections are ranked: score descending, then
/// lower class id; callers keep input order via a stable sort.
pub fn rank_order<S: Scalar>(a: &Detection<S>, b: &Detection<S>) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.class_id.cmp(&b.class_id))
}

/// Class-aware greedy suppression. Keeps a box iff its IoU with every kept
/// box of the same class is at most `iou_threshold`.
pub fn nms<S: Scalar>(candidates: &[Detection<S>], iou_threshold: S) -> Vec<Detection<S>> {
    let mut order: Vec<&Detection<S>> = candidates.iter().collect();
    order.sort_by(|a, b| rank_order(a, b));
    let mut kept: Vec<Detection<S>> = Vec::new();
    for d in order {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}
