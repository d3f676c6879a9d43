//! Image in, detections out: resize, forward, decode, clip, NMS.

use thiserror::Error;

use crate::augment::{resize_bilinear, AugmentError, ImageBuffer};
use crate::head::{self, clip_detections, make_anchor_points, Detection, HeadError};
use crate::model::{ForwardError, ModelGraph, Network, WeightStore};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_CONF: f64 = 0.25;
pub const DEFAULT_IOU: f64 = 0.45;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Image(#[from] AugmentError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("input size {0} must be a positive multiple of 32")]
    BadSize(usize),
}

/// `(1, 3, H, W)` tensor with channels scaled to `[0, 1]`.
pub fn image_to_tensor<S: Scalar>(img: &ImageBuffer) -> Result<Tensor<S>, TensorError> {
    let px = img.pixels();
    let w = img.width();
    Tensor::from_fn([1, 3, img.height(), w], |[_, c, y, x]| {
        S::narrow(px[(y * w + x) * 3 + c] as f64 / 255.0)
    })
}

#[derive(Debug, Clone)]
pub struct Detector<S> {
    network: Network<S>,
    reg_max: usize,
    pub input_size: usize,
    pub conf_threshold: f64,
    pub iou_threshold: f64,
}

impl<S: Scalar> Detector<S> {
    pub fn new(
        graph: &ModelGraph,
        store: &WeightStore,
        input_size: usize,
    ) -> Result<Self, DetectError> {
        if input_size == 0 || !input_size.is_multiple_of(32) {
            return Err(DetectError::BadSize(input_size));
        }
        Ok(Self {
            network: Network::new(graph, store)?,
            reg_max: graph.reg_max,
            input_size,
            conf_threshold: DEFAULT_CONF,
            iou_threshold: DEFAULT_IOU,
        })
    }

    /// Raw prediction maps for an image already at `input_size`.
    pub fn raw_maps(&self, img: &ImageBuffer) -> Result<Vec<Tensor<S>>, DetectError> {
        Ok(self.network.forward(&image_to_tensor(img)?)?)
    }

    /// Detections in the pixel frame of `img`, score descending.
    pub fn detect(&self, img: &ImageBuffer) -> Result<Vec<Detection<S>>, DetectError> {
        let size = self.input_size;
        let resized = resize_bilinear(img, size, size)?;
        let maps = self.raw_maps(&resized)?;
        let shapes: Vec<(usize, usize)> = maps.iter().map(|m| (m.height(), m.width())).collect();
        let anchors = make_anchor_points(&shapes, &self.network.strides)?;
        let mut dets =
            head::decode_predictions(&maps, &anchors, self.conf_threshold, self.reg_max)?;
        let side = S::narrow(size as f64);
        clip_detections(&mut dets, side, side);
        let mut kept = head::nms(&dets, S::narrow(self.iou_threshold));
        let sx = S::narrow(img.width() as f64 / size as f64);
        let sy = S::narrow(img.height() as f64 / size as f64);
        let (w, h) = (
            S::narrow(img.width() as f64),
            S::narrow(img.height() as f64),
        );
        for d in &mut kept {
            let b = d.bbox;
            d.bbox = head::BBox::new(b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy).clip(w, h);
        }
        Ok(kept)
    }
}
