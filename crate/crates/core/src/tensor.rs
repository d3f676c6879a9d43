//! Dense NCHW tensors and the handful of CPU kernels the detector needs.
//!
//! Every kernel is a pure function. Sums are carried in `f64` and rounded to
//! the element type once, on store.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} has a zero dimension")]
    ZeroDim { shape: [usize; 4] },
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: [usize; 4], len: usize },
    #[error("input has {input} channels but weights expect {weights}")]
    ChannelMismatch { input: usize, weights: usize },
    #[error("non-positive output size for input {input}x{input_w}, kernel {kernel}, stride {stride}, padding {padding}")]
    EmptyOutput {
        input: usize,
        input_w: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    #[error("{what} has length {got}, expected {expected}")]
    VectorLength {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("negative running variance {0} in batch norm")]
    NegativeVariance(f64),
    #[error("axis {0} out of range for a rank-4 tensor")]
    BadAxis(usize),
    #[error("cannot concatenate {a:?} with {b:?} along channels")]
    ConcatMismatch { a: [usize; 4], b: [usize; 4] },
    #[error("concat needs at least one input")]
    EmptyConcat,
    #[error("stride and upsample factor must be positive")]
    ZeroFactor,
    #[error("channel range {start}..{end} out of bounds for {channels} channels")]
    ChannelRange {
        start: usize,
        end: usize,
        channels: usize,
    },
}

/// Rank-4 `(batch, channels, height, width)` array, width fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: [usize; 4],
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: [usize; 4], data: Vec<S>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim { shape });
        }
        if data.len() != shape.iter().product::<usize>() {
            return Err(TensorError::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Result<Self, TensorError> {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: [usize; 4], value: S) -> Result<Self, TensorError> {
        let len = shape.iter().product();
        Self::new(shape, vec![value; len])
    }

    pub fn from_fn(
        shape: [usize; 4],
        mut f: impl FnMut([usize; 4]) -> S,
    ) -> Result<Self, TensorError> {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([b, ch, y, x]));
                    }
                }
            }
        }
        Self::new(shape, data)
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn index(&self, [b, c, y, x]: [usize; 4]) -> usize {
        let [_, ch, h, w] = self.shape;
        ((b * ch + c) * h + y) * w + x
    }

    #[inline]
    pub fn get(&self, at: [usize; 4]) -> S {
        self.data[self.index(at)]
    }

    #[inline]
    pub fn set(&mut self, at: [usize; 4], value: S) {
        let i = self.index(at);
        self.data[i] = value;
    }

    /// Contiguous `height * width` plane for one (batch, channel) pair.
    pub fn plane(&self, b: usize, c: usize) -> &[S] {
        let hw = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy of channels `start..end`.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self, TensorError> {
        let [n, c, h, w] = self.shape;
        if start >= end || end > c {
            return Err(TensorError::ChannelRange {
                start,
                end,
                channels: c,
            });
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * (end - start) * hw);
        for b in 0..n {
            let base = b * c * hw;
            data.extend_from_slice(&self.data[base + start * hw..base + end * hw]);
        }
        Self::new([n, end - start, h, w], data)
    }
}

fn pooled_extent(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Direct 2-D convolution with zero padding.
///
/// `weights` is laid out `(out_channels, in_channels, kh, kw)`. For every
/// output element the products are summed in `(ic, kh, kw)` order in `f64`,
/// the bias is added last, and the result is rounded once.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    bias: Option<&[S]>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>, TensorError> {
    let [n, in_c, in_h, in_w] = input.shape;
    let [out_c, w_in_c, kh, kw] = weights.shape;
    if in_c != w_in_c {
        return Err(TensorError::ChannelMismatch {
            input: in_c,
            weights: w_in_c,
        });
    }
    if let Some(b) = bias {
        if b.len() != out_c {
            return Err(TensorError::VectorLength {
                what: "bias",
                got: b.len(),
                expected: out_c,
            });
        }
    }
    let empty = || TensorError::EmptyOutput {
        input: in_h,
        input_w: in_w,
        kernel: kh.max(kw),
        stride,
        padding,
    };
    let out_h = pooled_extent(in_h, kh, stride, padding).ok_or_else(empty)?;
    let out_w = pooled_extent(in_w, kw, stride, padding).ok_or_else(empty)?;

    // Zero-padded channels-last f64 copy, wide enough that every tile read
    // stays in bounds. Out-of-image taps multiply zeros, which leaves each
    // sum unchanged.
    let tiles_w = out_w.div_ceil(TILE);
    let pad_h = ((out_h - 1) * stride + kh).max(in_h + padding);
    let pad_w = ((tiles_w * TILE - 1) * stride + kw).max(in_w + padding);
    let pad_len = pad_h * pad_w * in_c;
    let mut padded = vec![0f64; n * pad_len];
    for (p, chunk) in input.data.chunks_exact(in_h * in_w).enumerate() {
        let (b, ic) = (p / in_c, p % in_c);
        for (y, row) in chunk.chunks_exact(in_w).enumerate() {
            let dst = b * pad_len + ((y + padding) * pad_w + padding) * in_c + ic;
            for (x, v) in row.iter().enumerate() {
                padded[dst + x * in_c] = v.widen();
            }
        }
    }

    let plane = out_h * out_w;
    let taps = in_c * kh * kw;
    let mut out = vec![S::zero(); n * out_c * plane];
    // Weights for one block of output channels, laid out (tap, channel).
    let mut wblock = vec![0f64; taps * OC_BLOCK];
    let mut offsets = Vec::with_capacity(taps);
    for ic in 0..in_c {
        for ky in 0..kh {
            for kx in 0..kw {
                offsets.push((ky * pad_w + kx) * in_c + ic);
            }
        }
    }
    let step = stride * in_c;

    for b in 0..n {
        let src = &padded[b * pad_len..(b + 1) * pad_len];
        for oc0 in (0..out_c).step_by(OC_BLOCK) {
            let width = OC_BLOCK.min(out_c - oc0);
            wblock.fill(0.0);
            for o in 0..width {
                let w = &weights.data[(oc0 + o) * taps..(oc0 + o + 1) * taps];
                for (t, v) in w.iter().enumerate() {
                    wblock[t * OC_BLOCK + o] = v.widen();
                }
            }
            for oy in 0..out_h {
                for tile in 0..tiles_w {
                    let ox0 = tile * TILE;
                    let base = (oy * stride * pad_w + ox0 * stride) * in_c;
                    let acc = conv_tile(&src[base..], &offsets, &wblock, step);
                    for o in 0..width {
                        let bv = bias.map_or(0.0, |bs| bs[oc0 + o].widen());
                        let row = (b * out_c + oc0 + o) * plane + oy * out_w;
                        for t in 0..TILE.min(out_w - ox0) {
                            out[row + ox0 + t] = S::narrow(acc[t][o] + bv);
                        }
                    }
                }
            }
        }
    }
    Tensor::new([n, out_c, out_h, out_w], out)
}

const OC_BLOCK: usize = 8;
const TILE: usize = 3;

/// Sums for `TILE` output columns (`step` apart in `src`) times `OC_BLOCK`
/// output channels, taps visited in `(ic, kh, kw)` order.
#[inline(always)]
fn conv_tile(
    src: &[f64],
    offsets: &[usize],
    wblock: &[f64],
    step: usize,
) -> [[f64; OC_BLOCK]; TILE] {
    let mut acc = [[0f64; OC_BLOCK]; TILE];
    let last = (TILE - 1) * step;
    for (&off, w) in offsets.iter().zip(wblock.chunks_exact(OC_BLOCK)) {
        let lane = &src[off..=off + last];
        let w: &[f64; OC_BLOCK] = w.try_into().expect("block width");
        for (t, a) in acc.iter_mut().enumerate() {
            let x = lane[t * step];
            for o in 0..OC_BLOCK {
                a[o] += x * w[o];
            }
        }
    }
    acc
}

/// Inference-mode batch normalization over the channel axis.
pub fn batch_norm<S: Scalar>(
    input: &Tensor<S>,
    gamma: &[S],
    beta: &[S],
    running_mean: &[S],
    running_var: &[S],
    eps: S,
) -> Result<Tensor<S>, TensorError> {
    let [n, c, h, w] = input.shape;
    for (what, v) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", running_mean),
        ("running_var", running_var),
    ] {
        if v.len() != c {
            return Err(TensorError::VectorLength {
                what,
                got: v.len(),
                expected: c,
            });
        }
    }
    if let Some(&neg) = running_var.iter().find(|v| **v < S::zero()) {
        return Err(TensorError::NegativeVariance(neg.widen()));
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(input.len());
    for b in 0..n {
        for ch in 0..c {
            let g = gamma[ch].widen();
            let m = running_mean[ch].widen();
            let be = beta[ch].widen();
            let denom = (running_var[ch].widen() + eps.widen()).sqrt();
            let start = (b * c + ch) * hw;
            data.extend(
                input.data[start..start + hw]
                    .iter()
                    .map(|&x| S::narrow(g * (x.widen() - m) / denom + be)),
            );
        }
    }
    Tensor::new(input.shape, data)
}

#[inline]
pub fn sigmoid_scalar<S: Scalar>(x: S) -> S {
    let x = x.widen();
    // Split on sign so exp never overflows.
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    S::narrow(y)
}

#[inline]
pub fn silu_scalar<S: Scalar>(x: S) -> S {
    S::narrow(x.widen() * sigmoid_scalar(x.widen()))
}

pub fn sigmoid<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(sigmoid_scalar)
}

pub fn silu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(silu_scalar)
}

/// Numerically stable softmax of a slice, widened to `f64`.
pub fn softmax_slice<S: Scalar>(logits: &[S]) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|v| v.widen())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.widen() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax along `axis` (0..4).
pub fn softmax<S: Scalar>(input: &Tensor<S>, axis: usize) -> Result<Tensor<S>, TensorError> {
    if axis >= 4 {
        return Err(TensorError::BadAxis(axis));
    }
    let shape = input.shape;
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = input.data.clone();
    let mut lane = Vec::with_capacity(len);
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            lane.clear();
            lane.extend((0..len).map(|k| input.data[at(k)]));
            for (k, p) in softmax_slice(&lane).into_iter().enumerate() {
                out[at(k)] = S::narrow(p);
            }
        }
    }
    Tensor::new(shape, out)
}

/// Max pooling; out-of-image taps act as negative infinity.
pub fn max_pool2d<S: Scalar>(
    input: &Tensor<S>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>, TensorError> {
    let [n, c, h, w] = input.shape;
    let empty = || TensorError::EmptyOutput {
        input: h,
        input_w: w,
        kernel,
        stride,
        padding,
    };
    if kernel == 0 {
        return Err(empty());
    }
    let out_h = pooled_extent(h, kernel, stride, padding).ok_or_else(empty)?;
    let out_w = pooled_extent(w, kernel, stride, padding).ok_or_else(empty)?;
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            for oy in 0..out_h {
                let y0 = (oy * stride).saturating_sub(padding);
                let y1 = (oy * stride + kernel).saturating_sub(padding).min(h);
                for ox in 0..out_w {
                    let x0 = (ox * stride).saturating_sub(padding);
                    let x1 = (ox * stride + kernel).saturating_sub(padding).min(w);
                    let mut best = S::neg_infinity();
                    for y in y0..y1 {
                        for &v in &src[y * w + x0..y * w + x1] {
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out.push(best);
                }
            }
        }
    }
    Tensor::new([n, c, out_h, out_w], out)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest<S: Scalar>(
    input: &Tensor<S>,
    factor: usize,
) -> Result<Tensor<S>, TensorError> {
    if factor == 0 {
        return Err(TensorError::ZeroFactor);
    }
    let [n, c, h, w] = input.shape;
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            for y in 0..oh {
                let row = &src[(y / factor) * w..(y / factor + 1) * w];
                for x in 0..ow {
                    out.push(row[x / factor]);
                }
            }
        }
    }
    Tensor::new([n, c, oh, ow], out)
}

/// Concatenation along the channel axis, inputs in order.
pub fn concat<S: Scalar>(inputs: &[&Tensor<S>]) -> Result<Tensor<S>, TensorError> {
    let first = inputs.first().ok_or(TensorError::EmptyConcat)?;
    let [n, _, h, w] = first.shape;
    for t in &inputs[1..] {
        let [tn, _, th, tw] = t.shape;
        if (tn, th, tw) != (n, h, w) {
            return Err(TensorError::ConcatMismatch {
                a: first.shape,
                b: t.shape,
            });
        }
    }
    let channels: usize = inputs.iter().map(|t| t.shape[1]).sum();
    let hw = h * w;
    let mut data = Vec::with_capacity(n * channels * hw);
    for b in 0..n {
        for t in inputs {
            let c = t.shape[1];
            data.extend_from_slice(&t.data[b * c * hw..(b + 1) * c * hw]);
        }
    }
    Tensor::new([n, channels, h, w], data)
}
