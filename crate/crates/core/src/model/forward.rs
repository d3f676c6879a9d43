//! Executes a [`ModelGraph`] with a [`WeightStore`] on CPU.

use thiserror::Error;

use super::graph::{LayerKind, ModelGraph, Source, BN_EPS};
use super::weights::{ParamTensor, WeightError, WeightStore};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("expected a (1, 3, H, W) image with H and W divisible by 32, got {0:?}")]
    BadInput([usize; 4]),
}

fn to_tensor<S: Scalar>(p: &ParamTensor) -> Result<Tensor<S>, TensorError> {
    let mut dims = [1usize; 4];
    dims.copy_from_slice(&p.dims);
    Tensor::new(dims, p.data.iter().map(|&v| S::narrow(v as f64)).collect())
}

fn to_vec<S: Scalar>(p: &ParamTensor) -> Vec<S> {
    p.data.iter().map(|&v| S::narrow(v as f64)).collect()
}

fn fetch<'a>(store: &'a WeightStore, name: &str) -> Result<&'a ParamTensor, WeightError> {
    store
        .get(name)
        .ok_or_else(|| WeightError::Missing(name.to_string()))
}

/// Conv -> BatchNorm -> SiLU.
#[derive(Debug, Clone)]
struct ConvBlock<S> {
    weight: Tensor<S>,
    gamma: Vec<S>,
    beta: Vec<S>,
    mean: Vec<S>,
    var: Vec<S>,
    stride: usize,
    padding: usize,
}

impl<S: Scalar> ConvBlock<S> {
    fn load(store: &WeightStore, prefix: &str, stride: usize) -> Result<Self, ForwardError> {
        let weight: Tensor<S> = to_tensor(fetch(store, &format!("{prefix}conv.weight"))?)?;
        let padding = match weight.height() {
            6 => 2,
            k => k / 2,
        };
        Ok(Self {
            weight,
            gamma: to_vec(fetch(store, &format!("{prefix}bn.weight"))?),
            beta: to_vec(fetch(store, &format!("{prefix}bn.bias"))?),
            mean: to_vec(fetch(store, &format!("{prefix}bn.running_mean"))?),
            var: to_vec(fetch(store, &format!("{prefix}bn.running_var"))?),
            stride,
            padding,
        })
    }

    fn run(&self, x: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        let y = tensor::conv2d(x, &self.weight, None, self.stride, self.padding)?;
        let y = tensor::batch_norm(
            &y,
            &self.gamma,
            &self.beta,
            &self.mean,
            &self.var,
            S::narrow(BN_EPS),
        )?;
        Ok(tensor::silu(&y))
    }
}

/// Plain 1x1 convolution with bias (Detect outputs).
#[derive(Debug, Clone)]
struct PlainConv<S> {
    weight: Tensor<S>,
    bias: Vec<S>,
}

impl<S: Scalar> PlainConv<S> {
    fn load(store: &WeightStore, prefix: &str) -> Result<Self, ForwardError> {
        Ok(Self {
            weight: to_tensor(fetch(store, &format!("{prefix}weight"))?)?,
            bias: to_vec(fetch(store, &format!("{prefix}bias"))?),
        })
    }

    fn run(&self, x: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        tensor::conv2d(x, &self.weight, Some(&self.bias), 1, 0)
    }
}

#[derive(Debug, Clone)]
struct HeadBranch<S> {
    first: ConvBlock<S>,
    second: ConvBlock<S>,
    out: PlainConv<S>,
}

impl<S: Scalar> HeadBranch<S> {
    fn run(&self, x: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        self.out.run(&self.second.run(&self.first.run(x)?)?)
    }
}

#[derive(Debug, Clone)]
enum Block<S> {
    Conv(ConvBlock<S>),
    C3 {
        cv1: ConvBlock<S>,
        cv2: ConvBlock<S>,
        cv3: ConvBlock<S>,
        bottlenecks: Vec<(ConvBlock<S>, ConvBlock<S>)>,
        shortcut: bool,
    },
    Sppf {
        cv1: ConvBlock<S>,
        cv2: ConvBlock<S>,
        kernel: usize,
    },
    Upsample(usize),
    Concat,
    Detect {
        box_branches: Vec<HeadBranch<S>>,
        cls_branches: Vec<HeadBranch<S>>,
    },
}

fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    Tensor::new(
        a.shape(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| S::narrow(x.widen() + y.widen()))
            .collect(),
    )
}

impl<S: Scalar> Block<S> {
    fn run(&self, inputs: &[&Tensor<S>]) -> Result<Vec<Tensor<S>>, TensorError> {
        let x = inputs[0];
        let out = match self {
            Block::Conv(c) => c.run(x)?,
            Block::C3 {
                cv1,
                cv2,
                cv3,
                bottlenecks,
                shortcut,
            } => {
                let mut a = cv1.run(x)?;
                for (b1, b2) in bottlenecks {
                    let y = b2.run(&b1.run(&a)?)?;
                    a = if *shortcut { add(&a, &y)? } else { y };
                }
                let b = cv2.run(x)?;
                cv3.run(&tensor::concat(&[&a, &b])?)?
            }
            Block::Sppf { cv1, cv2, kernel } => {
                let y0 = cv1.run(x)?;
                let y1 = tensor::max_pool2d(&y0, *kernel, 1, kernel / 2)?;
                let y2 = tensor::max_pool2d(&y1, *kernel, 1, kernel / 2)?;
                let y3 = tensor::max_pool2d(&y2, *kernel, 1, kernel / 2)?;
                cv2.run(&tensor::concat(&[&y0, &y1, &y2, &y3])?)?
            }
            Block::Upsample(f) => tensor::upsample_nearest(x, *f)?,
            Block::Concat => tensor::concat(inputs)?,
            Block::Detect {
                box_branches,
                cls_branches,
            } => {
                return inputs
                    .iter()
                    .zip(box_branches.iter().zip(cls_branches))
                    .map(|(x, (bb, cb))| tensor::concat(&[&bb.run(x)?, &cb.run(x)?]))
                    .collect();
            }
        };
        Ok(vec![out])
    }
}

/// A graph bound to its weights, ready to run.
#[derive(Debug, Clone)]
pub struct Network<S> {
    blocks: Vec<Block<S>>,
    inputs: Vec<Vec<Source>>,
    /// Index of the last layer that reads each layer's output.
    last_use: Vec<usize>,
    pub num_classes: usize,
    pub strides: [usize; 3],
}

impl<S: Scalar> Network<S> {
    pub fn new(graph: &ModelGraph, store: &WeightStore) -> Result<Self, ForwardError> {
        store.validate(graph)?;
        let mut blocks = Vec::with_capacity(graph.layers.len());
        for layer in &graph.layers {
            let p = format!("layer{}.", layer.id);
            let block = match &layer.kind {
                LayerKind::Conv { stride, .. } => Block::Conv(ConvBlock::load(store, &p, *stride)?),
                LayerKind::C3 {
                    bottlenecks,
                    shortcut,
                } => Block::C3 {
                    cv1: ConvBlock::load(store, &format!("{p}cv1."), 1)?,
                    cv2: ConvBlock::load(store, &format!("{p}cv2."), 1)?,
                    cv3: ConvBlock::load(store, &format!("{p}cv3."), 1)?,
                    bottlenecks: (0..*bottlenecks)
                        .map(|i| {
                            Ok((
                                ConvBlock::load(store, &format!("{p}m.{i}.cv1."), 1)?,
                                ConvBlock::load(store, &format!("{p}m.{i}.cv2."), 1)?,
                            ))
                        })
                        .collect::<Result<_, ForwardError>>()?,
                    shortcut: *shortcut,
                },
                LayerKind::Sppf { kernel } => Block::Sppf {
                    cv1: ConvBlock::load(store, &format!("{p}cv1."), 1)?,
                    cv2: ConvBlock::load(store, &format!("{p}cv2."), 1)?,
                    kernel: *kernel,
                },
                LayerKind::Upsample { factor } => Block::Upsample(*factor),
                LayerKind::Concat => Block::Concat,
                LayerKind::Detect { .. } => {
                    let branch =
                        |name: &str, level: usize| -> Result<HeadBranch<S>, ForwardError> {
                            let b = format!("{p}{name}.{level}.");
                            Ok(HeadBranch {
                                first: ConvBlock::load(store, &format!("{b}0."), 1)?,
                                second: ConvBlock::load(store, &format!("{b}1."), 1)?,
                                out: PlainConv::load(store, &format!("{b}2."))?,
                            })
                        };
                    let levels = layer.in_channels.len();
                    Block::Detect {
                        box_branches: (0..levels)
                            .map(|l| branch("cv2", l))
                            .collect::<Result<_, _>>()?,
                        cls_branches: (0..levels)
                            .map(|l| branch("cv3", l))
                            .collect::<Result<_, _>>()?,
                    }
                }
            };
            blocks.push(block);
        }
        let n = graph.layers.len();
        let mut last_use = vec![n; n];
        for layer in &graph.layers {
            for s in &layer.inputs {
                if let Source::Layer(j) = s {
                    last_use[*j] = layer.id;
                }
            }
        }
        Ok(Self {
            blocks,
            inputs: graph.layers.iter().map(|l| l.inputs.clone()).collect(),
            last_use,
            num_classes: graph.num_classes,
            strides: graph.strides,
        })
    }

    /// Runs the network on a `(1, 3, H, W)` image and returns the three raw
    /// prediction maps (strides 8, 16, 32), each with `4 * 16 + nc` channels.
    pub fn forward(&self, image: &Tensor<S>) -> Result<Vec<Tensor<S>>, ForwardError> {
        let shape = image.shape();
        if shape[0] != 1
            || shape[1] != 3
            || !shape[2].is_multiple_of(32)
            || !shape[3].is_multiple_of(32)
        {
            return Err(ForwardError::BadInput(shape));
        }
        let mut outputs: Vec<Option<Vec<Tensor<S>>>> = vec![None; self.blocks.len()];
        let mut result = None;
        for (id, block) in self.blocks.iter().enumerate() {
            let ins: Vec<&Tensor<S>> = self.inputs[id]
                .iter()
                .map(|s| match s {
                    Source::Image => image,
                    Source::Layer(j) => &outputs[*j].as_ref().expect("layer output retained")[0],
                })
                .collect();
            let out = block.run(&ins)?;
            if matches!(block, Block::Detect { .. }) {
                result = Some(out);
            } else {
                outputs[id] = Some(out);
            }
            for j in 0..id {
                if self.last_use[j] == id {
                    outputs[j] = None;
                }
            }
        }
        Ok(result.expect("graph ends in Detect"))
    }
}

/// Convenience wrapper: bind and run once.
pub fn forward<S: Scalar>(
    graph: &ModelGraph,
    store: &WeightStore,
    image: &Tensor<S>,
) -> Result<Vec<Tensor<S>>, ForwardError> {
    Network::new(graph, store)?.forward(image)
}
