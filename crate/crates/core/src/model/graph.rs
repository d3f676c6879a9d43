//! Declarative description of the YOLOv5mu network.
//!
//! The graph is the single source of truth for tensor shapes, parameter
//! names and counts, and FLOPs. The executor and weight initializer both read
//! the parameter manifest produced here.

use std::fmt;

use thiserror::Error;

/// Distribution bins per box side.
pub const REG_MAX: usize = 16;
/// Feature-pyramid strides of the three Detect inputs.
pub const STRIDES: [usize; 3] = [8, 16, 32];
/// Batch-norm epsilon used by every Conv block.
pub const BN_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("num_classes must be at least 1")]
    NoClasses,
    #[error("input size {h}x{w} is not divisible by 32")]
    Indivisible { h: usize, w: usize },
    #[error("layer {layer} reads from layer {from} which is not earlier")]
    NotTopological { layer: usize, from: usize },
    #[error("layer {layer} has {got} inputs, expected {expected}")]
    Arity {
        layer: usize,
        got: usize,
        expected: &'static str,
    },
    #[error("layer {layer}: {detail}")]
    Inconsistent { layer: usize, detail: String },
}

/// Where a layer reads its input from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Image,
    Layer(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    /// Bias-free convolution, batch norm, SiLU.
    Conv {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    C3 {
        bottlenecks: usize,
        shortcut: bool,
    },
    Sppf {
        kernel: usize,
    },
    Upsample {
        factor: usize,
    },
    Concat,
    /// Anchor-free decoupled head.
    Detect {
        num_classes: usize,
        reg_max: usize,
        box_hidden: usize,
        cls_hidden: usize,
    },
}

impl LayerKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "Conv",
            LayerKind::C3 { .. } => "C3",
            LayerKind::Sppf { .. } => "SPPF",
            LayerKind::Upsample { .. } => "Upsample",
            LayerKind::Concat => "Concat",
            LayerKind::Detect { .. } => "Detect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub id: usize,
    /// Display name, e.g. `Conv1`, `C3-4`.
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: Vec<usize>,
    /// For Detect: channels of each raw prediction map.
    pub out_channels: usize,
    pub inputs: Vec<Source>,
}

/// Role of a stored tensor; running statistics are buffers, not parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    ConvWeight { fan_in: usize },
    ConvBias { fan_in: usize },
    BnGamma,
    BnBeta,
    BnMean,
    BnVar,
    DflProjection,
}

impl ParamRole {
    pub fn is_trainable_count(&self) -> bool {
        !matches!(self, ParamRole::BnMean | ParamRole::BnVar)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    /// Full key, `layer<id>.<role path>`.
    pub name: String,
    pub dims: Vec<usize>,
    pub role: ParamRole,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelGraph {
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
    pub strides: [usize; 3],
    pub reg_max: usize,
}

fn conv(kernel: usize, stride: usize) -> LayerKind {
    LayerKind::Conv {
        kernel,
        stride,
        padding: match kernel {
            6 => 2,
            k => k / 2,
        },
    }
}

/// Builds the 25-layer YOLOv5mu graph (backbone, SPPF, PAN neck, Detect).
pub fn build_yolov5mu(num_classes: usize) -> Result<ModelGraph, GraphError> {
    if num_classes == 0 {
        return Err(GraphError::NoClasses);
    }
    use LayerKind::*;
    use Source::*;
    let c3 = |n: usize, shortcut: bool| C3 {
        bottlenecks: n,
        shortcut,
    };
    let prev = |id: usize| Layer(id - 1);
    // (name, kind, inputs, out_channels)
    let table: Vec<(&str, LayerKind, Vec<Source>, usize)> = vec![
        ("Conv1", conv(6, 2), vec![Image], 48),
        ("Conv2", conv(3, 2), vec![prev(1)], 96),
        ("C3-1", c3(2, true), vec![prev(2)], 96),
        ("Conv3", conv(3, 2), vec![prev(3)], 192),
        ("C3-2", c3(4, true), vec![prev(4)], 192),
        ("Conv4", conv(3, 2), vec![prev(5)], 384),
        ("C3-3", c3(6, true), vec![prev(6)], 384),
        ("Conv5", conv(3, 2), vec![prev(7)], 768),
        ("C3-4", c3(2, true), vec![prev(8)], 768),
        ("SPPF", Sppf { kernel: 5 }, vec![prev(9)], 768),
        ("Conv6", conv(1, 1), vec![prev(10)], 384),
        ("Upsample", Upsample { factor: 2 }, vec![prev(11)], 384),
        ("Concat", Concat, vec![prev(12), Layer(6)], 768),
        ("C3-5", c3(2, false), vec![prev(13)], 384),
        ("Conv7", conv(1, 1), vec![prev(14)], 192),
        ("Upsample", Upsample { factor: 2 }, vec![prev(15)], 192),
        ("Concat", Concat, vec![prev(16), Layer(4)], 384),
        ("C3-6", c3(2, false), vec![prev(17)], 192),
        ("Conv8", conv(3, 2), vec![prev(18)], 192),
        ("Concat", Concat, vec![prev(19), Layer(14)], 384),
        ("C3-7", c3(2, false), vec![prev(20)], 384),
        ("Conv9", conv(3, 2), vec![prev(21)], 384),
        ("Concat", Concat, vec![prev(22), Layer(10)], 768),
        ("C3-8", c3(2, false), vec![prev(23)], 768),
        (
            "Detect",
            Detect {
                num_classes,
                reg_max: REG_MAX,
                box_hidden: 0,
                cls_hidden: 0,
            },
            vec![Layer(17), Layer(20), Layer(23)],
            4 * REG_MAX + num_classes,
        ),
    ];

    let mut layers: Vec<LayerSpec> = Vec::with_capacity(table.len());
    for (id, (name, mut kind, inputs, out_channels)) in table.into_iter().enumerate() {
        let in_channels: Vec<usize> = inputs
            .iter()
            .map(|s| match s {
                Image => 3,
                Layer(j) => layers[*j].out_channels,
            })
            .collect();
        if let Detect {
            box_hidden,
            cls_hidden,
            ..
        } = &mut kind
        {
            let smallest = in_channels[0];
            *box_hidden = (smallest / 4).max(4 * REG_MAX).max(16);
            *cls_hidden = smallest.max(num_classes.min(100));
        }
        layers.push(LayerSpec {
            id,
            name: name.to_string(),
            kind,
            in_channels,
            out_channels,
            inputs,
        });
    }
    let graph = ModelGraph {
        layers,
        num_classes,
        strides: STRIDES,
        reg_max: REG_MAX,
    };
    graph.validate()?;
    Ok(graph)
}

impl ModelGraph {
    /// Checks ordering, arity and channel bookkeeping.
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut detects = 0;
        for layer in &self.layers {
            for s in &layer.inputs {
                if let Source::Layer(j) = s {
                    if *j >= layer.id {
                        return Err(GraphError::NotTopological {
                            layer: layer.id,
                            from: *j,
                        });
                    }
                }
            }
            let n = layer.inputs.len();
            let ok = match layer.kind {
                LayerKind::Concat => n >= 2,
                LayerKind::Detect { .. } => n == 3,
                _ => n == 1,
            };
            if !ok {
                let expected = match layer.kind {
                    LayerKind::Concat => ">= 2",
                    LayerKind::Detect { .. } => "3",
                    _ => "1",
                };
                return Err(GraphError::Arity {
                    layer: layer.id,
                    got: n,
                    expected,
                });
            }
            let total_in: usize = layer.in_channels.iter().sum();
            match &layer.kind {
                LayerKind::Concat if total_in != layer.out_channels => {
                    return Err(GraphError::Inconsistent {
                        layer: layer.id,
                        detail: format!(
                            "concat of {total_in} channels declared {}",
                            layer.out_channels
                        ),
                    })
                }
                LayerKind::Upsample { .. } if total_in != layer.out_channels => {
                    return Err(GraphError::Inconsistent {
                        layer: layer.id,
                        detail: "upsample changes channels".into(),
                    })
                }
                LayerKind::Detect {
                    num_classes,
                    reg_max,
                    ..
                } => {
                    detects += 1;
                    if layer.out_channels != 4 * reg_max + num_classes {
                        return Err(GraphError::Inconsistent {
                            layer: layer.id,
                            detail: "detect output width".into(),
                        });
                    }
                }
                _ => {}
            }
        }
        if detects != 1 {
            return Err(GraphError::Inconsistent {
                layer: self.layers.len().saturating_sub(1),
                detail: format!("{detects} Detect layers, expected exactly one"),
            });
        }
        Ok(())
    }

    pub fn detect_layer(&self) -> &LayerSpec {
        self.layers
            .iter()
            .find(|l| matches!(l.kind, LayerKind::Detect { .. }))
            .expect("validated graph has a Detect layer")
    }

    /// Every stored tensor of the network, in a fixed order.
    pub fn param_manifest(&self) -> Vec<ParamSpec> {
        self.layers.iter().flat_map(layer_params).collect()
    }

    /// Number of distinct modules in the equivalent unfused module tree: the
    /// model and its sequential container, every block and sub-block, and
    /// a single shared activation instance.
    pub fn module_count(&self) -> usize {
        // Conv block = container + conv + bn; the SiLU is shared.
        const CONV: usize = 3;
        let per_layer: usize = self
            .layers
            .iter()
            .map(|l| match &l.kind {
                LayerKind::Conv { .. } => CONV,
                LayerKind::C3 { bottlenecks, .. } => {
                    1 + 3 * CONV + 1 + bottlenecks * (1 + 2 * CONV)
                }
                LayerKind::Sppf { .. } => 1 + 2 * CONV + 1,
                LayerKind::Upsample { .. } | LayerKind::Concat => 1,
                // Two branch lists of (sequential, conv, conv, plain conv) per
                // level, plus the DFL module and its projection conv.
                LayerKind::Detect { .. } => 1 + 2 * (1 + 3 * (1 + 2 * CONV + 1)) + 2,
            })
            .sum();
        2 + per_layer + 1
    }
}

fn push_conv_block(out: &mut Vec<ParamSpec>, prefix: &str, cin: usize, cout: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}conv.weight"),
        dims: vec![cout, cin, k, k],
        role: ParamRole::ConvWeight {
            fan_in: cin * k * k,
        },
    });
    for (suffix, role) in [
        ("bn.weight", ParamRole::BnGamma),
        ("bn.bias", ParamRole::BnBeta),
        ("bn.running_mean", ParamRole::BnMean),
        ("bn.running_var", ParamRole::BnVar),
    ] {
        out.push(ParamSpec {
            name: format!("{prefix}{suffix}"),
            dims: vec![cout],
            role,
        });
    }
}

fn push_plain_conv(out: &mut Vec<ParamSpec>, prefix: &str, cin: usize, cout: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}weight"),
        dims: vec![cout, cin, 1, 1],
        role: ParamRole::ConvWeight { fan_in: cin },
    });
    out.push(ParamSpec {
        name: format!("{prefix}bias"),
        dims: vec![cout],
        role: ParamRole::ConvBias { fan_in: cin },
    });
}

/// Stored tensors of one layer.
pub fn layer_params(layer: &LayerSpec) -> Vec<ParamSpec> {
    let p = format!("layer{}.", layer.id);
    let cin: usize = layer.in_channels.iter().sum();
    let cout = layer.out_channels;
    let mut out = Vec::new();
    match &layer.kind {
        LayerKind::Conv { kernel, .. } => push_conv_block(&mut out, &p, cin, cout, *kernel),
        LayerKind::C3 { bottlenecks, .. } => {
            let hidden = cout / 2;
            push_conv_block(&mut out, &format!("{p}cv1."), cin, hidden, 1);
            push_conv_block(&mut out, &format!("{p}cv2."), cin, hidden, 1);
            push_conv_block(&mut out, &format!("{p}cv3."), 2 * hidden, cout, 1);
            for i in 0..*bottlenecks {
                push_conv_block(&mut out, &format!("{p}m.{i}.cv1."), hidden, hidden, 1);
                push_conv_block(&mut out, &format!("{p}m.{i}.cv2."), hidden, hidden, 3);
            }
        }
        LayerKind::Sppf { .. } => {
            let hidden = cin / 2;
            push_conv_block(&mut out, &format!("{p}cv1."), cin, hidden, 1);
            push_conv_block(&mut out, &format!("{p}cv2."), 4 * hidden, cout, 1);
        }
        LayerKind::Upsample { .. } | LayerKind::Concat => {}
        LayerKind::Detect {
            num_classes,
            reg_max,
            box_hidden,
            cls_hidden,
        } => {
            for (level, &x) in layer.in_channels.iter().enumerate() {
                let b = format!("{p}cv2.{level}.");
                push_conv_block(&mut out, &format!("{b}0."), x, *box_hidden, 3);
                push_conv_block(&mut out, &format!("{b}1."), *box_hidden, *box_hidden, 3);
                push_plain_conv(&mut out, &format!("{b}2."), *box_hidden, 4 * reg_max);
            }
            for (level, &x) in layer.in_channels.iter().enumerate() {
                let c = format!("{p}cv3.{level}.");
                push_conv_block(&mut out, &format!("{c}0."), x, *cls_hidden, 3);
                push_conv_block(&mut out, &format!("{c}1."), *cls_hidden, *cls_hidden, 3);
                push_plain_conv(&mut out, &format!("{c}2."), *cls_hidden, *num_classes);
            }
            out.push(ParamSpec {
                name: format!("{p}dfl.conv.weight"),
                dims: vec![1, *reg_max, 1, 1],
                role: ParamRole::DflProjection,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerParams {
    pub id: usize,
    pub name: String,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamTable {
    pub rows: Vec<LayerParams>,
    pub total: usize,
}

/// Trainable parameter count per layer (batch-norm running stats excluded).
pub fn param_count(graph: &ModelGraph) -> ParamTable {
    let rows: Vec<LayerParams> = graph
        .layers
        .iter()
        .map(|l| LayerParams {
            id: l.id,
            name: l.name.clone(),
            params: layer_params(l)
                .iter()
                .filter(|p| p.role.is_trainable_count())
                .map(ParamSpec::numel)
                .sum(),
        })
        .collect();
    let total = rows.iter().map(|r| r.params).sum();
    ParamTable { rows, total }
}

/// Output `(channels, height, width)` of a layer; Detect has three.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub id: usize,
    pub name: String,
    pub outputs: Vec<[usize; 3]>,
}

impl fmt::Display for LayerShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .outputs
            .iter()
            .map(|[c, h, w]| format!("{c}x{h}x{w}"))
            .collect();
        write!(f, "{}", parts.join(","))
    }
}

fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - kernel) / stride + 1
}

pub fn infer_shapes(
    graph: &ModelGraph,
    input_hw: (usize, usize),
) -> Result<Vec<LayerShape>, GraphError> {
    let (h, w) = input_hw;
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(GraphError::Indivisible { h, w });
    }
    let mut shapes: Vec<LayerShape> = Vec::with_capacity(graph.layers.len());
    for layer in &graph.layers {
        let src: Vec<[usize; 3]> = layer
            .inputs
            .iter()
            .map(|s| match s {
                Source::Image => [3, h, w],
                Source::Layer(j) => shapes[*j].outputs[0],
            })
            .collect();
        let [c0, h0, w0] = src[0];
        let outputs = match &layer.kind {
            LayerKind::Conv {
                kernel,
                stride,
                padding,
            } => vec![[
                layer.out_channels,
                conv_out(h0, *kernel, *stride, *padding),
                conv_out(w0, *kernel, *stride, *padding),
            ]],
            LayerKind::C3 { .. } | LayerKind::Sppf { .. } => vec![[layer.out_channels, h0, w0]],
            LayerKind::Upsample { factor } => vec![[c0, h0 * factor, w0 * factor]],
            LayerKind::Concat => {
                if src.iter().any(|s| s[1] != h0 || s[2] != w0) {
                    return Err(GraphError::Inconsistent {
                        layer: layer.id,
                        detail: format!("concat of mismatched maps {src:?}"),
                    });
                }
                vec![[src.iter().map(|s| s[0]).sum(), h0, w0]]
            }
            LayerKind::Detect { .. } => src
                .iter()
                .map(|&[_, sh, sw]| [layer.out_channels, sh, sw])
                .collect(),
        };
        shapes.push(LayerShape {
            id: layer.id,
            name: layer.name.clone(),
            outputs,
        });
    }
    Ok(shapes)
}

/// Multiply-accumulate count of one layer given its input spatial sizes.
fn layer_macs(layer: &LayerSpec, input_hw: &[(usize, usize)], out_hw: (usize, usize)) -> u64 {
    let conv_macs = |cin: usize, cout: usize, k: usize, hw: (usize, usize)| -> u64 {
        (cin * cout * k * k) as u64 * (hw.0 * hw.1) as u64
    };
    let cin: usize = layer.in_channels.iter().sum();
    let cout = layer.out_channels;
    match &layer.kind {
        LayerKind::Conv { kernel, .. } => conv_macs(cin, cout, *kernel, out_hw),
        LayerKind::C3 { bottlenecks, .. } => {
            let c = cout / 2;
            2 * conv_macs(cin, c, 1, out_hw)
                + conv_macs(2 * c, cout, 1, out_hw)
                + *bottlenecks as u64 * (conv_macs(c, c, 1, out_hw) + conv_macs(c, c, 3, out_hw))
        }
        LayerKind::Sppf { .. } => {
            let c = cin / 2;
            conv_macs(cin, c, 1, out_hw) + conv_macs(4 * c, cout, 1, out_hw)
        }
        LayerKind::Upsample { .. } | LayerKind::Concat => 0,
        LayerKind::Detect {
            num_classes,
            reg_max,
            box_hidden,
            cls_hidden,
        } => layer
            .in_channels
            .iter()
            .zip(input_hw)
            .map(|(&x, &hw)| {
                conv_macs(x, *box_hidden, 3, hw)
                    + conv_macs(*box_hidden, *box_hidden, 3, hw)
                    + conv_macs(*box_hidden, 4 * reg_max, 1, hw)
                    + conv_macs(x, *cls_hidden, 3, hw)
                    + conv_macs(*cls_hidden, *cls_hidden, 3, hw)
                    + conv_macs(*cls_hidden, *num_classes, 1, hw)
                    // DFL projection: reg_max -> 1 for each of the 4 sides.
                    + (4 * reg_max * hw.0 * hw.1) as u64
            })
            .sum(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsReport {
    /// FLOPs (2 x MACs) per layer, in the graph's order.
    pub per_layer: Vec<u64>,
    pub total_flops: u64,
}

impl FlopsReport {
    pub fn gflops(&self) -> f64 {
        self.total_flops as f64 / 1e9
    }
}

/// FLOPs counted as twice the multiply-accumulates of every convolution.
/// Batch norm is treated as folded and activations, pooling and
/// resampling are free.
pub fn estimate_flops(
    graph: &ModelGraph,
    input_hw: (usize, usize),
) -> Result<FlopsReport, GraphError> {
    let shapes = infer_shapes(graph, input_hw)?;
    let per_layer: Vec<u64> = graph
        .layers
        .iter()
        .map(|l| {
            let ins: Vec<(usize, usize)> = l
                .inputs
                .iter()
                .map(|s| match s {
                    Source::Image => input_hw,
                    Source::Layer(j) => (shapes[*j].outputs[0][1], shapes[*j].outputs[0][2]),
                })
                .collect();
            let [_, oh, ow] = shapes[l.id].outputs[0];
            2 * layer_macs(l, &ins, (oh, ow))
        })
        .collect();
    let total_flops = per_layer.iter().sum();
    Ok(FlopsReport {
        per_layer,
        total_flops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE_ONE: [(&str, usize); 25] = [
        ("Conv1", 5280),
        ("Conv2", 41664),
        ("C3-1", 65280),
        ("Conv3", 166272),
        ("C3-2", 444672),
        ("Conv4", 664320),
        ("C3-3", 2512896),
        ("Conv5", 2655744),
        ("C3-4", 4134912),
        ("SPPF", 1476864),
        ("Conv6", 295680),
        ("Upsample", 0),
        ("Concat", 0),
        ("C3-5", 1182720),
        ("Conv7", 74112),
        ("Upsample", 0),
        ("Concat", 0),
        ("C3-6", 296448),
        ("Conv8", 332160),
        ("Concat", 0),
        ("C3-7", 1035264),
        ("Conv9", 1327872),
        ("Concat", 0),
        ("C3-8", 4134912),
        ("Detect", 4220380),
    ];

    #[test]
    fn parameter_rows_match_table() {
        let g = build_yolov5mu(4).unwrap();
        let t = param_count(&g);
        assert_eq!(t.rows.len(), 25);
        for (row, (name, params)) in t.rows.iter().zip(TABLE_ONE) {
            assert_eq!(row.name, name);
            assert_eq!(row.params, params, "{name}");
        }
        assert_eq!(t.total, 25_067_452);
    }

    #[test]
    fn detect_inputs_and_hidden_widths() {
        let g = build_yolov5mu(4).unwrap();
        let d = g.detect_layer();
        assert_eq!(d.in_channels, vec![192, 384, 768]);
        assert_eq!(
            d.kind,
            LayerKind::Detect {
                num_classes: 4,
                reg_max: 16,
                box_hidden: 64,
                cls_hidden: 192
            }
        );
        assert_eq!(d.out_channels, 68);
    }

    #[test]
    fn class_count_changes_only_class_branch() {
        let four = param_count(&build_yolov5mu(4).unwrap());
        let one = param_count(&build_yolov5mu(1).unwrap());
        // Final class conv per level: cls_hidden * nc weights + nc biases.
        let delta = 3 * (192 + 1) * (4 - 1);
        assert_eq!(four.total - one.total, delta);
        for (a, b) in four.rows.iter().zip(&one.rows).take(24) {
            assert_eq!(a.params, b.params);
        }
        assert_eq!(build_yolov5mu(0), Err(GraphError::NoClasses));
    }

    #[test]
    fn shapes_at_640_and_320() {
        let g = build_yolov5mu(4).unwrap();
        let s = infer_shapes(&g, (640, 640)).unwrap();
        assert_eq!(s[0].outputs, vec![[48, 320, 320]]);
        assert_eq!(s[9].outputs, vec![[768, 20, 20]]);
        assert_eq!(
            s[24].outputs,
            vec![[68, 80, 80], [68, 40, 40], [68, 20, 20]]
        );
        let det_inputs: Vec<[usize; 3]> = [17, 20, 23].iter().map(|&i| s[i].outputs[0]).collect();
        assert_eq!(
            det_inputs,
            vec![[192, 80, 80], [384, 40, 40], [768, 20, 20]]
        );

        let s = infer_shapes(&g, (320, 320)).unwrap();
        let hw: Vec<(usize, usize)> = s[24].outputs.iter().map(|o| (o[1], o[2])).collect();
        assert_eq!(hw, vec![(40, 40), (20, 20), (10, 10)]);

        assert_eq!(
            infer_shapes(&g, (640, 600)),
            Err(GraphError::Indivisible { h: 640, w: 600 })
        );
    }

    #[test]
    fn flops_conventions() {
        let g = build_yolov5mu(4).unwrap();
        let f = estimate_flops(&g, (640, 640)).unwrap();
        assert_eq!(f.per_layer[0], 2 * 320 * 320 * 48 * 108);
        assert!((f.per_layer[0] as f64 / 1e9 - 1.062).abs() < 1e-3);
        let g = f.gflops();
        assert!((g - 64.0).abs() <= 6.4, "{g}");
        let quarter = estimate_flops(&build_yolov5mu(4).unwrap(), (320, 320)).unwrap();
        let ratio = quarter.total_flops as f64 / f.total_flops as f64;
        assert!((ratio - 0.25).abs() < 1e-6);
    }

    #[test]
    fn module_tree_count() {
        assert_eq!(build_yolov5mu(4).unwrap().module_count(), 339);
    }

    #[test]
    fn validation_catches_bad_edges() {
        let mut g = build_yolov5mu(2).unwrap();
        g.layers[3].inputs = vec![Source::Layer(5)];
        assert!(matches!(
            g.validate(),
            Err(GraphError::NotTopological { .. })
        ));
        let mut g = build_yolov5mu(2).unwrap();
        g.layers[12].inputs.pop();
        assert!(matches!(g.validate(), Err(GraphError::Arity { .. })));
    }

    #[test]
    fn manifest_names_are_unique() {
        let g = build_yolov5mu(4).unwrap();
        let m = g.param_manifest();
        let mut names: Vec<&str> = m.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), m.len());
    }
}
