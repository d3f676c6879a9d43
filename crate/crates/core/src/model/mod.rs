//! The YOLOv5mu network: graph description, weights and execution.

pub mod forward;
pub mod graph;
pub mod weights;

pub use forward::{forward, ForwardError, Network};
pub use graph::{
    build_yolov5mu, estimate_flops, infer_shapes, layer_params, param_count, FlopsReport,
    GraphError, LayerKind, LayerParams, LayerShape, LayerSpec, ModelGraph, ParamRole, ParamSpec,
    ParamTable, Source, REG_MAX, STRIDES,
};
pub use weights::{
    init_weights, load_weights, load_weights_for, save_weights, ParamTensor, WeightError,
    WeightStore,
};
