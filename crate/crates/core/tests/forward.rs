use std::time::Instant;

use fallwatch_core::model::{build_yolov5mu, init_weights, Network, ParamRole, WeightStore};
use fallwatch_core::Tensor;

fn ramp_image(h: usize, w: usize) -> Tensor {
    Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| {
        ((x * 7 + y * 3 + c * 11) % 255) as f32 / 255.0
    })
    .unwrap()
}

#[test]
fn full_size_maps_and_repeatability() {
    let graph = build_yolov5mu(4).unwrap();
    let store = init_weights(&graph, 7);
    let net = Network::new(&graph, &store).unwrap();
    let image = ramp_image(640, 640);

    let start = Instant::now();
    let maps = net.forward(&image).unwrap();
    eprintln!("640x640 forward: {:.1?}", start.elapsed());

    let shapes: Vec<[usize; 4]> = maps.iter().map(|m| m.shape()).collect();
    assert_eq!(
        shapes,
        vec![[1, 68, 80, 80], [1, 68, 40, 40], [1, 68, 20, 20]]
    );
    assert!(maps.iter().all(|m| m.data().iter().all(|v| v.is_finite())));

    let again = net.forward(&image).unwrap();
    for (a, b) in maps.iter().zip(&again) {
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn zero_network_emits_bias() {
    let graph = build_yolov5mu(4).unwrap();
    let mut store = init_weights(&graph, 3);
    for spec in graph.param_manifest() {
        let is_head_bias = spec.name.ends_with(".2.bias");
        let t = store.get_mut(&spec.name).unwrap();
        match spec.role {
            ParamRole::ConvWeight { .. } | ParamRole::BnGamma => t.data.fill(0.0),
            ParamRole::ConvBias { .. } if !is_head_bias => t.data.fill(0.0),
            _ => {}
        }
    }
    let net = Network::new(&graph, &store).unwrap();
    let maps = net.forward(&ramp_image(64, 96)).unwrap();
    for (level, map) in maps.iter().enumerate() {
        let bias = &store
            .get(&format!("layer24.cv3.{level}.2.bias"))
            .unwrap()
            .data;
        let box_bias = &store
            .get(&format!("layer24.cv2.{level}.2.bias"))
            .unwrap()
            .data;
        for c in 0..map.channels() {
            let want = if c < 64 { box_bias[c] } else { bias[c - 64] };
            assert!(
                map.plane(0, c).iter().all(|&v| v == want),
                "level {level} channel {c}"
            );
        }
    }
}

/// Keeps only the center tap of every kernel (tap 2 of the 6-wide stem),
/// so each stride-32 cell sees one input pixel through the convolutions.
fn center_tap_store(graph: &fallwatch_core::model::ModelGraph, seed: u64) -> WeightStore {
    let mut store = init_weights(graph, seed);
    for (_, t) in store.iter_mut() {
        if t.dims.len() != 4 || t.dims[2] == 1 {
            continue;
        }
        let k = t.dims[2];
        let keep = if k == 6 { 2 } else { k / 2 };
        let per = k * k;
        for (i, v) in t.data.iter_mut().enumerate() {
            let tap = i % per;
            if tap != keep * k + keep {
                *v = 0.0;
            }
        }
    }
    // Zero the head biases so a blank image maps to a blank output.
    for (name, t) in store.iter_mut() {
        if name.ends_with(".bias") {
            t.data.fill(0.0);
        }
    }
    store
}

#[test]
fn stride_shift_moves_response_one_cell() {
    let graph = build_yolov5mu(4).unwrap();
    let store = center_tap_store(&graph, 11);
    let net = Network::new(&graph, &store).unwrap();
    let spot = |x: usize, y: usize| {
        Tensor::from_fn([1, 3, 512, 512], |[_, c, yy, xx]| {
            if (xx, yy) == (x, y) {
                [0.9, -0.6, 0.4][c]
            } else {
                0.0
            }
        })
        .unwrap()
    };
    let a = net.forward(&spot(224, 224)).unwrap().pop().unwrap();
    let b = net.forward(&spot(256, 224)).unwrap().pop().unwrap();
    assert_eq!(a.shape(), [1, 68, 16, 16]);

    let mut nonzero = 0;
    for c in 0..a.channels() {
        for y in 1..15 {
            for x in 1..14 {
                let va = a.get([0, c, y, x]);
                assert_eq!(
                    va.to_bits(),
                    b.get([0, c, y, x + 1]).to_bits(),
                    "c{c} y{y} x{x}"
                );
                nonzero += usize::from(va != 0.0);
            }
        }
    }
    assert!(nonzero > 0, "response vanished");
}
