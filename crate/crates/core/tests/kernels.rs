//! Tensor kernels against direct per-element evaluations of their definitions.

use fallwatch_core::tensor::{conv2d, max_pool2d, softmax};
use fallwatch_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: usize = 150;

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], scale: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale)).unwrap()
}

fn conv_oracle(x: &Tensor, w: &Tensor, bias: Option<&[f32]>, s: usize, p: usize) -> Vec<f32> {
    let [n, ic, h, wd] = x.shape();
    let [oc, _, kh, kw] = w.shape();
    let oh = (h + 2 * p - kh) / s + 1;
    let ow = (wd + 2 * p - kw) / s + 1;
    let mut out = Vec::new();
    for b in 0..n {
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut sum = 0f64;
                    for c in 0..ic {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.get([b, c, iy as usize, ix as usize]) as f64;
                                sum += w.get([o, c, ky, kx]) as f64 * xv;
                            }
                        }
                    }
                    if let Some(bs) = bias {
                        sum += bs[o] as f64;
                    }
                    out.push(sum as f32);
                }
            }
        }
    }
    out
}

fn pool_oracle(x: &Tensor, k: usize, s: usize, p: usize) -> Vec<f32> {
    let [n, c, h, w] = x.shape();
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (w + 2 * p - k) / s + 1;
    let mut out = Vec::new();
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f32::NEG_INFINITY;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            let ix = (ox * s + kx) as isize - p as isize;
                            if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                                m = m.max(x.get([b, ch, iy as usize, ix as usize]));
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    out
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn conv2d_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    for case in 0..CASES {
        let k: usize = rng.gen_range(1..=6);
        let s = rng.gen_range(1..=3);
        let p = rng.gen_range(0..=k / 2 + 1);
        let h = rng.gen_range(k.saturating_sub(2 * p).max(1)..=11);
        let w = rng.gen_range(k.saturating_sub(2 * p).max(1)..=11);
        let shape = [rng.gen_range(1..=2), rng.gen_range(1..=5), h, w];
        let oc = rng.gen_range(1..=11);
        let x = random_tensor(&mut rng, shape, 2.0);
        let wt = random_tensor(&mut rng, [oc, shape[1], k, k], 1.0);
        let bias: Option<Vec<f32>> = rng
            .gen_bool(0.5)
            .then(|| (0..oc).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let got = conv2d(&x, &wt, bias.as_deref(), s, p).unwrap();
        let want = conv_oracle(&x, &wt, bias.as_deref(), s, p);
        assert_eq!(
            bits(got.data()),
            bits(&want),
            "case {case}: k{k} s{s} p{p} {shape:?}"
        );
    }
}

#[test]
fn conv2d_fixed_small_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    for _ in 0..CASES {
        let x = random_tensor(&mut rng, [1, 2, 7, 7], 3.0);
        let w = random_tensor(&mut rng, [3, 2, 3, 3], 1.0);
        let got = conv2d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(bits(got.data()), bits(&conv_oracle(&x, &w, None, 1, 1)));
    }
}

#[test]
fn max_pool_matches_window_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0);
    for case in 0..CASES {
        let k = rng.gen_range(1..=5);
        let s = rng.gen_range(1..=3);
        let p = rng.gen_range(0..=k / 2);
        let h = rng.gen_range(k.max(1)..=12);
        let w = rng.gen_range(k.max(1)..=12);
        let c = rng.gen_range(1..=3);
        let x = random_tensor(&mut rng, [1, c, h, w], 5.0);
        let got = max_pool2d(&x, k, s, p).unwrap();
        assert_eq!(
            bits(got.data()),
            bits(&pool_oracle(&x, k, s, p)),
            "case {case}"
        );
    }
}

#[test]
fn softmax_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x50);
    for case in 0..CASES {
        let shape = [
            rng.gen_range(1..=3),
            rng.gen_range(1..=17),
            rng.gen_range(1..=4),
            rng.gen_range(1..=4),
        ];
        let axis = rng.gen_range(0..4);
        let x = random_tensor(&mut rng, shape, 20.0);
        let got = softmax(&x, axis).unwrap();
        let mut want = vec![0f32; x.len()];
        let strides = [
            shape[1] * shape[2] * shape[3],
            shape[2] * shape[3],
            shape[3],
            1,
        ];
        for (i, slot) in want.iter_mut().enumerate() {
            let pos = (i / strides[axis]) % shape[axis];
            let base = i - pos * strides[axis];
            let lane: Vec<f64> = (0..shape[axis])
                .map(|k| x.data()[base + k * strides[axis]] as f64)
                .collect();
            let m = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in &lane {
                total += (v - m).exp();
            }
            *slot = ((lane[pos] - m).exp() / total) as f32;
        }
        assert_eq!(bits(got.data()), bits(&want), "case {case} axis {axis}");
    }
}
