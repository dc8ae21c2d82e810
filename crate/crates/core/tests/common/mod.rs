#![allow(dead_code)]

use advcp::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values in `[lo, hi]` with random sign, kept away from zero so ReLU,
/// `abs` and `sqrt` kinks stay further than the finite-difference step.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `|a − n| / max(1, |a|, |n|)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

/// Largest relative error between reverse-mode gradients of the scalar
/// `build(inputs)` and central differences with step [`FD_EPS`].
pub fn gradient_error(inputs: &[Tensor], build: &dyn Fn(&Tape, &[Var]) -> Var) -> f64 {
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let root = build(&tape, &leaves);
    let grads = tape.grad_of(root, &leaves).unwrap();

    let eval = |inputs: &[Tensor]| -> f64 {
        let t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let r = build(&t, &vs);
        let v = t.value(r).item().unwrap();
        v
    };
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += FD_EPS;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= FD_EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(grads[i].data()[e], numeric));
        }
    }
    worst
}

/// Reduces any tensor to a scalar with fixed random weights so every output
/// element contributes a distinct gradient.
pub fn weighted_sum(tape: &Tape, x: Var, seed: u64) -> Var {
    let shape = tape.shape(x);
    let mut r = rng(seed);
    let w = tape.constant(random_tensor(&mut r, &shape, -1.0, 1.0));
    let prod = tape.mul(x, w).unwrap();
    tape.sum(prod).unwrap()
}

/// Half-pixel bilinear resize of one plane, written out from the textbook
/// definition (source coordinate `(o + 0.5)·in/out − 0.5`, clamped).
pub fn bilinear_oracle(plane: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
        (i0, i1, frac)
    };
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        let (y0, y1, fy) = coord(y, h, oh);
        for x in 0..ow {
            let (x0, x1, fx) = coord(x, w, ow);
            let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
            let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
            out[y * ow + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// Nested-loop class map: `ReLU(Σ_j F[n,j,y,x]·w[j])` at feature
/// resolution, then resized. Returns N×2×H×W, unnormalized.
pub fn cam_oracle(
    features: &Tensor,
    weights: &dyn Fn(usize, usize) -> Vec<f64>,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let s = features.shape();
    let (n, d, h, w) = (s[0], s[1], s[2], s[3]);
    let f = features.data();
    let mut out = Vec::new();
    for i in 0..n {
        for k in 0..2 {
            let wk = weights(i, k);
            let mut raw = vec![0.0; h * w];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += f[((i * d + j) * h + y) * w + x] * wk[j];
                    }
                    raw[y * w + x] = if acc > 0.0 { acc } else { 0.0 };
                }
            }
            out.extend(bilinear_oracle(&raw, h, w, oh, ow));
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
