use std::cell::{Ref, RefCell};

use super::kernels::{self, ConvGeom, Tap};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One gathered pixel: `(sample, row, col)` in output resolution.
pub type Pixel = (usize, usize, usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    AbsDiffHalves(Var),
    GlobalAvgPool(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<u8>,
        probs: Vec<f64>,
    },
    Upsample {
        input: Var,
        taps_y: Vec<Tap>,
        taps_x: Vec<Tap>,
    },
    GatherUpsampled {
        input: Var,
        taps_y: Vec<Tap>,
        taps_x: Vec<Tap>,
        pixels: Vec<Pixel>,
    },
    SubRow {
        x: Var,
        row: Var,
    },
    MeanRows(Var),
    SumRows(Var),
    Square(Var),
    Sqrt(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    Select {
        input: Var,
        column: usize,
    },
    SoftmaxRows(Var),
    Sigmoid(Var),
    BceWithLogits {
        logits: Var,
        targets: Vec<u8>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Conv2d {
                input,
                kernel,
                bias,
                ..
            } => vec![*input, *kernel, *bias],
            Linear {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            SubRow { x, row } => vec![*x, *row],
            Add(a, b) | Mul(a, b) => vec![*a, *b],
            Relu(v) | AbsDiffHalves(v) | GlobalAvgPool(v) | MeanRows(v) | SumRows(v)
            | Square(v) | Sqrt(v) | Scale(v, _) | AddScalar(v) | Sum(v) | Mean(v)
            | SoftmaxRows(v) | Sigmoid(v) => vec![*v],
            BceWithLogits { logits, .. } => vec![*logits],
            SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Upsample { input, .. } | GatherUpsampled { input, .. } | Select { input, .. } => {
                vec![*input]
            }
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Define-by-run computation record.
///
/// Records are appended in execution order, so every input precedes its
/// consumer. A tape lives for one training step; build a fresh one per
/// step. Values are never mutated after being recorded; only the
/// accumulated gradients change.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an input or parameter.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Accumulated gradient of `v` after one or more [`Tape::backward`]
    /// calls. `None` when no gradient reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::from_parts(node.value.shape().to_vec(), g.clone()))
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    fn push_op(&self, value: Tensor, op: Op, context: &str) -> Result<Var> {
        value.check_finite(context)?;
        let rg = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|v| nodes[v.0].requires_grad)
        };
        Ok(self.push(value, op, rg))
    }

    // ---------------------------------------------------------------------
    // primitives
    // ---------------------------------------------------------------------

    /// 2-d cross-correlation: `input` N×Cin×H×W, `kernel` Cout×Cin×k×k,
    /// `bias` Cout.
    pub fn conv2d(
        &self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (geom, out) = {
            let x = self.value(input);
            let k = self.value(kernel);
            let b = self.value(bias);
            let [n, cin, h, w] = x.dims4()?;
            let [cout, kcin, kh, kw] = k.dims4()?;
            if stride == 0 {
                return Err(Error::Config("conv2d stride must be positive".into()));
            }
            if kh != kw {
                return Err(Error::Shape(format!("non-square kernel {kh}x{kw}")));
            }
            if kcin != cin {
                return Err(Error::Shape(format!(
                    "conv2d input has {cin} channels, kernel expects {kcin}"
                )));
            }
            if b.shape() != [cout] {
                return Err(Error::Shape(format!(
                    "conv2d bias shape {:?}, expected [{cout}]",
                    b.shape()
                )));
            }
            if kh > h + 2 * padding || kw > w + 2 * padding {
                return Err(Error::Shape(format!(
                    "kernel {kh} larger than padded input {h}x{w} (padding {padding})"
                )));
            }
            let geom = ConvGeom {
                batch: n,
                in_channels: cin,
                in_h: h,
                in_w: w,
                out_channels: cout,
                kernel: kh,
                stride,
                padding,
            };
            let out = kernels::conv2d_forward(&geom, x.data(), k.data(), b.data());
            (geom, out)
        };
        let shape = vec![geom.batch, geom.out_channels, geom.out_h(), geom.out_w()];
        self.push_op(
            Tensor::from_parts(shape, out),
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            "conv2d",
        )
    }

    pub fn relu(&self, input: Var) -> Result<Var> {
        let out = {
            let x = self.value(input);
            let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            Tensor::from_parts(x.shape().to_vec(), data)
        };
        self.push_op(out, Op::Relu(input), "relu")
    }

    /// Splits a `2N×…` batch into halves `a`, `b` and returns `|a − b|`.
    ///
    /// Both temporal streams go through the encoder as one stacked batch so
    /// they share the very same parameter records.
    pub fn abs_diff_halves(&self, input: Var) -> Result<Var> {
        let out = {
            let x = self.value(input);
            let shape = x.shape();
            if shape.is_empty() || shape[0] % 2 != 0 {
                return Err(Error::Shape(format!(
                    "abs_diff_halves needs an even leading dimension, got {shape:?}"
                )));
            }
            let half = x.len() / 2;
            let (a, b) = x.data().split_at(half);
            let data = a.iter().zip(b).map(|(p, q)| (p - q).abs()).collect();
            let mut s = shape.to_vec();
            s[0] /= 2;
            Tensor::from_parts(s, data)
        };
        self.push_op(out, Op::AbsDiffHalves(input), "abs_diff_halves")
    }

    /// Spatial mean: N×D×h×w → N×D.
    pub fn global_avg_pool(&self, input: Var) -> Result<Var> {
        let out = {
            let x = self.value(input);
            let [n, d, h, w] = x.dims4()?;
            if h == 0 || w == 0 {
                return Err(Error::Shape("global_avg_pool on empty spatial dims".into()));
            }
            let hw = h * w;
            let data = x
                .data()
                .chunks_exact(hw)
                .map(|p| p.iter().fold(0.0, |a, v| a + v) / hw as f64)
                .collect();
            Tensor::from_parts(vec![n, d], data)
        };
        self.push_op(out, Op::GlobalAvgPool(input), "global_avg_pool")
    }

    /// Affine map: N×D · D×K + K.
    pub fn linear(&self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = {
            let x = self.value(input);
            let wt = self.value(weight);
            let b = self.value(bias);
            let [n, d] = x.dims2()?;
            let [wd, k] = wt.dims2()?;
            if wd != d || b.shape() != [k] {
                return Err(Error::Shape(format!(
                    "linear: input {:?}, weight {:?}, bias {:?}",
                    x.shape(),
                    wt.shape(),
                    b.shape()
                )));
            }
            let (xd, wdata, bd) = (x.data(), wt.data(), b.data());
            let mut data = Vec::with_capacity(n * k);
            for i in 0..n {
                for j in 0..k {
                    let mut acc = 0.0;
                    for t in 0..d {
                        acc += xd[i * d + t] * wdata[t * k + j];
                    }
                    data.push(acc + bd[j]);
                }
            }
            Tensor::from_parts(vec![n, k], data)
        };
        self.push_op(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
            "linear",
        )
    }

    /// Mean over the batch of `−log softmax(logits)[label]`, computed with
    /// max subtraction.
    pub fn softmax_cross_entropy(&self, logits: Var, labels: &[u8]) -> Result<Var> {
        let (loss, probs) = {
            let z = self.value(logits);
            let [n, k] = z.dims2()?;
            if labels.len() != n {
                return Err(Error::Shape(format!(
                    "{} labels for a batch of {n}",
                    labels.len()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l as usize >= k) {
                return Err(Error::Config(format!("label {bad} outside 0..{k}")));
            }
            let mut probs = Vec::with_capacity(n * k);
            let mut total = 0.0;
            for (row, &label) in z.data().chunks_exact(k).zip(labels) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp = row.iter().fold(0.0, |a, v| a + (v - m).exp());
                let lse = m + sum_exp.ln();
                total += lse - row[label as usize];
                probs.extend(row.iter().map(|v| (v - lse).exp()));
            }
            (total / n as f64, probs)
        };
        self.push_op(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            "softmax_cross_entropy",
        )
    }

    /// Bilinear resize of an N×C×h×w tensor to N×C×out_h×out_w.
    pub fn upsample_bilinear(&self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (out, taps_y, taps_x) = {
            let x = self.value(input);
            let [n, c, h, w] = x.dims4()?;
            let data = kernels::upsample_planes(x.data(), h, w, out_h, out_w);
            (
                Tensor::from_parts(vec![n, c, out_h, out_w], data),
                kernels::bilinear_taps(h, out_h),
                kernels::bilinear_taps(w, out_w),
            )
        };
        self.push_op(
            out,
            Op::Upsample {
                input,
                taps_y,
                taps_x,
            },
            "upsample_bilinear",
        )
    }

    /// Feature vectors of `input` (N×D×h×w) bilinearly resized to
    /// `out_h×out_w`, read out at `pixels` only. Returns `len(pixels)×D`.
    ///
    /// Numerically identical to [`Tape::upsample_bilinear`] followed by a
    /// gather, without materialising the full-resolution tensor.
    pub fn gather_upsampled(
        &self,
        input: Var,
        out_h: usize,
        out_w: usize,
        pixels: &[Pixel],
    ) -> Result<Var> {
        let (out, taps_y, taps_x) = {
            let x = self.value(input);
            let [n, d, h, w] = x.dims4()?;
            let taps_y = kernels::bilinear_taps(h, out_h);
            let taps_x = kernels::bilinear_taps(w, out_w);
            let mut data = Vec::with_capacity(pixels.len() * d);
            for &(s, py, px) in pixels {
                if s >= n || py >= out_h || px >= out_w {
                    return Err(Error::Shape(format!(
                        "pixel ({s},{py},{px}) outside {n}x{out_h}x{out_w}"
                    )));
                }
                for ch in 0..d {
                    let plane = &x.data()[(s * d + ch) * h * w..][..h * w];
                    data.push(kernels::bilinear_at(plane, w, taps_y[py], taps_x[px]));
                }
            }
            (Tensor::from_parts(vec![pixels.len(), d], data), taps_y, taps_x)
        };
        self.push_op(
            out,
            Op::GatherUpsampled {
                input,
                taps_y,
                taps_x,
                pixels: pixels.to_vec(),
            },
            "gather_upsampled",
        )
    }

    /// `x` (K×D) minus the broadcast row `row` (D).
    pub fn sub_row(&self, x: Var, row: Var) -> Result<Var> {
        let out = {
            let xv = self.value(x);
            let r = self.value(row);
            let [k, d] = xv.dims2()?;
            if r.shape() != [d] {
                return Err(Error::Shape(format!(
                    "sub_row: rows of width {d}, broadcast row {:?}",
                    r.shape()
                )));
            }
            let mut data = Vec::with_capacity(k * d);
            for chunk in xv.data().chunks_exact(d.max(1)).take(k) {
                data.extend(chunk.iter().zip(r.data()).map(|(a, b)| a - b));
            }
            Tensor::from_parts(vec![k, d], data)
        };
        self.push_op(out, Op::SubRow { x, row }, "sub_row")
    }

    /// Column means: K×D → D.
    pub fn mean_rows(&self, x: Var) -> Result<Var> {
        let out = {
            let xv = self.value(x);
            let [k, d] = xv.dims2()?;
            if k == 0 {
                return Err(Error::Numeric("mean_rows over zero rows".into()));
            }
            let mut acc = vec![0.0; d];
            for row in xv.data().chunks_exact(d.max(1)).take(k) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= k as f64);
            Tensor::from_parts(vec![d], acc)
        };
        self.push_op(out, Op::MeanRows(x), "mean_rows")
    }

    /// Row sums: K×D → K.
    pub fn sum_rows(&self, x: Var) -> Result<Var> {
        let out = {
            let xv = self.value(x);
            let [k, d] = xv.dims2()?;
            let data = if d == 0 {
                vec![0.0; k]
            } else {
                xv.data()
                    .chunks_exact(d)
                    .map(|r| r.iter().fold(0.0, |a, v| a + v))
                    .collect()
            };
            Tensor::from_parts(vec![k], data)
        };
        self.push_op(out, Op::SumRows(x), "sum_rows")
    }

    pub fn square(&self, x: Var) -> Result<Var> {
        self.map(x, |v| v * v, Op::Square(x), "square")
    }

    /// Elementwise square root; the derivative at exactly zero is taken as 0.
    pub fn sqrt(&self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v < 0.0) {
            return Err(Error::Numeric("sqrt of a negative value".into()));
        }
        self.map(x, f64::sqrt, Op::Sqrt(x), "sqrt")
    }

    pub fn scale(&self, x: Var, factor: f64) -> Result<Var> {
        self.map(x, |v| v * factor, Op::Scale(x, factor), "scale")
    }

    pub fn add_scalar(&self, x: Var, c: f64) -> Result<Var> {
        self.map(x, |v| v + c, Op::AddScalar(x), "add_scalar")
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(0.0, |a, v| a + v);
        self.push_op(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let s = {
            let v = self.value(x);
            if v.is_empty() {
                return Err(Error::Numeric("mean of an empty tensor".into()));
            }
            v.data().iter().fold(0.0, |a, e| a + e) / v.len() as f64
        };
        self.push_op(Tensor::scalar(s), Op::Mean(x), "mean")
    }

    /// Column `column` of an N×K tensor, as a length-N vector.
    pub fn select_column(&self, input: Var, column: usize) -> Result<Var> {
        let out = {
            let x = self.value(input);
            let [n, k] = x.dims2()?;
            if column >= k {
                return Err(Error::Shape(format!("column {column} of an {n}x{k} tensor")));
            }
            Tensor::from_parts(vec![n], (0..n).map(|i| x.data()[i * k + column]).collect())
        };
        self.push_op(out, Op::Select { input, column }, "select_column")
    }

    /// Row-wise softmax of an N×K tensor, max-subtracted.
    pub fn softmax_rows(&self, x: Var) -> Result<Var> {
        let out = {
            let v = self.value(x);
            let [n, k] = v.dims2()?;
            let mut data = Vec::with_capacity(n * k);
            for row in v.data().chunks_exact(k.max(1)).take(n) {
                let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let e: Vec<f64> = row.iter().map(|&z| (z - m).exp()).collect();
                let z = e.iter().fold(0.0, |a, b| a + b);
                data.extend(e.iter().map(|v| v / z));
            }
            Tensor::from_parts(vec![n, k], data)
        };
        self.push_op(out, Op::SoftmaxRows(x), "softmax_rows")
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.map(x, sigmoid, Op::Sigmoid(x), "sigmoid")
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and 0/1 targets,
    /// in the overflow-safe form `max(z,0) - z*t + ln(1 + e^-|z|)`.
    pub fn bce_with_logits(&self, logits: Var, targets: &[u8]) -> Result<Var> {
        let loss = {
            let z = self.value(logits);
            if z.len() != targets.len() || z.is_empty() {
                return Err(Error::Shape(format!(
                    "bce_with_logits: {} logits, {} targets",
                    z.len(),
                    targets.len()
                )));
            }
            if let Some(t) = targets.iter().find(|&&t| t > 1) {
                return Err(Error::Config(format!("pixel label {t} is not 0 or 1")));
            }
            let total = z.data().iter().zip(targets).fold(0.0, |acc, (&zi, &t)| {
                acc + zi.max(0.0) - zi * t as f64 + (-zi.abs()).exp().ln_1p()
            });
            total / z.len() as f64
        };
        self.push_op(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            "bce_with_logits",
        )
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64, op: Op, ctx: &str) -> Result<Var> {
        let out = {
            let v = self.value(x);
            Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&e| f(e)).collect())
        };
        self.push_op(out, op, ctx)
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, ctx: &str) -> Result<Var> {
        let out = {
            let (x, y) = (self.value(a), self.value(b));
            if x.shape() != y.shape() {
                return Err(Error::Shape(format!(
                    "{ctx}: {:?} vs {:?}",
                    x.shape(),
                    y.shape()
                )));
            }
            let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
            Tensor::from_parts(x.shape().to_vec(), data)
        };
        self.push_op(out, op, ctx)
    }

    // ---------------------------------------------------------------------
    // reverse sweep
    // ---------------------------------------------------------------------

    /// Back-propagates from the scalar `root`, adding into the stored
    /// gradient of every record that requires one. Calling it twice without
    /// [`Tape::zero_grad`] doubles the stored gradients.
    pub fn backward(&self, root: Var) -> Result<()> {
        let grads = self.sweep(root, 0)?;
        let mut nodes = self.nodes.borrow_mut();
        for (node, g) in nodes.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            if !node.requires_grad {
                continue;
            }
            match node.grad.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    /// Gradients of the scalar `root` with respect to `wrt`, without
    /// touching the stored gradients. Unreached inputs get zeros.
    pub fn grad_of(&self, root: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let stop = wrt.iter().map(|v| v.0).min().unwrap_or(0);
        let mut grads = self.sweep(root, stop)?;
        let nodes = self.nodes.borrow();
        Ok(wrt
            .iter()
            .map(|v| {
                let shape = nodes[v.0].value.shape().to_vec();
                match grads[v.0].take() {
                    Some(g) => Tensor::from_parts(shape, g),
                    None => Tensor::zeros(&shape),
                }
            })
            .collect())
    }

    /// One reverse pass over records `stop..=root`, visiting each once.
    fn sweep(&self, root: Var, stop: usize) -> Result<Vec<Option<Vec<f64>>>> {
        let nodes = self.nodes.borrow();
        if nodes[root.0].value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward root must be scalar, got shape {:?}",
                nodes[root.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for id in (stop..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                propagate(&nodes, node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(grads)
    }
}

/// Adds `delta` into the gradient slot of `v`, allocating zeros on first use.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            kernel,
            bias,
            geom,
        } => {
            let want_input = nodes[input.0].requires_grad;
            let (gi, gk, gb) =
                kernels::conv2d_backward(geom, val(*input).data(), val(*kernel).data(), g, want_input);
            if let (Some(gi), Some(s)) = (gi, slot(nodes, grads, *input)) {
                add_into(s, &gi);
            }
            if let Some(s) = slot(nodes, grads, *kernel) {
                add_into(s, &gk);
            }
            if let Some(s) = slot(nodes, grads, *bias) {
                add_into(s, &gb);
            }
        }
        Op::Relu(x) => {
            let xv = val(*x).data();
            if let Some(s) = slot(nodes, grads, *x) {
                for ((a, gv), xi) in s.iter_mut().zip(g).zip(xv) {
                    if *xi > 0.0 {
                        *a += gv;
                    }
                }
            }
        }
        Op::AbsDiffHalves(x) => {
            let xv = val(*x).data();
            let half = xv.len() / 2;
            if let Some(s) = slot(nodes, grads, *x) {
                for i in 0..half {
                    let d = xv[i] - xv[half + i];
                    let sign = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    s[i] += sign * g[i];
                    s[half + i] -= sign * g[i];
                }
            }
        }
        Op::GlobalAvgPool(x) => {
            let [_, _, h, w] = val(*x).dims4().expect("recorded as 4-d");
            let hw = h * w;
            if let Some(s) = slot(nodes, grads, *x) {
                for (plane, gv) in s.chunks_exact_mut(hw).zip(g) {
                    let share = gv / hw as f64;
                    plane.iter_mut().for_each(|a| *a += share);
                }
            }
        }
        Op::Linear {
            input,
            weight,
            bias,
        } => {
            let x = val(*input);
            let wt = val(*weight);
            let [n, d] = x.dims2().expect("2-d");
            let k = wt.shape()[1];
            if let Some(s) = slot(nodes, grads, *input) {
                for i in 0..n {
                    for t in 0..d {
                        let mut acc = 0.0;
                        for j in 0..k {
                            acc += g[i * k + j] * wt.data()[t * k + j];
                        }
                        s[i * d + t] += acc;
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *weight) {
                for t in 0..d {
                    for j in 0..k {
                        let mut acc = 0.0;
                        for i in 0..n {
                            acc += x.data()[i * d + t] * g[i * k + j];
                        }
                        s[t * k + j] += acc;
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *bias) {
                for j in 0..k {
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += g[i * k + j];
                    }
                    s[j] += acc;
                }
            }
        }
        Op::SoftmaxCrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let n = labels.len();
            let k = probs.len() / n.max(1);
            let scale = g[0] / n as f64;
            if let Some(s) = slot(nodes, grads, *logits) {
                for (i, &l) in labels.iter().enumerate() {
                    for j in 0..k {
                        let target = if j == l as usize { 1.0 } else { 0.0 };
                        s[i * k + j] += (probs[i * k + j] - target) * scale;
                    }
                }
            }
        }
        Op::Upsample {
            input,
            taps_y,
            taps_x,
        } => {
            let [_, _, h, w] = val(*input).dims4().expect("4-d");
            let (oh, ow) = (taps_y.len(), taps_x.len());
            if let Some(s) = slot(nodes, grads, *input) {
                for (plane, gp) in s.chunks_exact_mut(h * w).zip(g.chunks_exact(oh * ow)) {
                    for (yi, ty) in taps_y.iter().enumerate() {
                        for (xi, tx) in taps_x.iter().enumerate() {
                            kernels::bilinear_scatter(plane, w, *ty, *tx, gp[yi * ow + xi]);
                        }
                    }
                }
            }
        }
        Op::GatherUpsampled {
            input,
            taps_y,
            taps_x,
            pixels,
        } => {
            let [_, d, h, w] = val(*input).dims4().expect("4-d");
            if let Some(s) = slot(nodes, grads, *input) {
                for (row, &(sample, py, px)) in pixels.iter().enumerate() {
                    for ch in 0..d {
                        let plane = &mut s[(sample * d + ch) * h * w..][..h * w];
                        kernels::bilinear_scatter(plane, w, taps_y[py], taps_x[px], g[row * d + ch]);
                    }
                }
            }
        }
        Op::SubRow { x, row } => {
            let d = val(*row).len();
            if let Some(s) = slot(nodes, grads, *x) {
                add_into(s, g);
            }
            if let Some(s) = slot(nodes, grads, *row) {
                if d > 0 {
                    for chunk in g.chunks_exact(d) {
                        for (a, v) in s.iter_mut().zip(chunk) {
                            *a -= v;
                        }
                    }
                }
            }
        }
        Op::MeanRows(x) => {
            let [k, d] = val(*x).dims2().expect("2-d");
            if let Some(s) = slot(nodes, grads, *x) {
                for r in 0..k {
                    for c in 0..d {
                        s[r * d + c] += g[c] / k as f64;
                    }
                }
            }
        }
        Op::SumRows(x) => {
            let [_, d] = val(*x).dims2().expect("2-d");
            if let Some(s) = slot(nodes, grads, *x) {
                if d > 0 {
                    for (chunk, gv) in s.chunks_exact_mut(d).zip(g) {
                        chunk.iter_mut().for_each(|a| *a += gv);
                    }
                }
            }
        }
        Op::Square(x) => {
            let xv = val(*x).data();
            if let Some(s) = slot(nodes, grads, *x) {
                for ((a, gv), xi) in s.iter_mut().zip(g).zip(xv) {
                    *a += 2.0 * xi * gv;
                }
            }
        }
        Op::Sqrt(x) => {
            let out = node.value.data();
            if let Some(s) = slot(nodes, grads, *x) {
                for ((a, gv), yi) in s.iter_mut().zip(g).zip(out) {
                    if *yi > 0.0 {
                        *a += gv / (2.0 * yi);
                    }
                }
            }
        }
        Op::Add(a, b) => {
            if let Some(s) = slot(nodes, grads, *a) {
                add_into(s, g);
            }
            if let Some(s) = slot(nodes, grads, *b) {
                add_into(s, g);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data().to_vec(), val(*b).data().to_vec());
            if let Some(s) = slot(nodes, grads, *a) {
                for ((acc, gv), y) in s.iter_mut().zip(g).zip(&bv) {
                    *acc += gv * y;
                }
            }
            if let Some(s) = slot(nodes, grads, *b) {
                for ((acc, gv), x) in s.iter_mut().zip(g).zip(&av) {
                    *acc += gv * x;
                }
            }
        }
        Op::Scale(x, f) => {
            if let Some(s) = slot(nodes, grads, *x) {
                s.iter_mut().zip(g).for_each(|(a, gv)| *a += gv * f);
            }
        }
        Op::AddScalar(x) => {
            if let Some(s) = slot(nodes, grads, *x) {
                add_into(s, g);
            }
        }
        Op::Sum(x) => {
            if let Some(s) = slot(nodes, grads, *x) {
                s.iter_mut().for_each(|a| *a += g[0]);
            }
        }
        Op::Mean(x) => {
            let n = val(*x).len() as f64;
            if let Some(s) = slot(nodes, grads, *x) {
                s.iter_mut().for_each(|a| *a += g[0] / n);
            }
        }
        Op::Select { input, column } => {
            let k = val(*input).shape()[1];
            if let Some(s) = slot(nodes, grads, *input) {
                for (i, gv) in g.iter().enumerate() {
                    s[i * k + column] += gv;
                }
            }
        }
        Op::SoftmaxRows(x) => {
            let k = node.value.shape()[1];
            let p = node.value.data();
            if let Some(s) = slot(nodes, grads, *x) {
                for (r, (pr, gr)) in p.chunks_exact(k).zip(g.chunks_exact(k)).enumerate() {
                    let dot = pr.iter().zip(gr).fold(0.0, |a, (pi, gi)| a + pi * gi);
                    for j in 0..k {
                        s[r * k + j] += pr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            let y = node.value.data();
            if let Some(s) = slot(nodes, grads, *x) {
                for ((a, gv), yi) in s.iter_mut().zip(g).zip(y) {
                    *a += gv * yi * (1.0 - yi);
                }
            }
        }
        Op::BceWithLogits { logits, targets } => {
            let z = val(*logits).data();
            let scale = g[0] / z.len() as f64;
            if let Some(s) = slot(nodes, grads, *logits) {
                for ((a, zi), t) in s.iter_mut().zip(z).zip(targets) {
                    *a += (sigmoid(*zi) - *t as f64) * scale;
                }
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn add_into(acc: &mut [f64], delta: &[f64]) {
    acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d);
}
