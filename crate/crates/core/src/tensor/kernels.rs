//! Raw NCHW loops behind the tape primitives.
//!
//! Convolutions go through an im2col matrix. Every output element is still
//! reduced in the order a textbook nested loop would use (input channel,
//! kernel row, kernel column), accumulated from zero with the bias added
//! last.

/// Static geometry of one 2-d cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Output index range `[lo, hi)` whose input coordinate
    /// `o * stride + k - padding` lands inside `[0, extent)`.
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let k = k as isize;
        // smallest o with o*s + k - p >= 0
        let lo = ((p - k).max(0) + s - 1) / s;
        // largest o with o*s + k - p <= extent - 1
        let hi_num = extent as isize - 1 + p - k;
        let hi = if hi_num < 0 { 0 } else { hi_num / s + 1 };
        (lo.max(0) as usize, (hi as usize).min(out).max(lo.max(0) as usize))
    }
}

pub fn conv2d_forward(g: &ConvGeom, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let plane = g.out_h() * g.out_w();
    let in_len = g.in_channels * g.in_h * g.in_w;
    let k_len = g.in_channels * g.kernel * g.kernel;
    let mut out = vec![0.0; g.batch * g.out_channels * plane];
    let mut cols = vec![0.0; k_len * plane];
    for n in 0..g.batch {
        im2col(g, &input[n * in_len..][..in_len], &mut cols);
        let dst = &mut out[n * g.out_channels * plane..][..g.out_channels * plane];
        gemm_rows(kernel, &cols, dst, g.out_channels, k_len, plane);
        for (oc, row) in dst.chunks_exact_mut(plane).enumerate() {
            let b = bias[oc];
            for o in row {
                *o += b;
            }
        }
    }
    out
}

/// Unrolls one sample into a `(Cin·k·k) × (OH·OW)` matrix; row index is
/// `(ic, kh, kw)`, so a row-by-row reduction matches the nested loop order.
fn im2col(g: &ConvGeom, src: &[f64], cols: &mut [f64]) {
    let (oh_n, ow_n) = (g.out_h(), g.out_w());
    let plane = oh_n * ow_n;
    let in_plane = g.in_h * g.in_w;
    let mut row = 0;
    for ic in 0..g.in_channels {
        let chan = &src[ic * in_plane..][..in_plane];
        for kh in 0..g.kernel {
            let (oh_lo, oh_hi) = g.valid_range(kh, g.in_h, oh_n);
            for kw in 0..g.kernel {
                let (ow_lo, ow_hi) = g.valid_range(kw, g.in_w, ow_n);
                let dst = &mut cols[row * plane..][..plane];
                dst.fill(0.0);
                for oh in oh_lo..oh_hi {
                    let ih = oh * g.stride + kh - g.padding;
                    let srow = &chan[ih * g.in_w..][..g.in_w];
                    let drow = &mut dst[oh * ow_n..][..ow_n];
                    for ow in ow_lo..ow_hi {
                        drow[ow] = srow[ow * g.stride + kw - g.padding];
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adds `cols` rows back onto the image they were unrolled from.
fn col2im(g: &ConvGeom, cols: &[f64], dst: &mut [f64]) {
    let (oh_n, ow_n) = (g.out_h(), g.out_w());
    let plane = oh_n * ow_n;
    let in_plane = g.in_h * g.in_w;
    let mut row = 0;
    for ic in 0..g.in_channels {
        let chan = &mut dst[ic * in_plane..][..in_plane];
        for kh in 0..g.kernel {
            let (oh_lo, oh_hi) = g.valid_range(kh, g.in_h, oh_n);
            for kw in 0..g.kernel {
                let (ow_lo, ow_hi) = g.valid_range(kw, g.in_w, ow_n);
                let src = &cols[row * plane..][..plane];
                for oh in oh_lo..oh_hi {
                    let ih = oh * g.stride + kh - g.padding;
                    let srow = &src[oh * ow_n..][..ow_n];
                    let drow = &mut chan[ih * g.in_w..][..g.in_w];
                    for ow in ow_lo..ow_hi {
                        drow[ow * g.stride + kw - g.padding] += srow[ow];
                    }
                }
                row += 1;
            }
        }
    }
}

/// `dst[r, c] += Σ_k a[r, k] · b[k, c]`, each sum taken over ascending `k`
/// from zero before it is added to `dst`. Tiles of 4×8 outputs stay in
/// registers across the `k` loop.
fn gemm_rows(a: &[f64], b: &[f64], dst: &mut [f64], rows: usize, inner: usize, cols: usize) {
    const TR: usize = 4;
    const TC: usize = 8;
    let mut r = 0;
    while r < rows {
        let tr = TR.min(rows - r);
        let mut c = 0;
        while c < cols {
            let tc = TC.min(cols - c);
            let mut acc = [[0.0f64; TC]; TR];
            if tr == TR && tc == TC {
                for k in 0..inner {
                    let bk: &[f64; TC] = b[k * cols + c..][..TC].try_into().unwrap();
                    for (i, row) in acc.iter_mut().enumerate() {
                        let w = a[(r + i) * inner + k];
                        for j in 0..TC {
                            row[j] += w * bk[j];
                        }
                    }
                }
            } else {
                for k in 0..inner {
                    let bk = &b[k * cols + c..][..tc];
                    for (i, row) in acc.iter_mut().enumerate().take(tr) {
                        let w = a[(r + i) * inner + k];
                        for j in 0..tc {
                            row[j] += w * bk[j];
                        }
                    }
                }
            }
            for (i, row) in acc.iter().enumerate().take(tr) {
                let d = &mut dst[(r + i) * cols + c..][..tc];
                for j in 0..tc {
                    d[j] += row[j];
                }
            }
            c += TC;
        }
        r += TR;
    }
}

/// `dst[r, q] += Σ_p a[r, p] · b[q, p]` (both operands row-major, shared
/// inner length `len`), each sum over ascending `p`.
fn gemm_nt(a: &[f64], b: &[f64], dst: &mut [f64], rows: usize, cols: usize, len: usize) {
    const T: usize = 4;
    let mut r = 0;
    while r < rows {
        let tr = T.min(rows - r);
        let mut q = 0;
        while q < cols {
            let tq = T.min(cols - q);
            let mut acc = [[0.0f64; T]; T];
            if tr == T && tq == T {
                let ar: [&[f64]; T] = std::array::from_fn(|i| &a[(r + i) * len..][..len]);
                let br: [&[f64]; T] = std::array::from_fn(|j| &b[(q + j) * len..][..len]);
                for p in 0..len {
                    let x = [ar[0][p], ar[1][p], ar[2][p], ar[3][p]];
                    let y = [br[0][p], br[1][p], br[2][p], br[3][p]];
                    for i in 0..T {
                        for j in 0..T {
                            acc[i][j] += x[i] * y[j];
                        }
                    }
                }
            } else {
                for i in 0..tr {
                    for j in 0..tq {
                        let (x, y) = (&a[(r + i) * len..][..len], &b[(q + j) * len..][..len]);
                        acc[i][j] = x.iter().zip(y).fold(0.0, |s, (u, v)| s + u * v);
                    }
                }
            }
            for i in 0..tr {
                for j in 0..tq {
                    dst[(r + i) * cols + q + j] += acc[i][j];
                }
            }
            q += T;
        }
        r += T;
    }
}

/// Gradients of a convolution. `grad_input` is only computed when asked.
pub fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    want_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let plane = g.out_h() * g.out_w();
    let in_len = g.in_channels * g.in_h * g.in_w;
    let k_len = g.in_channels * g.kernel * g.kernel;
    let mut grad_kernel = vec![0.0; g.out_channels * k_len];
    let mut grad_bias = vec![0.0; g.out_channels];
    let mut grad_input = want_input.then(|| vec![0.0; input.len()]);
    let mut cols = vec![0.0; k_len * plane];
    let mut gcols = vec![0.0; if want_input { k_len * plane } else { 0 }];
    // kernel transposed to k_len × Cout for the input-gradient product
    let mut kt = vec![0.0; k_len * g.out_channels];
    for oc in 0..g.out_channels {
        for k in 0..k_len {
            kt[k * g.out_channels + oc] = kernel[oc * k_len + k];
        }
    }

    for n in 0..g.batch {
        let go = &grad_out[n * g.out_channels * plane..][..g.out_channels * plane];
        im2col(g, &input[n * in_len..][..in_len], &mut cols);
        for (oc, grow) in go.chunks_exact(plane).enumerate() {
            grad_bias[oc] += grow.iter().fold(0.0, |a, v| a + v);
        }
        gemm_nt(go, &cols, &mut grad_kernel, g.out_channels, k_len, plane);
        if let Some(gi) = grad_input.as_mut() {
            gcols.fill(0.0);
            gemm_rows(&kt, go, &mut gcols, k_len, g.out_channels, plane);
            col2im(g, &gcols, &mut gi[n * in_len..][..in_len]);
        }
    }
    (grad_input, grad_kernel, grad_bias)
}

/// Source coordinates and weights for one output position of a bilinear
/// resize with half-pixel centres (`align_corners = false`).
///
/// When both taps collapse onto the same source index (at the border, or for
/// a length-1 axis), the fractional weight is forced to zero so constant
/// inputs reproduce exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub frac: f64,
}

pub fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            Tap { i0, i1, frac }
        })
        .collect()
}

/// Interpolated value of `plane` (row-major `h×w`) at one output cell.
#[inline]
pub fn bilinear_at(plane: &[f64], w: usize, ty: Tap, tx: Tap) -> f64 {
    let (wy0, wy1) = (1.0 - ty.frac, ty.frac);
    let (wx0, wx1) = (1.0 - tx.frac, tx.frac);
    wy0 * wx0 * plane[ty.i0 * w + tx.i0]
        + wy0 * wx1 * plane[ty.i0 * w + tx.i1]
        + wy1 * wx0 * plane[ty.i1 * w + tx.i0]
        + wy1 * wx1 * plane[ty.i1 * w + tx.i1]
}

/// Scatters `g` back onto the four taps of one output cell.
#[inline]
pub fn bilinear_scatter(plane: &mut [f64], w: usize, ty: Tap, tx: Tap, g: f64) {
    let (wy0, wy1) = (1.0 - ty.frac, ty.frac);
    let (wx0, wx1) = (1.0 - tx.frac, tx.frac);
    plane[ty.i0 * w + tx.i0] += wy0 * wx0 * g;
    plane[ty.i0 * w + tx.i1] += wy0 * wx1 * g;
    plane[ty.i1 * w + tx.i0] += wy1 * wx0 * g;
    plane[ty.i1 * w + tx.i1] += wy1 * wx1 * g;
}

/// Bilinear resize of every `h×w` plane in `planes` to `out_h×out_w`.
pub fn upsample_planes(planes: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    // per output cell: four (offset, coefficient) pairs, same products as
    // `bilinear_at`
    let mut table = Vec::with_capacity(out_h * out_w);
    for y in &ty {
        let (wy0, wy1) = (1.0 - y.frac, y.frac);
        for x in &tx {
            let (wx0, wx1) = (1.0 - x.frac, x.frac);
            table.push((
                [y.i0 * w + x.i0, y.i0 * w + x.i1, y.i1 * w + x.i0, y.i1 * w + x.i1],
                [wy0 * wx0, wy0 * wx1, wy1 * wx0, wy1 * wx1],
            ));
        }
    }
    let count = planes.len() / (h * w);
    let mut out = Vec::with_capacity(count * out_h * out_w);
    for plane in planes.chunks_exact(h * w) {
        out.extend(
            table
                .iter()
                .map(|(i, c)| c[0] * plane[i[0]] + c[1] * plane[i[1]] + c[2] * plane[i[2]] + c[3] * plane[i[3]]),
        );
    }
    out
}
