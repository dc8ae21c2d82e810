//! Multi-label prompting: every image is re-prompted with all `K` labels
//! switched on, and each class channel is mined separately.
//!
//! Class 0 is the background. An adversarial pixel is pulled to the nearest
//! centre among the background and the classes actually present in its
//! image, never towards the class it was wrongly activated for (unless that
//! class is present).

use crate::error::{Error, Result};
use crate::tensor::{Pixel, Tape, Var};

use super::AdversarialFeatures;

/// Per-class centres, `K` vectors of length `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiLabelState {
    pub prototypes: Vec<Vec<f64>>,
}

impl MultiLabelState {
    pub fn new(prototypes: Vec<Vec<f64>>) -> Result<Self> {
        if prototypes.len() < 2 {
            return Err(Error::Config("multi-label mining needs K >= 2 classes".into()));
        }
        let d = prototypes[0].len();
        if prototypes.iter().any(|p| p.len() != d) {
            return Err(Error::Shape("prototypes differ in length".into()));
        }
        Ok(MultiLabelState { prototypes })
    }

    pub fn classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].len()
    }
}

/// Shapes shared by every array below: responses are N×K×H×W, labels N×K.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
}

impl Layout {
    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn check(&self, len: usize, per_pixel: usize, what: &str) -> Result<()> {
        let want = self.n * per_pixel * self.hw();
        if len != want {
            return Err(Error::Shape(format!("{what}: {len} values, expected {want}")));
        }
        Ok(())
    }
}

/// One mined entry: a pixel flagged for class `class`, assigned to centre
/// `centre`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub pixel: Pixel,
    pub class: usize,
    pub centre: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiLabelMining {
    /// N×K×H×W, 0/1.
    pub mask: Vec<u8>,
    /// Entries in (sample, class, row, col) order.
    pub assignments: Vec<Assignment>,
    /// Mean squared distance of the mined feature vectors to their centres.
    pub loss: f64,
}

/// Original-prompt response: channels of absent classes switched off.
/// The background channel is always kept.
pub fn gate_response(c_all1: &[f64], labels: &[u8], layout: Layout) -> Result<Vec<f64>> {
    layout.check(c_all1.len(), layout.k, "response")?;
    if labels.len() != layout.n * layout.k {
        return Err(Error::Shape(format!("{} labels for {}x{}", labels.len(), layout.n, layout.k)));
    }
    let hw = layout.hw();
    let mut out = c_all1.to_vec();
    for i in 0..layout.n {
        for k in 1..layout.k {
            if labels[i * layout.k + k] == 0 {
                out[(i * layout.k + k) * hw..][..hw].fill(0.0);
            }
        }
    }
    Ok(out)
}

/// `bin(C_all1, τ) ⊕ bin(C, τ)` per class channel.
pub fn multilabel_mask(c_all1: &[f64], c: &[f64], layout: Layout, tau: f64) -> Result<Vec<u8>> {
    layout.check(c_all1.len(), layout.k, "all-ones response")?;
    layout.check(c.len(), layout.k, "original response")?;
    let a = crate::cam::binarize(c_all1, tau)?;
    let b = crate::cam::binarize(c, tau)?;
    Ok(a.iter().zip(&b).map(|(x, y)| x ^ y).collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + (x - y) * (x - y))
}

/// Mines the mask and assigns every flagged pixel to the nearest valid
/// centre. `features` are image-resolution vectors, N×D×H×W.
pub fn multilabel_mine(
    c_all1: &[f64],
    c: &[f64],
    features: &[f64],
    labels: &[u8],
    state: &MultiLabelState,
    layout: Layout,
    tau: f64,
) -> Result<MultiLabelMining> {
    if state.classes() != layout.k {
        return Err(Error::Shape(format!(
            "{} prototypes for K={}",
            state.classes(),
            layout.k
        )));
    }
    let d = state.dim();
    layout.check(features.len(), d, "features")?;
    if labels.len() != layout.n * layout.k {
        return Err(Error::Shape(format!("{} labels for {}x{}", labels.len(), layout.n, layout.k)));
    }
    let mask = multilabel_mask(c_all1, c, layout, tau)?;
    let hw = layout.hw();
    let mut assignments = Vec::new();
    let mut total = 0.0;
    for i in 0..layout.n {
        let valid: Vec<usize> = std::iter::once(0)
            .chain((1..layout.k).filter(|&k| labels[i * layout.k + k] != 0))
            .collect();
        for k in 0..layout.k {
            for p in 0..hw {
                if mask[(i * layout.k + k) * hw + p] == 0 {
                    continue;
                }
                let f: Vec<f64> = (0..d).map(|j| features[(i * d + j) * hw + p]).collect();
                let (centre, dist) = valid
                    .iter()
                    .map(|&v| (v, sq_dist(&f, &state.prototypes[v])))
                    .fold((usize::MAX, f64::INFINITY), |best, cand| {
                        if cand.1 < best.1 {
                            cand
                        } else {
                            best
                        }
                    });
                total += dist;
                assignments.push(Assignment {
                    pixel: (i, p / layout.w, p % layout.w),
                    class: k,
                    centre,
                });
            }
        }
    }
    let loss = if assignments.is_empty() {
        0.0
    } else {
        total / assignments.len() as f64
    };
    Ok(MultiLabelMining {
        mask,
        assignments,
        loss,
    })
}

/// Differentiable version of the mined loss on a tape, gathering the
/// assigned pixels from feature maps `features` (N×D×h×w) resized to the
/// response resolution.
pub fn multilabel_loss(
    tape: &Tape,
    features: Var,
    image_hw: (usize, usize),
    mining: &MultiLabelMining,
    state: &MultiLabelState,
) -> Result<Var> {
    let pixels: Vec<Pixel> = mining.assignments.iter().map(|a| a.pixel).collect();
    let d = state.dim();
    let values = if pixels.is_empty() {
        None
    } else {
        Some(tape.gather_upsampled(features, image_hw.0, image_hw.1, &pixels)?)
    };
    let adv = AdversarialFeatures {
        values,
        pixels,
        dim: d,
    };
    let targets: Vec<f64> = mining
        .assignments
        .iter()
        .flat_map(|a| state.prototypes[a.centre].iter().copied())
        .collect();
    super::squared_distance_loss(tape, &adv, &targets)
}

/// Per-class IoU and their mean, from per-class confusion counts.
pub fn class_iou(pred: &[u8], gt: &[u8], layout: Layout) -> Result<(Vec<f64>, f64)> {
    layout.check(pred.len(), layout.k, "prediction")?;
    layout.check(gt.len(), layout.k, "ground truth")?;
    let hw = layout.hw();
    let mut counts = vec![crate::metrics::ConfusionCounts::default(); layout.k];
    for i in 0..layout.n {
        for (k, c) in counts.iter_mut().enumerate() {
            let off = (i * layout.k + k) * hw;
            c.add(&pred[off..off + hw], &gt[off..off + hw])?;
        }
    }
    let ious: Vec<f64> = counts.iter().map(|c| c.summarize().iou).collect();
    let miou = ious.iter().sum::<f64>() / ious.len() as f64;
    Ok((ious, miou))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_class_activation_is_mined() {
        // K=3, one image with class 1 only, two pixels.
        let layout = Layout { n: 1, k: 3, h: 1, w: 2 };
        let c_all1 = vec![0.9, 0.1, 0.2, 0.8, 0.7, 0.6];
        let labels = vec![1, 1, 0];
        let c = gate_response(&c_all1, &labels, layout).unwrap();
        let mask = multilabel_mask(&c_all1, &c, layout, 0.5).unwrap();
        assert_eq!(mask, vec![0, 0, 0, 0, 1, 1]);
    }

    #[test]
    fn identical_responses_mine_nothing() {
        let layout = Layout { n: 1, k: 2, h: 1, w: 2 };
        let c = vec![0.9, 0.1, 0.6, 0.7];
        let state = MultiLabelState::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let r = multilabel_mine(&c, &c, &[0.5, 0.5], &[1, 1], &state, layout, 0.5).unwrap();
        assert!(r.mask.iter().all(|&m| m == 0));
        assert_eq!(r.loss, 0.0);
    }

    #[test]
    fn needs_two_classes() {
        assert!(MultiLabelState::new(vec![vec![0.0]]).is_err());
    }
}
