//! Fully-supervised variant: a per-pixel change head on the same encoder.
//!
//! With pixel labels, prompting every pixel as changed means taking the
//! gradient of the summed changed probability `Σ Ŷ` with respect to the
//! feature maps. That gradient gives one weight vector per feature
//! location, and `ReLU(Σ_j F[j]·w[j])` at each location is the all-change
//! map. Mining and rectification then follow the weakly-supervised path,
//! with the pixel prediction `Ŷ ≥ 0.5` as the original response.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::advcp::{
    self, extract_features, mine_mask, AdvSource, ChangeMap, Granularity,
    LossBreakdown, MaskMode, PrototypeState,
};
use crate::cam::{self, PredictionMask};
use crate::data::{PairedBatch, PairedSample};
use crate::error::{Error, Result};
use crate::model::{ArchConfig, ChangeClassifier};
use crate::tensor::{kernels, Tape, Tensor, Var};
use crate::trainer::{poly_lr, Sgd};

/// Impact factor used with pixel supervision.
pub const FSCD_ALPHA: f64 = 0.1;

/// Encoder plus a 1×1 convolution producing one change logit per feature
/// cell, bilinearly resized to the image.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelChangeModel {
    pub encoder: ChangeClassifier,
    /// 1×D×1×1.
    pub head_weight: Tensor,
    /// Length 1.
    pub head_bias: Tensor,
}

pub struct PixelRecord<'t> {
    pub tape: &'t Tape,
    pub encoder_params: Vec<Var>,
    pub head: [Var; 2],
    pub features: Var,
    /// N×1×H×W.
    pub logits: Var,
    /// `Ŷ`, N×1×H×W.
    pub probs: Var,
    pub image_hw: (usize, usize),
}

impl PixelChangeModel {
    pub fn build(arch: ArchConfig, seed: u64) -> Result<Self> {
        let d = arch.feature_dim;
        let encoder = ChangeClassifier::build(arch, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f5cd);
        let bound = 1.0 / (d as f64).sqrt();
        let w = (0..d).map(|_| rng.gen_range(-bound..bound)).collect();
        Ok(PixelChangeModel {
            encoder,
            head_weight: Tensor::new(vec![1, d, 1, 1], w)?,
            head_bias: Tensor::zeros(&[1]),
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, batch: &PairedBatch, train: bool) -> Result<PixelRecord<'t>> {
        let rec = self.encoder.forward(tape, batch, train)?;
        let hw = tape.leaf(self.head_weight.clone(), train);
        let hb = tape.leaf(self.head_bias.clone(), train);
        let (h, w) = rec.image_hw;
        let cells = tape.conv2d(rec.features, hw, hb, 1, 0)?;
        let logits = tape.upsample_bilinear(cells, h, w)?;
        let probs = tape.sigmoid(logits)?;
        Ok(PixelRecord {
            tape,
            encoder_params: rec.params,
            head: [hw, hb],
            features: rec.features,
            logits,
            probs,
            image_hw: rec.image_hw,
        })
    }

    /// `Ŷ ≥ 0.5`.
    pub fn predict(&self, batch: &PairedBatch) -> Result<PredictionMask> {
        let tape = Tape::new();
        let rec = self.forward(&tape, batch, false)?;
        let probs = tape.value(rec.probs);
        threshold_probs(&probs)
    }
}

fn threshold_probs(probs: &Tensor) -> Result<PredictionMask> {
    let [n, _, h, w] = probs.dims4()?;
    Ok(PredictionMask {
        n,
        h,
        w,
        data: probs.data().iter().map(|&p| u8::from(p >= 0.5)).collect(),
    })
}

/// Per-location weights `∂(Σ Ŷ)/∂F`, same shape as `F`.
pub fn fscd_weights(tape: &Tape, features: Var, yhat: Var) -> Result<Tensor> {
    let f_shape = tape.shape(features);
    if f_shape.len() != 4 || tape.shape(yhat).first() != f_shape.first() {
        return Err(Error::Shape(format!(
            "features {f_shape:?} and pixel scores {:?} disagree",
            tape.shape(yhat)
        )));
    }
    if !tape.requires_grad(features) {
        return Err(Error::Config("feature maps were recorded without gradients".into()));
    }
    let total = tape.sum(yhat)?;
    Ok(tape.grad_of(total, &[features])?.remove(0))
}

/// `ReLU(Σ_j F[j]·w[j])` with per-location weights, resized to the image
/// and max-normalized per sample.
pub fn fscd_change_map(features: &Tensor, weights: &Tensor, image_hw: (usize, usize)) -> Result<ChangeMap> {
    let [n, d, h, w] = features.dims4()?;
    if weights.shape() != features.shape() {
        return Err(Error::Shape(format!(
            "weights {:?} vs features {:?}",
            weights.shape(),
            features.shape()
        )));
    }
    let hw = h * w;
    let mut raw = vec![0.0; n * hw];
    for i in 0..n {
        for p in 0..hw {
            let mut acc = 0.0;
            for j in 0..d {
                let idx = (i * d + j) * hw + p;
                acc += features.data()[idx] * weights.data()[idx];
            }
            raw[i * hw + p] = acc.max(0.0);
        }
    }
    let (oh, ow) = image_hw;
    let mut data = kernels::upsample_planes(&raw, h, w, oh, ow);
    for plane in data.chunks_exact_mut(oh * ow) {
        cam::max_normalize(plane);
    }
    Ok(ChangeMap { n, h: oh, w: ow, data })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FscdConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub warmup: u64,
    pub iters: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub tau_adv: f64,
    pub mask_mode: MaskMode,
    pub seed: u64,
}

impl Default for FscdConfig {
    fn default() -> Self {
        FscdConfig {
            alpha: FSCD_ALPHA,
            lambda: 0.5,
            warmup: 200,
            iters: 600,
            batch_size: 16,
            lr: 0.05,
            momentum: 0.9,
            tau_adv: 0.5,
            mask_mode: MaskMode::Xor,
            seed: 1,
        }
    }
}

/// Per-step record of a fully-supervised run.
#[derive(Clone, Debug, PartialEq)]
pub struct FscdStep {
    pub step: u64,
    pub loss: LossBreakdown,
    pub n_adv: usize,
    pub n_uc: usize,
}

/// Trains a pixel model with `L = L_pixel + α·L_adv`. Samples must carry
/// ground-truth masks.
pub fn train_fscd(
    cfg: &FscdConfig,
    arch: ArchConfig,
    samples: &[PairedSample],
) -> Result<(PixelChangeModel, Vec<FscdStep>)> {
    if samples.is_empty() || cfg.batch_size == 0 {
        return Err(Error::Config("fully-supervised training needs samples and batch_size >= 1".into()));
    }
    let mut model = PixelChangeModel::build(arch.clone(), cfg.seed)?;
    let mut state = PrototypeState::new(arch.feature_dim, cfg.lambda, Granularity::OnlineGlobal)?;
    let mut sgd = Sgd::new(cfg.momentum, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut log = Vec::with_capacity(cfg.iters as usize);

    for step in 0..cfg.iters {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let picked: Vec<&PairedSample> = idx.iter().map(|&i| &samples[i]).collect();
        let batch = PairedBatch::from_samples(&picked)?;
        let mut targets = Vec::new();
        for s in &picked {
            let gt = s
                .gt_mask
                .as_ref()
                .ok_or_else(|| Error::MissingGroundTruth(s.id.clone()))?;
            targets.extend_from_slice(gt);
        }

        let tape = Tape::new();
        let rec = model.forward(&tape, &batch, true)?;
        let l_pixel = tape.bce_with_logits(rec.logits, &targets)?;

        let weights = fscd_weights(&tape, rec.features, rec.probs)?;
        let features = tape.value(rec.features).clone();
        let c_c = fscd_change_map(&features, &weights, rec.image_hw)?;
        let p = threshold_probs(&tape.value(rec.probs))?;
        let labels: Vec<u8> = picked.iter().map(|s| s.label).collect();
        let mask = mine_mask(&c_c.binarize(cfg.tau_adv)?, &p, cfg.mask_mode, AdvSource::All, &labels)?;
        let (f_uc, n_uc) = advcp::masked_mean(&features, &p, 0)?;
        state.update(&f_uc, n_uc)?;
        let adv = extract_features(&tape, rec.features, &mask)?;
        let l_adv = advcp::advcp_loss(&tape, &adv, &state.p_uc)?;

        let breakdown = advcp::total_loss(
            tape.value(l_pixel).item()?,
            tape.value(l_adv).item()?,
            cfg.alpha,
            step,
            cfg.warmup,
        )?;
        let objective = if breakdown.applied {
            let scaled = tape.scale(l_adv, cfg.alpha)?;
            tape.add(l_pixel, scaled)?
        } else {
            l_pixel
        };
        let mut wrt = rec.encoder_params.clone();
        wrt.extend(rec.head);
        let grads = tape.grad_of(objective, &wrt)?;
        let lr = poly_lr(cfg.lr, step, cfg.iters, 0.9);
        let n_enc = rec.encoder_params.len();
        model.encoder.update(|i, p| sgd.apply(i, p, grads[i].data(), lr));
        sgd.apply(n_enc, model.head_weight.data_mut(), grads[n_enc].data(), lr);
        sgd.apply(n_enc + 1, model.head_bias.data_mut(), grads[n_enc + 1].data(), lr);

        log.push(FscdStep {
            step,
            loss: breakdown,
            n_adv: adv.count(),
            n_uc,
        });
    }
    Ok((model, log))
}
