//! Adversarial prompt mining and rectification.
//!
//! After the classifier has seen a batch, every pair is re-prompted as
//! "changed" and the resulting changed-class map is compared with the
//! prediction under the pair's original label. Pixels where the two
//! disagree are the adversarial samples: background the classifier would
//! call a change if told to look for one. Their features are pulled
//! towards a running unchanged-class prototype.
//!
//! ```
//! use advcp::advcp::{mine_mask, AdvSource, MaskMode};
//! use advcp::cam::PredictionMask;
//!
//! let mask = |data: Vec<u8>| PredictionMask { n: 1, h: 1, w: 4, data };
//! let c_bin = mask(vec![1, 1, 0, 0]);
//! let p = mask(vec![1, 0, 1, 0]);
//! let m = mine_mask(&c_bin, &p, MaskMode::Xor, AdvSource::All, &[0]).unwrap();
//! assert_eq!(m.mask.data, vec![0, 1, 1, 0]);
//! ```

pub mod fscd;
pub mod multilabel;

use crate::cam::{self, keyword_enum, CamMode, PredictionMask};
use crate::error::{Error, Result};
use crate::model::{ChangeClassifier, ForwardRecord};
use crate::tensor::{kernels, Pixel, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// Symmetric difference `C_c_bin ⊕ P`.
    Xor,
    /// One-sided `C_c_bin ∧ ¬P`.
    Diff,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdvSource {
    All,
    UnchangedOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    /// Each image's own unchanged mean.
    Image,
    /// The current batch's unchanged mean.
    Batch,
    /// One mean over the training set, computed once and then held.
    FrozenGlobal,
    /// Exponentially weighted running mean over batches.
    OnlineGlobal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossVariant {
    CenterAccumulated,
    Consistency,
    Contrastive,
}

keyword_enum!(MaskMode { Xor => "xor", Diff => "diff" });
keyword_enum!(AdvSource { All => "all", UnchangedOnly => "unchanged_only" });
keyword_enum!(Granularity {
    Image => "image",
    Batch => "batch",
    FrozenGlobal => "frozen_global",
    OnlineGlobal => "online_global",
});
keyword_enum!(LossVariant {
    CenterAccumulated => "center_accumulated",
    Consistency => "consistency",
    Contrastive => "contrastive",
});

/// Real-valued N×H×W map.
#[derive(Clone, Debug, PartialEq)]
pub struct ChangeMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl ChangeMap {
    pub fn sample(&self, i: usize) -> &[f64] {
        let hw = self.h * self.w;
        &self.data[i * hw..][..hw]
    }

    /// Thresholds at `tau` (inclusive).
    pub fn binarize(&self, tau: f64) -> Result<PredictionMask> {
        Ok(PredictionMask {
            n: self.n,
            h: self.h,
            w: self.w,
            data: cam::binarize(&self.data, tau)?,
        })
    }
}

/// Changed-class map with every pair prompted as changed, max-normalized
/// per sample.
///
/// In `weights` mode this is the changed channel of the ordinary CAM
/// before normalization; in `gradients` mode it uses the gradient of the
/// changed-class score.
pub fn all_change_localization(
    record: &ForwardRecord<'_>,
    model: &ChangeClassifier,
    mode: CamMode,
) -> Result<ChangeMap> {
    let maps = cam::compute_localization(record, model, mode, None)?;
    let hw = maps.h * maps.w;
    let mut data = Vec::with_capacity(maps.n * hw);
    for i in 0..maps.n {
        let mut plane = maps.changed(i).to_vec();
        cam::max_normalize(&mut plane);
        data.extend(plane);
    }
    Ok(ChangeMap {
        n: maps.n,
        h: maps.h,
        w: maps.w,
        data,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdversarialMask {
    pub mask: PredictionMask,
    pub mode: MaskMode,
    pub source: AdvSource,
}

impl AdversarialMask {
    /// Set pixels in `(sample, row, col)` order.
    pub fn pixels(&self) -> Vec<Pixel> {
        mask_pixels(&self.mask, 1)
    }

    pub fn count(&self) -> usize {
        self.mask.count_ones()
    }
}

/// Pixels whose mask value equals `value`, sample-major then row-major.
pub fn mask_pixels(mask: &PredictionMask, value: u8) -> Vec<Pixel> {
    let hw = mask.h * mask.w;
    mask.data
        .iter()
        .enumerate()
        .filter(|(_, &v)| (v != 0) == (value != 0))
        .map(|(i, _)| (i / hw, (i % hw) / mask.w, i % mask.w))
        .collect()
}

pub fn mine_mask(
    c_bin: &PredictionMask,
    p: &PredictionMask,
    mode: MaskMode,
    source: AdvSource,
    labels: &[u8],
) -> Result<AdversarialMask> {
    c_bin.check_shape(p)?;
    if labels.len() != c_bin.n {
        return Err(Error::Shape(format!("{} labels for {} samples", labels.len(), c_bin.n)));
    }
    let hw = c_bin.h * c_bin.w;
    let mut data: Vec<u8> = c_bin
        .data
        .iter()
        .zip(&p.data)
        .map(|(&c, &q)| match mode {
            MaskMode::Xor => (c != 0) as u8 ^ (q != 0) as u8,
            MaskMode::Diff => u8::from(c != 0 && q == 0),
        })
        .collect();
    if source == AdvSource::UnchangedOnly {
        for (i, &l) in labels.iter().enumerate() {
            if l != 0 {
                data[i * hw..][..hw].fill(0);
            }
        }
    }
    Ok(AdversarialMask {
        mask: PredictionMask {
            n: c_bin.n,
            h: c_bin.h,
            w: c_bin.w,
            data,
        },
        mode,
        source,
    })
}

/// Feature vectors at the adversarial pixels, `N_adv×D`, still connected
/// to the model parameters.
#[derive(Clone, Debug)]
pub struct AdversarialFeatures {
    pub values: Option<Var>,
    pub pixels: Vec<Pixel>,
    pub dim: usize,
}

impl AdversarialFeatures {
    pub fn count(&self) -> usize {
        self.pixels.len()
    }
}

/// Gathers `F`, bilinearly resized to the mask resolution, at the mask's
/// set pixels.
pub fn extract_features(
    tape: &Tape,
    features: Var,
    mask: &AdversarialMask,
) -> Result<AdversarialFeatures> {
    let dim = tape.value(features).dims4()?[1];
    let pixels = mask.pixels();
    let values = if pixels.is_empty() {
        None
    } else {
        Some(tape.gather_upsampled(features, mask.mask.h, mask.mask.w, &pixels)?)
    };
    Ok(AdversarialFeatures { values, pixels, dim })
}

/// `F` resized to image resolution, N×D×H×W, values only.
pub fn upsample_features(features: &Tensor, image_hw: (usize, usize)) -> Result<Tensor> {
    let [n, d, h, w] = features.dims4()?;
    let (oh, ow) = image_hw;
    Tensor::new(
        vec![n, d, oh, ow],
        kernels::upsample_planes(features.data(), h, w, oh, ow),
    )
}

/// Mean of the feature vectors, bilinearly resized to the mask's resolution,
/// at pixels where `mask == value`. `features` is N×D×h×w at any resolution;
/// the resized map is never materialized: masked pixels scatter their tap
/// weights onto the h×w cells, which are then summed per channel. Returns
/// the zero vector and a count of 0 when no pixel qualifies.
pub fn masked_mean(features: &Tensor, mask: &PredictionMask, value: u8) -> Result<(Vec<f64>, usize)> {
    let [n, d, _, _] = features.dims4()?;
    if n != mask.n {
        return Err(Error::Shape(format!("features for {n} samples, mask for {}", mask.n)));
    }
    let (sums, counts) = masked_sums(features, mask, value)?;
    let count: usize = counts.iter().sum();
    let mut mean = vec![0.0; d];
    for s in &sums {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    if count > 0 {
        mean.iter_mut().for_each(|v| *v /= count as f64);
    }
    Ok((mean, count))
}

/// Per-sample feature sums and pixel counts behind [`masked_mean`].
fn masked_sums(features: &Tensor, mask: &PredictionMask, value: u8) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let [n, d, h, w] = features.dims4()?;
    let ty = kernels::bilinear_taps(h, mask.h);
    let tx = kernels::bilinear_taps(w, mask.w);
    let hit = |m: u8| (m != 0) == (value != 0);
    let mut weights = vec![0.0; h * w];
    let mut sums = Vec::with_capacity(n);
    let mut counts = Vec::with_capacity(n);
    for s in 0..n {
        weights.fill(0.0);
        let m = mask.sample(s);
        let mut count = 0;
        for (y, t_y) in ty.iter().enumerate() {
            for (x, t_x) in tx.iter().enumerate() {
                if hit(m[y * mask.w + x]) {
                    kernels::bilinear_scatter(&mut weights, w, *t_y, *t_x, 1.0);
                    count += 1;
                }
            }
        }
        let planes = &features.data()[s * d * h * w..][..d * h * w];
        sums.push(
            planes
                .chunks_exact(h * w)
                .map(|plane| plane.iter().zip(&weights).fold(0.0, |a, (f, wt)| a + f * wt))
                .collect(),
        );
        counts.push(count);
    }
    Ok((sums, counts))
}

/// Batch unchanged prototype `f_uc` over pixels with `P = 0`.
pub fn batch_unchanged_prototype(
    features: &Tensor,
    p: &PredictionMask,
) -> Result<(Vec<f64>, usize)> {
    masked_mean(features, p, 0)
}

/// Per-image unchanged means; `None` for an image without unchanged pixels.
pub fn image_unchanged_prototypes(
    features: &Tensor,
    p: &PredictionMask,
) -> Result<Vec<Option<Vec<f64>>>> {
    let (sums, counts) = masked_sums(features, p, 0)?;
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
        .collect())
}

/// Running class centres. `p_uc` is the unchanged prototype; `p_c` the
/// changed one, only used by the contrastive variant.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeState {
    pub p_uc: Vec<f64>,
    pub p_c: Vec<f64>,
    pub lambda: f64,
    /// Number of applied unchanged-prototype updates.
    pub m: u64,
    pub granularity: Granularity,
    frozen: bool,
}

impl PrototypeState {
    /// Zero-initialised prototypes of length `dim`.
    pub fn new(dim: usize, lambda: f64, granularity: Granularity) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(PrototypeState {
            p_uc: vec![0.0; dim],
            p_c: vec![0.0; dim],
            lambda,
            m: 0,
            granularity,
            frozen: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.p_uc.len()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Fixes `p_uc` for the rest of the run.
    pub fn freeze(&mut self, p_uc: Vec<f64>) -> Result<()> {
        check_dim(self.dim(), p_uc.len())?;
        self.p_uc = p_uc;
        self.frozen = true;
        Ok(())
    }

    /// Folds one batch statistic into `p_uc`. An empty batch (`n_uc = 0`)
    /// leaves the state untouched. Returns whether an update was applied.
    pub fn update(&mut self, f_uc: &[f64], n_uc: usize) -> Result<bool> {
        check_dim(self.dim(), f_uc.len())?;
        if n_uc == 0 || self.frozen {
            return Ok(false);
        }
        match self.granularity {
            Granularity::OnlineGlobal => ewma(&mut self.p_uc, f_uc, self.lambda),
            Granularity::Batch | Granularity::Image => self.p_uc.copy_from_slice(f_uc),
            Granularity::FrozenGlobal => return Ok(false),
        }
        self.m += 1;
        Ok(true)
    }

    /// Same rule for the changed prototype.
    pub fn update_changed(&mut self, f_c: &[f64], n_c: usize) -> Result<()> {
        check_dim(self.dim(), f_c.len())?;
        if n_c == 0 {
            return Ok(());
        }
        match self.granularity {
            Granularity::OnlineGlobal | Granularity::FrozenGlobal => {
                ewma(&mut self.p_c, f_c, self.lambda)
            }
            Granularity::Batch | Granularity::Image => self.p_c.copy_from_slice(f_c),
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.p_uc.iter().fold(0.0, |a, v| a + v * v).sqrt()
    }
}

/// `p ← (1 − λ)·p + λ·f`.
pub fn ewma(p: &mut [f64], f: &[f64], lambda: f64) {
    for (pi, fi) in p.iter_mut().zip(f) {
        *pi = (1.0 - lambda) * *pi + lambda * fi;
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape(format!("prototype of length {expected}, vector of length {got}")));
    }
    Ok(())
}

/// `(1/N_adv)·Σ_i ‖F_adv_i − t_i‖²` with constant targets (one row per
/// adversarial pixel). Zero, and gradient-free, when nothing was mined.
pub fn squared_distance_loss(tape: &Tape, adv: &AdversarialFeatures, targets: &[f64]) -> Result<Var> {
    let Some(values) = adv.values else {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    };
    let k = adv.count();
    if targets.len() != k * adv.dim {
        return Err(Error::Shape(format!(
            "{} target values for {k}x{} features",
            targets.len(),
            adv.dim
        )));
    }
    let neg = tape.constant(Tensor::new(
        vec![k, adv.dim],
        targets.iter().map(|v| -v).collect(),
    )?);
    let diff = tape.add(values, neg)?;
    let sq = tape.square(diff)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 1.0 / k as f64)
}

/// The rectification loss against one shared prototype, which is treated
/// as a constant.
pub fn advcp_loss(tape: &Tape, adv: &AdversarialFeatures, p_uc: &[f64]) -> Result<Var> {
    check_dim(adv.dim, p_uc.len())?;
    let targets: Vec<f64> = p_uc.iter().copied().cycle().take(adv.count() * adv.dim).collect();
    squared_distance_loss(tape, adv, &targets)
}

/// Mean squared distance over all unordered pairs of adversarial vectors,
/// computed as `2/(K−1)·Σ_i ‖f_i − f̄‖²`.
pub fn consistency_loss(tape: &Tape, adv: &AdversarialFeatures) -> Result<Var> {
    let k = adv.count();
    let Some(values) = adv.values.filter(|_| k >= 2) else {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    };
    let mean = tape.mean_rows(values)?;
    let centred = tape.sub_row(values, mean)?;
    let sq = tape.square(centred)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 2.0 / (k - 1) as f64)
}

/// Hinge `mean_i max(0, margin − ‖F_adv_i − p_c‖)²` pushing adversarial
/// vectors away from the changed prototype.
pub fn changed_hinge(tape: &Tape, adv: &AdversarialFeatures, p_c: &[f64], margin: f64) -> Result<Var> {
    check_dim(adv.dim, p_c.len())?;
    let Some(values) = adv.values else {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    };
    let centre = tape.constant(Tensor::vector(p_c.to_vec()));
    let diff = tape.sub_row(values, centre)?;
    let sq = tape.square(diff)?;
    let dist2 = tape.sum_rows(sq)?;
    let dist = tape.sqrt(dist2)?;
    let neg = tape.scale(dist, -1.0)?;
    let gap = tape.add_scalar(neg, margin)?;
    let hinge = tape.relu(gap)?;
    let h2 = tape.square(hinge)?;
    tape.mean(h2)
}

/// Loss for the chosen ablation variant. `targets` are the per-pixel
/// prototype rows used by the centre-based variants.
pub fn variant_loss(
    tape: &Tape,
    adv: &AdversarialFeatures,
    targets: &[f64],
    state: &PrototypeState,
    kind: LossVariant,
    margin: f64,
) -> Result<Var> {
    match kind {
        LossVariant::CenterAccumulated => squared_distance_loss(tape, adv, targets),
        LossVariant::Consistency => consistency_loss(tape, adv),
        LossVariant::Contrastive => {
            let centre = squared_distance_loss(tape, adv, targets)?;
            let hinge = changed_hinge(tape, adv, &state.p_c, margin)?;
            tape.add(centre, hinge)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_adv: f64,
    pub alpha: f64,
    /// The objective actually minimised at this step.
    pub total: f64,
    pub applied: bool,
}

/// `L = L_cls + α·L_adv` once `step ≥ warmup`, otherwise `L_cls`.
pub fn total_loss(l_cls: f64, l_adv: f64, alpha: f64, step: u64, warmup: u64) -> Result<LossBreakdown> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be a finite value >= 0, got {alpha}")));
    }
    let applied = step >= warmup;
    Ok(LossBreakdown {
        l_cls,
        l_adv,
        alpha,
        total: if applied { l_cls + alpha * l_adv } else { l_cls },
        applied,
    })
}

/// Knobs of the adversarial phase.
#[derive(Clone, Debug, PartialEq)]
pub struct MiningConfig {
    pub cam_mode: CamMode,
    pub norm_scope: cam::NormScope,
    pub mask_mode: MaskMode,
    pub source: AdvSource,
    pub tau_adv: f64,
    /// Treat the original prompt as switching off the changed channel of
    /// pairs labelled unchanged.
    pub label_gate: bool,
    pub loss: LossVariant,
    pub margin: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            cam_mode: CamMode::Weights,
            norm_scope: cam::NormScope::Joint,
            mask_mode: MaskMode::Xor,
            source: AdvSource::All,
            tau_adv: 0.5,
            label_gate: true,
            loss: LossVariant::CenterAccumulated,
            margin: 1.0,
        }
    }
}

/// Result of one adversarial phase.
pub struct AdversarialStep {
    pub loss: Var,
    pub mask: AdversarialMask,
    pub prediction: PredictionMask,
    pub all_change: ChangeMap,
    pub n_adv: usize,
    pub n_uc: usize,
}

/// The original-prompt prediction `P` for a record.
pub fn original_prediction(
    record: &ForwardRecord<'_>,
    model: &ChangeClassifier,
    cfg: &MiningConfig,
    labels: &[u8],
) -> Result<PredictionMask> {
    let maps = cam::compute_localization(record, model, cfg.cam_mode, Some(cfg.norm_scope))?;
    let p = cam::predict(&maps);
    if cfg.label_gate {
        cam::gate_by_labels(p, labels)
    } else {
        Ok(p)
    }
}

/// Mining, prototype update, and rectification loss for one batch.
pub fn adversarial_step(
    record: &ForwardRecord<'_>,
    model: &ChangeClassifier,
    labels: &[u8],
    cfg: &MiningConfig,
    state: &mut PrototypeState,
) -> Result<AdversarialStep> {
    let tape = record.tape;
    let all_change = all_change_localization(record, model, cfg.cam_mode)?;
    let p = original_prediction(record, model, cfg, labels)?;
    let c_bin = all_change.binarize(cfg.tau_adv)?;
    let mask = mine_mask(&c_bin, &p, cfg.mask_mode, cfg.source, labels)?;

    let features = tape.value(record.features).clone();
    let (f_uc, n_uc) = masked_mean(&features, &p, 0)?;
    state.update(&f_uc, n_uc)?;
    if cfg.loss == LossVariant::Contrastive {
        let (f_c, n_c) = masked_mean(&features, &p, 1)?;
        state.update_changed(&f_c, n_c)?;
    }

    let adv = extract_features(tape, record.features, &mask)?;
    let d = state.dim();
    let targets: Vec<f64> = if state.granularity == Granularity::Image {
        let per_image = image_unchanged_prototypes(&features, &p)?;
        let mut t = Vec::with_capacity(adv.count() * d);
        for &(s, _, _) in &adv.pixels {
            t.extend_from_slice(per_image[s].as_deref().unwrap_or(&state.p_uc));
        }
        t
    } else {
        state.p_uc.iter().copied().cycle().take(adv.count() * d).collect()
    };
    let loss = variant_loss(tape, &adv, &targets, state, cfg.loss, cfg.margin)?;
    Ok(AdversarialStep {
        loss,
        n_adv: mask.count(),
        mask,
        prediction: p,
        all_change,
        n_uc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(data: Vec<u8>) -> PredictionMask {
        PredictionMask {
            n: 1,
            h: 1,
            w: data.len(),
            data,
        }
    }

    #[test]
    fn diff_mode_is_one_sided() {
        let r = mine_mask(&m(vec![1, 1, 0, 0]), &m(vec![1, 0, 1, 0]), MaskMode::Diff, AdvSource::All, &[0])
            .unwrap();
        assert_eq!(r.mask.data, vec![0, 1, 0, 0]);
    }

    #[test]
    fn unchanged_only_drops_changed_samples() {
        let c = PredictionMask {
            n: 2,
            h: 1,
            w: 2,
            data: vec![1, 0, 1, 0],
        };
        let p = PredictionMask::zeros(2, 1, 2);
        let r = mine_mask(&c, &p, MaskMode::Xor, AdvSource::UnchangedOnly, &[1, 0]).unwrap();
        assert_eq!(r.mask.data, vec![0, 0, 1, 0]);
    }

    #[test]
    fn unchanged_prototype_is_the_masked_mean() {
        // pixels 0 and 2 unchanged with vectors [1,3] and [3,5]
        let f = Tensor::new(vec![1, 2, 1, 3], vec![1.0, 9.0, 3.0, 3.0, 9.0, 5.0]).unwrap();
        let (mean, n) = masked_mean(&f, &m(vec![0, 1, 0]), 0).unwrap();
        assert_eq!((mean, n), (vec![2.0, 4.0], 2));
        let (zero, n) = masked_mean(&f, &m(vec![1, 1, 1]), 0).unwrap();
        assert_eq!((zero, n), (vec![0.0, 0.0], 0));
    }

    #[test]
    fn ewma_arithmetic() {
        let mut s = PrototypeState::new(2, 0.5, Granularity::OnlineGlobal).unwrap();
        assert!(s.update(&[2.0, 4.0], 7).unwrap());
        assert_eq!(s.p_uc, vec![1.0, 2.0]);
        assert!(!s.update(&[0.0, 0.0], 0).unwrap());
        assert_eq!((s.p_uc.clone(), s.m), (vec![1.0, 2.0], 1));
        assert!(PrototypeState::new(2, 1.5, Granularity::OnlineGlobal).is_err());
    }

    #[test]
    fn frozen_state_ignores_updates() {
        let mut s = PrototypeState::new(1, 0.5, Granularity::FrozenGlobal).unwrap();
        s.freeze(vec![3.0]).unwrap();
        assert!(!s.update(&[1.0], 5).unwrap());
        assert_eq!(s.p_uc, vec![3.0]);
    }

    #[test]
    fn loss_of_one_pixel() {
        let tape = Tape::new();
        let v = tape.leaf(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap(), true);
        let adv = AdversarialFeatures {
            values: Some(v),
            pixels: vec![(0, 0, 0)],
            dim: 2,
        };
        let l = advcp_loss(&tape, &adv, &[0.0, 0.0]).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 25.0);
        let same = advcp_loss(&tape, &adv, &[3.0, 4.0]).unwrap();
        assert_eq!(tape.value(same).item().unwrap(), 0.0);
    }

    #[test]
    fn consistency_needs_a_pair() {
        let tape = Tape::new();
        let one = tape.leaf(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap(), true);
        let adv = AdversarialFeatures {
            values: Some(one),
            pixels: vec![(0, 0, 0)],
            dim: 2,
        };
        assert_eq!(tape.value(consistency_loss(&tape, &adv).unwrap()).item().unwrap(), 0.0);
        let two = tape.leaf(Tensor::new(vec![2, 2], vec![3.0, 4.0, 3.0, 4.0]).unwrap(), true);
        let adv = AdversarialFeatures {
            values: Some(two),
            pixels: vec![(0, 0, 0), (0, 0, 1)],
            dim: 2,
        };
        assert_eq!(tape.value(consistency_loss(&tape, &adv).unwrap()).item().unwrap(), 0.0);
    }

    #[test]
    fn total_loss_respects_warmup() {
        let b = total_loss(0.7, 0.3, 1.0, 200, 200).unwrap();
        assert_eq!(b.total, 0.7 + 1.0 * 0.3);
        assert_eq!(total_loss(0.7, 0.3, 1.0, 199, 200).unwrap().total, 0.7);
        assert_eq!(total_loss(0.7, 0.3, 0.0, 500, 200).unwrap().total, 0.7);
        assert!(total_loss(0.7, 0.3, -0.1, 0, 0).is_err());
    }
}
