//! Deployment path: forward pass, class maps, `C_c ≥ C_uc`. Nothing here
//! knows about mining or prototypes.

use crate::cam::{self, CamMode, LocalizationMaps, NormScope, PredictionMask};
use crate::data::{PairedBatch, PairedSample};
use crate::error::{Error, Result};
use crate::metrics::{self, ConfusionCounts, MetricsRecord, Summary};
use crate::model::ChangeClassifier;
use crate::tensor::Tape;

/// Samples per forward pass during evaluation.
pub const EVAL_BATCH: usize = 16;

/// Normalized maps and predictions for one batch.
pub fn localize(
    model: &ChangeClassifier,
    batch: &PairedBatch,
    mode: CamMode,
    scope: NormScope,
) -> Result<(LocalizationMaps, PredictionMask)> {
    let tape = Tape::new();
    let rec = model.forward(&tape, batch, mode == CamMode::Gradients)?;
    let maps = cam::compute_localization(&rec, model, mode, Some(scope))?;
    let pred = cam::predict(&maps);
    Ok((maps, pred))
}

/// Pixel predictions for every sample, in order.
pub fn predict_samples(
    model: &ChangeClassifier,
    samples: &[PairedSample],
    mode: CamMode,
    scope: NormScope,
) -> Result<Vec<Vec<u8>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&PairedSample> = chunk.iter().collect();
        let batch = PairedBatch::from_samples(&refs)?;
        let (_, pred) = localize(model, &batch, mode, scope)?;
        for i in 0..chunk.len() {
            out.push(pred.sample(i).to_vec());
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub counts: ConfusionCounts,
    /// False positives inside distractor regions.
    pub noise_fp: u64,
    /// Distractor pixels evaluated.
    pub noise_pixels: u64,
}

impl Evaluation {
    pub fn summary(&self) -> Summary {
        self.counts.summarize()
    }

    pub fn record(&self) -> MetricsRecord {
        MetricsRecord::from(&self.counts)
    }
}

/// Micro-averaged metrics over `samples`; every sample needs a ground-truth
/// mask. Distractor counts use the noise masks where present.
pub fn evaluate(
    model: &ChangeClassifier,
    samples: &[PairedSample],
    mode: CamMode,
    scope: NormScope,
) -> Result<Evaluation> {
    if let Some(s) = samples.iter().find(|s| s.gt_mask.is_none()) {
        return Err(Error::MissingGroundTruth(s.id.clone()));
    }
    let preds = predict_samples(model, samples, mode, scope)?;
    let counts = metrics::accumulate(
        preds
            .iter()
            .zip(samples)
            .map(|(p, s)| (p.as_slice(), s.gt_mask.as_deref())),
    )?;
    let mut noise_fp = 0;
    let mut noise_pixels = 0;
    for (p, s) in preds.iter().zip(samples) {
        if let (Some(gt), Some(nm)) = (&s.gt_mask, &s.noise_mask) {
            noise_fp += metrics::false_positives_in(p, gt, nm);
            noise_pixels += nm.iter().filter(|&&m| m != 0).count() as u64;
        }
    }
    Ok(Evaluation {
        counts,
        noise_fp,
        noise_pixels,
    })
}
