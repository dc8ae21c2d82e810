//! Heatmap PNGs and per-pixel feature tables for inspection.

use std::fs;
use std::path::{Path, PathBuf};

use crate::advcp::{self, MiningConfig};
use crate::cam::{self, CamMode};
use crate::data::{self, PairedBatch, PairedSample};
use crate::error::Result;
use crate::inference::EVAL_BATCH;
use crate::model::ChangeClassifier;
use crate::tensor::Tape;

/// Gray level of false positives in the error map.
pub const FP_LEVEL: u8 = 255;
/// Gray level of false negatives in the error map.
pub const FN_LEVEL: u8 = 128;

/// Per-sample maps used by both exporters.
struct SampleMaps {
    unchanged: Vec<f64>,
    changed: Vec<f64>,
    all_change: Vec<f64>,
    prediction: Vec<u8>,
    adversarial: Vec<u8>,
    /// D×H×W features at image resolution.
    features: Vec<f64>,
}

fn sample_maps(model: &ChangeClassifier, samples: &[PairedSample], mining: &MiningConfig) -> Result<Vec<SampleMaps>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&PairedSample> = chunk.iter().collect();
        let batch = PairedBatch::from_samples(&refs)?;
        let tape = Tape::new();
        let rec = model.forward(&tape, &batch, mining.cam_mode == CamMode::Gradients)?;
        let maps = cam::compute_localization(&rec, model, mining.cam_mode, Some(mining.norm_scope))?;
        let prediction = cam::predict(&maps);
        let all_change = advcp::all_change_localization(&rec, model, mining.cam_mode)?;
        let p = advcp::original_prediction(&rec, model, mining, &batch.labels)?;
        let c_bin = all_change.binarize(mining.tau_adv)?;
        let adv = advcp::mine_mask(&c_bin, &p, mining.mask_mode, mining.source, &batch.labels)?;
        let up = advcp::upsample_features(&tape.value(rec.features), rec.image_hw)?;
        let per = up.len() / chunk.len();
        for i in 0..chunk.len() {
            out.push(SampleMaps {
                unchanged: maps.unchanged(i).to_vec(),
                changed: maps.changed(i).to_vec(),
                all_change: all_change.sample(i).to_vec(),
                prediction: prediction.sample(i).to_vec(),
                adversarial: adv.mask.sample(i).to_vec(),
                features: up.data()[i * per..(i + 1) * per].to_vec(),
            });
        }
    }
    Ok(out)
}

/// FP / FN gray-level map; zero where the prediction is right or no
/// ground truth exists.
pub fn error_map(pred: &[u8], gt: Option<&[u8]>) -> Vec<u8> {
    match gt {
        None => vec![0; pred.len()],
        Some(gt) => pred
            .iter()
            .zip(gt)
            .map(|(&p, &g)| match (p != 0, g != 0) {
                (true, false) => FP_LEVEL,
                (false, true) => FN_LEVEL,
                _ => 0,
            })
            .collect(),
    }
}

/// Writes, per sample, `<id>_uc.png`, `<id>_c.png`, `<id>_all_change.png`,
/// `<id>_adv.png`, `<id>_pred.png` and `<id>_error.png`. Returns the files
/// written.
pub fn export_heatmaps(
    model: &ChangeClassifier,
    mining: &MiningConfig,
    samples: &[PairedSample],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (s, m) in samples.iter().zip(sample_maps(model, samples, mining)?) {
        let (h, w) = (s.height, s.width);
        let mut save = |suffix: &str, img: image::GrayImage| -> Result<()> {
            let path = dir.join(format!("{}_{suffix}.png", s.id));
            img.save(&path)?;
            written.push(path);
            Ok(())
        };
        save("uc", data::heat_image(&m.unchanged, h, w))?;
        save("c", data::heat_image(&m.changed, h, w))?;
        save("all_change", data::heat_image(&m.all_change, h, w))?;
        save("adv", data::mask_image(&m.adversarial, h, w))?;
        save("pred", data::mask_image(&m.prediction, h, w))?;
        let err = error_map(&m.prediction, s.gt_mask.as_deref());
        save("error", image::GrayImage::from_raw(w as u32, h as u32, err).expect("error map size"))?;
    }
    Ok(written)
}

/// Writes one CSV row per pixel:
/// `sample_id,y,x,gt_label,pred_label,is_adversarial,f_0..f_{D-1}`.
/// `gt_label` is empty when the sample has no mask. Returns the row count.
pub fn export_features(
    model: &ChangeClassifier,
    mining: &MiningConfig,
    samples: &[PairedSample],
    path: &Path,
) -> Result<usize> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let d = model.arch().feature_dim;
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["sample_id", "y", "x", "gt_label", "pred_label", "is_adversarial"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..d).map(|k| format!("f_{k}")));
    w.write_record(&header)?;
    let mut rows = 0;
    for (s, m) in samples.iter().zip(sample_maps(model, samples, mining)?) {
        let hw = s.height * s.width;
        for y in 0..s.height {
            for x in 0..s.width {
                let j = y * s.width + x;
                let mut rec = vec![
                    s.id.clone(),
                    y.to_string(),
                    x.to_string(),
                    s.gt_mask.as_ref().map_or(String::new(), |g| g[j].to_string()),
                    m.prediction[j].to_string(),
                    m.adversarial[j].to_string(),
                ];
                rec.extend((0..d).map(|k| m.features[k * hw + j].to_string()));
                w.write_record(&rec)?;
                rows += 1;
            }
        }
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_levels_are_distinct() {
        assert_eq!(error_map(&[1, 0, 1, 0], Some(&[0, 1, 1, 0])), vec![FP_LEVEL, FN_LEVEL, 0, 0]);
        assert_eq!(error_map(&[1, 0], None), vec![0, 0]);
    }
}
