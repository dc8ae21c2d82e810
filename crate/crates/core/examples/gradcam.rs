//! Class localization on one batch: CAM from the head weights, Grad-CAM from
//! the class-score gradients, the all-change map and the mined adversarial
//! pixels, printed as coarse ASCII maps.

use advcp::advcp::{self as adv, MaskMode};
use advcp::cam::{self, CamMode, NormScope};
use advcp::data::{PairedBatch, Range, SceneConfig};
use advcp::tensor::Tape;
use advcp::trainer::{self, Dataset, TrainConfig};

fn ascii(values: &[f64], h: usize, w: usize, step: usize) {
    const RAMP: &[u8] = b" .:-=+*#%@";
    for y in (0..h).step_by(step) {
        let row: String = (0..w)
            .step_by(step)
            .map(|x| RAMP[((values[y * w + x].clamp(0.0, 1.0)) * 9.0).round() as usize] as char)
            .collect();
        println!("  |{row}|");
    }
}

fn main() -> advcp::Result<()> {
    let data = Dataset::generate(&SceneConfig {
        image_size: 32,
        building_size: Range::new(5, 9),
        distractor_size: Range::new(3, 5),
        train_size: 160,
        val_size: 16,
        test_size: 16,
        ..SceneConfig::default()
    })?;
    let cfg = TrainConfig {
        iters: 200,
        warmup: 60,
        eval_every: 100,
        widths: vec![8, 16, 32],
        feature_dim: 32,
        ..TrainConfig::default()
    };
    let run = trainer::train(&cfg, &data)?;
    let model = &run.best;

    let i = data.test.iter().position(|s| s.label == 1).unwrap_or(0);
    let sample = &data.test[i];
    let batch = PairedBatch::from_samples(&[sample])?;
    let (h, w) = (batch.x_t1.shape()[2], batch.x_t1.shape()[3]);
    println!("test pair {} (label {})", sample.id, sample.label);

    let tape = Tape::new();
    let rec = model.forward(&tape, &batch, true)?;
    for mode in [CamMode::Weights, CamMode::Gradients] {
        let maps = cam::compute_localization(&rec, model, mode, Some(NormScope::Joint))?;
        println!("{} changed-class map:", mode.name());
        ascii(maps.changed(0), h, w, 2);
    }

    let all_change = adv::all_change_localization(&rec, model, CamMode::Weights)?;
    println!("all-change map:");
    ascii(all_change.sample(0), h, w, 2);

    let p = adv::original_prediction(&rec, model, &cfg.mining(), &batch.labels)?;
    let mined = adv::mine_mask(&all_change.binarize(cfg.tau_adv)?, &p, MaskMode::Xor, cfg.adv_source, &batch.labels)?;
    let mined_f: Vec<f64> = mined.mask.sample(0).iter().map(|&v| f64::from(v)).collect();
    println!("adversarial pixels ({}):", mined.count());
    ascii(&mined_f, h, w, 2);
    if let Some(gt) = &sample.gt_mask {
        let gt_f: Vec<f64> = gt.iter().map(|&v| f64::from(v)).collect();
        println!("ground truth:");
        ascii(&gt_f, h, w, 2);
    }
    Ok(())
}
