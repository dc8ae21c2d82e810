//! Pixel-supervised training with and without the adversarial term, scored
//! on the test split.

use advcp::advcp::fscd::{self, FscdConfig};
use advcp::data::{PairedBatch, Range, SceneConfig};
use advcp::metrics;
use advcp::model::ArchConfig;
use advcp::trainer::Dataset;

fn main() -> advcp::Result<()> {
    let data = Dataset::generate(&SceneConfig {
        image_size: 32,
        building_size: Range::new(5, 9),
        distractor_size: Range::new(3, 5),
        train_size: 160,
        val_size: 16,
        test_size: 64,
        ..SceneConfig::default()
    })?;
    let arch = ArchConfig {
        widths: vec![8, 16, 32],
        feature_dim: 32,
        ..ArchConfig::default()
    };
    for alpha in [0.0, fscd::FSCD_ALPHA] {
        let cfg = FscdConfig {
            alpha,
            iters: 300,
            warmup: 100,
            ..FscdConfig::default()
        };
        let (model, log) = fscd::train_fscd(&cfg, arch.clone(), &data.train)?;
        let mut counts = metrics::ConfusionCounts::default();
        for chunk in data.test.chunks(16) {
            let refs: Vec<_> = chunk.iter().collect();
            let pred = model.predict(&PairedBatch::from_samples(&refs)?)?;
            for (i, s) in chunk.iter().enumerate() {
                if let Some(gt) = &s.gt_mask {
                    counts.add(pred.sample(i), gt)?;
                }
            }
        }
        let last = log.last().map(|s| s.loss.total).unwrap_or(0.0);
        println!("alpha {alpha:<4} final loss {last:.4}  {}", counts.summarize());
    }
    Ok(())
}
