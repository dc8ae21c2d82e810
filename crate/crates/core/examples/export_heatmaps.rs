//! Train a small model and write its class maps, prediction, mined
//! adversarial mask and error map as PNGs for a few test pairs.
//!
//! ```text
//! cargo run --release --example export_heatmaps -- /tmp/heatmaps
//! ```

use std::path::PathBuf;

use advcp::data::{Range, SceneConfig};
use advcp::export;
use advcp::trainer::{self, Dataset, TrainConfig};

fn main() -> advcp::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "heatmaps".into()));
    let data = Dataset::generate(&SceneConfig {
        image_size: 32,
        building_size: Range::new(5, 9),
        distractor_size: Range::new(3, 5),
        train_size: 160,
        val_size: 16,
        test_size: 8,
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
    let files = export::export_heatmaps(&run.best, &cfg.mining(), &data.test, &out)?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(())
}
