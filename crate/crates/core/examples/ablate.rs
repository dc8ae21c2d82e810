//! Sweep the prototype momentum λ over a few seeds on a small benchmark and
//! print the mean row per value.
//!
//! ```text
//! cargo run --release --example ablate -- lambda 0,0.5,1
//! cargo run --release --example ablate -- granularity image,batch,online_global
//! ```

use advcp::data::{Range, SceneConfig};
use advcp::trainer::{self, Dataset, TrainConfig};

fn main() -> advcp::Result<()> {
    let mut args = std::env::args().skip(1);
    let param = args.next().unwrap_or_else(|| "lambda".into());
    let values: Vec<String> = args
        .next()
        .unwrap_or_else(|| "0,0.5,1".into())
        .split(',')
        .map(str::to_string)
        .collect();

    let data = Dataset::generate(&SceneConfig {
        image_size: 32,
        building_size: Range::new(5, 9),
        distractor_size: Range::new(3, 5),
        train_size: 160,
        val_size: 32,
        test_size: 64,
        ..SceneConfig::default()
    })?;
    let base = TrainConfig {
        iters: 240,
        warmup: 80,
        eval_every: 80,
        widths: vec![8, 16, 32],
        feature_dim: 32,
        ..TrainConfig::default()
    };
    let table = trainer::ablate(&base, &param, &values, &[1, 2], &data, None)?;
    println!("{:<16} {:>7} {:>7} {:>9}", param, "F1", "IoU", "noise FP");
    for v in &values {
        if let Some(r) = table.mean_of(v) {
            println!("{:<16} {:>7.2} {:>7.2} {:>9.1}", v, 100.0 * r.f1, 100.0 * r.iou, r.noise_fp);
        }
    }
    Ok(())
}
