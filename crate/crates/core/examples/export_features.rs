//! Dump per-pixel fused features of a trained model with their ground-truth
//! label, predicted label and adversarial flag, then summarise how far the
//! mined pixels sit from the unchanged centre.

use std::path::PathBuf;

use advcp::data::{Range, SceneConfig};
use advcp::export;
use advcp::trainer::{self, Dataset, TrainConfig};

fn main() -> advcp::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "features.csv".into()));
    let data = Dataset::generate(&SceneConfig {
        image_size: 32,
        building_size: Range::new(5, 9),
        distractor_size: Range::new(3, 5),
        train_size: 160,
        val_size: 16,
        test_size: 4,
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
    let rows = export::export_features(&run.last, &cfg.mining(), &data.test, &out)?;
    println!("wrote {rows} rows to {}", out.display());

    let p = &run.prototype.p_uc;
    let mut reader = csv::Reader::from_path(&out)?;
    let (mut adv, mut rest) = ((0.0, 0usize), (0.0, 0usize));
    for rec in reader.records() {
        let rec = rec?;
        let f: Vec<f64> = rec.iter().skip(6).map(|v| v.parse().unwrap_or(0.0)).collect();
        let d: f64 = f.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum();
        let bucket = if &rec[5] == "1" { &mut adv } else { &mut rest };
        bucket.0 += d;
        bucket.1 += 1;
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { s / n as f64 };
    println!("mean squared distance to p_uc: adversarial {:.4} ({} px), other {:.4} ({} px)", mean(adv), adv.1, mean(rest), rest.1);
    Ok(())
}
