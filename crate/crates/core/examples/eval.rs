//! Train briefly, save the run, reload the checkpoint and evaluate it on the
//! test split with both localization modes.

use advcp::cam::{CamMode, NormScope};
use advcp::data::SceneConfig;
use advcp::inference;
use advcp::trainer::{self, Dataset, TrainConfig};

fn main() -> advcp::Result<()> {
    let data = Dataset::generate(&SceneConfig {
        image_size: 32,
        building_size: advcp::data::Range::new(5, 9),
        distractor_size: advcp::data::Range::new(3, 5),
        train_size: 200,
        val_size: 32,
        test_size: 64,
        ..SceneConfig::default()
    })?;
    let cfg = TrainConfig {
        iters: 300,
        warmup: 100,
        eval_every: 100,
        widths: vec![8, 16, 32],
        feature_dim: 32,
        ..TrainConfig::default()
    };
    let run = trainer::train(&cfg, &data)?;
    let dir = tempfile_dir();
    trainer::write_run(&run, &dir)?;

    let (cfg, model) = trainer::load_run(&dir)?;
    for mode in [CamMode::Weights, CamMode::Gradients] {
        let ev = inference::evaluate(&model, &data.test, mode, NormScope::Joint)?;
        println!("{:<9} {}", mode.name(), ev.summary());
    }
    println!("checkpoint from step {} of {}", run.best_step, cfg.iters);
    println!("{}", serde_json::to_string_pretty(&run.test.unwrap().record())?);
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("advcp-eval-{}", std::process::id()));
    std::fs::create_dir_all(&d).ok();
    d
}
