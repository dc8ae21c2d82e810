//! Train on a freshly generated benchmark and report test metrics.
//!
//! Arguments are `key=value` settings; keys prefixed with `scene.` go to the
//! generator, the rest to the trainer.
//!
//! ```text
//! cargo run --release --example train -- iters=600 alpha=1 scene.image_size=32
//! ```

use std::time::Instant;

use advcp::config::{KeyValues, Settings};
use advcp::data::SceneConfig;
use advcp::trainer::{self, Dataset, TrainConfig};

fn main() -> advcp::Result<()> {
    let mut scene = SceneConfig {
        train_size: 400,
        val_size: 64,
        test_size: 128,
        ..SceneConfig::default()
    };
    let mut cfg = TrainConfig {
        iters: 400,
        warmup: 100,
        eval_every: 100,
        ..TrainConfig::default()
    };
    let (mut s_kv, mut t_kv) = (KeyValues::default(), KeyValues::default());
    for arg in std::env::args().skip(1) {
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| advcp::Error::Config(format!("expected key=value, got {arg:?}")))?;
        match k.strip_prefix("scene.") {
            Some(k) => s_kv.push(k, v),
            None => t_kv.push(k, v),
        }
    }
    scene.apply(&s_kv)?;
    cfg.apply(&t_kv)?;

    let data = Dataset::generate(&scene)?;
    let every = (cfg.iters / 10).max(1);
    let t0 = Instant::now();
    let run = trainer::train_with_progress(&cfg, &data, |s| {
        if s.step % every == 0 {
            println!(
                "step {:>5}  L_cls {:.4}  L_adv {:.4}  N_adv {:>6}  |p_uc| {:.3}  {:.1}s",
                s.step,
                s.l_cls,
                s.l_adv,
                s.n_adv,
                s.p_uc_norm,
                t0.elapsed().as_secs_f64()
            );
        }
    })?;
    for e in &run.evals {
        println!("{} @ {}: f1 {:.4} iou {:.4}", e.split, e.step, e.metrics.f1, e.metrics.iou);
    }
    if let Some(ev) = &run.test {
        println!("test: {}  (distractor FP {} / {})", ev.summary(), ev.noise_fp, ev.noise_pixels);
    }
    Ok(())
}
