//! Generate the synthetic bi-temporal benchmark and write it to disk.
//!
//! ```text
//! cargo run --release --example gen_data -- /tmp/advcp-data
//! ```

use std::path::PathBuf;

use advcp::config::Settings;
use advcp::data::{SceneConfig, Split};
use advcp::trainer::Dataset;

fn main() -> advcp::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "advcp-data".into()));
    let scene = SceneConfig {
        train_size: 64,
        val_size: 16,
        test_size: 16,
        ..SceneConfig::default()
    };
    let ds = Dataset::generate(&scene)?;
    ds.write(&out)?;
    std::fs::write(out.join("scene.cfg"), scene.to_text())?;

    for split in Split::ALL {
        let s = ds.split(split);
        let changed = s.iter().filter(|p| p.label == 1).count();
        let noisy = s
            .iter()
            .filter(|p| p.noise_mask.as_ref().is_some_and(|m| m.contains(&1)))
            .count();
        println!(
            "{:<5} {:>4} pairs, {:>3} changed, {:>3} with distractors",
            split.name(),
            s.len(),
            changed,
            noisy
        );
    }
    println!("written to {}", out.display());
    Ok(())
}
