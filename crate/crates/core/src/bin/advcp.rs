use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use advcp::config::{KeyValues, Settings};
use advcp::data::{self, SceneConfig, Split};
use advcp::trainer::{self, Dataset, TrainConfig};
use advcp::{export, inference, Error, Result};

#[derive(Parser)]
#[command(name = "advcp", version, about = "Weakly-supervised change detection with adversarial class prompting")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Overrides {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra settings as `--key value` or `--key=value`, applied after the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    rest: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train a model and write a run directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train the plain classifier (alpha = 0).
        #[arg(long)]
        no_advcp: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a run's checkpoint on a split.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Where to write the metrics record (default: stdout only).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one parameter over values and seeds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        /// Comma-separated seeds.
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
        /// CSV table path.
        #[arg(long)]
        out: PathBuf,
        /// Optional directory receiving one run directory per cell.
        #[arg(long)]
        runs: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write class maps, mined masks and error maps as PNGs.
    ExportHeatmaps {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-pixel features with labels as CSV.
    ExportFeatures {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn settings<S: Settings>(base: S, o: &Overrides) -> Result<S> {
    let mut s = base;
    if let Some(path) = &o.config {
        s.apply(&KeyValues::read(path)?)?;
    }
    let mut kv = KeyValues::default();
    let mut args = o.rest.iter();
    while let Some(a) = args.next() {
        let key = a
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected --key, got {a:?}")))?;
        match key.split_once('=') {
            Some((k, v)) => kv.push(k, v),
            None => {
                let v = args
                    .next()
                    .ok_or_else(|| Error::Config(format!("--{key} needs a value")))?;
                kv.push(key, v);
            }
        }
    }
    s.apply(&kv)?;
    Ok(s)
}

fn split_samples(dir: &Path, split: Split, count: Option<usize>) -> Result<Vec<data::PairedSample>> {
    let mut s = data::load_dataset(&dir.join(split.name()))?;
    if let Some(n) = count {
        s.truncate(n);
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::GenData { out, overrides } => {
            let scene = settings(SceneConfig::default(), &overrides)?;
            let ds = Dataset::generate(&scene)?;
            ds.write(&out)?;
            std::fs::write(out.join("scene.cfg"), scene.to_text())?;
            println!(
                "wrote {} / {} / {} pairs to {}",
                ds.train.len(),
                ds.val.len(),
                ds.test.len(),
                out.display()
            );
        }
        Command::Train {
            data,
            out,
            no_advcp,
            overrides,
        } => {
            let mut cfg = settings(TrainConfig::default(), &overrides)?;
            if no_advcp {
                cfg.alpha = 0.0;
            }
            let ds = Dataset::load(&data)?;
            let every = (cfg.iters / 20).max(1);
            let run = trainer::train_with_progress(&cfg, &ds, |s| {
                if s.step % every == 0 {
                    log::info!(
                        "step {} L_cls {:.4} L_adv {:.4} N_adv {} |p_uc| {:.3}",
                        s.step,
                        s.l_cls,
                        s.l_adv,
                        s.n_adv,
                        s.p_uc_norm
                    );
                }
            })?;
            trainer::write_run(&run, &out)?;
            match &run.test {
                Some(ev) => println!("test (step {}): {}", run.best_step, ev.summary()),
                None => println!("trained {} steps; no labelled test split", cfg.iters),
            }
        }
        Command::Eval { run, data, split, out } => {
            let (cfg, model) = trainer::load_run(&run)?;
            let samples = split_samples(&data, split, None)?;
            let ev = inference::evaluate(&model, &samples, cfg.cam_mode, cfg.norm_scope)?;
            println!("{}: {}", split.name(), ev.summary());
            let json = serde_json::to_string_pretty(&ev.record())?;
            match out {
                Some(p) => std::fs::write(p, json + "\n")?,
                None => println!("{json}"),
            }
        }
        Command::Ablate {
            data,
            param,
            values,
            seeds,
            out,
            runs,
            overrides,
        } => {
            let cfg = settings(TrainConfig::default(), &overrides)?;
            if !trainer::ABLATION_PARAMS.contains(&param.as_str()) {
                return Err(Error::Config(format!(
                    "cannot ablate {param:?}; choose one of {}",
                    trainer::ABLATION_PARAMS.join(", ")
                )));
            }
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
            let seeds: Vec<u64> = advcp::config::parse_list("seeds", &seeds)?;
            let ds = Dataset::load(&data)?;
            let table = trainer::ablate(&cfg, &param, &values, &seeds, &ds, runs.as_deref())?;
            table.write_csv(&out)?;
            for v in &values {
                if let Some(r) = table.mean_of(v) {
                    println!("{param}={v}: F1 {:.2} IoU {:.2}", 100.0 * r.f1, 100.0 * r.iou);
                }
            }
        }
        Command::ExportHeatmaps {
            run,
            data,
            split,
            count,
            out,
        } => {
            let (cfg, model) = trainer::load_run(&run)?;
            let samples = split_samples(&data, split, Some(count))?;
            let files = export::export_heatmaps(&model, &cfg.mining(), &samples, &out)?;
            println!("wrote {} images to {}", files.len(), out.display());
        }
        Command::ExportFeatures {
            run,
            data,
            split,
            count,
            out,
        } => {
            let (cfg, model) = trainer::load_run(&run)?;
            let samples = split_samples(&data, split, Some(count))?;
            let rows = export::export_features(&model, &cfg.mining(), &samples, &out)?;
            println!("wrote {rows} rows to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
