//! Training loop, evaluation cadence, run directories, and ablation sweeps.
//!
//! One step:
//!
//! 1. forward the batch and compute `L_cls`;
//! 2. run the adversarial phase (mining, prototype update, `L_adv`);
//! 3. minimise `L_cls + α·L_adv` from `warmup` on, `L_cls` before.
//!
//! With `adv_apply = next_step` the adversarial phase of a batch runs after
//! that batch's parameter update, so its `L_adv` joins the following step's
//! objective; with `same_step` it runs on the batch's own forward pass.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::advcp::{self, AdvSource, Granularity, LossVariant, MaskMode, MiningConfig, PrototypeState};
use crate::cam::{keyword_enum, CamMode, NormScope};
use crate::config::{parse_bool, parse_list, parse_value, show_list, KeyValues, Settings};
use crate::data::{self, PairedBatch, PairedSample, SceneConfig, Split};
use crate::error::{Error, Result};
use crate::inference::{self, Evaluation};
use crate::metrics::MetricsRecord;
use crate::model::{ArchConfig, ChangeClassifier};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdvApply {
    SameStep,
    NextStep,
}

keyword_enum!(AdvApply { SameStep => "same_step", NextStep => "next_step" });

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub warmup: u64,
    pub batch_size: usize,
    pub iters: u64,
    pub lr: f64,
    pub lr_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Rescale the gradient to at most this global L2 norm (0 = off).
    pub clip_norm: f64,
    /// Train the classifier head bias. Off by default: with a free bias the
    /// unchanged class is predicted through the bias alone and `C_uc`
    /// collapses below `C_c` everywhere.
    pub head_bias: bool,
    pub cam_mode: CamMode,
    pub norm_scope: NormScope,
    pub mask_mode: MaskMode,
    pub adv_source: AdvSource,
    pub tau_adv: f64,
    pub label_gate: bool,
    pub granularity: Granularity,
    pub loss_variant: LossVariant,
    pub margin: f64,
    pub adv_apply: AdvApply,
    pub eval_every: u64,
    pub widths: Vec<usize>,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            lambda: 0.5,
            warmup: 200,
            batch_size: 16,
            iters: 3000,
            lr: 0.02,
            lr_power: 0.9,
            momentum: 0.9,
            weight_decay: 0.0,
            clip_norm: 0.0,
            head_bias: false,
            cam_mode: CamMode::Weights,
            norm_scope: NormScope::Joint,
            mask_mode: MaskMode::Xor,
            adv_source: AdvSource::All,
            tau_adv: 0.5,
            label_gate: true,
            granularity: Granularity::OnlineGlobal,
            loss_variant: LossVariant::CenterAccumulated,
            margin: 1.0,
            adv_apply: AdvApply::NextStep,
            eval_every: 200,
            widths: vec![16, 32, 64],
            feature_dim: 64,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            input_channels: data::CHANNELS,
            widths: self.widths.clone(),
            feature_dim: self.feature_dim,
        }
    }

    pub fn mining(&self) -> MiningConfig {
        MiningConfig {
            cam_mode: self.cam_mode,
            norm_scope: self.norm_scope,
            mask_mode: self.mask_mode,
            source: self.adv_source,
            tau_adv: self.tau_adv,
            label_gate: self.label_gate,
            loss: self.loss_variant,
            margin: self.margin,
        }
    }
}

impl Settings for TrainConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "alpha" => self.alpha = parse_value(key, v)?,
            "lambda" => self.lambda = parse_value(key, v)?,
            "warmup" => self.warmup = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "iters" => self.iters = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "lr_power" => self.lr_power = parse_value(key, v)?,
            "momentum" => self.momentum = parse_value(key, v)?,
            "weight_decay" => self.weight_decay = parse_value(key, v)?,
            "clip_norm" => self.clip_norm = parse_value(key, v)?,
            "head_bias" => self.head_bias = parse_bool(key, v)?,
            "cam_mode" => self.cam_mode = parse_value(key, v)?,
            "norm_scope" => self.norm_scope = parse_value(key, v)?,
            "mask_mode" => self.mask_mode = parse_value(key, v)?,
            "adv_source" => self.adv_source = parse_value(key, v)?,
            "tau_adv" => self.tau_adv = parse_value(key, v)?,
            "label_gate" => self.label_gate = parse_bool(key, v)?,
            "granularity" => self.granularity = parse_value(key, v)?,
            "loss_variant" => self.loss_variant = parse_value(key, v)?,
            "margin" => self.margin = parse_value(key, v)?,
            "adv_apply" => self.adv_apply = parse_value(key, v)?,
            "eval_every" => self.eval_every = parse_value(key, v)?,
            "widths" => self.widths = parse_list(key, v)?,
            "feature_dim" => self.feature_dim = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("alpha", self.alpha.to_string()),
            ("lambda", self.lambda.to_string()),
            ("warmup", self.warmup.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("iters", self.iters.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_power", self.lr_power.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("head_bias", self.head_bias.to_string()),
            ("cam_mode", self.cam_mode.to_string()),
            ("norm_scope", self.norm_scope.to_string()),
            ("mask_mode", self.mask_mode.to_string()),
            ("adv_source", self.adv_source.to_string()),
            ("tau_adv", self.tau_adv.to_string()),
            ("label_gate", self.label_gate.to_string()),
            ("granularity", self.granularity.to_string()),
            ("loss_variant", self.loss_variant.to_string()),
            ("margin", self.margin.to_string()),
            ("adv_apply", self.adv_apply.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("widths", show_list(&self.widths)),
            ("feature_dim", self.feature_dim.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.weight_decay < 0.0
            || self.lr_power < 0.0
            || self.margin < 0.0
            || !(self.clip_norm >= 0.0)
        {
            return bad("weight_decay, lr_power, margin and clip_norm must be nonnegative".into());
        }
        if !(self.tau_adv > 0.0 && self.tau_adv < 1.0) {
            return bad(format!("tau_adv must lie in (0, 1), got {}", self.tau_adv));
        }
        self.arch().validate()
    }
}

/// `base·(1 − step/total)^power`.
pub fn poly_lr(base: f64, step: u64, total: u64, power: f64) -> f64 {
    if total == 0 {
        return base;
    }
    base * (1.0 - step as f64 / total as f64).max(0.0).powf(power)
}

/// SGD with heavy-ball momentum: `v ← μ·v + g + wd·θ`, `θ ← θ − lr·v`.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Updates parameter slot `index` in place.
    pub fn apply(&mut self, index: usize, param: &mut [f64], grad: &[f64], lr: f64) {
        if self.velocity.len() <= index {
            self.velocity.resize(index + 1, Vec::new());
        }
        let v = &mut self.velocity[index];
        if v.len() != param.len() {
            *v = vec![0.0; param.len()];
        }
        for ((p, g), vi) in param.iter_mut().zip(grad).zip(v.iter_mut()) {
            *vi = self.momentum * *vi + g + self.weight_decay * *p;
            *p -= lr * *vi;
        }
    }
}

/// In-memory splits.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<PairedSample>,
    pub val: Vec<PairedSample>,
    pub test: Vec<PairedSample>,
}

impl Dataset {
    pub fn generate(scene: &SceneConfig) -> Result<Self> {
        Ok(Dataset {
            train: data::generate(scene, Split::Train)?,
            val: data::generate(scene, Split::Val)?,
            test: data::generate(scene, Split::Test)?,
        })
    }

    /// Reads `<dir>/train`, `<dir>/val`, `<dir>/test`; val and test are
    /// optional.
    pub fn load(dir: &Path) -> Result<Self> {
        let optional = |split: Split| -> Result<Vec<PairedSample>> {
            let d = dir.join(split.name());
            if d.join("index.csv").exists() {
                data::load_dataset(&d)
            } else {
                Ok(Vec::new())
            }
        };
        Ok(Dataset {
            train: data::load_dataset(&dir.join(Split::Train.name()))?,
            val: optional(Split::Val)?,
            test: optional(Split::Test)?,
        })
    }

    /// Writes every split in the on-disk layout; masks only for val/test.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (split, samples) in [
            (Split::Train, &self.train),
            (Split::Val, &self.val),
            (Split::Test, &self.test),
        ] {
            data::write_dataset(samples, &dir.join(split.name()), split.has_masks_on_disk())?;
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> &[PairedSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// One row of `train_log.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: u64,
    #[serde(rename = "L_cls")]
    pub l_cls: f64,
    #[serde(rename = "L_adv")]
    pub l_adv: f64,
    #[serde(rename = "L")]
    pub total: f64,
    #[serde(rename = "N_adv")]
    pub n_adv: usize,
    #[serde(rename = "N_uc")]
    pub n_uc: usize,
    pub p_uc_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalPoint {
    pub step: u64,
    pub split: String,
    #[serde(flatten)]
    pub metrics: MetricsRecord,
}

/// Everything a training run produces.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config: TrainConfig,
    /// Checkpoint with the best validation F1 (the final one without a
    /// validation split).
    pub best: ChangeClassifier,
    pub best_step: u64,
    pub last: ChangeClassifier,
    pub log: Vec<StepLog>,
    pub evals: Vec<EvalPoint>,
    pub prototype: PrototypeState,
    /// Test metrics of `best`, when the test split has ground truth.
    pub test: Option<Evaluation>,
}

struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        Batcher {
            order: (0..n).collect(),
            cursor: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Next `size` indices, reshuffling at each epoch boundary.
    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn make_batch(samples: &[PairedSample], idx: &[usize]) -> Result<PairedBatch> {
    let refs: Vec<&PairedSample> = idx.iter().map(|&i| &samples[i]).collect();
    PairedBatch::from_samples(&refs)
}

/// One pass over `samples` with the current model: mean feature vector of
/// all original-prompt unchanged pixels.
pub fn global_unchanged_mean(
    model: &ChangeClassifier,
    samples: &[PairedSample],
    mining: &MiningConfig,
) -> Result<Vec<f64>> {
    let d = model.arch().feature_dim;
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for chunk in samples.chunks(inference::EVAL_BATCH) {
        let refs: Vec<&PairedSample> = chunk.iter().collect();
        let batch = PairedBatch::from_samples(&refs)?;
        let tape = Tape::new();
        let rec = model.forward(&tape, &batch, mining.cam_mode == CamMode::Gradients)?;
        let p = advcp::original_prediction(&rec, model, mining, &batch.labels)?;
        let (mean, n) = advcp::batch_unchanged_prototype(&tape.value(rec.features), &p)?;
        for (s, m) in sum.iter_mut().zip(&mean) {
            *s += m * n as f64;
        }
        count += n;
    }
    if count > 0 {
        sum.iter_mut().for_each(|v| *v /= count as f64);
    }
    Ok(sum)
}

/// Trains on `data.train`, evaluating on `data.val` every `eval_every`
/// steps and on `data.test` at the end.
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<RunRecord> {
    train_with_progress(cfg, data, |_| {})
}

/// [`train`] with a callback after every step.
pub fn train_with_progress(
    cfg: &TrainConfig,
    data: &Dataset,
    mut progress: impl FnMut(&StepLog),
) -> Result<RunRecord> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mining = cfg.mining();
    let mut model = ChangeClassifier::build(cfg.arch(), cfg.seed)?;
    let mut state = PrototypeState::new(cfg.feature_dim, cfg.lambda, cfg.granularity)?;
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut batcher = Batcher::new(data.train.len(), cfg.seed);
    let mut pending: Option<PairedBatch> = None;
    let mut log = Vec::with_capacity(cfg.iters as usize);
    let mut evals = Vec::new();
    let mut best: Option<(f64, u64, ChangeClassifier)> = None;
    let has_val = !data.val.is_empty();

    for step in 0..cfg.iters {
        let batch = make_batch(&data.train, &batcher.next(cfg.batch_size))?;

        if cfg.granularity == Granularity::FrozenGlobal && !state.is_frozen() && step >= cfg.warmup {
            let p = global_unchanged_mean(&model, &data.train, &mining)?;
            state.freeze(p)?;
        }

        let tape = Tape::new();
        let params = model.register(&tape, true);
        let rec = model.forward_with(&tape, params.clone(), &batch)?;
        let l_cls = tape.softmax_cross_entropy(rec.logits, &batch.labels)?;

        let adv = match cfg.adv_apply {
            AdvApply::SameStep => Some(advcp::adversarial_step(&rec, &model, &batch.labels, &mining, &mut state)?),
            AdvApply::NextStep => match pending.take() {
                Some(prev) => {
                    let prev_rec = model.forward_with(&tape, params.clone(), &prev)?;
                    Some(advcp::adversarial_step(&prev_rec, &model, &prev.labels, &mining, &mut state)?)
                }
                None => None,
            },
        };

        let l_cls_v = tape.value(l_cls).item()?;
        let l_adv_v = match &adv {
            Some(a) => tape.value(a.loss).item()?,
            None => 0.0,
        };
        let breakdown = advcp::total_loss(l_cls_v, l_adv_v, cfg.alpha, step, cfg.warmup)?;
        let objective = match &adv {
            Some(a) if breakdown.applied && cfg.alpha > 0.0 => {
                let scaled = tape.scale(a.loss, cfg.alpha)?;
                tape.add(l_cls, scaled)?
            }
            _ => l_cls,
        };
        let grads = tape.grad_of(objective, &params).map_err(|e| annotate(e, step, &batch))?;
        for g in &grads {
            g.check_finite("gradient").map_err(|e| annotate(e, step, &batch))?;
        }
        let lr = poly_lr(cfg.lr, step, cfg.iters, cfg.lr_power);
        let frozen = if cfg.head_bias { usize::MAX } else { params.len() - 1 };
        let scale = clip_scale(&grads, frozen, cfg.clip_norm);
        model.update(|i, p| {
            if i == frozen {
                return;
            }
            if scale == 1.0 {
                sgd.apply(i, p, grads[i].data(), lr)
            } else {
                let g: Vec<f64> = grads[i].data().iter().map(|v| v * scale).collect();
                sgd.apply(i, p, &g, lr)
            }
        });
        drop(rec);
        drop(tape);

        let entry = StepLog {
            step,
            l_cls: breakdown.l_cls,
            l_adv: breakdown.l_adv,
            total: breakdown.total,
            n_adv: adv.as_ref().map_or(0, |a| a.n_adv),
            n_uc: adv.as_ref().map_or(0, |a| a.n_uc),
            p_uc_norm: state.norm(),
        };
        progress(&entry);
        log.push(entry);
        if cfg.adv_apply == AdvApply::NextStep {
            pending = Some(batch);
        }

        let done = step + 1;
        if has_val && cfg.eval_every > 0 && (done % cfg.eval_every == 0 || done == cfg.iters) {
            let ev = inference::evaluate(&model, &data.val, cfg.cam_mode, cfg.norm_scope)?;
            let f1 = ev.summary().f1;
            evals.push(EvalPoint {
                step: done,
                split: Split::Val.name().into(),
                metrics: ev.record(),
            });
            if best.as_ref().map_or(true, |(b, _, _)| f1 > *b) {
                best = Some((f1, done, model.clone()));
            }
        }
    }

    let (best_step, best_model) = match best {
        Some((_, s, m)) => (s, m),
        None => (cfg.iters, model.clone()),
    };
    let test = if !data.test.is_empty() && data.test.iter().all(|s| s.gt_mask.is_some()) {
        let ev = inference::evaluate(&best_model, &data.test, cfg.cam_mode, cfg.norm_scope)?;
        evals.push(EvalPoint {
            step: best_step,
            split: Split::Test.name().into(),
            metrics: ev.record(),
        });
        Some(ev)
    } else {
        None
    };
    Ok(RunRecord {
        config: cfg.clone(),
        best: best_model,
        best_step,
        last: model,
        log,
        evals,
        prototype: state,
        test,
    })
}

fn annotate(e: Error, step: u64, batch: &PairedBatch) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!(
            "{msg} (step {step}, batch ids: {})",
            batch.ids.join(",")
        )),
        other => other,
    }
}

/// Factor bringing the global gradient norm (frozen parameter excluded)
/// down to `max_norm`; 1 when clipping is off or not needed.
fn clip_scale(grads: &[Tensor], frozen: usize, max_norm: f64) -> f64 {
    if max_norm <= 0.0 {
        return 1.0;
    }
    let sq: f64 = grads
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != frozen)
        .flat_map(|(_, g)| g.data())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        max_norm / norm
    } else {
        1.0
    }
}

pub const CONFIG_FILE: &str = "config.snapshot";
pub const LOG_FILE: &str = "train_log.csv";
pub const EVAL_LOG_FILE: &str = "eval_log.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LAST_CHECKPOINT_FILE: &str = "last.ckpt";

/// Writes the run directory: config snapshot, step log, evaluation log,
/// final metrics and checkpoints.
pub fn write_run(run: &RunRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), run.config.to_text())?;

    let mut w = csv::Writer::from_path(dir.join(LOG_FILE))?;
    for row in &run.log {
        w.serialize(row)?;
    }
    w.flush()?;

    // csv cannot serialize flattened structs; the header is written by hand
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(dir.join(EVAL_LOG_FILE))?;
    w.write_record(["step", "split", "precision", "recall", "f1", "oa", "iou", "tp", "fp", "fn", "tn"])?;
    for e in &run.evals {
        w.serialize((e.step, &e.split, &e.metrics))?;
    }
    w.flush()?;

    let final_metrics = run
        .evals
        .iter()
        .rev()
        .find(|e| e.split == Split::Test.name())
        .or_else(|| run.evals.last());
    if let Some(e) = final_metrics {
        let mut f = fs::File::create(dir.join(METRICS_FILE))?;
        serde_json::to_writer_pretty(&mut f, &e.metrics)?;
        writeln!(f)?;
    }
    run.best.save(&dir.join(CHECKPOINT_FILE))?;
    run.last.save(&dir.join(LAST_CHECKPOINT_FILE))?;
    Ok(())
}

/// Reads back a run's configuration and reported checkpoint.
pub fn load_run(dir: &Path) -> Result<(TrainConfig, ChangeClassifier)> {
    let mut cfg = TrainConfig::default();
    // a missing run directory is a runtime failure, not a bad config
    let text = fs::read_to_string(dir.join(CONFIG_FILE))?;
    cfg.apply(&KeyValues::parse(&text)?)?;
    let model = ChangeClassifier::load(&dir.join(CHECKPOINT_FILE))?;
    Ok((cfg, model))
}

/// Loads `data_dir`, trains, and writes `run_dir`.
pub fn train_dir(cfg: &TrainConfig, data_dir: &Path, run_dir: &Path) -> Result<RunRecord> {
    let data = Dataset::load(data_dir)?;
    let run = train(cfg, &data)?;
    write_run(&run, run_dir)?;
    Ok(run)
}

/// Parameters an ablation can sweep.
pub const ABLATION_PARAMS: [&str; 5] = ["lambda", "alpha", "granularity", "loss_variant", "mask_mode"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub param: String,
    pub value: String,
    pub seed: String,
    pub f1: f64,
    pub iou: f64,
    pub oa: f64,
    pub precision: f64,
    pub recall: f64,
    pub noise_fp: f64,
}

#[derive(Clone, Debug)]
pub struct AblationTable {
    /// One row per `(value, seed)`, then per value a `mean` and a `std` row.
    pub rows: Vec<AblationRow>,
    pub runs: Vec<RunRecord>,
}

impl AblationTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-seed rows for one value.
    pub fn rows_for(&self, value: &str) -> Vec<&AblationRow> {
        self.rows
            .iter()
            .filter(|r| r.value == value && r.seed != "mean" && r.seed != "std")
            .collect()
    }

    pub fn mean_of(&self, value: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.value == value && r.seed == "mean")
    }
}

/// Full cross product of `values × seeds` over `param`, evaluated on the
/// test split. `run_root`, when given, receives one run directory per cell.
pub fn ablate(
    base: &TrainConfig,
    param: &str,
    values: &[String],
    seeds: &[u64],
    data: &Dataset,
    run_root: Option<&Path>,
) -> Result<AblationTable> {
    if !ABLATION_PARAMS.contains(&param) {
        return Err(Error::Config(format!(
            "cannot ablate {param:?}; choose one of {}",
            ABLATION_PARAMS.join(", ")
        )));
    }
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one value and one seed".into()));
    }
    // validate every value before spending time on training
    let configs: Vec<TrainConfig> = values
        .iter()
        .map(|v| {
            let mut c = base.clone();
            c.set(param, v)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (value, cfg) in values.iter().zip(&configs) {
        let mut cells = Vec::new();
        for &seed in seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            log::info!("ablate {param}={value} seed={seed}");
            let run = train(&c, data)?;
            let ev = run
                .test
                .clone()
                .ok_or_else(|| Error::MissingGroundTruth("test split".into()))?;
            if let Some(root) = run_root {
                write_run(&run, &root.join(format!("{param}={value}_seed={seed}")))?;
            }
            let s = ev.summary();
            let row = AblationRow {
                param: param.into(),
                value: value.clone(),
                seed: seed.to_string(),
                f1: s.f1,
                iou: s.iou,
                oa: s.oa,
                precision: s.precision,
                recall: s.recall,
                noise_fp: ev.noise_fp as f64,
            };
            cells.push(row.clone());
            rows.push(row);
            runs.push(run);
        }
        let (mean, std) = aggregate(&cells);
        rows.push(mean);
        rows.push(std);
    }
    Ok(AblationTable { rows, runs })
}

fn aggregate(cells: &[AblationRow]) -> (AblationRow, AblationRow) {
    let n = cells.len() as f64;
    let stat = |f: fn(&AblationRow) -> f64| {
        let m = cells.iter().map(f).sum::<f64>() / n;
        let var = cells.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / n;
        (m, var.sqrt())
    };
    let fields: [fn(&AblationRow) -> f64; 7] = [
        |r| r.f1,
        |r| r.iou,
        |r| r.oa,
        |r| r.precision,
        |r| r.recall,
        |r| r.noise_fp,
        |_| 0.0,
    ];
    let s: Vec<(f64, f64)> = fields.iter().map(|f| stat(*f)).collect();
    let make = |tag: &str, pick: fn((f64, f64)) -> f64| AblationRow {
        param: cells[0].param.clone(),
        value: cells[0].value.clone(),
        seed: tag.into(),
        f1: pick(s[0]),
        iou: pick(s[1]),
        oa: pick(s[2]),
        precision: pick(s[3]),
        recall: pick(s[4]),
        noise_fp: pick(s[5]),
    };
    (make("mean", |p| p.0), make("std", |p| p.1))
}
