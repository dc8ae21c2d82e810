//! Shared-weight two-stream change classifier.
//!
//! Both acquisition dates pass through the same stack of
//! `conv3x3(stride 2) + ReLU` blocks. The two feature stacks are fused by
//! absolute difference into the feature maps `F` (N×D×h×w), which a
//! global-average-pool + linear head turns into two logits. Column 0 of the
//! head weight belongs to the unchanged class, column 1 to the changed class;
//! those columns are exactly the CAM weights.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::PairedBatch;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const UNCHANGED: usize = 0;
pub const CHANGED: usize = 1;
pub const NUM_CLASSES: usize = 2;

const CHECKPOINT_MAGIC: &[u8; 6] = b"ADVCP1";

/// Architecture descriptor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub input_channels: usize,
    pub widths: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input_channels: 3,
            widths: vec![16, 32, 64],
            feature_dim: 64,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be positive".into()));
        }
        if self.widths.is_empty() {
            return Err(Error::Config("widths must not be empty".into()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("zero width in {:?}", self.widths)));
        }
        if self.widths.last() != Some(&self.feature_dim) {
            return Err(Error::Config(format!(
                "feature_dim {} must equal the last block width {:?}",
                self.feature_dim,
                self.widths.last()
            )));
        }
        Ok(())
    }

    /// `in=3;widths=16,32,64;d=64`
    pub fn descriptor(&self) -> String {
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        format!(
            "in={};widths={};d={}",
            self.input_channels,
            widths.join(","),
            self.feature_dim
        )
    }

    pub fn parse_descriptor(text: &str) -> Result<Self> {
        let mut cfg = ArchConfig {
            input_channels: 0,
            widths: vec![],
            feature_dim: 0,
        };
        for part in text.split(';') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad descriptor field {part:?}")))?;
            let num = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Checkpoint(format!("bad number {s:?} in descriptor")))
            };
            match k.trim() {
                "in" => cfg.input_channels = num(v)?,
                "d" => cfg.feature_dim = num(v)?,
                "widths" => cfg.widths = v.split(',').map(num).collect::<Result<_>>()?,
                other => return Err(Error::Checkpoint(format!("unknown descriptor key {other:?}"))),
            }
        }
        cfg.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(cfg)
    }

    /// Parameter shapes in declaration order: per block kernel then bias,
    /// then head weight (D×2) and head bias (2).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut cin = self.input_channels;
        for &w in &self.widths {
            shapes.push(vec![w, cin, 3, 3]);
            shapes.push(vec![w]);
            cin = w;
        }
        shapes.push(vec![self.feature_dim, NUM_CLASSES]);
        shapes.push(vec![NUM_CLASSES]);
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Spatial size of `F` for an `h×w` input.
    pub fn feature_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let step = |x: usize| (x + 2 - 3) / 2 + 1;
        self.widths
            .iter()
            .fold((h, w), |(a, b), _| (step(a), step(b)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChangeClassifier {
    arch: ArchConfig,
    params: Vec<Tensor>,
    version: u64,
}

/// Everything a forward pass leaves behind for localization and mining.
pub struct ForwardRecord<'t> {
    pub tape: &'t Tape,
    /// Parameter leaves in declaration order.
    pub params: Vec<Var>,
    /// Fused feature maps `F`, N×D×h×w.
    pub features: Var,
    /// N×2 logits.
    pub logits: Var,
    /// Changed-class softmax probability per sample.
    pub scores: Vec<f64>,
    /// Spatial size of the input images.
    pub image_hw: (usize, usize),
    /// Parameter version this record was produced at.
    pub version: u64,
}

impl ForwardRecord<'_> {
    pub fn batch_size(&self) -> usize {
        self.scores.len()
    }

    pub fn head_weight(&self) -> Var {
        self.params[self.params.len() - 2]
    }
}

impl ChangeClassifier {
    /// Fan-in scaled uniform init: He bounds `sqrt(6 / fan_in)` for the
    /// convolutions, `1 / sqrt(D)` for the head, zero biases.
    pub fn build(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = arch.param_shapes();
        let last = shapes.len() - 2;
        let params = shapes
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                if shape.len() == 1 {
                    return Tensor::zeros(&shape);
                }
                let fan_in: usize = shape[1..].iter().product();
                let bound = if i == last {
                    1.0 / (shape[0] as f64).sqrt()
                } else {
                    (6.0 / fan_in as f64).sqrt()
                };
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                Tensor::from_parts(shape, data)
            })
            .collect();
        Ok(ChangeClassifier {
            arch,
            params,
            version: 0,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Bumped on every parameter update; forward records remember it.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Head weight `W` (D×2).
    pub fn head_weight(&self) -> &Tensor {
        &self.params[self.params.len() - 2]
    }

    /// Class weight column `k` of the head (`w_uc` for 0, `w_c` for 1).
    pub fn class_weights(&self, k: usize) -> Vec<f64> {
        let w = self.head_weight();
        w.data().iter().skip(k).step_by(NUM_CLASSES).copied().collect()
    }

    /// Applies `f(param_index, values)` to every parameter and bumps the
    /// version.
    pub fn update(&mut self, mut f: impl FnMut(usize, &mut [f64])) {
        for (i, p) in self.params.iter_mut().enumerate() {
            f(i, p.data_mut());
        }
        self.version += 1;
    }

    /// Two-stream forward pass. `train` controls whether the parameters are
    /// recorded as gradient-carrying leaves.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        batch: &PairedBatch,
        train: bool,
    ) -> Result<ForwardRecord<'t>> {
        let params = self.register(tape, train);
        self.forward_with(tape, params, batch)
    }

    /// Records every parameter as a leaf of `tape`.
    pub fn register(&self, tape: &Tape, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.clone(), requires_grad))
            .collect()
    }

    /// Forward pass reusing already registered parameter leaves, so that
    /// several passes on one tape share gradients.
    pub fn forward_with<'t>(
        &self,
        tape: &'t Tape,
        params: Vec<Var>,
        batch: &PairedBatch,
    ) -> Result<ForwardRecord<'t>> {
        let [n, c, h, w] = batch.x_t1.dims4()?;
        if batch.x_t2.shape() != batch.x_t1.shape() {
            return Err(Error::Shape(format!(
                "temporal streams differ: {:?} vs {:?}",
                batch.x_t1.shape(),
                batch.x_t2.shape()
            )));
        }
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} parameter leaves for {} parameters",
                params.len(),
                self.params.len()
            )));
        }
        if c != self.arch.input_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, batch has {c}",
                self.arch.input_channels
            )));
        }

        let mut stacked = Vec::with_capacity(2 * batch.x_t1.len());
        stacked.extend_from_slice(batch.x_t1.data());
        stacked.extend_from_slice(batch.x_t2.data());
        let mut x = tape.constant(Tensor::from_parts(vec![2 * n, c, h, w], stacked));
        for b in 0..self.arch.widths.len() {
            x = tape.conv2d(x, params[2 * b], params[2 * b + 1], 2, 1)?;
            x = tape.relu(x)?;
        }
        let features = tape.abs_diff_halves(x)?;
        let pooled = tape.global_avg_pool(features)?;
        let k = params.len();
        let logits = tape.linear(pooled, params[k - 2], params[k - 1])?;
        let scores = softmax_changed(&tape.value(logits));
        Ok(ForwardRecord {
            tape,
            params,
            features,
            logits,
            scores,
            image_hw: (h, w),
            version: self.version,
        })
    }

    /// Raw logits only, through a throwaway tape.
    pub fn predict_logits(&self, batch: &PairedBatch) -> Result<Tensor> {
        let tape = Tape::new();
        let rec = self.forward(&tape, batch, false)?;
        let out = tape.value(rec.logits).clone();
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }

    /// Little-endian layout: magic `ADVCP1`, u32 descriptor length, UTF-8
    /// descriptor, then per parameter a u32 rank, u32 dims and f64 values.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let desc = self.arch.descriptor();
        w.write_all(&(desc.len() as u32).to_le_bytes())?;
        w.write_all(desc.as_bytes())?;
        for p in &self.params {
            w.write_all(&(p.shape().len() as u32).to_le_bytes())?;
            for &d in p.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in p.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let len = read_u32(r)? as usize;
        let mut desc = vec![0u8; len];
        r.read_exact(&mut desc)?;
        let desc = String::from_utf8(desc)
            .map_err(|_| Error::Checkpoint("descriptor is not UTF-8".into()))?;
        let arch = ArchConfig::parse_descriptor(&desc)?;
        let mut params = Vec::new();
        for expected in arch.param_shapes() {
            let rank = read_u32(r)? as usize;
            let shape = (0..rank)
                .map(|_| read_u32(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if shape != expected {
                return Err(Error::Checkpoint(format!(
                    "parameter shape {shape:?}, descriptor implies {expected:?}"
                )));
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            params.push(Tensor::new(shape, data)?);
        }
        Ok(ChangeClassifier {
            arch,
            params,
            version: 0,
        })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Changed-class probability of each row of an N×2 logit tensor.
pub fn softmax_changed(logits: &Tensor) -> Vec<f64> {
    logits
        .data()
        .chunks_exact(NUM_CLASSES)
        .map(|z| {
            let m = z[0].max(z[1]);
            let e0 = (z[0] - m).exp();
            let e1 = (z[1] - m).exp();
            e1 / (e0 + e1)
        })
        .collect()
}
