//! Class localization maps and pixel predictions.
//!
//! A map for class `k` is `ReLU(Σ_j F[j]·w_k[j])` over the fused feature
//! maps, computed at feature resolution, bilinearly resized to the input
//! size and then max-normalized per sample. The class weights `w_k` come
//! either from the head (`weights`, CAM) or from spatially averaged
//! gradients of the class probability (`gradients`, Grad-CAM).
//!
//! Head biases never enter a map, so an identical pair gives all-zero maps.


use crate::error::{Error, Result};
use crate::model::{ChangeClassifier, ForwardRecord, CHANGED, NUM_CLASSES, UNCHANGED};
use crate::tensor::{kernels, Tape, Tensor};

/// Below this, a map is treated as all zero and left unscaled.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CamMode {
    Weights,
    Gradients,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormScope {
    /// One maximum per sample over both channels.
    Joint,
    /// One maximum per sample and channel.
    Channel,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }

        impl ::std::fmt::Display for $ty {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(self.name())
            }
        }

        impl ::std::str::FromStr for $ty {
            type Err = $crate::Error;

            fn from_str(s: &str) -> $crate::Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err($crate::Error::Config(format!(
                        "{}: unknown value {other:?} (expected one of: {})",
                        stringify!($ty),
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}
pub(crate) use keyword_enum;

keyword_enum!(CamMode { Weights => "weights", Gradients => "gradients" });
keyword_enum!(NormScope { Joint => "joint", Channel => "channel" });

/// N×2×H×W maps, channel 0 unchanged and channel 1 changed.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationMaps {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
    pub normalized: bool,
    pub mode: CamMode,
}

impl LocalizationMaps {
    pub fn plane(&self, sample: usize, class: usize) -> &[f64] {
        let hw = self.h * self.w;
        &self.data[(sample * NUM_CLASSES + class) * hw..][..hw]
    }

    pub fn changed(&self, sample: usize) -> &[f64] {
        self.plane(sample, CHANGED)
    }

    pub fn unchanged(&self, sample: usize) -> &[f64] {
        self.plane(sample, UNCHANGED)
    }

    /// Max-normalizes in place. A sample (or channel) whose maximum is not
    /// above [`NORM_EPS`] is left as is.
    pub fn normalize(&mut self, scope: NormScope) {
        let hw = self.h * self.w;
        match scope {
            NormScope::Joint => {
                for s in self.data.chunks_exact_mut(NUM_CLASSES * hw) {
                    max_normalize(s);
                }
            }
            NormScope::Channel => {
                for s in self.data.chunks_exact_mut(hw) {
                    max_normalize(s);
                }
            }
        }
        self.normalized = true;
    }
}

/// Divides by the maximum when it exceeds [`NORM_EPS`].
pub fn max_normalize(values: &mut [f64]) {
    let m = values.iter().fold(0.0f64, |a, &v| a.max(v));
    if m > NORM_EPS {
        values.iter_mut().for_each(|v| *v /= m);
    }
}

/// Binary N×H×W mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionMask {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl PredictionMask {
    pub fn zeros(n: usize, h: usize, w: usize) -> Self {
        PredictionMask {
            n,
            h,
            w,
            data: vec![0; n * h * w],
        }
    }

    pub fn sample(&self, i: usize) -> &[u8] {
        let hw = self.h * self.w;
        &self.data[i * hw..][..hw]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    fn same_shape(&self, other: &PredictionMask) -> Result<()> {
        if (self.n, self.h, self.w) != (other.n, other.h, other.w) {
            return Err(Error::Shape(format!(
                "mask {}x{}x{} vs {}x{}x{}",
                self.n, self.h, self.w, other.n, other.h, other.w
            )));
        }
        Ok(())
    }

    pub(crate) fn check_shape(&self, other: &PredictionMask) -> Result<()> {
        self.same_shape(other)
    }
}

/// Per-sample, per-class weight vectors (`[sample][class][j]`).
pub type ClassWeights = Vec<[Vec<f64>; NUM_CLASSES]>;

pub(crate) fn check_fresh(record: &ForwardRecord<'_>, model: &ChangeClassifier) -> Result<()> {
    if record.version != model.version() {
        return Err(Error::StaleRecord {
            recorded: record.version,
            current: model.version(),
        });
    }
    Ok(())
}

/// Weight vectors behind each class channel.
///
/// In `gradients` mode `w_k = (1/hw)·Σ_spatial ∂ŷ_k/∂F`, where `ŷ_k` is the
/// softmax probability of class `k`, obtained by back-propagating through
/// the head on a scratch tape.
pub fn class_weights(
    record: &ForwardRecord<'_>,
    model: &ChangeClassifier,
    mode: CamMode,
) -> Result<ClassWeights> {
    check_fresh(record, model)?;
    let n = record.batch_size();
    match mode {
        CamMode::Weights => {
            let w_uc = model.class_weights(UNCHANGED);
            let w_c = model.class_weights(CHANGED);
            Ok(vec![[w_uc, w_c]; n])
        }
        CamMode::Gradients => {
            let features = record.tape.value(record.features).clone();
            let [_, d, h, w] = features.dims4()?;
            let per_class: Vec<Tensor> = (0..NUM_CLASSES)
                .map(|k| score_gradient(model, &features, k))
                .collect::<Result<_>>()?;
            let hw = (h * w) as f64;
            Ok((0..n)
                .map(|i| {
                    std::array::from_fn(|k| {
                        let g = per_class[k].data();
                        (0..d)
                            .map(|j| {
                                let plane = &g[(i * d + j) * h * w..][..h * w];
                                plane.iter().fold(0.0, |a, v| a + v) / hw
                            })
                            .collect()
                    })
                })
                .collect())
        }
    }
}

/// `∂(Σ_i ŷ_{i,k}) / ∂F`. Samples are independent, so each sample's slice is
/// the gradient of its own score.
fn score_gradient(model: &ChangeClassifier, features: &Tensor, k: usize) -> Result<Tensor> {
    let tape = Tape::new();
    let f = tape.leaf(features.clone(), true);
    let n = model.params().len();
    let weight = tape.constant(model.params()[n - 2].clone());
    let bias = tape.constant(model.params()[n - 1].clone());
    let pooled = tape.global_avg_pool(f)?;
    let logits = tape.linear(pooled, weight, bias)?;
    let probs = tape.softmax_rows(logits)?;
    let score = tape.select_column(probs, k)?;
    let total = tape.sum(score)?;
    Ok(tape.grad_of(total, &[f])?.remove(0))
}

/// `ReLU(Σ_j F[j]·w[j])` on one sample at feature resolution.
pub fn weighted_map(features: &[f64], d: usize, hw: usize, weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; hw];
    for (p, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..d {
            acc += features[j * hw + p] * weights[j];
        }
        *o = acc.max(0.0);
    }
    out
}

/// Unnormalized N×2×H×W maps from explicit weights.
pub fn maps_from_weights(
    features: &Tensor,
    weights: &ClassWeights,
    image_hw: (usize, usize),
    mode: CamMode,
) -> Result<LocalizationMaps> {
    let [n, d, h, w] = features.dims4()?;
    if weights.len() != n {
        return Err(Error::Shape(format!("{} weight sets for {n} samples", weights.len())));
    }
    let (oh, ow) = image_hw;
    let hw = h * w;
    let mut raw = Vec::with_capacity(n * NUM_CLASSES * hw);
    for (i, ws) in weights.iter().enumerate() {
        let f = &features.data()[i * d * hw..][..d * hw];
        for wk in ws {
            if wk.len() != d {
                return Err(Error::Shape(format!("class weights of length {} for D={d}", wk.len())));
            }
            raw.extend(weighted_map(f, d, hw, wk));
        }
    }
    Ok(LocalizationMaps {
        n,
        h: oh,
        w: ow,
        data: kernels::upsample_planes(&raw, h, w, oh, ow),
        normalized: false,
        mode,
    })
}

/// Class localization maps for a forward record, optionally normalized.
pub fn compute_localization(
    record: &ForwardRecord<'_>,
    model: &ChangeClassifier,
    mode: CamMode,
    norm: Option<NormScope>,
) -> Result<LocalizationMaps> {
    let weights = class_weights(record, model, mode)?;
    let features = record.tape.value(record.features);
    let mut maps = maps_from_weights(&features, &weights, record.image_hw, mode)?;
    if let Some(scope) = norm {
        maps.normalize(scope);
    }
    Ok(maps)
}

/// `P = 1` where `C_c ≥ C_uc`. Ties, including all-zero pixels, count as
/// changed.
pub fn predict(maps: &LocalizationMaps) -> PredictionMask {
    let hw = maps.h * maps.w;
    let mut data = Vec::with_capacity(maps.n * hw);
    for i in 0..maps.n {
        let (uc, c) = (maps.unchanged(i), maps.changed(i));
        data.extend(uc.iter().zip(c).map(|(u, c)| u8::from(c >= u)));
    }
    PredictionMask {
        n: maps.n,
        h: maps.h,
        w: maps.w,
        data,
    }
}

/// Prediction under the original image-level prompt: a sample labelled
/// unchanged has its changed channel switched off, so nothing in it is
/// predicted changed.
pub fn gate_by_labels(mut pred: PredictionMask, labels: &[u8]) -> Result<PredictionMask> {
    if labels.len() != pred.n {
        return Err(Error::Shape(format!("{} labels for {} samples", labels.len(), pred.n)));
    }
    let hw = pred.h * pred.w;
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            pred.data[i * hw..][..hw].fill(0);
        }
    }
    Ok(pred)
}

/// 1 where a normalized value reaches `tau`.
pub fn binarize(values: &[f64], tau: f64) -> Result<Vec<u8>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {tau}")));
    }
    Ok(values.iter().map(|&v| u8::from(v >= tau)).collect())
}

/// Binarized changed channel of normalized maps.
pub fn binarize_changed(maps: &LocalizationMaps, tau: f64) -> Result<PredictionMask> {
    if !maps.normalized {
        return Err(Error::Config("binarize_changed needs normalized maps".into()));
    }
    let mut data = Vec::with_capacity(maps.n * maps.h * maps.w);
    for i in 0..maps.n {
        data.extend(binarize(maps.changed(i), tau)?);
    }
    Ok(PredictionMask {
        n: maps.n,
        h: maps.h,
        w: maps.w,
        data,
    })
}
