//! Five binary classifiers behind one interface: logistic regression,
//! k-nearest neighbours, a tanh RNN, an LSTM and a 1-D CNN.
//!
//! Inputs are `(channels, length)` samples. Every kind standardizes each
//! channel with statistics from its training set. Gradient-trained kinds
//! minimize binary cross-entropy on the logit with plain mini-batch
//! gradient descent; recurrent kinds first mean-pool time by
//! `time_stride` and clip the gradient norm.

pub mod cnn;
mod io;
pub mod net;
pub mod recurrent;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cnn::ConvBlock;
pub use io::{decode_model, encode_model, load_model, save_model, MODEL_FORMAT_VERSION};
use net::{sigmoid, Logistic, Network};

use crate::segmentation::Epoch;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("training labels contain a single class")]
    SingleClassTraining,
    #[error("loss became non-finite in training epoch {epoch}")]
    NonFiniteLoss { epoch: usize, log: Vec<f64> },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("model format version {found} is not supported (expected {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt model: {0}")]
    CorruptModel(String),
}

pub type Result<T> = std::result::Result<T, ClassifierError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[serde(alias = "lr")]
    LogisticRegression,
    Knn,
    Rnn,
    Lstm,
    Cnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::LogisticRegression,
        ModelKind::Knn,
        ModelKind::Rnn,
        ModelKind::Lstm,
        ModelKind::Cnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LogisticRegression => "logistic_regression",
            ModelKind::Knn => "knn",
            ModelKind::Rnn => "rnn",
            ModelKind::Lstm => "lstm",
            ModelKind::Cnn => "cnn",
        }
    }

    pub fn is_gradient_trained(self) -> bool {
        self != ModelKind::Knn
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, ModelKind::Rnn | ModelKind::Lstm)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = ClassifierError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(ModelKind::LogisticRegression),
            _ => ModelKind::ALL
                .into_iter()
                .find(|k| k.name() == s)
                .ok_or_else(|| ClassifierError::InvalidSpec(format!("unknown model kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    #[default]
    Off,
    /// Inverse class frequency.
    Balanced,
}

/// Training configuration. Fields that do not apply to `kind` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub class_weighting: ClassWeighting,
    /// Recurrent hidden width.
    pub hidden_size: usize,
    /// Mean-pooling factor applied to time before recurrent kinds.
    pub time_stride: usize,
    /// Gradient-norm ceiling for recurrent kinds.
    pub clip_norm: f64,
    pub conv_blocks: Vec<ConvBlock>,
    /// Neighbour count.
    pub k: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::new(ModelKind::LogisticRegression)
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            seed: 0,
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 32,
            class_weighting: ClassWeighting::Off,
            hidden_size: 32,
            time_stride: 4,
            clip_norm: 5.0,
            conv_blocks: vec![
                ConvBlock {
                    filters: 16,
                    kernel: 7,
                    pool: 4,
                },
                ConvBlock {
                    filters: 32,
                    kernel: 5,
                    pool: 4,
                },
            ],
            k: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ClassifierError::InvalidSpec(msg));
        if self.kind == ModelKind::Knn {
            return if self.k == 0 { bad("k must be positive".into()) } else { Ok(()) };
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        match self.kind {
            ModelKind::Rnn | ModelKind::Lstm => {
                if self.hidden_size == 0 || self.time_stride == 0 {
                    return bad("hidden_size and time_stride must be positive".into());
                }
                if !(self.clip_norm > 0.0) {
                    return bad("clip_norm must be positive".into());
                }
            }
            ModelKind::Cnn => {
                for b in &self.conv_blocks {
                    if b.filters == 0 || b.pool == 0 || b.kernel % 2 == 0 {
                        return bad(format!("conv block {b:?} needs filters, pool > 0 and an odd kernel"));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Sample length the network sees after time pooling.
    fn steps(&self, length: usize) -> usize {
        if self.kind.is_recurrent() {
            length / self.time_stride
        } else {
            length
        }
    }

    pub(crate) fn network(&self, channels: usize, length: usize) -> Result<Box<dyn Network>> {
        self.validate()?;
        let steps = self.steps(length);
        if steps == 0 {
            return Err(ClassifierError::ShapeMismatch(format!(
                "length {length} shorter than time_stride {}",
                self.time_stride
            )));
        }
        Ok(match self.kind {
            ModelKind::LogisticRegression => Box::new(Logistic {
                n_features: channels * length,
            }),
            ModelKind::Rnn => Box::new(recurrent::Rnn {
                inputs: channels,
                hidden: self.hidden_size,
                steps,
            }),
            ModelKind::Lstm => Box::new(recurrent::Lstm {
                inputs: channels,
                hidden: self.hidden_size,
                steps,
            }),
            ModelKind::Cnn => {
                let mut len = length;
                for b in &self.conv_blocks {
                    len /= b.pool;
                }
                if len == 0 {
                    return Err(ClassifierError::ShapeMismatch(format!(
                        "length {length} pools away to nothing"
                    )));
                }
                Box::new(cnn::Cnn {
                    inputs: channels,
                    length,
                    blocks: self.conv_blocks.clone(),
                })
            }
            ModelKind::Knn => unreachable!("k-NN has no network"),
        })
    }
}

/// `(n_samples, channels, length)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub n_samples: usize,
    pub channels: usize,
    pub length: usize,
    pub data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(n_samples: usize, channels: usize, length: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_samples * channels * length {
            return Err(ClassifierError::ShapeMismatch(format!(
                "{} values for shape ({n_samples}, {channels}, {length})",
                data.len()
            )));
        }
        Ok(Self {
            n_samples,
            channels,
            length,
            data,
        })
    }

    pub fn from_epochs(epochs: &[Epoch]) -> Result<Self> {
        let channels = epochs.first().map_or(0, |e| e.n_channels);
        let length = epochs.first().map_or(0, |e| e.n_samples());
        let mut data = Vec::with_capacity(epochs.len() * channels * length);
        for e in epochs {
            if e.n_channels != channels || e.n_samples() != length {
                return Err(ClassifierError::ShapeMismatch("epochs differ in shape".into()));
            }
            data.extend_from_slice(&e.data);
        }
        Self::new(epochs.len(), channels, length, data)
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.length
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.sample_len()..(i + 1) * self.sample_len()]
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Self {
            n_samples: indices.len(),
            channels: self.channels,
            length: self.length,
            data,
        }
    }

    fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(ClassifierError::InvalidData(format!(
                "non-finite value in sample {}",
                i / self.sample_len().max(1)
            ))),
            None => Ok(()),
        }
    }
}

/// Per-channel `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn fit(x: &FeatureTensor) -> Self {
        let count = (x.n_samples * x.length) as f64;
        let mut mean = vec![0.0; x.channels];
        let mut scale = vec![0.0; x.channels];
        for c in 0..x.channels {
            let channel = || (0..x.n_samples).flat_map(|i| &x.sample(i)[c * x.length..(c + 1) * x.length]);
            let m = channel().sum::<f64>() / count;
            let var = channel().map(|v| (v - m) * (v - m)).sum::<f64>() / count;
            mean[c] = m;
            scale[c] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Self { mean, scale }
    }

    pub fn apply(&self, sample: &[f64], length: usize) -> Vec<f64> {
        let mut out = sample.to_vec();
        for (c, chunk) in out.chunks_mut(length).enumerate() {
            let (m, s) = (self.mean[c], self.scale[c]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        out
    }
}

/// Mean of each run of `stride` samples per channel; a partial tail is dropped.
fn pool_time(x: &[f64], channels: usize, length: usize, stride: usize) -> Vec<f64> {
    let steps = length / stride;
    let mut out = Vec::with_capacity(channels * steps);
    for c in 0..channels {
        let row = &x[c * length..(c + 1) * length];
        out.extend(row.chunks_exact(stride).take(steps).map(|w| w.iter().sum::<f64>() / stride as f64));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parameters {
    /// Flat network weights in layout order.
    Network(Vec<f64>),
    /// The k-NN training set, stored as given.
    Memory { features: FeatureTensor, labels: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub channels: usize,
    pub length: usize,
    pub standardization: Standardization,
    pub parameters: Parameters,
    /// Mean training loss per epoch.
    pub training_log: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    pub label: u8,
}

impl Prediction {
    pub fn from_probability(probability: f64) -> Self {
        Self {
            probability,
            label: u8::from(probability >= 0.5),
        }
    }
}

impl TrainedModel {
    fn prepare(&self, sample: &[f64]) -> Vec<f64> {
        let x = self.standardization.apply(sample, self.length);
        if self.spec.kind.is_recurrent() {
            pool_time(&x, self.channels, self.length, self.spec.time_stride)
        } else {
            x
        }
    }

    pub fn weights(&self) -> Option<&[f64]> {
        match &self.parameters {
            Parameters::Network(p) => Some(p),
            Parameters::Memory { .. } => None,
        }
    }
}

/// `log(1 + e^-|z|) + max(z, 0) - z y`
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn class_weights(labels: &[u8], weighting: ClassWeighting) -> [f64; 2] {
    match weighting {
        ClassWeighting::Off => [1.0, 1.0],
        ClassWeighting::Balanced => {
            let n = labels.len() as f64;
            let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
            let neg = n - pos;
            [
                if neg > 0.0 { n / (2.0 * neg) } else { 1.0 },
                if pos > 0.0 { n / (2.0 * pos) } else { 1.0 },
            ]
        }
    }
}

/// Uniform init, except the output bias (the last parameter of every
/// layout) starts at the log-odds of the weighted positive rate. Without
/// it, a wide input lets descent fit the majority class by memorizing
/// samples long before the intercept moves.
fn initial_params(net: &dyn Network, labels: &[u8], weights: [f64; 2], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut params = net.init(rng);
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64 * weights[1];
    let neg = labels.iter().filter(|&&l| l == 0).count() as f64 * weights[0];
    if pos > 0.0 && neg > 0.0 {
        *params.last_mut().expect("networks have an output bias") = (pos / neg).ln();
    }
    params
}

fn check_training(spec: &ModelSpec, train: &FeatureTensor, labels: &[u8]) -> Result<()> {
    spec.validate()?;
    if labels.len() != train.n_samples {
        return Err(ClassifierError::ShapeMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            train.n_samples
        )));
    }
    if train.n_samples == 0 || train.sample_len() == 0 {
        return Err(ClassifierError::InvalidData("empty training set".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(ClassifierError::InvalidData(format!("label {l} is not 0 or 1")));
    }
    train.check_finite()?;
    if spec.kind.is_gradient_trained() && (labels.iter().all(|&l| l == 0) || labels.iter().all(|&l| l == 1)) {
        return Err(ClassifierError::SingleClassTraining);
    }
    Ok(())
}

pub fn fit(spec: &ModelSpec, train: &FeatureTensor, labels: &[u8]) -> Result<TrainedModel> {
    fit_with_checkpoints(spec, train, labels, |_, _| {})
}

/// Like [`fit`], calling `on_epoch` with the model after every training
/// epoch. k-NN has a single checkpoint.
pub fn fit_with_checkpoints(
    spec: &ModelSpec,
    train: &FeatureTensor,
    labels: &[u8],
    mut on_epoch: impl FnMut(usize, &TrainedModel),
) -> Result<TrainedModel> {
    check_training(spec, train, labels)?;
    let standardization = Standardization::fit(train);
    let mut model = TrainedModel {
        spec: spec.clone(),
        channels: train.channels,
        length: train.length,
        standardization,
        parameters: Parameters::Network(Vec::new()),
        training_log: Vec::new(),
    };
    if spec.kind == ModelKind::Knn {
        model.parameters = Parameters::Memory {
            features: train.clone(),
            labels: labels.to_vec(),
        };
        on_epoch(0, &model);
        return Ok(model);
    }

    let net = spec.network(train.channels, train.length)?;
    let inputs: Vec<Vec<f64>> = (0..train.n_samples).map(|i| model.prepare(train.sample(i))).collect();
    let weights = class_weights(labels, spec.class_weighting);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut params = initial_params(net.as_ref(), labels, weights, &mut rng);
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..train.n_samples).collect();
    let clip = spec.kind.is_recurrent().then_some(spec.clip_norm);

    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(spec.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let y = f64::from(labels[i]);
                let w = weights[labels[i] as usize];
                let mut loss = 0.0;
                net.backprop(
                    &params,
                    &inputs[i],
                    &mut |z| {
                        loss = w * bce_with_logit(z, y);
                        w * (sigmoid(z) - y) * scale
                    },
                    &mut grad,
                );
                total += loss;
            }
            if let Some(limit) = clip {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > limit {
                    grad.iter_mut().for_each(|g| *g *= limit / norm);
                }
            }
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= spec.learning_rate * g;
            }
        }
        let mean_loss = total / train.n_samples as f64;
        model.training_log.push(mean_loss);
        if !mean_loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(ClassifierError::NonFiniteLoss {
                epoch,
                log: model.training_log,
            });
        }
        log::debug!("{} epoch {epoch}: loss {mean_loss:.6}", spec.kind);
        model.parameters = Parameters::Network(params.clone());
        on_epoch(epoch, &model);
    }
    model.parameters = Parameters::Network(params);
    Ok(model)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            let d = a[4 * c + l] - b[4 * c + l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        let d = a[k] - b[k];
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn predict(model: &TrainedModel, samples: &FeatureTensor) -> Result<Vec<Prediction>> {
    if samples.channels != model.channels || samples.length != model.length {
        return Err(ClassifierError::ShapeMismatch(format!(
            "model expects ({}, {}), got ({}, {})",
            model.channels, model.length, samples.channels, samples.length
        )));
    }
    samples.check_finite()?;
    let probabilities: Vec<f64> = match &model.parameters {
        Parameters::Network(params) => {
            let net = model.spec.network(model.channels, model.length)?;
            (0..samples.n_samples)
                .into_par_iter()
                .map(|i| sigmoid(net.logit(params, &model.prepare(samples.sample(i)))))
                .collect()
        }
        Parameters::Memory { features, labels } => {
            let train: Vec<Vec<f64>> = (0..features.n_samples).map(|i| model.prepare(features.sample(i))).collect();
            let k = model.spec.k.min(train.len());
            (0..samples.n_samples)
                .into_par_iter()
                .map(|i| {
                    let q = model.prepare(samples.sample(i));
                    let mut d: Vec<(f64, usize)> =
                        train.iter().enumerate().map(|(j, t)| (squared_distance(&q, t), j)).collect();
                    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                    if k < d.len() {
                        d.select_nth_unstable_by(k - 1, by_distance);
                    }
                    let positives = d[..k].iter().filter(|&&(_, j)| labels[j] == 1).count();
                    positives as f64 / k as f64
                })
                .collect()
        }
    };
    Ok(probabilities.into_iter().map(Prediction::from_probability).collect())
}

/// Mean weighted cross-entropy over a batch of prepared inputs.
fn batch_loss(net: &dyn Network, params: &[f64], inputs: &[Vec<f64>], labels: &[u8], weights: [f64; 2]) -> f64 {
    inputs
        .iter()
        .zip(labels)
        .map(|(x, &l)| weights[l as usize] * bce_with_logit(net.logit(params, x), f64::from(l)))
        .sum::<f64>()
        / inputs.len() as f64
}

/// Largest relative difference between the backpropagated gradient of the
/// mean batch loss and central finite differences (step 1e-5), over all
/// parameters at their seeded initial values.
pub fn gradient_check(spec: &ModelSpec, batch: &FeatureTensor, labels: &[u8]) -> Result<f64> {
    if !spec.kind.is_gradient_trained() {
        return Err(ClassifierError::InvalidSpec(format!("{} has no gradient", spec.kind)));
    }
    if labels.len() != batch.n_samples || batch.n_samples == 0 {
        return Err(ClassifierError::ShapeMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            batch.n_samples
        )));
    }
    let net = spec.network(batch.channels, batch.length)?;
    let shell = TrainedModel {
        spec: spec.clone(),
        channels: batch.channels,
        length: batch.length,
        standardization: Standardization::fit(batch),
        parameters: Parameters::Network(Vec::new()),
        training_log: Vec::new(),
    };
    let inputs: Vec<Vec<f64>> = (0..batch.n_samples).map(|i| shell.prepare(batch.sample(i))).collect();
    let weights = class_weights(labels, spec.class_weighting);
    let mut params = initial_params(net.as_ref(), labels, weights, &mut ChaCha8Rng::seed_from_u64(spec.seed));

    let mut analytic = vec![0.0; params.len()];
    let scale = 1.0 / inputs.len() as f64;
    for (x, &l) in inputs.iter().zip(labels) {
        let y = f64::from(l);
        let w = weights[l as usize];
        net.backprop(&params, x, &mut |z| w * (sigmoid(z) - y) * scale, &mut analytic);
    }

    const STEP: f64 = 1e-5;
    let mut worst = 0.0f64;
    for (p, &ga) in analytic.iter().enumerate() {
        let original = params[p];
        params[p] = original + STEP;
        let up = batch_loss(net.as_ref(), &params, &inputs, labels, weights);
        params[p] = original - STEP;
        let down = batch_loss(net.as_ref(), &params, &inputs, labels, weights);
        params[p] = original;
        let gn = (up - down) / (2.0 * STEP);
        let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// A seeded random batch with a spec shrunk far enough that finite
/// differences over every parameter stay cheap: 4 samples of 3 channels by
/// 16 time points, hidden width 4, two tiny conv blocks.
pub fn small_gradcheck_case(kind: ModelKind, seed: u64) -> (ModelSpec, FeatureTensor, Vec<u8>) {
    use rand::Rng;
    let (n, channels, length) = (4, 3, 16);
    let spec = ModelSpec {
        seed,
        hidden_size: 4,
        time_stride: 2,
        conv_blocks: vec![
            ConvBlock {
                filters: 3,
                kernel: 3,
                pool: 2,
            },
            ConvBlock {
                filters: 2,
                kernel: 3,
                pool: 2,
            },
        ],
        ..ModelSpec::new(kind)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let data = (0..n * channels * length).map(|_| rng.random_range(-2.0..2.0)).collect();
    let batch = FeatureTensor::new(n, channels, length, data).expect("consistent shape");
    let labels = (0..n).map(|i| (i % 2) as u8).collect();
    (spec, batch, labels)
}
