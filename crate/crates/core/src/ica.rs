//! Whitening, symmetric fixed-point FastICA, epoch transformation and
//! component-to-channel attribution.
//!
//! Components are emitted in descending order of the data variance they
//! explain, and each is signed so that its largest-magnitude sample on the
//! fitting data is positive. Both conventions make fitted models comparable
//! across runs.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmentation::Epoch;

#[derive(Debug, Error, PartialEq)]
pub enum IcaError {
    #[error("data rank {rank} is below the {needed} requested components")]
    RankDeficient { rank: usize, needed: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
}

pub type Result<T> = std::result::Result<T, IcaError>;

/// Contrast function used in the fixed-point update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Nonlinearity {
    Logcosh { alpha: f64 },
    Cube,
}

impl Default for Nonlinearity {
    fn default() -> Self {
        Nonlinearity::Logcosh { alpha: 1.0 }
    }
}

impl Nonlinearity {
    /// `(g(u), g'(u))`
    #[inline]
    fn eval(self, u: f64) -> (f64, f64) {
        match self {
            Nonlinearity::Logcosh { alpha } => {
                let t = (alpha * u).tanh();
                (t, alpha * (1.0 - t * t))
            }
            Nonlinearity::Cube => (u * u * u, 3.0 * u * u),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcaConfig {
    pub n_components: usize,
    pub nonlinearity: Nonlinearity,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Fit on at most this many evenly strided time points.
    pub max_fit_samples: Option<usize>,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            n_components: 10,
            nonlinearity: Nonlinearity::default(),
            max_iterations: 200,
            tolerance: 1e-4,
            seed: 0,
            max_fit_samples: Some(262_144),
        }
    }
}

/// Row-major `(n_channels, n_samples)` data.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    pub n_channels: usize,
    pub n_samples: usize,
    pub data: Vec<f64>,
}

impl SignalMatrix {
    pub fn new(n_channels: usize, n_samples: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n_channels * n_samples);
        Self {
            n_channels,
            n_samples,
            data,
        }
    }

    pub fn zeros(n_channels: usize, n_samples: usize) -> Self {
        Self::new(n_channels, n_samples, vec![0.0; n_channels * n_samples])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n));
        Self::new(rows.len(), n, rows.concat())
    }

    /// Concatenates epochs along time.
    pub fn from_epochs<'a>(epochs: impl IntoIterator<Item = &'a Epoch>) -> Self {
        let epochs: Vec<&Epoch> = epochs.into_iter().collect();
        let c = epochs.first().map_or(0, |e| e.n_channels);
        let total: usize = epochs.iter().map(|e| e.n_samples()).sum();
        let mut data = vec![0.0; c * total];
        let mut offset = 0;
        for e in &epochs {
            assert_eq!(e.n_channels, c, "epochs disagree on channel count");
            let n = e.n_samples();
            for ch in 0..c {
                data[ch * total + offset..ch * total + offset + n].copy_from_slice(e.channel(ch));
            }
            offset += n;
        }
        Self::new(c, total, data)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_samples..(i + 1) * self.n_samples]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n_samples..(i + 1) * self.n_samples]
    }

    /// Every `stride`-th column.
    fn strided(&self, stride: usize) -> Self {
        let n = self.n_samples.div_ceil(stride);
        let mut data = Vec::with_capacity(self.n_channels * n);
        for c in 0..self.n_channels {
            data.extend(self.row(c).iter().step_by(stride));
        }
        Self::new(self.n_channels, n, data)
    }
}

/// `out = m * x` for a small dense `m` and a row-major signal matrix.
fn project(m: &DMatrix<f64>, x: &SignalMatrix) -> SignalMatrix {
    assert_eq!(m.ncols(), x.n_channels);
    let mut out = SignalMatrix::zeros(m.nrows(), x.n_samples);
    for i in 0..m.nrows() {
        let row = out.row_mut(i);
        for j in 0..m.ncols() {
            let w = m[(i, j)];
            if w != 0.0 {
                for (o, &v) in row.iter_mut().zip(x.row(j)) {
                    *o += w * v;
                }
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Eigenpairs sorted by descending eigenvalue, each vector signed so its
/// largest-magnitude entry is positive.
fn sorted_eigen(sym: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = sym.nrows();
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let lead = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Whitening transform fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitening {
    pub channel_means: Vec<f64>,
    /// `(n_components, n_channels)`
    pub matrix: DMatrix<f64>,
    /// Covariance eigenvalues of the retained directions, descending.
    pub eigenvalues: Vec<f64>,
}

/// Centers, then projects onto the leading principal directions scaled to
/// unit variance.
pub fn whiten(data: &SignalMatrix, n_components: usize) -> Result<(SignalMatrix, Whitening)> {
    let c = data.n_channels;
    if n_components == 0 || n_components > c {
        return Err(IcaError::InvalidConfig(format!(
            "n_components {n_components} must be in 1..={c}"
        )));
    }
    if data.n_samples <= c {
        return Err(IcaError::ShapeMismatch(format!(
            "need more than {c} samples, got {}",
            data.n_samples
        )));
    }
    let t = data.n_samples as f64;
    let means: Vec<f64> = (0..c).map(|i| data.row(i).iter().sum::<f64>() / t).collect();
    let mut centered = data.clone();
    for (i, m) in means.iter().enumerate() {
        centered.row_mut(i).iter_mut().for_each(|v| *v -= m);
    }
    let mut cov = DMatrix::zeros(c, c);
    for i in 0..c {
        for j in 0..=i {
            let v = dot(centered.row(i), centered.row(j)) / t;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let (values, vectors) = sorted_eigen(cov);
    let max = values[0];
    let rank = values.iter().filter(|&&v| max > 0.0 && v > 1e-12 * max).count();
    if rank < n_components {
        return Err(IcaError::RankDeficient {
            rank,
            needed: n_components,
        });
    }
    let mut k = DMatrix::zeros(n_components, c);
    for i in 0..n_components {
        let scale = 1.0 / values[i].sqrt();
        for j in 0..c {
            k[(i, j)] = vectors[(j, i)] * scale;
        }
    }
    let whitened = project(&k, &centered);
    Ok((
        whitened,
        Whitening {
            channel_means: means,
            matrix: k,
            eigenvalues: values[..n_components].to_vec(),
        },
    ))
}

/// `(W Wᵀ)^{-1/2} W`
fn symmetric_decorrelation(w: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sorted_eigen(w * w.transpose());
    let inv_sqrt = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        values.len(),
        values.iter().map(|v| 1.0 / v.max(f64::MIN_POSITIVE).sqrt()),
    ));
    &vectors * inv_sqrt * vectors.transpose() * w
}

/// A fitted FastICA model.
#[derive(Debug, Clone, PartialEq)]
pub struct IcaModel {
    pub channel_means: Vec<f64>,
    /// `(n_components, n_channels)`
    pub whitening: DMatrix<f64>,
    /// `(n_components, n_components)`, orthogonal.
    pub unmixing: DMatrix<f64>,
    /// `component_order[i]` is the fixed-point row emitted as component `i`.
    pub component_order: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

impl IcaModel {
    pub fn n_channels(&self) -> usize {
        self.whitening.ncols()
    }

    pub fn n_components(&self) -> usize {
        self.unmixing.nrows()
    }

    /// Combined map from centered channels to components.
    pub fn filters(&self) -> DMatrix<f64> {
        &self.unmixing * &self.whitening
    }

    /// Component time courses for channel data.
    pub fn sources(&self, data: &SignalMatrix) -> Result<SignalMatrix> {
        if data.n_channels != self.n_channels() {
            return Err(IcaError::ShapeMismatch(format!(
                "model expects {} channels, data has {}",
                self.n_channels(),
                data.n_channels
            )));
        }
        let mut centered = data.clone();
        for (i, m) in self.channel_means.iter().enumerate() {
            centered.row_mut(i).iter_mut().for_each(|v| *v -= m);
        }
        Ok(project(&self.filters(), &centered))
    }

    /// Largest deviation of `W Wᵀ` from the identity.
    pub fn orthogonality_error(&self) -> f64 {
        let p = &self.unmixing * self.unmixing.transpose();
        let n = p.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((p[(i, j)] - target).abs());
            }
        }
        worst
    }
}

/// Symmetric fixed-point FastICA.
pub fn fit_ica(data: &SignalMatrix, config: &IcaConfig) -> Result<IcaModel> {
    if config.max_iterations == 0 || !(config.tolerance > 0.0) {
        return Err(IcaError::InvalidConfig(
            "max_iterations must be positive and tolerance > 0".into(),
        ));
    }
    let subsampled;
    let fit_data = match config.max_fit_samples {
        Some(limit) if limit > 0 && data.n_samples > limit => {
            subsampled = data.strided(data.n_samples.div_ceil(limit));
            &subsampled
        }
        _ => data,
    };
    let (z, whitening) = whiten(fit_data, config.n_components)?;
    let k = config.n_components;
    let t = z.n_samples as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
    let mut w = symmetric_decorrelation(&init);

    let mut converged = false;
    let mut iterations = 0;
    let mut g = vec![0.0; z.n_samples];
    while iterations < config.max_iterations {
        iterations += 1;
        let wz = project(&w, &z);
        let mut next = DMatrix::zeros(k, k);
        for i in 0..k {
            let mut mean_dg = 0.0;
            for (gv, &u) in g.iter_mut().zip(wz.row(i)) {
                let (gu, dgu) = config.nonlinearity.eval(u);
                *gv = gu;
                mean_dg += dgu;
            }
            mean_dg /= t;
            for j in 0..k {
                next[(i, j)] = dot(&g, z.row(j)) / t - mean_dg * w[(i, j)];
            }
        }
        let next = symmetric_decorrelation(&next);
        let change = (0..k)
            .map(|i| (1.0 - next.row(i).dot(&w.row(i)).abs()).abs())
            .fold(0.0f64, f64::max);
        w = next;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("FastICA did not converge within {} iterations", config.max_iterations);
    }

    // Variance explained in channel space by component i is sum_j λ_j w_ij².
    let explained: Vec<f64> = (0..k)
        .map(|i| (0..k).map(|j| whitening.eigenvalues[j] * w[(i, j)].powi(2)).sum())
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| explained[b].total_cmp(&explained[a]).then(a.cmp(&b)));

    let sources = project(&w, &z);
    let mut unmixing = DMatrix::zeros(k, k);
    for (dst, &src) in order.iter().enumerate() {
        let peak = sources
            .row(src)
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if peak < 0.0 { -1.0 } else { 1.0 };
        for j in 0..k {
            unmixing[(dst, j)] = sign * w[(src, j)];
        }
    }

    Ok(IcaModel {
        channel_means: whitening.channel_means,
        whitening: whitening.matrix,
        unmixing,
        component_order: order,
        converged,
        iterations,
    })
}

/// Maps channel epochs to component epochs.
pub fn transform_epochs(epochs: &[Epoch], model: &IcaModel) -> Result<Vec<Epoch>> {
    let filters = model.filters();
    epochs.iter().map(|e| transform_epoch(e, model, &filters)).collect()
}

pub(crate) fn transform_epoch(epoch: &Epoch, model: &IcaModel, filters: &DMatrix<f64>) -> Result<Epoch> {
    if epoch.n_channels != model.n_channels() {
        return Err(IcaError::ShapeMismatch(format!(
            "model expects {} channels, epoch has {}",
            model.n_channels(),
            epoch.n_channels
        )));
    }
    let n = epoch.n_samples();
    let mut centered = SignalMatrix::new(epoch.n_channels, n, epoch.data.clone());
    for (i, m) in model.channel_means.iter().enumerate() {
        centered.row_mut(i).iter_mut().for_each(|v| *v -= m);
    }
    let out = project(filters, &centered);
    Ok(Epoch::new(out.n_channels, out.data, epoch.global_start_s, epoch.patient_id.clone()))
}

/// `<a, b> / (|a| |b|)`
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(IcaError::ShapeMismatch(format!("lengths {} and {}", a.len(), b.len())));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(IcaError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentChannel {
    pub component: usize,
    pub channel: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAttribution {
    pub components: Vec<ComponentChannel>,
}

/// Pairs each component with the channel whose time course it most
/// resembles, by absolute cosine similarity. Ties go to the earlier channel.
pub fn attribute_channels(model: &IcaModel, data: &SignalMatrix, labels: &[String]) -> Result<ChannelAttribution> {
    if labels.len() != data.n_channels {
        return Err(IcaError::ShapeMismatch(format!(
            "{} labels for {} channels",
            labels.len(),
            data.n_channels
        )));
    }
    let sources = model.sources(data)?;
    let mut components = Vec::with_capacity(sources.n_channels);
    for c in 0..sources.n_channels {
        let mut best: Option<(usize, f64)> = None;
        for ch in 0..data.n_channels {
            let sim = match cosine_similarity(data.row(ch), sources.row(c)) {
                Ok(s) => s.abs(),
                Err(IcaError::ZeroVector) => 0.0,
                Err(e) => return Err(e),
            };
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((ch, sim));
            }
        }
        let (ch, similarity) = best.expect("at least one channel");
        components.push(ComponentChannel {
            component: c,
            channel: labels[ch].clone(),
            similarity,
        });
    }
    Ok(ChannelAttribution { components })
}
