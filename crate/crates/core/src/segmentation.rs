//! Montage reduction, epoching, horizon-shifted labelling and train/test
//! splitting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edf::Recording;
use crate::manifest::SeizureInterval;

/// Epoch length in seconds.
pub const EPOCH_SECONDS: i64 = 5;
/// Samples per channel in an epoch at 256 Hz.
pub const EPOCH_SAMPLES: usize = 1280;

/// The 16-channel montage roster.
pub const DEFAULT_ROSTER: [&str; 16] = [
    "F7", "T7", "P7", "F3", "C3", "P3", "O1", "F4", "C4", "P4", "F8", "T8", "PO8", "O2", "FT9", "FT10",
];

/// Bipolar source derivations mapped onto the roster, one per roster entry.
const DEFAULT_RENAMES: [(&str, &str); 16] = [
    ("FP1-F7", "F7"),
    ("F7-T7", "T7"),
    ("T7-P7", "P7"),
    ("P7-O1", "O1"),
    ("FP1-F3", "F3"),
    ("F3-C3", "C3"),
    ("C3-P3", "P3"),
    ("FP2-F4", "F4"),
    ("F4-C4", "C4"),
    ("C4-P4", "P4"),
    ("P4-O2", "O2"),
    ("FP2-F8", "F8"),
    ("F8-T8", "T8"),
    ("P8-O2", "PO8"),
    ("T7-FT9", "FT9"),
    ("FT9-FT10", "FT10"),
];

#[derive(Debug, Error, PartialEq)]
pub enum SegmentationError {
    #[error("montage channel {0} not found after renaming")]
    MissingChannel(String),
    #[error("invalid montage: {0}")]
    InvalidMontage(String),
    #[error("signals sample at different rates ({0} Hz vs {1} Hz)")]
    NonUniformRate(f64, f64),
    #[error("{EPOCH_SECONDS} s at {0} Hz is not a whole number of samples")]
    FractionalEpoch(f64),
    #[error("horizon {0} s must be a non-negative multiple of {EPOCH_SECONDS} s")]
    InvalidHorizon(i64),
    #[error("split leaves the {0} side empty")]
    DegenerateSplit(&'static str),
    #[error("train fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("{epochs} epochs but {labels} labels")]
    LengthMismatch { epochs: usize, labels: usize },
}

pub type Result<T> = std::result::Result<T, SegmentationError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MontageSpec {
    pub keep_channels: Vec<String>,
    /// Source label to montage label. Labels without an entry fall back to
    /// their exact name, then to the electrode after the last hyphen.
    pub rename_map: BTreeMap<String, String>,
}

impl Default for MontageSpec {
    fn default() -> Self {
        Self {
            keep_channels: DEFAULT_ROSTER.iter().map(|s| s.to_string()).collect(),
            rename_map: DEFAULT_RENAMES
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        }
    }
}

/// `"T8-P8-0"` → `"P8"`, `"fp1-f7"` → `"F7"`.
fn trailing_electrode(label: &str) -> String {
    let upper = label.trim().to_uppercase();
    let base = match upper.rsplit_once('-') {
        Some((head, tail)) if !tail.is_empty() && tail.chars().all(|c| c.is_ascii_digit()) => head,
        _ => upper.as_str(),
    };
    base.rsplit('-').next().unwrap_or(base).to_string()
}

impl MontageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.keep_channels.len() != DEFAULT_ROSTER.len() {
            return Err(SegmentationError::InvalidMontage(format!(
                "{} channels, expected {}",
                self.keep_channels.len(),
                DEFAULT_ROSTER.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.keep_channels {
            if !seen.insert(c.to_uppercase()) {
                return Err(SegmentationError::InvalidMontage(format!("duplicate channel {c}")));
            }
        }
        Ok(())
    }

    /// For each roster channel, the index of the source signal it comes from.
    pub fn resolve(&self, source_labels: &[String]) -> Result<Vec<usize>> {
        self.validate()?;
        let upper_map: BTreeMap<String, String> = self
            .rename_map
            .iter()
            .map(|(k, v)| (k.trim().to_uppercase(), v.trim().to_uppercase()))
            .collect();
        // (priority, source index) per candidate montage name; lower wins.
        let mut best: BTreeMap<String, (u8, usize)> = BTreeMap::new();
        for (i, label) in source_labels.iter().enumerate() {
            let upper = label.trim().to_uppercase();
            let candidates = [
                upper_map.get(&upper).cloned().map(|n| (0u8, n)),
                Some((1u8, upper.clone())),
                Some((2u8, trailing_electrode(&upper))),
            ];
            for (prio, name) in candidates.into_iter().flatten() {
                let slot = best.entry(name).or_insert((prio, i));
                if (prio, i) < *slot {
                    *slot = (prio, i);
                }
            }
        }
        self.keep_channels
            .iter()
            .map(|c| {
                best.get(&c.trim().to_uppercase())
                    .map(|&(_, i)| i)
                    .ok_or_else(|| SegmentationError::MissingChannel(c.clone()))
            })
            .collect()
    }
}

/// Reduces a recording to the montage channels, in roster order.
pub fn apply_montage(recording: &Recording, spec: &MontageSpec) -> Result<Recording> {
    let labels: Vec<String> = recording.signals.iter().map(|s| s.label.clone()).collect();
    let picks = spec.resolve(&labels)?;
    let mut out = recording.clone();
    out.signals = picks
        .iter()
        .zip(&spec.keep_channels)
        .map(|(&i, name)| {
            let mut s = recording.signals[i].clone();
            s.label = name.clone();
            s
        })
        .collect();
    out.samples = picks.iter().map(|&i| recording.samples[i].clone()).collect();
    out.header.signal_count = out.signals.len();
    out.header.header_bytes = 256 * (out.signals.len() + 1);
    Ok(out)
}

/// A fixed-length multichannel window, row-major `(n_channels, n_samples)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub n_channels: usize,
    pub data: Vec<f64>,
    pub global_start_s: i64,
    pub patient_id: String,
}

impl Epoch {
    pub fn new(n_channels: usize, data: Vec<f64>, global_start_s: i64, patient_id: impl Into<String>) -> Self {
        assert!(n_channels > 0 && data.len().is_multiple_of(n_channels));
        Self {
            n_channels,
            data,
            global_start_s,
            patient_id: patient_id.into(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / self.n_channels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.n_samples();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.n_samples();
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// Common sampling rate of all signals.
pub fn uniform_rate(recording: &Recording) -> Result<f64> {
    let rate = recording.sampling_rate(0);
    for i in 1..recording.signals.len() {
        let r = recording.sampling_rate(i);
        if (r - rate).abs() > 1e-9 {
            return Err(SegmentationError::NonUniformRate(rate, r));
        }
    }
    Ok(rate)
}

/// Cuts contiguous, non-overlapping 5 s epochs; a trailing partial window is
/// dropped.
pub fn segment_epochs(recording: &Recording) -> Result<Vec<Epoch>> {
    if recording.signals.is_empty() {
        return Ok(Vec::new());
    }
    let rate = uniform_rate(recording)?;
    let per_epoch = rate * EPOCH_SECONDS as f64;
    if (per_epoch - per_epoch.round()).abs() > 1e-9 || per_epoch < 1.0 {
        return Err(SegmentationError::FractionalEpoch(rate));
    }
    let per_epoch = per_epoch.round() as usize;
    let n = recording.samples.iter().map(Vec::len).min().unwrap_or(0);
    let count = n / per_epoch;
    let n_channels = recording.samples.len();
    Ok((0..count)
        .map(|k| {
            let mut data = Vec::with_capacity(n_channels * per_epoch);
            for ch in &recording.samples {
                data.extend_from_slice(&ch[k * per_epoch..(k + 1) * per_epoch]);
            }
            Epoch::new(
                n_channels,
                data,
                recording.global_start_s + EPOCH_SECONDS * k as i64,
                recording.header.patient_id.clone(),
            )
        })
        .collect())
}

/// Lead time between an epoch and the window whose seizure state it predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HorizonConfig {
    pub horizon_s: i64,
}

impl HorizonConfig {
    pub fn new(horizon_s: i64) -> Result<Self> {
        if horizon_s < 0 || horizon_s % EPOCH_SECONDS != 0 {
            return Err(SegmentationError::InvalidHorizon(horizon_s));
        }
        Ok(Self { horizon_s })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub epochs: Vec<Epoch>,
    pub labels: Vec<u8>,
    pub horizon: HorizonConfig,
}

impl LabeledDataset {
    pub fn new(epochs: Vec<Epoch>, labels: Vec<u8>, horizon: HorizonConfig) -> Result<Self> {
        if epochs.len() != labels.len() {
            return Err(SegmentationError::LengthMismatch {
                epochs: epochs.len(),
                labels: labels.len(),
            });
        }
        Ok(Self { epochs, labels, horizon })
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    fn select(&self, idx: &[usize]) -> Self {
        Self {
            epochs: idx.iter().map(|&i| self.epochs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            horizon: self.horizon,
        }
    }
}

/// Label for each epoch start: 1 iff `[start + h, start + h + 5)` meets a
/// seizure interval.
pub fn labels_for_starts(starts: &[i64], seizures: &[SeizureInterval], horizon: HorizonConfig) -> Vec<u8> {
    let mut sorted: Vec<SeizureInterval> = seizures.to_vec();
    sorted.sort_by_key(|s| (s.start_s, s.end_s));
    // running maximum of end times over seizures ordered by start
    let max_end: Vec<i64> = sorted
        .iter()
        .scan(i64::MIN, |m, s| {
            *m = (*m).max(s.end_s);
            Some(*m)
        })
        .collect();
    starts
        .iter()
        .map(|&t| {
            let lo = t + horizon.horizon_s;
            let hi = lo + EPOCH_SECONDS;
            let k = sorted.partition_point(|s| s.start_s < hi);
            u8::from(k > 0 && max_end[k - 1] > lo)
        })
        .collect()
}

pub fn generate_labels(epochs: &[Epoch], seizures: &[SeizureInterval], horizon: HorizonConfig) -> Vec<u8> {
    let starts: Vec<i64> = epochs.iter().map(|e| e.global_start_s).collect();
    labels_for_starts(&starts, seizures, horizon)
}

/// Whether an epoch starting at `start` survives trimming.
pub fn keep_before_last_seizure(start: i64, seizures: &[SeizureInterval], horizon: HorizonConfig) -> bool {
    match seizures.iter().map(|s| s.end_s).max() {
        Some(last_end) => start + horizon.horizon_s < last_end,
        None => true,
    }
}

/// Drops epochs whose shifted window starts at or after the last seizure's
/// end. Seizure-free data is kept whole.
pub fn trim_after_last_seizure(dataset: &LabeledDataset, seizures: &[SeizureInterval]) -> LabeledDataset {
    let keep: Vec<usize> = (0..dataset.len())
        .filter(|&i| keep_before_last_seizure(dataset.epochs[i].global_start_s, seizures, dataset.horizon))
        .collect();
    dataset.select(&keep)
}

/// How the train/test split orders epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SplitMode {
    #[default]
    Chronological,
    Shuffled { seed: u64 },
}

pub const DEFAULT_TRAIN_FRACTION: f64 = 200_000.0 / 230_000.0;

/// Index-level split: per patient, the first `floor(fraction * n)` epochs in
/// the chosen order train, the rest test. Both sides come back ordered by
/// (patient, start).
pub fn split_indices(
    patients: &[&str],
    starts: &[i64],
    train_fraction: f64,
    mode: SplitMode,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SegmentationError::InvalidFraction(train_fraction));
    }
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in patients.iter().enumerate() {
        by_patient.entry(p).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (patient, mut idx) in by_patient {
        idx.sort_by_key(|&i| (starts[i], i));
        if let SplitMode::Shuffled { seed } = mode {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ crate::stable_hash64(patient.as_bytes()));
            idx.shuffle(&mut rng);
        }
        let cut = (train_fraction * idx.len() as f64).floor() as usize;
        let (a, b) = idx.split_at(cut);
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by_key(|&i| (starts[i], i));
        b.sort_by_key(|&i| (starts[i], i));
        train.extend(a);
        test.extend(b);
    }
    if train.is_empty() {
        return Err(SegmentationError::DegenerateSplit("train"));
    }
    if test.is_empty() {
        return Err(SegmentationError::DegenerateSplit("test"));
    }
    Ok((train, test))
}

pub fn split_train_test(
    dataset: &LabeledDataset,
    train_fraction: f64,
    mode: SplitMode,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let patients: Vec<&str> = dataset.epochs.iter().map(|e| e.patient_id.as_str()).collect();
    let starts: Vec<i64> = dataset.epochs.iter().map(|e| e.global_start_s).collect();
    let (train, test) = split_indices(&patients, &starts, train_fraction, mode)?;
    Ok((dataset.select(&train), dataset.select(&test)))
}
