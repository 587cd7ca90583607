//! Seeded synthetic patient datasets: EDF files plus a summary text, with
//! seizures planted at known times.
//!
//! The background of each channel is pink (1/f) Gaussian noise, partly
//! shared across channels. A seizure adds one focal source, projected onto
//! the channels with fixed spatial weights, made of a rhythm at `rhythm_hz`
//! and 3-30 Hz band-limited noise. Its power is set so the 3-30 Hz band
//! power during a seizure is `seizure_boost` times the background's.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edf::{write_edf, Recording, SignalSpec};
use crate::manifest::{render_summary, ClockTime, SummaryEntry};

pub const SAMPLING_RATE_HZ: u32 = 256;

/// CHB-MIT bipolar derivations; the repeated T8-P8 is disambiguated as the
/// EDF files do.
pub const CHB_MIT_LABELS: [&str; 23] = [
    "FP1-F7", "F7-T7", "T7-P7", "P7-O1", "FP1-F3", "F3-C3", "C3-P3", "P3-O1", "FP2-F4", "F4-C4", "C4-P4", "P4-O2",
    "FP2-F8", "F8-T8", "T8-P8-0", "P8-O2", "FZ-CZ", "CZ-PZ", "P7-T7", "T7-FT9", "FT9-FT10", "FT10-T8", "T8-P8-1",
];

const SEIZURE_BAND_HZ: (f64, f64) = (3.0, 30.0);
const PHYSICAL_RANGE_UV: f64 = 1000.0;
/// Share of each channel's background that is common to all channels.
const SHARED_BACKGROUND: f64 = 0.3;
/// Pink spectrum is flat below this frequency.
const PINK_FLOOR_HZ: f64 = 0.5;
const RAMP_S: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    SpecInvalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedSeizure {
    pub file: usize,
    /// Seconds from the start of the file.
    pub start_s: i64,
    pub end_s: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub patient_id: String,
    pub n_files: usize,
    pub file_duration_s: i64,
    /// Silence between consecutive files.
    pub gap_s: i64,
    /// Wall-clock start of the first file, `hh:mm:ss`.
    pub start_clock: String,
    pub n_channels: usize,
    pub seizures: Vec<PlantedSeizure>,
    /// RMS of each channel's background, µV.
    pub background_uv: f64,
    pub seizure_boost: f64,
    pub rhythm_hz: f64,
    /// Share of the added seizure power carried by the rhythm.
    pub rhythm_fraction: f64,
    /// Standard deviation of the per-seizure rhythm phase, radians.
    pub phase_jitter_rad: f64,
    pub duplicate_files: usize,
    pub shuffle_order: bool,
}

impl Default for SynthSpec {
    /// About two hours in four files with four one-minute seizures each.
    fn default() -> Self {
        let offsets = [[240, 700, 1150, 1560], [150, 620, 1050, 1480], [300, 760, 1200, 1620], [200, 650, 1100, 1540]];
        let seizures = offsets
            .iter()
            .enumerate()
            .flat_map(|(file, starts)| {
                starts.iter().map(move |&s| PlantedSeizure {
                    file,
                    start_s: s,
                    end_s: s + 60,
                })
            })
            .collect();
        Self {
            seed: 7,
            patient_id: "synth01".to_string(),
            n_files: 4,
            file_duration_s: 1800,
            gap_s: 60,
            start_clock: "09:00:00".to_string(),
            n_channels: 23,
            seizures,
            background_uv: 20.0,
            seizure_boost: 8.0,
            rhythm_hz: 6.0,
            rhythm_fraction: 0.6,
            phase_jitter_rad: 2.0,
            duplicate_files: 0,
            shuffle_order: false,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::SpecInvalid(m));
        if self.n_files == 0 || self.file_duration_s <= 0 || self.gap_s < 0 {
            return bad("need at least one file with positive duration and a non-negative gap".into());
        }
        if self.n_channels == 0 || self.n_channels > CHB_MIT_LABELS.len() {
            return bad(format!("n_channels {} outside 1..={}", self.n_channels, CHB_MIT_LABELS.len()));
        }
        if !(self.seizure_boost > 1.0) || !(self.background_uv > 0.0) {
            return bad("seizure_boost must exceed 1 and background_uv must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.rhythm_fraction) || !(self.rhythm_hz > 0.0) {
            return bad("rhythm_fraction must lie in [0, 1] and rhythm_hz be positive".into());
        }
        if !(self.phase_jitter_rad >= 0.0) {
            return bad("phase_jitter_rad must be non-negative".into());
        }
        if ClockTime::parse(&self.start_clock).is_none() {
            return bad(format!("start_clock {:?} is not hh:mm:ss", self.start_clock));
        }
        let mut sorted = self.seizures.clone();
        sorted.sort_by_key(|s| (s.file, s.start_s));
        for s in &sorted {
            if s.file >= self.n_files || s.start_s < 0 || s.start_s >= s.end_s || s.end_s > self.file_duration_s {
                return bad(format!("seizure {s:?} outside its file"));
            }
        }
        for w in sorted.windows(2) {
            if w[0].file == w[1].file && w[1].start_s < w[0].end_s {
                return bad(format!("seizures {:?} and {:?} overlap", w[0], w[1]));
            }
        }
        Ok(())
    }

    pub fn channel_labels(&self) -> Vec<String> {
        CHB_MIT_LABELS[..self.n_channels].iter().map(|s| s.to_string()).collect()
    }

    fn file_name(&self, i: usize) -> String {
        format!("{}_{:02}.edf", self.patient_id, i + 1)
    }

    fn file_start_clock(&self, i: usize) -> i64 {
        let first = ClockTime::parse(&self.start_clock).expect("validated").0;
        first + i as i64 * (self.file_duration_s + self.gap_s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    /// `(file name, EDF bytes)`, including duplicates.
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: String,
    pub summary_name: String,
}

impl SynthDataset {
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        std::fs::write(dir.join(&self.summary_name), &self.summary)
    }
}

fn rng_for(seed: u64, what: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::stable_hash64(format!("{seed}|{what}").as_bytes()))
}

fn pink_gain(freq: f64) -> f64 {
    1.0 / freq.max(PINK_FLOOR_HZ).sqrt()
}

/// Expected share of pink-noise power between `lo` and `hi` Hz.
fn pink_band_fraction(n: usize, lo: f64, hi: f64) -> f64 {
    let rate = f64::from(SAMPLING_RATE_HZ);
    let (mut band, mut total) = (0.0, 0.0);
    for k in 1..=n / 2 {
        let f = k as f64 * rate / n as f64;
        let p = pink_gain(f).powi(2);
        total += p;
        if f >= lo && f <= hi {
            band += p;
        }
    }
    band / total
}

/// Real Gaussian noise with amplitude spectrum `gain(f)`, scaled to unit RMS.
fn shaped_noise(n: usize, rng: &mut ChaCha8Rng, planner: &mut FftPlanner<f64>, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let rate = f64::from(SAMPLING_RATE_HZ);
    let mut spectrum = vec![Complex::new(0.0, 0.0); n];
    for k in 1..=n / 2 {
        let g = gain(k as f64 * rate / n as f64);
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = if 2 * k == n { 0.0 } else { StandardNormal.sample(rng) };
        spectrum[k] = Complex::new(re * g, im * g);
        spectrum[n - k] = spectrum[k].conj();
    }
    planner.plan_fft_inverse(n).process(&mut spectrum);
    let mut out: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Raised-cosine edges so bursts start and stop smoothly.
fn ramp(i: usize, len: usize) -> f64 {
    let r = (RAMP_S * f64::from(SAMPLING_RATE_HZ)) as usize;
    let edge = i.min(len - 1 - i);
    if r == 0 || edge >= r {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge as f64 / r as f64).cos()
    }
}

fn generate_file(spec: &SynthSpec, index: usize, weights: &[f64], base_phase: f64) -> Recording {
    let rate = SAMPLING_RATE_HZ as usize;
    let n = spec.file_duration_s as usize * rate;
    let mut rng = rng_for(spec.seed, &format!("file|{index}"));
    let mut planner = FftPlanner::new();

    let shared = shaped_noise(n, &mut rng, &mut planner, pink_gain);
    let (a, b) = ((1.0 - SHARED_BACKGROUND).sqrt(), SHARED_BACKGROUND.sqrt());
    let mut samples: Vec<Vec<f64>> = (0..spec.n_channels)
        .map(|_| {
            let own = shaped_noise(n, &mut rng, &mut planner, pink_gain);
            own.iter()
                .zip(&shared)
                .map(|(o, s)| spec.background_uv * (a * o + b * s))
                .collect()
        })
        .collect();

    let (lo, hi) = SEIZURE_BAND_HZ;
    let band_power = spec.background_uv.powi(2) * pink_band_fraction(n, lo, hi);
    let added = (spec.seizure_boost - 1.0) * band_power;
    let rhythm_amp = (2.0 * spec.rhythm_fraction * added).sqrt();
    let noise_amp = ((1.0 - spec.rhythm_fraction) * added).sqrt();

    let mut planted: Vec<&PlantedSeizure> = spec.seizures.iter().filter(|s| s.file == index).collect();
    planted.sort_by_key(|s| s.start_s);
    for s in planted {
        let start = s.start_s as usize * rate;
        let len = (s.end_s - s.start_s) as usize * rate;
        let jitter: f64 = StandardNormal.sample(&mut rng);
        let phase = base_phase + spec.phase_jitter_rad * jitter;
        let burst = shaped_noise(len, &mut rng, &mut planner, |f| if (lo..=hi).contains(&f) { 1.0 } else { 0.0 });
        for i in 0..len {
            let t = (start + i) as f64 / rate as f64;
            let source =
                ramp(i, len) * (rhythm_amp * (2.0 * PI * spec.rhythm_hz * t + phase).sin() + noise_amp * burst[i]);
            for (ch, w) in samples.iter_mut().zip(weights) {
                ch[start + i] += w * source;
            }
        }
    }

    let limit = PHYSICAL_RANGE_UV * (1.0 - 1e-6);
    for ch in &mut samples {
        ch.iter_mut().for_each(|v| *v = v.clamp(-limit, limit));
    }
    let signals = spec
        .channel_labels()
        .into_iter()
        .map(|l| SignalSpec::eeg(l, PHYSICAL_RANGE_UV, rate))
        .collect();
    let mut rec = Recording::new(&spec.patient_id, 1.0, signals, samples);
    let clock = spec.file_start_clock(index);
    rec.header.start_time = format!("{:02}.{:02}.{:02}", (clock / 3600) % 24, (clock / 60) % 60, clock % 60);
    rec.header.recording_id = spec.file_name(index);
    rec
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset, SynthError> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, "layout");
    // Spatial weights with mean square 1, none below half the average power.
    let raw: Vec<f64> = (0..spec.n_channels).map(|_| 0.5 + rng.random::<f64>()).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let weights: Vec<f64> = raw.iter().map(|p| (p / mean).sqrt()).collect();
    let base_phase = rng.random_range(0.0..2.0 * PI);

    let files: Vec<(String, Vec<u8>)> = (0..spec.n_files)
        .into_par_iter()
        .map(|i| {
            let rec = generate_file(spec, i, &weights, base_phase);
            let bytes = write_edf(&rec).expect("samples are clamped into range");
            (spec.file_name(i), bytes)
        })
        .collect();

    let entry = |i: usize, name: String| {
        let start = spec.file_start_clock(i);
        SummaryEntry {
            file_name: name,
            start: ClockTime(start),
            end: ClockTime(start + spec.file_duration_s),
            seizures: spec
                .seizures
                .iter()
                .filter(|s| s.file == i)
                .map(|s| (s.start_s, s.end_s))
                .collect(),
        }
    };
    let mut entries: Vec<SummaryEntry> = (0..spec.n_files).map(|i| entry(i, files[i].0.clone())).collect();
    let mut all_files = files.clone();
    for d in 0..spec.duplicate_files {
        let i = d % spec.n_files;
        let name = format!("{}_{:02}_copy{}.edf", spec.patient_id, i + 1, d / spec.n_files + 1);
        entries.push(entry(i, name.clone()));
        all_files.push((name, files[i].1.clone()));
    }
    if spec.shuffle_order {
        entries.shuffle(&mut rng);
    }
    Ok(SynthDataset {
        files: all_files,
        summary: render_summary(SAMPLING_RATE_HZ, &spec.channel_labels(), &entries),
        summary_name: format!("{}-summary.txt", spec.patient_id),
    })
}
