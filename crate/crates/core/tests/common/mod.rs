//! Independent reference implementations used as test oracles. None of them
//! call into the library code they check.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use seizure_core::edf::{Recording, SignalSpec};
use seizure_core::ica::SignalMatrix;

// ---------------------------------------------------------------- EDF

/// One signal for the reference encoder.
#[derive(Debug, Clone)]
pub struct OracleSignal {
    pub label: String,
    pub phys_min: f64,
    pub phys_max: f64,
    pub dig_min: i32,
    pub dig_max: i32,
    pub samples_per_record: usize,
}

fn field(out: &mut Vec<u8>, s: &str, width: usize) {
    assert!(s.len() <= width, "{s:?} wider than {width}");
    out.extend_from_slice(s.as_bytes());
    out.resize(out.len() + width - s.len(), b' ');
}

/// EDF bytes written straight from the published layout. `codes[s]` holds
/// every digital sample of signal `s`, record after record.
pub fn encode_edf(patient: &str, record_s: &str, signals: &[OracleSignal], codes: &[Vec<i16>]) -> Vec<u8> {
    let ns = signals.len();
    let records = if ns == 0 { 0 } else { codes[0].len() / signals[0].samples_per_record };
    let mut out = Vec::new();
    field(&mut out, "0", 8);
    field(&mut out, patient, 80);
    field(&mut out, "rec", 80);
    field(&mut out, "01.02.03", 8);
    field(&mut out, "04.05.06", 8);
    field(&mut out, &(256 * (ns + 1)).to_string(), 8);
    field(&mut out, "", 44);
    field(&mut out, &records.to_string(), 8);
    field(&mut out, record_s, 8);
    field(&mut out, &ns.to_string(), 4);
    for s in signals {
        field(&mut out, &s.label, 16);
    }
    for _ in signals {
        field(&mut out, "AgAgCl electrode", 80);
    }
    for _ in signals {
        field(&mut out, "uV", 8);
    }
    for s in signals {
        field(&mut out, &s.phys_min.to_string(), 8);
    }
    for s in signals {
        field(&mut out, &s.phys_max.to_string(), 8);
    }
    for s in signals {
        field(&mut out, &s.dig_min.to_string(), 8);
    }
    for s in signals {
        field(&mut out, &s.dig_max.to_string(), 8);
    }
    for _ in signals {
        field(&mut out, "HP:0.1Hz", 80);
    }
    for s in signals {
        field(&mut out, &s.samples_per_record.to_string(), 8);
    }
    for _ in signals {
        field(&mut out, "", 32);
    }
    for r in 0..records {
        for (s, c) in signals.iter().zip(codes) {
            let n = s.samples_per_record;
            for &v in &c[r * n..(r + 1) * n] {
                out.push(v as u8);
                out.push((v >> 8) as u8);
            }
        }
    }
    out
}

/// A seeded random signal layout with digital codes inside each range.
pub fn random_layout(rng: &mut ChaCha8Rng) -> (Vec<OracleSignal>, Vec<Vec<i16>>) {
    let ns = rng.random_range(1..=5);
    let records = rng.random_range(0..=4);
    let signals: Vec<OracleSignal> = (0..ns)
        .map(|i| {
            let dig_min = rng.random_range(-32768..=0);
            let dig_max = rng.random_range(dig_min + 1..=32767);
            let phys_min = -f64::from(rng.random_range(1..=5000)) / 4.0;
            let phys_max = f64::from(rng.random_range(1..=5000)) / 4.0;
            OracleSignal {
                label: format!("S{i}-{}", rng.random_range(0..100)),
                phys_min,
                phys_max,
                dig_min,
                dig_max,
                samples_per_record: rng.random_range(1..=64),
            }
        })
        .collect();
    let codes = signals
        .iter()
        .map(|s| {
            (0..s.samples_per_record * records)
                .map(|_| rng.random_range(s.dig_min..=s.dig_max) as i16)
                .collect()
        })
        .collect();
    (signals, codes)
}

/// Physical value of a digital code by the EDF scaling formula.
pub fn physical(s: &OracleSignal, d: i16) -> f64 {
    (f64::from(d) - f64::from(s.dig_min)) * (s.phys_max - s.phys_min) / f64::from(s.dig_max - s.dig_min) + s.phys_min
}

/// A library `Recording` holding the same content as a random layout.
pub fn recording_from_layout(signals: &[OracleSignal], codes: &[Vec<i16>]) -> Recording {
    let specs = signals
        .iter()
        .map(|s| SignalSpec {
            label: s.label.clone(),
            transducer: "AgAgCl electrode".into(),
            physical_dim: "uV".into(),
            phys_min: s.phys_min,
            phys_max: s.phys_max,
            dig_min: s.dig_min,
            dig_max: s.dig_max,
            prefiltering: "HP:0.1Hz".into(),
            samples_per_record: s.samples_per_record,
        })
        .collect();
    let samples = signals
        .iter()
        .zip(codes)
        .map(|(s, c)| c.iter().map(|&d| physical(s, d)).collect())
        .collect();
    Recording::new("patient", 1.0, specs, samples)
}

// ---------------------------------------------------------------- summaries

/// A file in a ground-truth schedule, in absolute seconds of one day.
#[derive(Debug, Clone)]
pub struct PlannedFile {
    pub name: String,
    pub start: i64,
    pub end: i64,
    /// Offsets from the file start.
    pub seizures: Vec<(i64, i64)>,
}

fn hms(t: i64) -> String {
    format!("{:02}:{:02}:{:02}", t / 3600, (t / 60) % 60, t % 60)
}

/// Summary text in the CHB-MIT layout for the files in the given order.
pub fn summary_text(files: &[PlannedFile]) -> String {
    let mut s = String::from("Data Sampling Rate: 256 Hz\n*************************\n\n");
    s.push_str("Channels in EDF Files:\n**********************\n");
    for (i, c) in ["FP1-F7", "F7-T7", "T7-P7"].iter().enumerate() {
        s.push_str(&format!("Channel {}: {c}\n", i + 1));
    }
    for f in files {
        s.push_str(&format!(
            "\nFile Name: {}\nFile Start Time: {}\nFile End Time: {}\nNumber of Seizures in File: {}\n",
            f.name,
            hms(f.start),
            hms(f.end),
            f.seizures.len()
        ));
        for (a, b) in &f.seizures {
            s.push_str(&format!("Seizure Start Time: {a} seconds\nSeizure End Time: {b} seconds\n"));
        }
    }
    s
}

/// Non-overlapping files within a twelve hour window, plus duplicated
/// entries (same start clock, different name), listed in shuffled order.
pub fn random_schedule(rng: &mut ChaCha8Rng) -> Vec<PlannedFile> {
    let n = rng.random_range(1..=7);
    let mut t = rng.random_range(6 * 3600..9 * 3600);
    let mut files = Vec::new();
    for i in 0..n {
        let len = rng.random_range(60..=3600);
        let k = rng.random_range(0..=2);
        let seizures = (0..k)
            .map(|_| {
                let a = rng.random_range(0..len - 1);
                (a, rng.random_range(a + 1..=len))
            })
            .collect();
        files.push(PlannedFile {
            name: format!("chb01_{:02}.edf", i + 1),
            start: t,
            end: t + len,
            seizures,
        });
        t += len + rng.random_range(0..=600);
    }
    let dups = rng.random_range(0..=3);
    for d in 0..dups {
        let src = files[rng.random_range(0..n)].clone();
        files.push(PlannedFile {
            name: format!("chb01_dup{d}.edf"),
            seizures: vec![],
            ..src
        });
    }
    files.shuffle(rng);
    files
}

/// Expected manifest: first occurrence per start clock survives, sorted by
/// start, timeline origin at the earliest start.
/// `(file name, start, end)` per file, and `(start, end)` per seizure.
pub type ExpectedManifest = (Vec<(String, i64, i64)>, Vec<(i64, i64)>);

pub fn manifest_oracle(listed: &[PlannedFile]) -> ExpectedManifest {
    let mut kept: Vec<&PlannedFile> = Vec::new();
    for f in listed {
        if !kept.iter().any(|k| k.start == f.start) {
            kept.push(f);
        }
    }
    kept.sort_by_key(|f| f.start);
    let origin = kept[0].start;
    let files = kept
        .iter()
        .map(|f| (f.name.clone(), f.start - origin, f.end - origin))
        .collect();
    let seizures = kept
        .iter()
        .flat_map(|f| f.seizures.iter().map(move |&(a, b)| (f.start - origin + a, f.start - origin + b)))
        .collect();
    (files, seizures)
}

// ---------------------------------------------------------------- labels

/// Tests every (epoch, seizure) pair for overlap of the shifted window.
pub fn labels_oracle(starts: &[i64], seizures: &[(i64, i64)], horizon: i64) -> Vec<u8> {
    starts
        .iter()
        .map(|&s| {
            let (lo, hi) = (s + horizon, s + horizon + 5);
            let mut hit = false;
            for &(a, b) in seizures {
                for t in lo..hi {
                    if a <= t && t < b {
                        hit = true;
                    }
                }
            }
            u8::from(hit)
        })
        .collect()
}

// ---------------------------------------------------------------- metrics

/// The six scores re-derived sample by sample, with zero for undefined.
pub struct MetricsOracle {
    pub precision: f64,
    pub accuracy: f64,
    pub specificity: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub mcc: f64,
}

fn ratio(hits: usize, of: usize) -> f64 {
    if of == 0 {
        0.0
    } else {
        hits as f64 / of as f64
    }
}

pub fn metrics_oracle(pred: &[u8], actual: &[u8]) -> MetricsOracle {
    let pairs: Vec<(u8, u8)> = pred.iter().copied().zip(actual.iter().copied()).collect();
    let predicted_pos: Vec<u8> = pairs.iter().filter(|p| p.0 == 1).map(|p| p.1).collect();
    let actual_pos: Vec<u8> = pairs.iter().filter(|p| p.1 == 1).map(|p| p.0).collect();
    let actual_neg: Vec<u8> = pairs.iter().filter(|p| p.1 == 0).map(|p| p.0).collect();
    let precision = ratio(predicted_pos.iter().filter(|&&a| a == 1).count(), predicted_pos.len());
    let sensitivity = ratio(actual_pos.iter().filter(|&&p| p == 1).count(), actual_pos.len());
    let specificity = ratio(actual_neg.iter().filter(|&&p| p == 0).count(), actual_neg.len());
    let accuracy = ratio(pairs.iter().filter(|p| p.0 == p.1).count(), pairs.len());
    // 2TP / (2TP + FP + FN): the harmonic mean without dividing by P + R
    let tp = pairs.iter().filter(|p| *p == &(1, 1)).count();
    let wrong = pairs.iter().filter(|p| p.0 != p.1).count();
    let f1 = if precision + sensitivity == 0.0 { 0.0 } else { ratio(2 * tp, 2 * tp + wrong) };
    // Matthews coefficient as the Pearson correlation of the two 0/1 series
    let n = pairs.len() as f64;
    let mp = pred.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let ma = actual.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(p, a) in &pairs {
        let (x, y) = (f64::from(p) - mp, f64::from(a) - ma);
        sxy += x * y;
        sxx += x * x;
        syy += y * y;
    }
    let mcc = if sxx == 0.0 || syy == 0.0 { 0.0 } else { sxy / (sxx * syy).sqrt() };
    MetricsOracle {
        precision,
        accuracy,
        specificity,
        sensitivity,
        f1,
        mcc,
    }
}

// ---------------------------------------------------------------- spectra

/// |H(f)| of a kernel read off a zero-padded FFT whose bins hit `freqs`.
/// Every probe must be a multiple of `fs / n`.
pub fn fft_response(taps: &[f64], fs: f64, n: usize, freqs: &[f64]) -> Vec<f64> {
    assert!(n >= taps.len());
    let mut buf: Vec<Complex<f64>> = taps.iter().map(|&t| Complex::new(t, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    freqs
        .iter()
        .map(|&f| {
            let k = f * n as f64 / fs;
            assert!((k - k.round()).abs() < 1e-9, "{f} Hz is not on the grid");
            buf[k.round() as usize].norm()
        })
        .collect()
}

/// Amplitude of the `f` Hz sinusoid in `x` (an integer number of cycles).
pub fn tone_amplitude(x: &[f64], f: f64, fs: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f / fs;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        re += v * (w * i as f64).cos();
        im -= v * (w * i as f64).sin();
    }
    2.0 * (re * re + im * im).sqrt() / x.len() as f64
}

/// Welch power spectral density average over `[lo, hi]` Hz with Hann
/// segments of `seg` samples and 50% overlap.
pub fn welch_band_power(x: &[f64], fs: f64, seg: usize, lo: f64, hi: f64) -> f64 {
    let hann: Vec<f64> = (0..seg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos())
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let mut psd = vec![0.0; seg / 2 + 1];
    let mut count = 0;
    let mut start = 0;
    while start + seg <= x.len() {
        let mean = x[start..start + seg].iter().sum::<f64>() / seg as f64;
        let mut buf: Vec<Complex<f64>> = (0..seg)
            .map(|i| Complex::new((x[start + i] - mean) * hann[i], 0.0))
            .collect();
        fft.process(&mut buf);
        for (p, c) in psd.iter_mut().zip(&buf) {
            *p += c.norm_sqr();
        }
        count += 1;
        start += seg / 2;
    }
    assert!(count > 0, "signal shorter than one segment");
    psd.iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = *k as f64 * fs / seg as f64;
            f >= lo && f <= hi
        })
        .map(|(_, p)| p / count as f64)
        .sum()
}

/// Pearson correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

// ---------------------------------------------------------------- ICA

/// Sine at 5 Hz, square at 11 Hz and sawtooth at 17 Hz, sampled at 256 Hz.
pub fn reference_sources(n: usize) -> Vec<Vec<f64>> {
    let t = |i: usize| i as f64 / 256.0;
    vec![
        (0..n).map(|i| (2.0 * std::f64::consts::PI * 5.0 * t(i)).sin()).collect(),
        (0..n).map(|i| if (11.0 * t(i)).fract() < 0.5 { 1.0 } else { -1.0 }).collect(),
        (0..n).map(|i| 2.0 * (17.0 * t(i)).fract() - 1.0).collect(),
    ]
}

/// 5000 samples of the reference sources through a seeded Gaussian
/// `channels x 3` mixing, plus white noise of standard deviation `noise`.
pub fn mixed_sources(seed: u64, channels: usize, noise: f64) -> (SignalMatrix, Vec<Vec<f64>>) {
    let n = 5000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = reference_sources(n);
    let a: Vec<Vec<f64>> = (0..channels)
        .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let rows: Vec<Vec<f64>> = a
        .iter()
        .map(|w| {
            (0..n)
                .map(|i| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    (0..3).map(|k| w[k] * s[k][i]).sum::<f64>() + noise * e
                })
                .collect()
        })
        .collect();
    (SignalMatrix::from_rows(&rows), s)
}
