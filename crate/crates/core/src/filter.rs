//! Linear-phase FIR bandpass design and per-epoch application.
//!
//! The kernel is a windowed difference of two sinc low-passes, scaled to unit
//! gain at the geometric centre of the passband. Filtering reflect-pads each
//! channel by half the kernel length and correlates, which for a symmetric
//! kernel is convolution with the group delay already removed.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmentation::Epoch;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("probe frequency {freq} Hz outside [0, {nyquist}) Hz")]
    FrequencyOutOfRange { freq: f64, nyquist: f64 },
}

pub type Result<T> = std::result::Result<T, FilterError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hamming,
    Hann,
    Blackman,
    Rectangular,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        let m = (n - 1) as f64;
        (0..n)
            .map(|i| {
                let x = 2.0 * PI * i as f64 / m;
                match self {
                    Window::Hamming => 0.54 - 0.46 * x.cos(),
                    Window::Hann => 0.5 - 0.5 * x.cos(),
                    Window::Blackman => 0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos(),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub low_cut_hz: f64,
    pub high_cut_hz: f64,
    pub sampling_rate_hz: u32,
    pub num_taps: usize,
    pub window: Window,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            low_cut_hz: 1.0,
            high_cut_hz: 50.0,
            sampling_rate_hz: 256,
            num_taps: 845,
            window: Window::Hamming,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        let nyquist = f64::from(self.sampling_rate_hz) / 2.0;
        if !(self.low_cut_hz > 0.0 && self.low_cut_hz < self.high_cut_hz && self.high_cut_hz < nyquist) {
            return Err(FilterError::InvalidBand(format!(
                "need 0 < {} < {} < {nyquist}",
                self.low_cut_hz, self.high_cut_hz
            )));
        }
        if self.num_taps.is_multiple_of(2) {
            return Err(FilterError::InvalidBand(format!("num_taps {} must be odd", self.num_taps)));
        }
        Ok(())
    }
}

/// Symmetric FIR coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirKernel {
    pub taps: Vec<f64>,
    pub sampling_rate_hz: f64,
}

impl FirKernel {
    pub fn identity(sampling_rate_hz: f64) -> Self {
        Self {
            taps: vec![1.0],
            sampling_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// One coefficient per line.
    pub fn to_text(&self) -> String {
        self.taps.iter().map(|t| format!("{t:e}\n")).collect()
    }
}

fn sinc_lowpass(cutoff_hz: f64, rate: f64, offset: f64) -> f64 {
    let fc = cutoff_hz / rate;
    if offset == 0.0 {
        2.0 * fc
    } else {
        (2.0 * PI * fc * offset).sin() / (PI * offset)
    }
}

pub fn design_bandpass(spec: &FilterSpec) -> Result<FirKernel> {
    spec.validate()?;
    let rate = f64::from(spec.sampling_rate_hz);
    let n = spec.num_taps;
    let centre = (n / 2) as f64;
    let window = spec.window.coefficients(n);
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let k = i as f64 - centre;
            (sinc_lowpass(spec.high_cut_hz, rate, k) - sinc_lowpass(spec.low_cut_hz, rate, k)) * window[i]
        })
        .collect();
    // Mirror exactly so symmetry holds bit-for-bit.
    for i in 0..n / 2 {
        taps[n - 1 - i] = taps[i];
    }
    let mut kernel = FirKernel {
        taps,
        sampling_rate_hz: rate,
    };
    let reference = (spec.low_cut_hz * spec.high_cut_hz).sqrt();
    let gain = magnitude_at(&kernel, reference);
    kernel.taps.iter_mut().for_each(|t| *t /= gain);
    Ok(kernel)
}

fn magnitude_at(kernel: &FirKernel, freq: f64) -> f64 {
    let w = 2.0 * PI * freq / kernel.sampling_rate_hz;
    let (re, im) = kernel
        .taps
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(re, im), (k, &h)| {
            let phase = w * k as f64;
            (re + h * phase.cos(), im - h * phase.sin())
        });
    re.hypot(im)
}

/// `|H(f)|` by direct summation over the taps.
pub fn frequency_response(kernel: &FirKernel, freqs_hz: &[f64]) -> Result<Vec<f64>> {
    let nyquist = kernel.sampling_rate_hz / 2.0;
    freqs_hz
        .iter()
        .map(|&f| {
            if !(0.0..nyquist).contains(&f) {
                Err(FilterError::FrequencyOutOfRange { freq: f, nyquist })
            } else {
                Ok(magnitude_at(kernel, f))
            }
        })
        .collect()
}

/// Mirror index into `0..len` without repeating the edge sample.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Filters one channel; output has the input's length.
pub fn filter_channel(input: &[f64], kernel: &FirKernel, out: &mut [f64]) {
    let n = input.len();
    let taps = &kernel.taps;
    let half = taps.len() / 2;
    let padded: Vec<f64> = (0..n + 2 * half)
        .map(|i| input[reflect(i as isize - half as isize, n)])
        .collect();
    // Symmetric taps: fold pairs so each output needs half the products.
    let left = &taps[..half];
    let centre = taps[half];
    for (j, y) in out.iter_mut().enumerate() {
        let window = &padded[j..j + taps.len()];
        let (lo, rest) = window.split_at(half);
        let mid = rest[0];
        let hi = &rest[1..];
        let mut acc = [0.0f64; 4];
        let chunks = half / 4;
        for c in 0..chunks {
            for l in 0..4 {
                let k = 4 * c + l;
                acc[l] += left[k] * (lo[k] + hi[half - 1 - k]);
            }
        }
        let mut tail = 0.0;
        for k in 4 * chunks..half {
            tail += left[k] * (lo[k] + hi[half - 1 - k]);
        }
        *y = (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail + centre * mid;
    }
}

/// Filters every channel of an epoch.
pub fn apply_filter(epoch: &Epoch, kernel: &FirKernel) -> Epoch {
    let mut out = epoch.clone();
    if epoch.n_samples() == 0 {
        return out;
    }
    for c in 0..epoch.n_channels {
        filter_channel(epoch.channel(c), kernel, out.channel_mut(c));
    }
    out
}
