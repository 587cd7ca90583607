mod common;

use std::f64::consts::PI;

use common::{fft_response, tone_amplitude};
use proptest::prelude::*;
use seizure_core::filter::*;
use seizure_core::segmentation::Epoch;

const FS: f64 = 256.0;

fn kernel() -> FirKernel {
    design_bandpass(&FilterSpec::default()).unwrap()
}

fn tone(f: f64, amplitude: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| amplitude * (2.0 * PI * f * i as f64 / FS).sin()).collect()
}

fn filtered(x: &[f64], k: &FirKernel) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    filter_channel(x, k, &mut y);
    y
}

#[test]
fn default_kernel_is_odd_and_symmetric() {
    let k = kernel();
    assert_eq!(k.len(), 845);
    for i in 0..k.len() {
        assert_eq!(k.taps[i], k.taps[k.len() - 1 - i]);
    }
}

#[test]
fn passband_and_stopband_by_fft() {
    let k = kernel();
    let probes = [0.1, 10.0, 25.0, 40.0, 60.0];
    let h = fft_response(&k.taps, FS, 2560, &probes);
    for (f, g) in probes.iter().zip(&h) {
        if (1.0..=50.0).contains(f) {
            assert!(*g >= 0.99, "{f} Hz gain {g}");
        } else {
            assert!(*g <= 0.01, "{f} Hz gain {g}");
        }
    }
}

#[test]
fn direct_response_agrees_with_fft() {
    let k = kernel();
    let freqs: Vec<f64> = (0..1280).map(|i| i as f64 * 0.1).collect();
    let want = fft_response(&k.taps, FS, 2560, &freqs);
    let got = frequency_response(&k, &freqs).unwrap();
    for ((f, a), b) in freqs.iter().zip(&got).zip(&want) {
        assert!((a - b).abs() < 1e-9, "{f} Hz: {a} vs {b}");
    }
}

#[test]
fn probes_at_or_above_nyquist_are_rejected() {
    assert!(matches!(
        frequency_response(&kernel(), &[128.0]),
        Err(FilterError::FrequencyOutOfRange { .. })
    ));
}

#[test]
fn interior_tones_pass_or_vanish() {
    let k = kernel();
    // [512, 768) is a whole second, beyond the reach of the edge padding
    let pass = filtered(&tone(25.0, 10.0, 1280), &k);
    let a = tone_amplitude(&pass[512..768], 25.0, FS);
    assert!((a - 10.0).abs() <= 0.1, "25 Hz amplitude {a}");

    let stop = filtered(&tone(60.0, 10.0, 1280), &k);
    let a = tone_amplitude(&stop[512..768], 60.0, FS);
    assert!(20.0 * (a / 10.0).log10() <= -40.0, "60 Hz amplitude {a}");
    assert!(stop[512..768].iter().all(|v| v.abs() <= 0.1));
}

#[test]
fn interior_matches_plain_convolution() {
    let k = kernel();
    let x: Vec<f64> = (0..1280).map(|i| ((i * 7919) % 263) as f64 - 131.0).collect();
    let y = filtered(&x, &k);
    let half = k.len() / 2;
    for j in half..x.len() - half {
        let mut acc = 0.0;
        for (t, &h) in k.taps.iter().enumerate() {
            acc += h * x[j + half - t];
        }
        assert!((y[j] - acc).abs() < 1e-9, "sample {j}");
    }
}

#[test]
fn constant_input_is_removed_in_the_interior() {
    let y = filtered(&vec![50.0; 1280], &kernel());
    assert!(y[422..858].iter().all(|v| v.abs() < 0.5));
}

#[test]
fn symmetric_input_stays_symmetric() {
    let k = design_bandpass(&FilterSpec { num_taps: 101, ..FilterSpec::default() }).unwrap();
    let x: Vec<f64> = (0..401).map(|i| (-((i as f64 - 200.0) / 30.0).powi(2)).exp() * (i as f64 * 0.7 - 140.0).cos()).collect();
    let y = filtered(&x, &k);
    for i in 0..401 {
        assert!((y[i] - y[400 - i]).abs() < 1e-9, "sample {i}");
    }
}

#[test]
fn identity_kernel_leaves_data_alone() {
    let e = Epoch::new(2, (0..20).map(f64::from).collect(), 0, "p");
    assert_eq!(apply_filter(&e, &FirKernel::identity(FS)), e);
}

#[test]
fn invalid_bands_are_rejected() {
    for spec in [
        FilterSpec { low_cut_hz: 50.0, high_cut_hz: 1.0, ..FilterSpec::default() },
        FilterSpec { high_cut_hz: 128.0, ..FilterSpec::default() },
        FilterSpec { num_taps: 844, ..FilterSpec::default() },
    ] {
        assert!(matches!(design_bandpass(&spec), Err(FilterError::InvalidBand(_))));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn filtering_is_linear(
        a in proptest::collection::vec(-100.0f64..100.0, 300),
        b in proptest::collection::vec(-100.0f64..100.0, 300),
        alpha in -3.0f64..3.0,
    ) {
        let k = design_bandpass(&FilterSpec { num_taps: 101, ..FilterSpec::default() }).unwrap();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + y).collect();
        let (fa, fb, fm) = (filtered(&a, &k), filtered(&b, &k), filtered(&mix, &k));
        for i in 0..300 {
            prop_assert!((fm[i] - (alpha * fa[i] + fb[i])).abs() < 1e-8);
        }
    }

    #[test]
    fn output_keeps_shape(channels in 1usize..5, len in 1usize..200) {
        let e = Epoch::new(channels, vec![1.0; channels * len], 10, "p");
        let out = apply_filter(&e, &kernel());
        prop_assert_eq!(out.data.len(), e.data.len());
        prop_assert_eq!(out.global_start_s, 10);
        prop_assert!(out.data.iter().all(|v| v.is_finite()));
    }
}
