mod common;

use common::{encode_edf, physical, random_layout, recording_from_layout};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seizure_core::edf::{parse_edf, write_edf, EdfError, Recording, SignalSpec};

fn oracle_recording(seed: u64) -> (Vec<u8>, Recording, Vec<Vec<i16>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (signals, codes) = random_layout(&mut rng);
    let mut rec = recording_from_layout(&signals, &codes);
    rec.header.recording_id = "rec".into();
    rec.header.start_date = "01.02.03".into();
    rec.header.start_time = "04.05.06".into();
    (encode_edf("patient", "1", &signals, &codes), rec, codes)
}

proptest! {
    #[test]
    fn writer_matches_reference_encoder(seed in any::<u64>()) {
        let (bytes, rec, _) = oracle_recording(seed);
        prop_assert_eq!(write_edf(&rec).unwrap(), bytes);
    }

    #[test]
    fn parser_decodes_reference_bytes(seed in any::<u64>()) {
        let (bytes, rec, codes) = oracle_recording(seed);
        let parsed = parse_edf(&bytes).unwrap();
        prop_assert_eq!(&parsed.header, &rec.header);
        prop_assert_eq!(&parsed.signals, &rec.signals);
        prop_assert_eq!(parsed.digital_samples().unwrap(), codes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (signals, _) = random_layout(&mut rng);
        for (s, (xs, cs)) in signals.iter().zip(parsed.samples.iter().zip(&rec.samples)) {
            for (a, b) in xs.iter().zip(cs) {
                prop_assert!((a - b).abs() <= 1e-9 * (s.phys_max - s.phys_min));
            }
        }
    }

    #[test]
    fn parse_never_panics_on_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..2048)) {
        let _ = parse_edf(&bytes);
    }

    #[test]
    fn parse_never_panics_on_damaged_files(seed in any::<u64>(), cut in any::<prop::sample::Index>(), flips in proptest::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 0..8)) {
        let (mut bytes, _, _) = oracle_recording(seed);
        for (at, v) in flips {
            let i = at.index(bytes.len());
            bytes[i] = v;
        }
        let n = cut.index(bytes.len() + 1);
        let _ = parse_edf(&bytes[..n]);
        let _ = parse_edf(&bytes);
    }
}

#[test]
fn truncations_are_structured_errors() {
    let (bytes, _, _) = oracle_recording(3);
    for n in 0..bytes.len() {
        match parse_edf(&bytes[..n]) {
            Err(EdfError::TruncatedFile { .. }) => {}
            other => panic!("prefix of {n} bytes gave {other:?}"),
        }
    }
}

#[test]
fn digital_zero_scales_to_half_step() {
    let s = SignalSpec::eeg("F7", 1000.0, 1);
    let expected = 2000.0 / 65535.0 * 32768.0 - 1000.0;
    assert!((s.to_physical(0) - expected).abs() < 1e-12);
    assert!((s.to_physical(0) - 0.015259).abs() < 1e-6);
}

#[test]
fn header_bytes_off_by_one_is_malformed() {
    let (mut bytes, rec, _) = oracle_recording(5);
    let wrong = (256 * (rec.signals.len() + 1) - 1).to_string();
    bytes[184..192].copy_from_slice(format!("{wrong:<8}").as_bytes());
    assert!(matches!(
        parse_edf(&bytes),
        Err(EdfError::MalformedHeader { field, .. }) if field == "header_bytes"
    ));
}

#[test]
fn zero_signal_writes_code_of_zero() {
    let spec = SignalSpec::eeg("C3", 1000.0, 4);
    let code = spec.to_digital(0.0).unwrap();
    let rec = Recording::new("p", 1.0, vec![spec], vec![vec![0.0; 8]]);
    let parsed = parse_edf(&write_edf(&rec).unwrap()).unwrap();
    assert_eq!(parsed.digital_samples().unwrap(), vec![vec![code; 8]]);
}

#[test]
fn out_of_range_sample_is_rejected() {
    let rec = Recording::new("p", 1.0, vec![SignalSpec::eeg("C3", 100.0, 2)], vec![vec![0.0, 100.5]]);
    assert!(matches!(
        write_edf(&rec),
        Err(EdfError::ValueOutOfRange { signal: 0, index: 1, .. })
    ));
}

#[test]
fn two_signal_single_record_round_trip() {
    let specs = vec![SignalSpec::eeg("F7", 500.0, 3), SignalSpec::eeg("T7", 500.0, 3)];
    let a: Vec<f64> = [-500.0, 0.0, 250.0].iter().map(|&v| specs[0].to_physical(specs[0].to_digital(v).unwrap())).collect();
    let b: Vec<f64> = [1.0, -2.0, 499.0].iter().map(|&v| specs[1].to_physical(specs[1].to_digital(v).unwrap())).collect();
    let rec = Recording::new("p", 1.0, specs, vec![a, b]);
    assert_eq!(parse_edf(&write_edf(&rec).unwrap()).unwrap(), rec);
}

#[test]
fn scaling_matches_formula_over_full_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (signals, _) = random_layout(&mut rng);
    let rec = recording_from_layout(&signals, &vec![vec![]; signals.len()]);
    for (o, s) in signals.iter().zip(&rec.signals) {
        for d in [o.dig_min, o.dig_max, (o.dig_min + o.dig_max) / 2] {
            let d = d as i16;
            assert!((s.to_physical(d) - physical(o, d)).abs() < 1e-9);
            assert_eq!(s.to_digital(s.to_physical(d)), Some(d));
        }
    }
}
