use std::path::Path;

use seizure_core::classifiers::{ModelKind, ModelSpec};
use seizure_core::experiment::*;
use seizure_core::ica::IcaConfig;
use seizure_core::synth::{PlantedSeizure, SynthSpec};

fn cheap(kind: ModelKind) -> ModelSpec {
    ModelSpec {
        epochs: 2,
        hidden_size: 4,
        time_stride: 64,
        ..ModelSpec::new(kind)
    }
}

/// Ten minutes of data in two files with three seizures.
fn small_synth() -> SynthSpec {
    SynthSpec {
        n_files: 2,
        file_duration_s: 300,
        seizures: vec![
            PlantedSeizure { file: 0, start_s: 60, end_s: 120 },
            PlantedSeizure { file: 0, start_s: 200, end_s: 240 },
            PlantedSeizure { file: 1, start_s: 150, end_s: 210 },
        ],
        ..SynthSpec::default()
    }
}

fn small_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synth(small_synth()),
        ica: IcaConfig { n_components: 4, ..IcaConfig::default() },
        models: vec![cheap(ModelKind::LogisticRegression)],
        horizons_s: vec![0],
        iterations: 1,
        train_fraction: 0.6,
        output_dir: out.to_path_buf(),
        record_timing: false,
        ..ExperimentConfig::default()
    }
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn three_models_two_horizons_three_iterations_give_eighteen_cells() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        models: vec![
            cheap(ModelKind::LogisticRegression),
            cheap(ModelKind::Knn),
            cheap(ModelKind::Lstm),
        ],
        horizons_s: vec![0, 1200],
        iterations: 3,
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&config).unwrap();
    assert_eq!(report.cells.len(), 18, "failures: {:?}", report.failures);
    let csv = read(dir.path(), "cells.csv");
    assert_eq!(csv.lines().count(), 19);
    assert_eq!(read_cells_csv(&dir.path().join("cells.csv")).unwrap().len(), 18);
}

#[test]
fn single_cell_summary_collapses_and_stages_run_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small_config(dir.path())).unwrap();
    assert_eq!(report.cells.len(), 1);

    let summary: serde_json::Value = serde_json::from_str(&read(dir.path(), "summary.json")).unwrap();
    let metrics = &summary["groups"][0]["metrics"];
    for name in ["precision", "accuracy", "specificity", "sensitivity", "f1", "mcc"] {
        let m = &metrics[name];
        assert_eq!(m["min"], m["max"], "{name}");
        assert_eq!(m["min"], m["median"], "{name}");
        assert_eq!(m["median"].as_f64(), report.cells[0].metrics.get(name));
    }
    let best = read(dir.path(), "best.csv");
    assert!(best.lines().nth(1).unwrap().starts_with("0,"));

    let order = ["load ", "montage ", "filter ", "ica_fit ", "ica_transform ", "label ", "split ", "train "];
    let logged = read(dir.path(), "stages.log");
    let positions: Vec<usize> = order
        .iter()
        .map(|p| logged.lines().position(|l| l.starts_with(p)).unwrap_or_else(|| panic!("no {p} stage")))
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{logged}");
    assert_eq!(logged.lines().collect::<Vec<_>>(), report.stages);
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut config = small_config(a.path());
    config.models.push(cheap(ModelKind::Knn));
    config.models.push(cheap(ModelKind::Cnn));
    config.iterations = 2;
    run_experiment(&config).unwrap();
    config.output_dir = b.path().to_path_buf();
    config.jobs = Some(1);
    run_experiment(&config).unwrap();
    for name in ["cells.csv", "summary.json", "best.csv", "trend.csv", "attribution.csv", "stages.log", "failures.json"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
}

#[test]
fn horizon_beyond_the_data_is_a_recorded_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    config.horizons_s = vec![0, 3600];
    let report = run_experiment(&config).unwrap();
    assert_eq!(report.cells.len(), 1);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].stage, "split");
    assert_eq!(report.failures[0].horizon_s, Some(3600));
    let failures: serde_json::Value = serde_json::from_str(&read(dir.path(), "failures.json")).unwrap();
    assert_eq!(failures.as_array().unwrap().len(), 1);
}

#[test]
fn missing_data_leaves_a_failure_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(&dir.path().join("out"));
    config.data = DataSource::Directory(dir.path().join("nowhere"));
    assert!(run_experiment(&config).is_err());
    let failures: serde_json::Value = serde_json::from_str(&read(&config.output_dir, "failures.json")).unwrap();
    assert_eq!(failures[0]["stage"], "pipeline");
    assert!(!config.output_dir.join("cells.csv").exists());
}

#[test]
fn checkpoint_iterations_come_from_one_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    config.iteration_mode = IterationMode::Checkpoints;
    config.iterations = 2;
    config.models = vec![cheap(ModelKind::LogisticRegression), cheap(ModelKind::Knn)];
    let report = run_experiment(&config).unwrap();
    let its: Vec<(ModelKind, usize)> = report.cells.iter().map(|c| (c.model, c.iteration)).collect();
    assert_eq!(
        its,
        vec![
            (ModelKind::LogisticRegression, 0),
            (ModelKind::LogisticRegression, 1),
            (ModelKind::Knn, 0),
            (ModelKind::Knn, 1),
        ]
    );
    assert_eq!(report.cells[2].counts, report.cells[3].counts);
}

#[test]
fn cached_preprocessing_gives_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(&dir.path().join("a"));
    config.cache_dir = Some(dir.path().join("cache"));
    run_experiment(&config).unwrap();
    let cached: Vec<_> = std::fs::read_dir(dir.path().join("cache")).unwrap().collect();
    assert_eq!(cached.len(), 1);
    config.output_dir = dir.path().join("b");
    run_experiment(&config).unwrap();
    for name in ["cells.csv", "summary.json", "attribution.csv"] {
        assert_eq!(read(&dir.path().join("a"), name), read(&dir.path().join("b"), name), "{name}");
    }
}

#[test]
fn saved_pipeline_scores_a_dataset_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    seizure_core::synth::generate(&small_synth()).unwrap().write_to(&data).unwrap();
    let mut config = small_config(&dir.path().join("out"));
    config.data = DataSource::Directory(data.clone());
    config.save_models = SaveModels::First;
    run_experiment(&config).unwrap();
    let bytes = std::fs::read(dir.path().join("out/models/logistic_regression_h0_i0.szp")).unwrap();
    let artifact = load_pipeline(&bytes).unwrap();
    assert_eq!(artifact.horizon_s, 0);
    let (counts, metrics) = evaluate_artifact(&artifact, &data).unwrap();
    // 600 s of data in 5 s epochs, trimmed after the last seizure ends at 510 s
    assert_eq!(counts.total(), 102);
    assert!(metrics.values().iter().all(|v| v.is_finite()));
}

#[test]
fn config_round_trips_through_toml() {
    let config = small_config(Path::new("somewhere"));
    assert_eq!(ExperimentConfig::from_toml(&config.to_toml()).unwrap(), config);
    assert!(matches!(
        ExperimentConfig::from_toml("iterations = 0"),
        Err(ExperimentError::Config(_))
    ));
    assert!(matches!(
        ExperimentConfig::from_toml("no_such_key = 1"),
        Err(ExperimentError::Config(_))
    ));
}
