use std::path::Path;
use std::process::{Command, Output};

fn seizure(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seizure"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL: &str = r#"
horizons_s = [0]
iterations = 1
train_fraction = 0.6
record_timing = false
save_models = "first"

[ica]
n_components = 4

[[models]]
kind = "lr"
epochs = 2

[data.synth]
n_files = 2
file_duration_s = 300
n_channels = 23
seizures = [
    { file = 0, start_s = 60, end_s = 120 },
    { file = 1, start_s = 150, end_s = 210 },
]
"#;

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&seizure(&[], dir.path())), 1);
    assert_eq!(code(&seizure(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&seizure(&["gradcheck", "--kind", "svm"], dir.path())), 1);
    assert_eq!(code(&seizure(&["gradcheck", "--kind", "knn"], dir.path())), 1);
    std::fs::write(dir.path().join("bad.toml"), "iterations = 0\n").unwrap();
    assert_eq!(code(&seizure(&["train", "--config", "bad.toml"], dir.path())), 1);
    assert_eq!(code(&seizure(&["--help"], dir.path())), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&seizure(&["ingest", "--data", "missing"], dir.path())), 2);
    assert_eq!(code(&seizure(&["report", "missing.csv"], dir.path())), 2);
    std::fs::write(dir.path().join("junk.szp"), b"not a model").unwrap();
    assert_eq!(code(&seizure(&["evaluate", "junk.szp", "--data", "."], dir.path())), 2);
}

#[test]
fn gradcheck_reports_every_gradient_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = seizure(&["gradcheck", "--seed", "3"], dir.path());
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let kinds: Vec<&str> = text.lines().map(|l| l.split(' ').next().unwrap()).collect();
    assert_eq!(kinds, ["logistic_regression", "rnn", "lstm", "cnn"]);
    for line in text.lines() {
        let err: f64 = line.split(' ').nth(1).unwrap().parse().unwrap();
        assert!(err < 1e-4, "{line}");
    }
}

#[test]
fn synth_ingest_train_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    std::fs::write(cwd.join("small.toml"), SMALL).unwrap();

    assert_eq!(code(&seizure(&["synth", "--config", "small.toml", "--out", "data"], cwd)), 0);
    assert!(cwd.join("data/synth01_01.edf").exists());
    assert!(cwd.join("data/synth01-summary.txt").exists());

    assert_eq!(code(&seizure(&["ingest", "--data", "data", "--out", "ingested"], cwd)), 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cwd.join("ingested/manifest.json")).unwrap()).unwrap();
    assert!(manifest.to_string().contains("synth01_02.edf"));
    assert!(cwd.join("ingested/epochs.bin").exists());

    let train = seizure(&["train", "--config", "small.toml", "--data", "data", "--out", "run", "--jobs", "1"], cwd);
    assert_eq!(code(&train), 0, "{}", String::from_utf8_lossy(&train.stderr));
    let cells = std::fs::read_to_string(cwd.join("run/cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 2);

    let eval = seizure(
        &["evaluate", "run/models/logistic_regression_h0_i0.szp", "--data", "data", "--out", "eval"],
        cwd,
    );
    assert_eq!(code(&eval), 0);
    let printed: serde_json::Value = serde_json::from_str(&stdout(&eval)).unwrap();
    assert_eq!(printed["horizon_s"], 0);
    assert!(printed["metrics"]["accuracy"].as_f64().is_some());
    assert!(cwd.join("eval/metrics.json").exists());

    assert_eq!(code(&seizure(&["report", "run/cells.csv", "--out", "again"], cwd)), 0);
    for name in ["summary.json", "best.csv", "trend.csv"] {
        assert!(cwd.join("again").join(name).exists(), "{name}");
    }
    assert_eq!(
        std::fs::read_to_string(cwd.join("again/best.csv")).unwrap(),
        std::fs::read_to_string(cwd.join("run/best.csv")).unwrap()
    );
}
