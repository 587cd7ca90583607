//! Config-driven experiment runner: preprocessing once per dataset, then
//! training and evaluating every (model, horizon, iteration) cell, then
//! writing reports.

mod artifact;
mod data;
mod pipeline;
mod report;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{ModelKind, ModelSpec};
use crate::filter::FilterSpec;
use crate::ica::IcaConfig;
use crate::segmentation::{MontageSpec, SplitMode, DEFAULT_TRAIN_FRACTION, EPOCH_SECONDS};
use crate::synth::SynthSpec;

pub use artifact::{load_epochs, load_pipeline, save_epochs, save_pipeline, PipelineArtifact, PIPELINE_FORMAT_VERSION};
pub use data::{ingest, load_dataset, DataSet, PatientData};
pub use pipeline::{evaluate_artifact, preprocess, run_experiment, Preprocessed};
pub use report::{
    best_table, emit_report, read_cells_csv, summarize_cells, trend_table, write_summary_files, BestEntry,
    ExperimentReport, Failure, GroupSummary, ReportCell, TrendRow,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("data error during {stage}: {message}")]
    Data { stage: String, message: String },
    #[error("numeric failure during {stage}: {message}")]
    Numeric { stage: String, message: String },
    #[error("every cell failed; see failures.json")]
    NoCells,
}

impl ExperimentError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(stage: &str, e: impl std::fmt::Display) -> Self {
        ExperimentError::Data {
            stage: stage.to_string(),
            message: e.to_string(),
        }
    }

    pub(crate) fn numeric(stage: &str, e: impl std::fmt::Display) -> Self {
        ExperimentError::Numeric {
            stage: stage.to_string(),
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// A directory holding `*-summary.txt` files and the EDF files they name.
    Directory(PathBuf),
    Synth(SynthSpec),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationMode {
    /// Independent trainings with distinct derived seeds.
    #[default]
    Seeds,
    /// Checkpoints after the last `iterations` training epochs of one run.
    Checkpoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaveModels {
    #[default]
    None,
    /// Iteration 0 of every (model, horizon).
    First,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub data: DataSource,
    pub montage: MontageSpec,
    pub filter: FilterSpec,
    pub ica: IcaConfig,
    pub models: Vec<ModelSpec>,
    pub horizons_s: Vec<i64>,
    pub iterations: usize,
    pub iteration_mode: IterationMode,
    pub train_fraction: f64,
    pub split: SplitMode,
    pub output_dir: PathBuf,
    /// Preprocessed epochs are reused from here when set.
    pub cache_dir: Option<PathBuf>,
    /// Worker threads for the cell grid; all cores when unset.
    pub jobs: Option<usize>,
    /// Write measured wall time; when off, `wall_time_s` is 0 so reports
    /// are byte-reproducible.
    pub record_timing: bool,
    pub save_models: SaveModels,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            data: DataSource::default(),
            montage: MontageSpec::default(),
            filter: FilterSpec::default(),
            ica: IcaConfig::default(),
            models: ModelKind::ALL.into_iter().map(ModelSpec::new).collect(),
            horizons_s: vec![1200, 2400, 3600, 4800, 6000, 7200],
            iterations: 10,
            iteration_mode: IterationMode::Seeds,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            split: SplitMode::Chronological,
            output_dir: PathBuf::from("report"),
            cache_dir: None,
            jobs: None,
            record_timing: true,
            save_models: SaveModels::None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.horizons_s.is_empty() {
            return bad("at least one horizon is required".into());
        }
        for &h in &self.horizons_s {
            if h < 0 || h % EPOCH_SECONDS != 0 {
                return bad(format!("horizon {h} s is not a non-negative multiple of {EPOCH_SECONDS} s"));
            }
        }
        let mut horizons = self.horizons_s.clone();
        horizons.sort_unstable();
        horizons.dedup();
        if horizons.len() != self.horizons_s.len() {
            return bad("horizons must be distinct".into());
        }
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        for (i, m) in self.models.iter().enumerate() {
            m.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
            if self.models[..i].iter().any(|o| o.kind == m.kind) {
                return bad(format!("model kind {} listed twice", m.kind));
            }
            if self.iteration_mode == IterationMode::Checkpoints
                && m.kind.is_gradient_trained()
                && m.epochs < self.iterations
            {
                return bad(format!(
                    "{} trains {} epochs, fewer than {} checkpoints",
                    m.kind, m.epochs, self.iterations
                ));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        self.montage.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.filter.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        if self.ica.n_components == 0 || self.ica.n_components > self.montage.keep_channels.len() {
            return bad(format!(
                "ica.n_components {} must be in 1..={}",
                self.ica.n_components,
                self.montage.keep_channels.len()
            ));
        }
        if self.jobs == Some(0) {
            return bad("jobs must be positive".into());
        }
        if let DataSource::Synth(s) = &self.data {
            s.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Seed for iteration `iteration` of `kind` at `horizon_s`: the first eight
/// bytes (little-endian) of SHA-256 over
/// `"cell|{master}|{kind}|{horizon_s}|{iteration}"`.
pub fn derive_seed(master: u64, kind: ModelKind, horizon_s: i64, iteration: usize) -> u64 {
    crate::stable_hash64(format!("cell|{master}|{kind}|{horizon_s}|{iteration}").as_bytes())
}

/// Seed for the ICA initial rotation.
pub fn derive_ica_seed(master: u64, config_seed: u64) -> u64 {
    crate::stable_hash64(format!("ica|{master}|{config_seed}").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c = ExperimentConfig::from_toml(
            r#"
            master_seed = 5
            horizons_s = [0, 1200]
            iterations = 3

            [[models]]
            kind = "lstm"
            learning_rate = 0.05

            [[models]]
            kind = "lr"
            "#,
        )
        .unwrap();
        assert_eq!(c.master_seed, 5);
        assert_eq!(c.models[0].kind, ModelKind::Lstm);
        assert_eq!(c.models[0].hidden_size, 32);
        assert_eq!(c.models[1].kind, ModelKind::LogisticRegression);
        assert_eq!(c.filter.num_taps, 845);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "horizons_s = [7]",
            "iterations = 0",
            "horizons_s = [5, 5]",
            "train_fraction = 1.0",
            "unknown_key = 1",
            "[[models]]\nkind = \"knn\"\n[[models]]\nkind = \"knn\"",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml(text), Err(ExperimentError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn seeds_differ_by_every_coordinate() {
        let base = derive_seed(1, ModelKind::Lstm, 0, 0);
        assert_eq!(base, derive_seed(1, ModelKind::Lstm, 0, 0));
        assert_ne!(base, derive_seed(2, ModelKind::Lstm, 0, 0));
        assert_ne!(base, derive_seed(1, ModelKind::Rnn, 0, 0));
        assert_ne!(base, derive_seed(1, ModelKind::Lstm, 5, 0));
        assert_ne!(base, derive_seed(1, ModelKind::Lstm, 0, 1));
    }
}
