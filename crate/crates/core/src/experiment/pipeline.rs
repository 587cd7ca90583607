//! Stage order: load, montage and epochs, filter, ICA fit on training
//! epochs, ICA transform, then per horizon: label, trim, split, train and
//! evaluate every model and iteration.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::artifact::{load_cache, save_cache, save_pipeline, PipelineArtifact};
use super::data::load_dataset;
use super::report::{emit_report, ExperimentReport, Failure, ReportCell};
use super::{derive_ica_seed, derive_seed, DataSource, ExperimentConfig, ExperimentError, IterationMode, Result, SaveModels};
use crate::classifiers::{
    fit, fit_with_checkpoints, predict, ClassifierError, FeatureTensor, ModelKind, ModelSpec, TrainedModel,
};
use crate::filter::{apply_filter, design_bandpass};
use crate::ica::{attribute_channels, fit_ica, transform_epochs, ChannelAttribution, IcaConfig, IcaModel, SignalMatrix};
use crate::manifest::{DatasetManifest, SeizureInterval};
use crate::metrics::{compute_metrics, confusion_counts, ConfusionCounts, MetricsRecord};
use crate::segmentation::{generate_labels, keep_before_last_seizure, labels_for_starts, split_indices, Epoch, HorizonConfig, SplitMode};

/// Component epochs ready for labelling.
pub struct Preprocessed {
    pub manifests: Vec<DatasetManifest>,
    /// All patients' component epochs, patient by patient in timeline order.
    pub epochs: Vec<Epoch>,
    /// Index into `manifests` for every epoch.
    pub patient_of: Vec<usize>,
    pub ica: IcaModel,
    pub attribution: ChannelAttribution,
    pub data_hash: String,
}

/// Kept epoch indices and their train/test split at one horizon.
struct HorizonSplit {
    labels: Vec<u8>,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn split_for_horizon(
    epochs: &[Epoch],
    patient_of: &[usize],
    manifests: &[DatasetManifest],
    horizon: HorizonConfig,
    train_fraction: f64,
    mode: SplitMode,
) -> Result<HorizonSplit> {
    let mut labels = vec![0u8; epochs.len()];
    let mut kept = Vec::new();
    for (p, m) in manifests.iter().enumerate() {
        let idx: Vec<usize> = (0..epochs.len()).filter(|&i| patient_of[i] == p).collect();
        let starts: Vec<i64> = idx.iter().map(|&i| epochs[i].global_start_s).collect();
        let l = labels_for_starts(&starts, &m.seizures, horizon);
        for (&i, &v) in idx.iter().zip(&l) {
            labels[i] = v;
        }
        kept.extend(
            idx.into_iter()
                .filter(|&i| keep_before_last_seizure(epochs[i].global_start_s, &m.seizures, horizon)),
        );
    }
    let patients: Vec<&str> = kept.iter().map(|&i| manifests[patient_of[i]].patient_id.as_str()).collect();
    let starts: Vec<i64> = kept.iter().map(|&i| epochs[i].global_start_s).collect();
    let (train, test) = split_indices(&patients, &starts, train_fraction, mode)
        .map_err(|e| ExperimentError::data(&format!("split h={}", horizon.horizon_s), e))?;
    Ok(HorizonSplit {
        labels,
        train: train.into_iter().map(|k| kept[k]).collect(),
        test: test.into_iter().map(|k| kept[k]).collect(),
    })
}

fn horizons(config: &ExperimentConfig) -> Result<Vec<HorizonConfig>> {
    config
        .horizons_s
        .iter()
        .map(|&h| HorizonConfig::new(h).map_err(|e| ExperimentError::Config(e.to_string())))
        .collect()
}

/// Every `stride`-th time point of the concatenated epochs.
fn strided_matrix(epochs: &[&Epoch], stride: usize) -> SignalMatrix {
    let c = epochs.first().map_or(0, |e| e.n_channels);
    let total: usize = epochs.iter().map(|e| e.n_samples()).sum();
    let n = total.div_ceil(stride);
    let mut data = vec![0.0; c * n];
    let mut global = 0usize;
    let mut col = 0usize;
    for e in epochs {
        let len = e.n_samples();
        // first index in this epoch that lands on the stride grid
        let mut t = (stride - global % stride) % stride;
        while t < len {
            for ch in 0..c {
                data[ch * n + col] = e.channel(ch)[t];
            }
            col += 1;
            t += stride;
        }
        global += len;
    }
    SignalMatrix::new(c, n, data)
}

fn cache_key(config: &ExperimentConfig, data_hash: &str) -> String {
    let mut h = Sha256::new();
    h.update(data_hash.as_bytes());
    for part in [
        serde_json::to_string(&config.montage),
        serde_json::to_string(&config.filter),
        serde_json::to_string(&config.ica),
        serde_json::to_string(&config.split),
        serde_json::to_string(&config.horizons_s),
        serde_json::to_string(&config.train_fraction),
    ] {
        h.update(b"|");
        h.update(part.expect("config serializes").as_bytes());
    }
    h.update(format!("|{}", config.master_seed).as_bytes());
    h.finalize().iter().take(16).map(|b| format!("{b:02x}")).collect()
}

fn ica_config(config: &ExperimentConfig) -> IcaConfig {
    IcaConfig {
        seed: derive_ica_seed(config.master_seed, config.ica.seed),
        ..config.ica.clone()
    }
}

/// Load, montage, epoch, filter, fit ICA on the epochs that train at every
/// horizon, and transform everything to components.
pub fn preprocess(config: &ExperimentConfig, stages: &mut Vec<String>) -> Result<Preprocessed> {
    let t = Instant::now();
    let data = load_dataset(&config.data, &config.montage)?;
    log::info!("loaded dataset in {:.1}s", t.elapsed().as_secs_f64());
    let n_files: usize = data.patients.iter().map(|p| p.manifest.files.len()).sum();
    stages.push(format!(
        "load patients={} files={} data_hash={}",
        data.patients.len(),
        n_files,
        data.data_hash
    ));
    let mut manifests = Vec::new();
    let mut epochs = Vec::new();
    let mut patient_of = Vec::new();
    for (p, patient) in data.patients.into_iter().enumerate() {
        patient_of.extend(std::iter::repeat_n(p, patient.epochs.len()));
        epochs.extend(patient.epochs);
        manifests.push(patient.manifest);
    }
    if epochs.is_empty() {
        return Err(ExperimentError::data("epochs", "dataset yields no epochs"));
    }
    stages.push(format!(
        "montage channels={} epochs={}",
        config.montage.keep_channels.len(),
        epochs.len()
    ));

    // Horizons whose split is degenerate are reported as failures later and
    // do not constrain the fit set.
    let splits: Vec<HorizonSplit> = horizons(config)?
        .into_iter()
        .filter_map(|h| split_for_horizon(&epochs, &patient_of, &manifests, h, config.train_fraction, config.split).ok())
        .collect();
    if splits.is_empty() {
        return Err(ExperimentError::data("split", "no horizon leaves both a train and a test side"));
    }
    let mut in_every_train = vec![splits.len(); epochs.len()];
    for s in &splits {
        for &i in &s.train {
            in_every_train[i] -= 1;
        }
    }
    let fit_idx: Vec<usize> = (0..epochs.len()).filter(|&i| in_every_train[i] == 0).collect();
    if fit_idx.is_empty() {
        return Err(ExperimentError::data("ica_fit", "no epoch is in the training split at every horizon"));
    }

    let cache_path = config
        .cache_dir
        .as_ref()
        .map(|d| d.join(format!("preprocessed-{}.bin", cache_key(config, &data.data_hash))));
    let cached = cache_path.as_ref().and_then(|p| {
        let bytes = std::fs::read(p).ok()?;
        match load_cache(&bytes) {
            Ok(c) if c.2.len() == epochs.len() => Some(c),
            Ok(_) | Err(_) => {
                log::warn!("ignoring unusable cache {}", p.display());
                None
            }
        }
    });

    let kernel = design_bandpass(&config.filter).map_err(|e| ExperimentError::Config(e.to_string()))?;
    stages.push(format!("filter taps={} epochs={}", kernel.len(), epochs.len()));

    let (ica, attribution, components) = match cached {
        Some((ica, attribution, components)) => {
            log::info!("reusing preprocessed epochs from {}", cache_path.as_ref().unwrap().display());
            (ica, attribution, components)
        }
        None => {
            let t = Instant::now();
            epochs.par_iter_mut().for_each(|e| *e = apply_filter(e, &kernel));
            log::info!("filtered {} epochs in {:.1}s", epochs.len(), t.elapsed().as_secs_f64());
            let cfg = ica_config(config);
            let fit_epochs: Vec<&Epoch> = fit_idx.iter().map(|&i| &epochs[i]).collect();
            let total: usize = fit_epochs.iter().map(|e| e.n_samples()).sum();
            let stride = match cfg.max_fit_samples {
                Some(limit) if limit > 0 => total.div_ceil(limit).max(1),
                _ => 1,
            };
            let matrix = strided_matrix(&fit_epochs, stride);
            let t = Instant::now();
            let ica = fit_ica(&matrix, &cfg).map_err(|e| ExperimentError::numeric("ica_fit", e))?;
            log::info!("ICA fit on {} samples in {:.1}s", matrix.n_samples, t.elapsed().as_secs_f64());
            let attribution = attribute_channels(&ica, &matrix, &config.montage.keep_channels)
                .map_err(|e| ExperimentError::numeric("ica_attribution", e))?;
            drop(matrix);
            let filters = ica.filters();
            let components = epochs
                .par_iter()
                .map(|e| crate::ica::transform_epoch(e, &ica, &filters))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| ExperimentError::data("ica_transform", e))?;
            if let Some(p) = &cache_path {
                let refs: Vec<&Epoch> = components.iter().collect();
                let write = std::fs::create_dir_all(p.parent().unwrap())
                    .and_then(|_| std::fs::write(p, save_cache(&ica, &attribution, &refs)));
                if let Err(e) = write {
                    log::warn!("could not write cache {}: {e}", p.display());
                }
            }
            (ica, attribution, components)
        }
    };
    if !ica.converged {
        log::warn!("ICA stopped at {} iterations without converging", ica.iterations);
    }
    stages.push(format!(
        "ica_fit epochs={} components={} converged={} iterations={}",
        fit_idx.len(),
        ica.n_components(),
        ica.converged,
        ica.iterations
    ));
    stages.push(format!("ica_transform epochs={}", components.len()));
    Ok(Preprocessed {
        manifests,
        epochs: components,
        patient_of,
        ica,
        attribution,
        data_hash: data.data_hash,
    })
}

fn score(model: &TrainedModel, test: &FeatureTensor, labels: &[u8]) -> std::result::Result<(ConfusionCounts, MetricsRecord), ClassifierError> {
    let predicted: Vec<u8> = predict(model, test)?.iter().map(|p| p.label).collect();
    let counts = confusion_counts(&predicted, labels).map_err(|e| ClassifierError::InvalidData(e.to_string()))?;
    Ok((counts, compute_metrics(&counts)))
}

struct CellOutcome {
    cells: Vec<ReportCell>,
    models: Vec<(usize, TrainedModel)>,
    failure: Option<Failure>,
}

fn classifier_failure(model: ModelKind, horizon_s: i64, iteration: Option<usize>, e: &ClassifierError) -> Failure {
    Failure {
        stage: "train".into(),
        model: Some(model),
        horizon_s: Some(horizon_s),
        iteration,
        message: e.to_string(),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_model(
    config: &ExperimentConfig,
    base: &ModelSpec,
    horizon_s: i64,
    iteration: usize,
    train: &FeatureTensor,
    train_labels: &[u8],
    test: &FeatureTensor,
    test_labels: &[u8],
    ica_converged: bool,
) -> CellOutcome {
    let keep = |i: usize| match config.save_models {
        SaveModels::None => false,
        SaveModels::First => i == 0,
        SaveModels::All => true,
    };
    let mut out = CellOutcome {
        cells: Vec::new(),
        models: Vec::new(),
        failure: None,
    };
    let started = Instant::now();
    let elapsed = |t: &Instant| if config.record_timing { t.elapsed().as_secs_f64() } else { 0.0 };
    let make_cell = |iteration: usize, (counts, metrics): (ConfusionCounts, MetricsRecord), wall: f64| ReportCell {
        model: base.kind,
        horizon_s,
        iteration,
        counts,
        metrics,
        wall_time_s: wall,
        ica_converged,
    };

    match config.iteration_mode {
        IterationMode::Seeds => {
            let spec = ModelSpec {
                seed: derive_seed(config.master_seed, base.kind, horizon_s, iteration),
                ..base.clone()
            };
            match fit(&spec, train, train_labels).and_then(|m| score(&m, test, test_labels).map(|s| (m, s))) {
                Ok((model, scored)) => {
                    out.cells.push(make_cell(iteration, scored, elapsed(&started)));
                    if keep(iteration) {
                        out.models.push((iteration, model));
                    }
                }
                Err(e) => out.failure = Some(classifier_failure(base.kind, horizon_s, Some(iteration), &e)),
            }
        }
        IterationMode::Checkpoints => {
            let spec = ModelSpec {
                seed: derive_seed(config.master_seed, base.kind, horizon_s, 0),
                ..base.clone()
            };
            let n = config.iterations;
            let first = if spec.kind.is_gradient_trained() { spec.epochs - n } else { 0 };
            let mut error = None;
            let fitted = fit_with_checkpoints(&spec, train, train_labels, |epoch, model| {
                if epoch < first || error.is_some() {
                    return;
                }
                match score(model, test, test_labels) {
                    Ok(scored) => {
                        let wall = elapsed(&started);
                        let iters = if spec.kind.is_gradient_trained() { epoch - first..epoch - first + 1 } else { 0..n };
                        for i in iters {
                            out.cells.push(make_cell(i, scored.clone(), wall));
                            if keep(i) {
                                out.models.push((i, model.clone()));
                            }
                        }
                    }
                    Err(e) => error = Some(e),
                }
            });
            if let Some(e) = error.or(fitted.err()) {
                out.cells.clear();
                out.models.clear();
                out.failure = Some(classifier_failure(base.kind, horizon_s, None, &e));
            }
        }
    }
    out
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| ExperimentError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn run_grid(config: &ExperimentConfig, pre: &Preprocessed, report: &mut ExperimentReport) -> Result<()> {
    let models_dir = config.output_dir.join("models");
    for h in horizons(config)? {
        let s = match split_for_horizon(&pre.epochs, &pre.patient_of, &pre.manifests, h, config.train_fraction, config.split) {
            Ok(s) => s,
            Err(e) => {
                report.stages.push(format!("split h={} failed", h.horizon_s));
                report.failures.push(Failure {
                    stage: "split".into(),
                    model: None,
                    horizon_s: Some(h.horizon_s),
                    iteration: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let positives = |idx: &[usize]| idx.iter().filter(|&&i| s.labels[i] == 1).count();
        report.stages.push(format!(
            "label h={} kept={} positives={}",
            h.horizon_s,
            s.train.len() + s.test.len(),
            positives(&s.train) + positives(&s.test)
        ));
        report.stages.push(format!(
            "split h={} train={} train_positives={} test={} test_positives={}",
            h.horizon_s,
            s.train.len(),
            positives(&s.train),
            s.test.len(),
            positives(&s.test)
        ));
        let tensor = |idx: &[usize]| {
            let picked: Vec<Epoch> = idx.iter().map(|&i| pre.epochs[i].clone()).collect();
            FeatureTensor::from_epochs(&picked).map_err(|e| ExperimentError::data("features", e))
        };
        let train = tensor(&s.train)?;
        let test = tensor(&s.test)?;
        let train_labels: Vec<u8> = s.train.iter().map(|&i| s.labels[i]).collect();
        let test_labels: Vec<u8> = s.test.iter().map(|&i| s.labels[i]).collect();

        let jobs: Vec<(usize, usize)> = match config.iteration_mode {
            IterationMode::Seeds => (0..config.models.len())
                .flat_map(|m| (0..config.iterations).map(move |i| (m, i)))
                .collect(),
            IterationMode::Checkpoints => (0..config.models.len()).map(|m| (m, 0)).collect(),
        };
        let outcomes: Vec<CellOutcome> = with_pool(config.jobs, || {
            jobs.par_iter()
                .map(|&(m, i)| {
                    run_model(
                        config,
                        &config.models[m],
                        h.horizon_s,
                        i,
                        &train,
                        &train_labels,
                        &test,
                        &test_labels,
                        pre.ica.converged,
                    )
                })
                .collect()
        })?;

        for (m, spec) in config.models.iter().enumerate() {
            let mine: Vec<&CellOutcome> = jobs
                .iter()
                .zip(&outcomes)
                .filter(|((mm, _), _)| *mm == m)
                .map(|(_, o)| o)
                .collect();
            let ok: usize = mine.iter().map(|o| o.cells.len()).sum();
            report
                .stages
                .push(format!("train h={} model={} cells={}", h.horizon_s, spec.kind, ok));
            for o in mine {
                report.cells.extend(o.cells.iter().cloned());
                report.failures.extend(o.failure.clone());
                for (i, model) in &o.models {
                    let artifact = PipelineArtifact {
                        montage: config.montage.clone(),
                        filter: config.filter.clone(),
                        ica: pre.ica.clone(),
                        horizon_s: h.horizon_s,
                        model: model.clone(),
                    };
                    std::fs::create_dir_all(&models_dir).map_err(|e| ExperimentError::io(&models_dir, e))?;
                    let path = models_dir.join(format!("{}_h{}_i{}.szp", spec.kind, h.horizon_s, i));
                    std::fs::write(&path, save_pipeline(&artifact)).map_err(|e| ExperimentError::io(&path, e))?;
                }
            }
        }
    }
    report
        .cells
        .sort_by_key(|c| (config.horizons_s.iter().position(|&h| h == c.horizon_s), config.models.iter().position(|m| m.kind == c.model), c.iteration));
    Ok(())
}

/// Runs the full grid and writes every report file to `output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let mut report = ExperimentReport::default();
    let result = preprocess(config, &mut report.stages).and_then(|pre| {
        report.attribution = Some(pre.attribution.clone());
        report.ica_converged = Some(pre.ica.converged);
        run_grid(config, &pre, &mut report)
    });
    if let Err(e) = &result {
        report.failures.push(Failure {
            stage: "pipeline".into(),
            model: None,
            horizon_s: None,
            iteration: None,
            message: e.to_string(),
        });
    }
    let emitted = emit_report(&report, &config.output_dir);
    result?;
    emitted?;
    Ok(report)
}

/// Scores a saved pipeline on every epoch of a dataset that survives
/// trimming at the artifact's horizon.
pub fn evaluate_artifact(artifact: &PipelineArtifact, data: &Path) -> Result<(ConfusionCounts, MetricsRecord)> {
    let ds = load_dataset(&DataSource::Directory(data.to_path_buf()), &artifact.montage)?;
    let kernel = design_bandpass(&artifact.filter).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let horizon = HorizonConfig::new(artifact.horizon_s).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let mut epochs = Vec::new();
    let mut labels = Vec::new();
    for p in &ds.patients {
        let seizures: &[SeizureInterval] = &p.manifest.seizures;
        let kept: Vec<Epoch> = p
            .epochs
            .iter()
            .filter(|e| keep_before_last_seizure(e.global_start_s, seizures, horizon))
            .map(|e| apply_filter(e, &kernel))
            .collect();
        labels.extend(generate_labels(&kept, seizures, horizon));
        epochs.extend(transform_epochs(&kept, &artifact.ica).map_err(|e| ExperimentError::data("ica_transform", e))?);
    }
    let features = FeatureTensor::from_epochs(&epochs).map_err(|e| ExperimentError::data("features", e))?;
    let (counts, metrics) = score(&artifact.model, &features, &labels).map_err(|e| match e {
        ClassifierError::NonFiniteLoss { .. } => ExperimentError::numeric("evaluate", e),
        other => ExperimentError::data("evaluate", other),
    })?;
    Ok((counts, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strided_matrix_spans_epochs() {
        let a = Epoch::new(2, vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0], 0, "p");
        let b = Epoch::new(2, vec![3.0, 4.0, 13.0, 14.0], 5, "p");
        let m = strided_matrix(&[&a, &b], 2);
        assert_eq!(m.row(0), [0.0, 2.0, 4.0]);
        assert_eq!(m.row(1), [10.0, 12.0, 14.0]);
        let full = strided_matrix(&[&a, &b], 1);
        assert_eq!(full.row(0), [0.0, 1.0, 2.0, 3.0, 4.0]);
    }
}
