//! Loading a dataset (directory or synthetic) into montaged epochs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{artifact, DataSource, ExperimentError, Result};
use crate::edf::parse_edf;
use crate::manifest::{build_manifest, parse_summary, DatasetManifest};
use crate::segmentation::{apply_montage, segment_epochs, Epoch, MontageSpec};
use crate::synth::generate;

pub struct PatientData {
    pub manifest: DatasetManifest,
    /// Montaged epochs in timeline order.
    pub epochs: Vec<Epoch>,
}

pub struct DataSet {
    pub patients: Vec<PatientData>,
    /// Hex SHA-256 over every summary and EDF file used.
    pub data_hash: String,
}

impl DataSet {
    pub fn n_epochs(&self) -> usize {
        self.patients.iter().map(|p| p.epochs.len()).sum()
    }
}

fn summary_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| ExperimentError::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| ExperimentError::io(dir, e))?.path();
        let is_summary = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with("-summary.txt"));
        if is_summary && path.is_file() {
            found.push(path);
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(ExperimentError::data(
            "load",
            format!("no *-summary.txt in {}", dir.display()),
        ));
    }
    Ok(found)
}

/// Builds patients from summary texts, fetching EDF bytes by file name.
fn assemble(
    summaries: &[(String, String)],
    montage: &MontageSpec,
    mut fetch: impl FnMut(&str) -> Result<Vec<u8>>,
) -> Result<DataSet> {
    let mut hasher = Sha256::new();
    let mut patients = Vec::new();
    for (name, text) in summaries {
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((text.len() as u64).to_le_bytes());
        hasher.update(text.as_bytes());
        let summary = parse_summary(text).map_err(|e| ExperimentError::data("load", format!("{name}: {e}")))?;
        let manifest = build_manifest(&summary).map_err(|e| ExperimentError::data("load", format!("{name}: {e}")))?;
        let mut epochs = Vec::new();
        for file in &manifest.files {
            let bytes = fetch(&file.file_name)?;
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
            let mut rec =
                parse_edf(&bytes).map_err(|e| ExperimentError::data("load", format!("{}: {e}", file.file_name)))?;
            rec.global_start_s = file.start_s;
            rec.header.patient_id = manifest.patient_id.clone();
            let reduced = apply_montage(&rec, montage)
                .map_err(|e| ExperimentError::data("montage", format!("{}: {e}", file.file_name)))?;
            drop(rec);
            let rate = crate::segmentation::uniform_rate(&reduced)
                .map_err(|e| ExperimentError::data("epochs", format!("{}: {e}", file.file_name)))?;
            if (rate - f64::from(manifest.sampling_rate_hz)).abs() > 1e-9 {
                return Err(ExperimentError::data(
                    "epochs",
                    format!(
                        "{} samples at {rate} Hz, summary says {} Hz",
                        file.file_name, manifest.sampling_rate_hz
                    ),
                ));
            }
            epochs.extend(
                segment_epochs(&reduced)
                    .map_err(|e| ExperimentError::data("epochs", format!("{}: {e}", file.file_name)))?,
            );
        }
        patients.push(PatientData { manifest, epochs });
    }
    let digest = hasher.finalize();
    Ok(DataSet {
        patients,
        data_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

pub fn load_dataset(source: &DataSource, montage: &MontageSpec) -> Result<DataSet> {
    match source {
        DataSource::Directory(dir) => {
            let mut summaries = Vec::new();
            for path in summary_files(dir)? {
                let text = std::fs::read_to_string(&path).map_err(|e| ExperimentError::io(&path, e))?;
                let name = path.file_name().unwrap().to_string_lossy().into_owned();
                summaries.push((name, text));
            }
            assemble(&summaries, montage, |name| {
                let path = dir.join(name);
                std::fs::read(&path).map_err(|e| ExperimentError::io(&path, e))
            })
        }
        DataSource::Synth(spec) => {
            let ds = generate(spec).map_err(|e| ExperimentError::data("synth", e))?;
            let files: BTreeMap<&str, &Vec<u8>> = ds.files.iter().map(|(n, b)| (n.as_str(), b)).collect();
            assemble(&[(ds.summary_name.clone(), ds.summary.clone())], montage, |name| {
                files
                    .get(name)
                    .map(|b| b.to_vec())
                    .ok_or_else(|| ExperimentError::data("load", format!("summary names missing file {name}")))
            })
        }
    }
}

/// Reads a dataset, then writes `manifest.json` (one manifest per patient)
/// and `epochs.bin` (the montaged epochs) into `out`.
pub fn ingest(source: &DataSource, montage: &MontageSpec, out: &Path) -> Result<DataSet> {
    let data = load_dataset(source, montage)?;
    std::fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;
    let manifests: Vec<&DatasetManifest> = data.patients.iter().map(|p| &p.manifest).collect();
    let json = serde_json::to_string_pretty(&manifests).expect("manifests serialize") + "\n";
    let path = out.join("manifest.json");
    std::fs::write(&path, json).map_err(|e| ExperimentError::io(&path, e))?;
    let epochs: Vec<&Epoch> = data.patients.iter().flat_map(|p| &p.epochs).collect();
    let path = out.join("epochs.bin");
    std::fs::write(&path, artifact::save_epochs(&epochs)).map_err(|e| ExperimentError::io(&path, e))?;
    Ok(data)
}
