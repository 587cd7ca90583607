//! Binary artifacts built on [`crate::codec`] frames.
//!
//! * `SZPIPE\0\0` pipeline artifact: montage JSON, filter JSON, ICA model,
//!   horizon (u64), then a model body as in model files.
//! * `SZEPOCH\0` epoch bundle: count (u64), then per epoch the patient id,
//!   global start (u64, two's complement), channel count (u64) and samples.
//! * `SZCACHE\0` preprocessing cache: ICA model, attribution JSON, epoch
//!   bundle body.
//!
//! An ICA model is encoded as channel means, whitening matrix, unmixing
//! matrix (each matrix as rows, cols, row-major values), component order,
//! a converged flag (u32) and the iteration count (u64).

use nalgebra::DMatrix;

use super::{ExperimentError, Result};
use crate::classifiers::{decode_model, encode_model, TrainedModel};
use crate::codec::{frame, unframe, Decoder, Encoder, FrameError};
use crate::filter::FilterSpec;
use crate::ica::{ChannelAttribution, IcaModel};
use crate::segmentation::{Epoch, MontageSpec};

pub const PIPELINE_FORMAT_VERSION: u32 = 1;
const PIPE_MAGIC: &[u8; 8] = b"SZPIPE\0\0";
const EPOCH_MAGIC: &[u8; 8] = b"SZEPOCH\0";
const CACHE_MAGIC: &[u8; 8] = b"SZCACHE\0";
const EPOCH_VERSION: u32 = 1;
const CACHE_VERSION: u32 = 1;

fn corrupt(what: &str, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::data(what, e)
}

fn encode_matrix(e: &mut Encoder, m: &DMatrix<f64>) {
    e.u64(m.nrows() as u64);
    e.u64(m.ncols() as u64);
    let row_major: Vec<f64> = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
    e.f64s(&row_major);
}

fn decode_matrix(d: &mut Decoder) -> std::result::Result<DMatrix<f64>, FrameError> {
    let rows = d.usize()?;
    let cols = d.usize()?;
    let values = d.f64s()?;
    if rows.checked_mul(cols) != Some(values.len()) {
        return Err(FrameError::Corrupt(format!("{} values for a {rows}x{cols} matrix", values.len())));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub(crate) fn encode_ica(e: &mut Encoder, m: &IcaModel) {
    e.f64s(&m.channel_means);
    encode_matrix(e, &m.whitening);
    encode_matrix(e, &m.unmixing);
    e.u64(m.component_order.len() as u64);
    for &i in &m.component_order {
        e.u64(i as u64);
    }
    e.u32(u32::from(m.converged));
    e.u64(m.iterations as u64);
}

pub(crate) fn decode_ica(d: &mut Decoder) -> std::result::Result<IcaModel, FrameError> {
    let channel_means = d.f64s()?;
    let whitening = decode_matrix(d)?;
    let unmixing = decode_matrix(d)?;
    let n = d.usize()?;
    let component_order = (0..n).map(|_| d.usize()).collect::<std::result::Result<Vec<_>, _>>()?;
    let converged = d.u32()? != 0;
    let iterations = d.usize()?;
    let k = unmixing.nrows();
    if whitening.ncols() != channel_means.len() || whitening.nrows() != k || unmixing.ncols() != k || n != k {
        return Err(FrameError::Corrupt("inconsistent ICA shapes".into()));
    }
    Ok(IcaModel {
        channel_means,
        whitening,
        unmixing,
        component_order,
        converged,
        iterations,
    })
}

fn encode_epochs(e: &mut Encoder, epochs: &[&Epoch]) {
    e.u64(epochs.len() as u64);
    for ep in epochs {
        e.str(&ep.patient_id);
        e.u64(ep.global_start_s as u64);
        e.u64(ep.n_channels as u64);
        e.f64s(&ep.data);
    }
}

fn decode_epochs(d: &mut Decoder) -> std::result::Result<Vec<Epoch>, FrameError> {
    let n = d.usize()?;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let patient = d.str()?.to_string();
        let start = d.u64()? as i64;
        let channels = d.usize()?;
        let data = d.f64s()?;
        if channels == 0 || data.len() % channels != 0 {
            return Err(FrameError::Corrupt("epoch data does not divide into channels".into()));
        }
        out.push(Epoch::new(channels, data, start, patient));
    }
    Ok(out)
}

pub fn save_epochs(epochs: &[&Epoch]) -> Vec<u8> {
    let mut e = Encoder::default();
    encode_epochs(&mut e, epochs);
    frame(EPOCH_MAGIC, EPOCH_VERSION, &e.buf)
}

pub fn load_epochs(bytes: &[u8]) -> Result<Vec<Epoch>> {
    let run = || {
        let mut d = Decoder::new(unframe(EPOCH_MAGIC, EPOCH_VERSION, bytes)?);
        let epochs = decode_epochs(&mut d)?;
        d.finish()?;
        Ok(epochs)
    };
    run().map_err(|e: FrameError| corrupt("epochs", e))
}

/// Everything `evaluate` needs to score a dataset with a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineArtifact {
    pub montage: MontageSpec,
    pub filter: FilterSpec,
    pub ica: IcaModel,
    pub horizon_s: i64,
    pub model: TrainedModel,
}

pub fn save_pipeline(a: &PipelineArtifact) -> Vec<u8> {
    let mut e = Encoder::default();
    e.str(&serde_json::to_string(&a.montage).expect("montage serializes"));
    e.str(&serde_json::to_string(&a.filter).expect("filter serializes"));
    encode_ica(&mut e, &a.ica);
    e.u64(a.horizon_s as u64);
    encode_model(&mut e, &a.model);
    frame(PIPE_MAGIC, PIPELINE_FORMAT_VERSION, &e.buf)
}

pub fn load_pipeline(bytes: &[u8]) -> Result<PipelineArtifact> {
    let body = unframe(PIPE_MAGIC, PIPELINE_FORMAT_VERSION, bytes).map_err(|e| corrupt("artifact", e))?;
    let mut d = Decoder::new(body);
    let json_err = |e: serde_json::Error| corrupt("artifact", e);
    let montage = serde_json::from_str(d.str().map_err(|e| corrupt("artifact", e))?).map_err(json_err)?;
    let filter = serde_json::from_str(d.str().map_err(|e| corrupt("artifact", e))?).map_err(json_err)?;
    let ica = decode_ica(&mut d).map_err(|e| corrupt("artifact", e))?;
    let horizon_s = d.u64().map_err(|e| corrupt("artifact", e))? as i64;
    let model = decode_model(&mut d).map_err(|e| corrupt("artifact", e))?;
    d.finish().map_err(|e| corrupt("artifact", e))?;
    Ok(PipelineArtifact {
        montage,
        filter,
        ica,
        horizon_s,
        model,
    })
}

pub(crate) fn save_cache(ica: &IcaModel, attribution: &ChannelAttribution, epochs: &[&Epoch]) -> Vec<u8> {
    let mut e = Encoder::default();
    encode_ica(&mut e, ica);
    e.str(&serde_json::to_string(attribution).expect("attribution serializes"));
    encode_epochs(&mut e, epochs);
    frame(CACHE_MAGIC, CACHE_VERSION, &e.buf)
}

pub(crate) fn load_cache(bytes: &[u8]) -> std::result::Result<(IcaModel, ChannelAttribution, Vec<Epoch>), FrameError> {
    let mut d = Decoder::new(unframe(CACHE_MAGIC, CACHE_VERSION, bytes)?);
    let ica = decode_ica(&mut d)?;
    let attribution = serde_json::from_str(d.str()?).map_err(|e| FrameError::Corrupt(e.to_string()))?;
    let epochs = decode_epochs(&mut d)?;
    d.finish()?;
    Ok((ica, attribution, epochs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epochs_round_trip() {
        let a = Epoch::new(2, vec![1.0, 2.0, 3.0, 4.0], -5, "p1");
        let b = Epoch::new(1, vec![0.5], 10, "p2");
        let back = load_epochs(&save_epochs(&[&a, &b])).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn ica_round_trip() {
        let m = IcaModel {
            channel_means: vec![0.1, 0.2, 0.3],
            whitening: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            unmixing: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            component_order: vec![1, 0],
            converged: false,
            iterations: 200,
        };
        let mut e = Encoder::default();
        encode_ica(&mut e, &m);
        let mut d = Decoder::new(&e.buf);
        assert_eq!(decode_ica(&mut d).unwrap(), m);
        d.finish().unwrap();
    }
}
