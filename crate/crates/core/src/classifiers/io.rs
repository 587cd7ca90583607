//! Versioned binary model files.
//!
//! A model file is a frame (see [`crate::codec`]) tagged `SZMODEL\0` whose
//! body holds, in order, with all integers and floats little-endian:
//!
//! 1. the model spec as JSON (u64 length + UTF-8 bytes)
//! 2. channels (u64), length (u64)
//! 3. standardization means, then scales (each u64 count + f64 values)
//! 4. training log (u64 count + f64 values)
//! 5. block count (u32), then per block its name (u64 length + UTF-8) and
//!    values (u64 count + f64 values)
//!
//! Network kinds store one block per entry of their layout. k-NN stores
//! `features` (the training tensor, sample-major) and `labels` (0.0 / 1.0).

use super::{ClassifierError, FeatureTensor, ModelKind, ModelSpec, Parameters, Result, Standardization, TrainedModel};
use crate::codec::{frame, unframe, Decoder, Encoder, FrameError};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SZMODEL\0";

impl From<FrameError> for ClassifierError {
    fn from(e: FrameError) -> Self {
        match e {
            FrameError::VersionMismatch { found, supported } => ClassifierError::VersionMismatch { found, supported },
            FrameError::Corrupt(msg) => ClassifierError::CorruptModel(msg),
        }
    }
}

pub fn save_model(model: &TrainedModel) -> Vec<u8> {
    let mut e = Encoder::default();
    encode_model(&mut e, model);
    frame(MAGIC, MODEL_FORMAT_VERSION, &e.buf)
}

pub fn load_model(bytes: &[u8]) -> Result<TrainedModel> {
    let body = unframe(MAGIC, MODEL_FORMAT_VERSION, bytes)?;
    let mut d = Decoder::new(body);
    let model = decode_model(&mut d)?;
    d.finish()?;
    Ok(model)
}

/// Appends the unframed model body.
pub fn encode_model(e: &mut Encoder, model: &TrainedModel) {
    e.str(&serde_json::to_string(&model.spec).expect("spec serializes"));
    e.u64(model.channels as u64);
    e.u64(model.length as u64);
    e.f64s(&model.standardization.mean);
    e.f64s(&model.standardization.scale);
    e.f64s(&model.training_log);
    match &model.parameters {
        Parameters::Network(params) => {
            let net = model
                .spec
                .network(model.channels, model.length)
                .expect("a trained model has a valid network");
            let layout = net.layout();
            e.u32(layout.len() as u32);
            let mut rest = params.as_slice();
            for block in layout {
                let (head, tail) = rest.split_at(block.len);
                e.str(&block.name);
                e.f64s(head);
                rest = tail;
            }
        }
        Parameters::Memory { features, labels } => {
            e.u32(2);
            e.str("features");
            e.f64s(&features.data);
            e.str("labels");
            e.f64s(&labels.iter().map(|&l| f64::from(l)).collect::<Vec<_>>());
        }
    }
}

fn corrupt(msg: impl Into<String>) -> ClassifierError {
    ClassifierError::CorruptModel(msg.into())
}

pub fn decode_model(d: &mut Decoder) -> Result<TrainedModel> {
    let spec: ModelSpec = serde_json::from_str(d.str()?).map_err(|e| corrupt(format!("spec: {e}")))?;
    let channels = d.usize()?;
    let length = d.usize()?;
    let standardization = Standardization {
        mean: d.f64s()?,
        scale: d.f64s()?,
    };
    if standardization.mean.len() != channels || standardization.scale.len() != channels {
        return Err(corrupt("standardization does not match channel count"));
    }
    let training_log = d.f64s()?;
    let n_blocks = d.u32()? as usize;
    let mut blocks = Vec::with_capacity(n_blocks.min(64));
    for _ in 0..n_blocks {
        blocks.push((d.str()?.to_string(), d.f64s()?));
    }

    let parameters = if spec.kind == ModelKind::Knn {
        let [(fname, features), (lname, labels)]: [(String, Vec<f64>); 2] =
            blocks.try_into().map_err(|_| corrupt("k-NN needs two blocks"))?;
        if fname != "features" || lname != "labels" {
            return Err(corrupt(format!("unexpected blocks {fname:?}, {lname:?}")));
        }
        let sample_len = channels * length;
        if sample_len == 0 || features.len() != labels.len() * sample_len {
            return Err(corrupt("k-NN features do not match labels"));
        }
        let labels = labels
            .iter()
            .map(|&v| match v {
                0.0 => Ok(0),
                1.0 => Ok(1),
                _ => Err(corrupt(format!("label {v}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Parameters::Memory {
            features: FeatureTensor::new(labels.len(), channels, length, features)?,
            labels,
        }
    } else {
        let net = spec
            .network(channels, length)
            .map_err(|e| corrupt(format!("stored spec is unusable: {e}")))?;
        let layout = net.layout();
        if layout.len() != blocks.len() {
            return Err(corrupt(format!("{} blocks, layout has {}", blocks.len(), layout.len())));
        }
        let mut params = Vec::with_capacity(net.n_params());
        for (want, (name, values)) in layout.iter().zip(blocks) {
            if want.name != name || want.len != values.len() {
                return Err(corrupt(format!(
                    "block {name:?} with {} values, expected {:?} with {}",
                    values.len(),
                    want.name,
                    want.len
                )));
            }
            params.extend(values);
        }
        Parameters::Network(params)
    };
    Ok(TrainedModel {
        spec,
        channels,
        length,
        standardization,
        parameters,
        training_log,
    })
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    fn trained(kind: ModelKind) -> (TrainedModel, FeatureTensor) {
        let data: Vec<f64> = (0..8 * 2 * 8).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let x = FeatureTensor::new(8, 2, 8, data).unwrap();
        let labels: Vec<u8> = (0..8).map(|i| (i % 2) as u8).collect();
        let spec = ModelSpec {
            hidden_size: 3,
            time_stride: 2,
            epochs: 2,
            k: 3,
            conv_blocks: vec![ConvBlock {
                filters: 2,
                kernel: 3,
                pool: 2,
            }],
            ..ModelSpec::new(kind)
        };
        (fit(&spec, &x, &labels).unwrap(), x)
    }

    #[test]
    fn round_trip_predicts_identically() {
        for kind in ModelKind::ALL {
            let (m, x) = trained(kind);
            let back = load_model(&save_model(&m)).unwrap();
            assert_eq!(back, m);
            assert_eq!(predict(&back, &x).unwrap(), predict(&m, &x).unwrap());
        }
    }

    #[test]
    fn truncated_is_corrupt() {
        let (m, _) = trained(ModelKind::LogisticRegression);
        let bytes = save_model(&m);
        for cut in [0, 10, 60, bytes.len() - 1] {
            assert!(matches!(load_model(&bytes[..cut]), Err(ClassifierError::CorruptModel(_))));
        }
    }

    #[test]
    fn future_version_is_rejected() {
        let (m, _) = trained(ModelKind::Lstm);
        let mut bytes = save_model(&m);
        bytes[8..12].copy_from_slice(&(MODEL_FORMAT_VERSION + 1).to_le_bytes());
        assert_eq!(
            load_model(&bytes),
            Err(ClassifierError::VersionMismatch {
                found: MODEL_FORMAT_VERSION + 1,
                supported: MODEL_FORMAT_VERSION
            })
        );
    }
}
