//! JSON checkpoint format.
//!
//! ```json
//! {
//!   "format": "coprime-doa-checkpoint",
//!   "version": 1,
//!   "input_len": 31,
//!   "prior_scale": 1.0,
//!   "layers": [{"kind": "conv1d", "filters": 8, ...}, ...],
//!   "metadata": {"model": "det", "seed": 7, "epoch": 10},
//!   "params": [
//!     {"layer": 0, "name": "kernel", "shape": [3, 1, 8], "trainable": true, "values": [...]},
//!     ...
//!   ]
//! }
//! ```
//!
//! `params` lists every parameter array in layer order, and within a layer
//! in the order `kernel|weight, bias` (deterministic),
//! `*_mean, *_raw_scale, bias_mean, bias_raw_scale` (variational) or
//! `gamma, beta, moving_mean, moving_variance` (batchnorm).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{LayerSpec, ModelKind};
use super::model::Model;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "coprime-doa-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub model: ModelKind,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamRecord {
    layer: usize,
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    input_len: usize,
    prior_scale: f64,
    layers: Vec<LayerSpec>,
    metadata: CheckpointMetadata,
    params: Vec<ParamRecord>,
}

pub fn checkpoint_to_string(model: &Model, metadata: &CheckpointMetadata) -> Result<String> {
    let params = model
        .params()
        .iter()
        .enumerate()
        .flat_map(|(layer, ps)| {
            ps.iter().map(move |p| ParamRecord {
                layer,
                name: p.name.clone(),
                shape: p.shape.clone(),
                trainable: p.trainable,
                values: p.values.clone(),
            })
        })
        .collect();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        input_len: model.input_len(),
        prior_scale: model.prior_scale(),
        layers: model.layers().to_vec(),
        metadata: metadata.clone(),
        params,
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

pub fn checkpoint_from_str(text: &str) -> Result<(Model, CheckpointMetadata)> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    let bad = |m: String| Err(Error::InvalidArgument(format!("checkpoint: {m}")));
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return bad(format!("unsupported format {} v{}", file.format, file.version));
    }
    let mut model = Model::with_prior(file.input_len, file.layers, file.prior_scale, 0)?;
    let expected: usize = model.params().iter().map(Vec::len).sum();
    if expected != file.params.len() {
        return bad(format!(
            "expected {expected} parameter arrays, found {}",
            file.params.len()
        ));
    }
    let mut records = file.params.into_iter();
    for layer in 0..model.layers().len() {
        for p in model.layer_params_mut(layer) {
            let r = records.next().expect("count checked");
            if r.layer != layer || r.name != p.name || r.shape != p.shape || r.trainable != p.trainable {
                return bad(format!(
                    "layer {layer}: expected {} {:?}, found layer {} {} {:?}",
                    p.name, p.shape, r.layer, r.name, r.shape
                ));
            }
            if r.values.len() != p.values.len() {
                return bad(format!("layer {layer} {}: wrong value count", p.name));
            }
            p.values = r.values;
        }
    }
    Ok((model, file.metadata))
}

pub fn save_checkpoint(path: &Path, model: &Model, metadata: &CheckpointMetadata) -> Result<()> {
    fs::write(path, checkpoint_to_string(model, metadata)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMetadata)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchitectureConfig;

    #[test]
    fn round_trip_is_exact() {
        let layers = ArchitectureConfig::default().layers(ModelKind::Bayesian, 31);
        let model = Model::new(31, layers, 17).unwrap();
        let meta = CheckpointMetadata {
            model: ModelKind::Bayesian,
            seed: 17,
            epoch: 3,
        };
        let text = checkpoint_to_string(&model, &meta).unwrap();
        let (back, meta2) = checkpoint_from_str(&text).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.layers(), model.layers());
        assert_eq!(meta2, meta);
        assert_eq!(checkpoint_to_string(&back, &meta2).unwrap(), text);
    }

    #[test]
    fn rejects_mismatched_params() {
        let layers = ArchitectureConfig::default().layers(ModelKind::Deterministic, 31);
        let model = Model::new(31, layers, 1).unwrap();
        let meta = CheckpointMetadata {
            model: ModelKind::Deterministic,
            seed: 1,
            epoch: 0,
        };
        let text = checkpoint_to_string(&model, &meta).unwrap();
        let broken = text.replacen("\"gamma\"", "\"gamma2\"", 1);
        assert!(checkpoint_from_str(&broken).is_err());
        let unknown = text.replacen("\"version\": 1", "\"version\": 1, \"extra\": 0", 1);
        assert!(checkpoint_from_str(&unknown).is_err());
    }
}
