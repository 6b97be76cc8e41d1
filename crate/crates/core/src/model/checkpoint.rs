//! JSON checkpoint container.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochLog, ModelConfig, TrainedModel};
use crate::error::ModelError;
use crate::tensor::DenseMatrix;

const FORMAT: &str = "neighbor-xai-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    num_features: usize,
    num_classes: usize,
    parameters: Vec<Tensor>,
    log: Vec<EpochLog>,
}

pub fn save_checkpoint(model: &TrainedModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let parameters = model
        .parameter_names()
        .into_iter()
        .zip(model.parameters())
        .map(|(name, t)| Tensor {
            name: name.to_string(),
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().to_vec(),
        })
        .collect();
    let ckpt = Checkpoint {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config.clone(),
        num_features: model.num_features,
        num_classes: model.num_classes,
        parameters,
        log: model.log.clone(),
    };
    let mut text = serde_json::to_string(&ckpt).map_err(|e| ModelError::Checkpoint {
        path: path.into(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| ModelError::Checkpoint {
        path: path.into(),
        message: e.to_string(),
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel, ModelError> {
    let path = path.as_ref();
    let fail = |message: String| ModelError::Checkpoint {
        path: path.into(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
    if ckpt.format != FORMAT || ckpt.version != VERSION {
        return Err(fail(format!(
            "unsupported container {} v{}",
            ckpt.format, ckpt.version
        )));
    }
    let expected = ckpt
        .config
        .parameter_shapes(ckpt.num_features, ckpt.num_classes);
    if expected.len() != ckpt.parameters.len() {
        return Err(fail(format!(
            "expected {} tensors, found {}",
            expected.len(),
            ckpt.parameters.len()
        )));
    }
    let mut tensors = Vec::with_capacity(expected.len());
    for ((name, _, _), t) in expected.iter().zip(ckpt.parameters) {
        if *name != t.name {
            return Err(fail(format!("expected tensor {name}, found {}", t.name)));
        }
        tensors.push(
            DenseMatrix::from_vec(t.rows, t.cols, t.data)
                .map_err(|e| fail(format!("{name}: {e}")))?,
        );
    }
    let mut model =
        TrainedModel::from_parameters(ckpt.config, ckpt.num_features, ckpt.num_classes, tensors)
            .map_err(|e| fail(e.to_string()))?;
    model.log = ckpt.log;
    Ok(model)
}
