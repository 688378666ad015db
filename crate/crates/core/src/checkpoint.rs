//! Versioned JSON model checkpoints: arch string, flat weight vector, an
//! echo of the hyperparameter record that produced them, and the iteration
//! count. JSON keeps the dump greppable; f64 round-trips exactly.

use crate::error::CoreError;
use crate::net::{init_model, ArchSpec, Model};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Arch source string plus the shape triple needed to re-parse it.
    pub arch: String,
    pub in_channels: usize,
    pub in_len: usize,
    pub num_classes: usize,
    pub weights: Vec<f64>,
    /// Opaque echo of the training configuration.
    pub hyper: serde_json::Value,
    pub iteration: usize,
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    hyper: &impl Serialize,
    iteration: usize,
) -> Result<()> {
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        arch: model.arch.source.clone(),
        in_channels: model.arch.in_channels,
        in_len: model.arch.in_len,
        num_classes: model.arch.num_classes,
        weights: model.flat_params(),
        hyper: serde_json::to_value(hyper)
            .map_err(|e| CoreError::Arg(format!("hyper record not serializable: {e}")))?,
        iteration,
    };
    let text = serde_json::to_string_pretty(&ck)
        .map_err(|e| CoreError::Numeric(format!("checkpoint not serializable: {e}")))?;
    fs::write(path, text).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| CoreError::Parse {
        line: e.line(),
        msg: format!("{}: {e}", path.display()),
    })?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(CoreError::Unsupported(format!(
            "checkpoint version {} (this build reads {})",
            ck.version, CHECKPOINT_VERSION
        )));
    }
    Ok(ck)
}

/// Rebuild the model a checkpoint describes. The arch string is re-parsed
/// and the weight vector must match its parameter count exactly.
pub fn restore_model(ck: &Checkpoint) -> Result<Model> {
    let arch = ArchSpec::parse(&ck.arch, ck.in_channels, ck.in_len, ck.num_classes)?;
    let mut model = init_model(&arch, 0)?;
    if model.num_params() != ck.weights.len() {
        return Err(CoreError::Shape(format!(
            "arch '{}' takes {} parameters but the checkpoint holds {}",
            ck.arch,
            model.num_params(),
            ck.weights.len()
        )));
    }
    model.set_flat_params(&ck.weights)?;
    Ok(model)
}
