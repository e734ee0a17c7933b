//! Policy checkpoints as JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvConfig;
use crate::policy::PolicyParams;

const FORMAT: &str = "adazoom-policy";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: not a policy checkpoint (format {format:?}, version {version})")]
    Format { path: PathBuf, format: String, version: u32 },
    #[error("{path}: {msg}")]
    Mismatch { path: PathBuf, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub env: EnvConfig,
    pub params: PolicyParams,
}

impl Checkpoint {
    pub fn new(env: EnvConfig, params: PolicyParams) -> Self {
        Self { format: FORMAT.into(), version: VERSION, env, params }
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let text = serde_json::to_string(ckpt).map_err(|source| CheckpointError::Json { path: path.into(), source })?;
    fs::write(path, text).map_err(|source| CheckpointError::Io { path: path.into(), source })
}

/// Loads a checkpoint and checks that its parameters fit its own dimensions
/// and, when given, the environment it will run in.
pub fn load_checkpoint(path: &Path, expect: Option<&EnvConfig>) -> Result<Checkpoint, CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: path.into(), source })?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|source| CheckpointError::Json { path: path.into(), source })?;
    if ckpt.format != FORMAT || ckpt.version != VERSION {
        return Err(CheckpointError::Format { path: path.into(), format: ckpt.format, version: ckpt.version });
    }
    let mismatch = |msg: String| Err(CheckpointError::Mismatch { path: path.into(), msg });
    let dims = ckpt.params.dims;
    if ckpt.params.values.len() != dims.param_len() {
        return mismatch(format!("{} parameters for dims expecting {}", ckpt.params.values.len(), dims.param_len()));
    }
    if dims != ckpt.env.policy_dims(dims.hidden) {
        return mismatch("policy dims disagree with the stored environment".into());
    }
    if let Some(env) = expect {
        if env.grid != ckpt.env.grid || env.zoom != ckpt.env.zoom {
            return mismatch(format!(
                "trained for grid {}x{} with {} scales / {} ratios, asked to run on grid {}x{} with {} / {}",
                ckpt.env.grid.rows,
                ckpt.env.grid.cols,
                ckpt.env.zoom.n_scales(),
                ckpt.env.zoom.n_ratios(),
                env.grid.rows,
                env.grid.cols,
                env.zoom.n_scales(),
                env.zoom.n_ratios()
            ));
        }
    }
    Ok(ckpt)
}
