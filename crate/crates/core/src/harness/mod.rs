//! Training, evaluation and experiment drivers built on the other modules.

mod ablate;
mod checkpoint;
mod config;
mod data;
mod model;
mod optim;
mod sweep;
mod train;
pub mod viz;

pub use ablate::{ablate, AblationRow, AblationTable};
pub use checkpoint::Checkpoint;
pub use config::{Stage, TrainConfig};
pub use data::ImageSet;
pub use model::ReidModel;
pub use optim::{cosine_lr, Sgd};
pub use sweep::{sweep, SweepParam, SweepTable};
pub use train::{
    evaluate_model, gallery, train, EpochRecord, EvalSnapshot, RunRecord, RunTiming, StepLog, TrainOutcome,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Environment variable naming the directory that run outputs go under.
pub const OUTPUT_ROOT_VAR: &str = "HFREID_OUT";

/// `$HFREID_OUT` if set, otherwise `./runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
