//! On-disk formats: scene and vocabulary JSON, the checkpoint container, the
//! loss curve CSV, and atomic file writes.

mod checkpoint;
mod scene;
mod vocab;

pub use checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes, Checkpoint, CheckpointManifest, ParamEntry, CHECKPOINT_MAGIC};
pub use scene::{scene_from_json, scene_to_json, SceneDto};
pub use vocab::{hex, vocab_from_json, vocab_hash, vocab_to_json, PerClass, VocabBody, VocabFile};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use planar_gatr_core::model::{LossRecord, ModelError};
use planar_gatr_core::scene::{Scene, SceneError};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("malformed {what}: {msg}")]
    Parse { what: &'static str, msg: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
}

impl IoError {
    pub fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File { path: path.to_path_buf(), source }
    }
}

/// Who wrote a file and from which configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Provenance { tool: TOOL_NAME.into(), version: TOOL_VERSION.into(), config_hash, seed }
    }

    /// `# key=value` lines for the head of CSV files.
    pub fn csv_comment(&self) -> String {
        format!("# tool={} version={} config_hash={} seed={}\n", self.tool, self.version, self.config_hash, self.seed)
    }
}

/// Writes `bytes` to a temporary file next to `path`, syncs it and renames it
/// into place, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::file(dir, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::file(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| IoError::file(path, e))?;
    tmp.persist(path).map_err(|e| IoError::file(path, e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|e| IoError::file(path, e))
}

pub fn read_scene(path: &Path) -> Result<Scene, IoError> {
    scene_from_json(&read_file(path)?).map_err(|e| match e {
        IoError::Parse { what, msg } => IoError::Parse { what, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}

/// Every `*.json` scene in `dir` except `manifest.json`, in file-name order.
pub fn read_scene_dir(dir: &Path) -> Result<Vec<Scene>, IoError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| IoError::file(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| IoError::file(dir, err)))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json") && p.file_name().is_some_and(|n| n != "manifest.json"));
    paths.sort();
    paths.iter().map(|p| read_scene(p)).collect()
}

/// Loss curve as CSV with columns `step,lr,loss`, preceded by a provenance comment.
pub fn loss_csv(records: &[LossRecord], provenance: &Provenance) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(provenance.csv_comment().into_bytes());
    w.write_record(["step", "lr", "loss"]).expect("in-memory write");
    for r in records {
        w.write_record([r.step.to_string(), r.lr.to_string(), r.loss.to_string()]).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

pub fn parse_loss_csv(bytes: &[u8]) -> Result<Vec<LossRecord>, IoError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
    let bad = |e: csv::Error| IoError::Parse { what: "loss csv", msg: e.to_string() };
    let mut out = Vec::new();
    for row in r.deserialize::<(usize, f64, f64)>() {
        let (step, lr, loss) = row.map_err(bad)?;
        out.push(LossRecord { step, lr, loss });
    }
    Ok(out)
}
