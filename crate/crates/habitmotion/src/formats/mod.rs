//! On-disk formats: motion and embedding JSON, checkpoint files, corpus
//! directories and CSV tables.

mod corpus;
mod embeddings;
mod motion;

use std::fs;
use std::path::Path;

use habitmotion_core::nn::Checkpoint;

use crate::error::{AppError, CoreContext, Result};

pub use corpus::{load_corpus, load_motion_dir, save_corpus, TRAIN_DIR, VAL_DIR};
pub use embeddings::{embeddings_from_json, embeddings_to_json, load_embeddings, save_embeddings};
pub use motion::{load_motion, motion_from_json, motion_to_json, save_motion};

/// Version written into every JSON document.
pub const FORMAT_VERSION: u32 = 1;

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| AppError::io(path, e))
}

/// Writes `bytes`, creating parent directories as needed.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_file(path, &checkpoint.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read_file(path)?;
    Checkpoint::from_bytes(&bytes).context(path.display().to_string())
}

/// Writes a CSV table with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| AppError::schema(path, e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| AppError::schema(path, e.to_string()))?;
    write_file(path, &bytes)
}

/// Reads a CSV table, returning its header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let bytes = read_file(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let csv_err = |e: csv::Error| AppError::schema(path, e.to_string());
    let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(csv_err)?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}
