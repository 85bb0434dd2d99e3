use std::fs;
use std::path::{Path, PathBuf};

use habitmotion_core::motion::{Clip, Corpus, Motion, Split};

use super::{load_motion, save_motion};
use crate::error::{AppError, CoreContext, Result};

pub const TRAIN_DIR: &str = "train";
pub const VAL_DIR: &str = "val";

fn split_dir(split: Split) -> &'static str {
    match split {
        Split::Train => TRAIN_DIR,
        Split::Validation => VAL_DIR,
    }
}

/// Writes each clip to `<dir>/<train|val>/<id>.json`.
pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    for c in corpus.clips() {
        let path = dir.join(split_dir(c.split)).join(format!("{}.json", c.id));
        save_motion(&path, &c.motion)?;
    }
    Ok(())
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| AppError::io(dir, e))? {
        let path = entry.map_err(|e| AppError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every `*.json` motion directly inside `dir`, sorted by file name.
/// Ids are file stems.
pub fn load_motion_dir(dir: &Path) -> Result<Vec<(String, Motion)>> {
    let mut out = Vec::new();
    for path in json_files(dir)? {
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        out.push((id, load_motion(&path)?));
    }
    Ok(out)
}

/// Reads a corpus written by [`save_corpus`].
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let mut clips = Vec::new();
    for split in [Split::Train, Split::Validation] {
        let sub = dir.join(split_dir(split));
        if !sub.is_dir() {
            return Err(AppError::io(
                &sub,
                std::io::Error::new(std::io::ErrorKind::NotFound, "corpus split directory missing"),
            ));
        }
        for (id, motion) in load_motion_dir(&sub)? {
            clips.push(Clip { id, split, motion });
        }
    }
    Corpus::new(clips).context(dir.display().to_string())
}
