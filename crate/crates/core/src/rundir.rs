//! Run directories: single-writer lock, JSON helpers and stage layout.
//!
//! ```text
//! <run>/run.json            resolved config, seeds, inputs
//! <run>/stage<k>/lpg/       generator checkpoint
//! <run>/stage<k>/seg/       segmenter checkpoint
//! <run>/stage<k>/pseudo/    pseudo masks, one PNG per image id
//! <run>/stage<k>/metrics.json
//! <run>/predictions/<id>.png
//! ```
//!
//! A stage is complete once its `metrics.json` exists; it is written last.

use std::fs::{self, File, TryLockError};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const LOCK_FILE: &str = ".lock";

/// An open run directory. The advisory lock is released on drop or when the
/// process exits.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    _lock: File,
}

impl RunDir {
    /// Opens `root` for writing. A non-empty directory is cleared when
    /// `force` is set, kept when `keep` is set, and refused otherwise.
    pub fn open(root: &Path, force: bool, keep: bool) -> Result<RunDir> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let lock_path = root.join(LOCK_FILE);
        let lock = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|e| Error::io(&lock_path, e))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(Error::Locked(root.to_path_buf())),
            Err(TryLockError::Error(e)) => return Err(Error::io(&lock_path, e)),
        }
        let others: Vec<PathBuf> = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().is_some_and(|n| n != LOCK_FILE))
            .collect();
        if !others.is_empty() && !keep {
            if !force {
                return Err(Error::Config(format!(
                    "{} already exists and is not empty (use --force to overwrite)",
                    root.display()
                )));
            }
            for p in others {
                remove(&p)?;
            }
        }
        Ok(RunDir { root: root.to_path_buf(), _lock: lock })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage(&self, k: usize) -> PathBuf {
        stage_dir(&self.root, k)
    }

    /// Removes a partially written stage directory.
    pub fn clear_stage(&self, k: usize) -> Result<()> {
        let d = self.stage(k);
        if d.exists() {
            remove(&d)?;
        }
        Ok(())
    }
}

pub fn stage_dir(root: &Path, k: usize) -> PathBuf {
    root.join(format!("stage{k}"))
}

pub fn stage_complete(root: &Path, k: usize) -> bool {
    stage_dir(root, k).join("metrics.json").is_file()
}

/// Number of consecutive complete stages starting at `first`.
pub fn completed_stages(root: &Path, first: usize) -> usize {
    (first..).take_while(|&k| stage_complete(root, k)).count()
}

fn remove(p: &Path) -> Result<()> {
    let r = if p.is_dir() { fs::remove_dir_all(p) } else { fs::remove_file(p) };
    r.map_err(|e| Error::io(p, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
