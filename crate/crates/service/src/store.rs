//! On-disk layout of a project directory.
//!
//! ```text
//! project.json     header line `nerloop-project/1 sha256=<hex>` + JSON body
//! journal.jsonl    `<sha256 hex> <JSON entry>` per line, fsynced per append
//! models/v<n>.json every model version that produced suggestions
//! ```
//!
//! Snapshots are written to a temporary file, synced and renamed into place.
//! The journal holds events acknowledged since the last snapshot; a final
//! line without its newline is a torn write that was never acknowledged and
//! is dropped on open.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use log::warn;
use nerloop_core::CrfModel;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PROJECT_FORMAT: &str = "nerloop-project/1";
const SNAPSHOT: &str = "project.json";
const JOURNAL: &str = "journal.jsonl";
const MODELS: &str = "models";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("integrity check failed for {path}: {detail}")]
    Integrity { path: PathBuf, detail: String },
    #[error("no project at {0}")]
    Missing(PathBuf),
    #[error("a project already exists at {0}")]
    Exists(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path` so that readers see either the old or the new
/// contents, never a mix.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    if let Some(dir) = path.parent() {
        // Persist the rename itself.
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

pub struct Store {
    dir: PathBuf,
    journal: File,
}

impl Store {
    /// Prepares an empty project directory.
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        if dir.join(SNAPSHOT).exists() {
            return Err(StoreError::Exists(dir));
        }
        fs::create_dir_all(dir.join(MODELS)).map_err(io_err(&dir))?;
        File::create(dir.join(JOURNAL)).map_err(io_err(&dir))?;
        Self::open(dir)
    }

    /// Opens an existing project directory.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        if !dir.join(JOURNAL).exists() && !dir.join(SNAPSHOT).exists() {
            return Err(StoreError::Missing(dir));
        }
        let path = dir.join(JOURNAL);
        let journal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self { dir, journal })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.dir.join(SNAPSHOT)
    }

    pub fn journal_path(&self) -> PathBuf {
        self.dir.join(JOURNAL)
    }

    pub fn model_path(&self, version: u64) -> PathBuf {
        self.dir.join(MODELS).join(format!("v{version}.json"))
    }

    /// Serializes `value` as the project snapshot.
    pub fn write_snapshot<T: Serialize>(&self, value: &T) -> Result<(), StoreError> {
        write_atomic(&self.snapshot_path(), &encode_snapshot(value))
    }

    pub fn read_snapshot<T: DeserializeOwned>(&self) -> Result<T, StoreError> {
        let path = self.snapshot_path();
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        decode_snapshot(&bytes).map_err(|detail| StoreError::Integrity { path, detail })
    }

    /// Appends one entry and syncs it to disk before returning.
    pub fn append<T: Serialize>(&mut self, entry: &T) -> Result<(), StoreError> {
        let json = serde_json::to_string(entry).expect("journal entries serialize");
        let line = format!("{} {json}\n", digest(json.as_bytes()));
        let path = self.journal_path();
        self.journal.write_all(line.as_bytes()).map_err(io_err(&path))?;
        self.journal.sync_data().map_err(io_err(&path))
    }

    /// Reads every complete journal entry, dropping a torn final line.
    pub fn read_journal<T: DeserializeOwned>(&mut self) -> Result<Vec<T>, StoreError> {
        let path = self.journal_path();
        let text = fs::read(&path).map_err(io_err(&path))?;
        let complete = text.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < text.len() {
            warn!("{}: dropping {} bytes of an unfinished entry", path.display(), text.len() - complete);
            self.journal.set_len(complete as u64).map_err(io_err(&path))?;
            self.journal.sync_data().map_err(io_err(&path))?;
        }
        let body = std::str::from_utf8(&text[..complete]).map_err(|e| StoreError::Integrity {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        body.lines()
            .enumerate()
            .map(|(i, line)| {
                let bad = |detail: String| StoreError::Integrity {
                    path: path.clone(),
                    detail: format!("line {}: {detail}", i + 1),
                };
                let (sum, json) = line.split_once(' ').ok_or_else(|| bad("missing checksum".into()))?;
                if digest(json.as_bytes()) != sum {
                    return Err(bad("checksum mismatch".into()));
                }
                serde_json::from_str(json).map_err(|e| bad(e.to_string()))
            })
            .collect()
    }

    /// Empties the journal once a snapshot covers its entries.
    pub fn clear_journal(&mut self) -> Result<(), StoreError> {
        let path = self.journal_path();
        self.journal.set_len(0).map_err(io_err(&path))?;
        self.journal.sync_data().map_err(io_err(&path))
    }

    pub fn write_model(&self, model: &CrfModel) -> Result<(), StoreError> {
        write_atomic(&self.model_path(model.theta_version()), model.to_json().as_bytes())
    }

    pub fn read_model(&self, version: u64) -> Result<CrfModel, StoreError> {
        let path = self.model_path(version);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        CrfModel::from_json(&text).map_err(|e| StoreError::Integrity {
            path,
            detail: e.to_string(),
        })
    }
}

pub fn encode_snapshot<T: Serialize>(value: &T) -> Vec<u8> {
    let body = serde_json::to_string(value).expect("project state serializes");
    format!("{PROJECT_FORMAT} sha256={}\n{body}", digest(body.as_bytes())).into_bytes()
}

pub fn decode_snapshot<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, String> {
    let text = std::str::from_utf8(bytes).map_err(|e| e.to_string())?;
    let (header, body) = text.split_once('\n').ok_or("missing header line")?;
    let sum = header
        .strip_prefix(PROJECT_FORMAT)
        .and_then(|rest| rest.strip_prefix(" sha256="))
        .ok_or_else(|| format!("unrecognized header `{header}`"))?;
    if digest(body.as_bytes()) != sum {
        return Err("checksum mismatch".into());
    }
    serde_json::from_str(body).map_err(|e| e.to_string())
}
