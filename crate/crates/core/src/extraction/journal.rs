//! Run journal (JSONL, one [`Extraction`] per line) and its manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Extraction;
use crate::prompting::MethodId;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> JournalError + '_ {
    move |source| JournalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// `runs/RoleBased.jsonl` → `runs/RoleBased.manifest.json`.
pub fn manifest_path(journal: &Path) -> PathBuf {
    let stem = journal
        .file_stem()
        .map_or_else(|| "journal".into(), |s| s.to_string_lossy().into_owned());
    journal.with_file_name(format!("{stem}.manifest.json"))
}

/// Appends journal lines; safe to share between worker threads.
pub struct JournalWriter {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl JournalWriter {
    /// Truncates any existing journal at `path`.
    pub fn create(path: &Path) -> Result<Self, JournalError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(path))?;
        }
        let file = File::create(path).map_err(io_err(path))?;
        Ok(JournalWriter {
            path: path.to_path_buf(),
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn append(&self, extraction: &Extraction) -> Result<(), JournalError> {
        let mut line = serde_json::to_vec(extraction).expect("extractions serialize");
        line.push(b'\n');
        let mut out = self.out.lock();
        out.write_all(&line).map_err(io_err(&self.path))
    }

    pub fn finish(self) -> Result<(), JournalError> {
        let path = self.path;
        self.out.into_inner().flush().map_err(io_err(&path))
    }
}

pub fn read_journal(path: &Path) -> Result<Vec<Extraction>, JournalError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let extraction = serde_json::from_str(&line).map_err(|e| JournalError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(extraction);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub corpus_digest: String,
    pub method: MethodId,
    pub model_id: String,
    pub backend: String,
    /// template file name → SHA-256 of its body
    pub template_digests: BTreeMap<String, String>,
    pub exemplar_ids: Vec<String>,
    pub records: usize,
    pub completed: usize,
    pub degraded: usize,
    /// Unix seconds; taken from `SOURCE_DATE_EPOCH` when set.
    pub created_at: u64,
}

impl RunManifest {
    pub fn timestamp() -> u64 {
        std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(crate::gateway::unix_now)
    }

    pub fn write(&self, path: &Path) -> Result<(), JournalError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, JournalError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| JournalError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}
