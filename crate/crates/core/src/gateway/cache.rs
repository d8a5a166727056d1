//! On-disk response cache: one JSON file per entry at
//! `<root>/<first two hex chars>/<digest>.json`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{CacheKey, CompletionRequest, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: CompletionRequest,
    pub response: String,
    /// Seconds since the Unix epoch.
    pub stored_at: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub entries: usize,
    pub bytes: u64,
    pub unreadable: usize,
    /// entry count per model id
    pub models: std::collections::BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PruneSummary {
    pub removed: usize,
    pub kept: usize,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResponseCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, key: &CacheKey) -> PathBuf {
        let hex = key.as_str();
        self.root.join(&hex[..2]).join(format!("{hex}.json"))
    }

    /// Unreadable entries are treated as misses.
    pub fn get(&self, key: &CacheKey) -> Option<CacheEntry> {
        let path = self.entry_path(key);
        let bytes = std::fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if entry.key == key.as_str() => Some(entry),
            Ok(_) | Err(_) => {
                log::warn!("ignoring unreadable cache entry {}", path.display());
                None
            }
        }
    }

    /// Write-temp-then-rename, so readers never see a partial entry and a
    /// key never has more than one file.
    pub fn put(
        &self,
        request: &CompletionRequest,
        response: &str,
    ) -> Result<CacheEntry, GatewayError> {
        let key = request.cache_key();
        let path = self.entry_path(&key);
        let dir = path.parent().expect("entry path has a parent");
        let io = |source| GatewayError::Cache {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        let entry = CacheEntry {
            key: key.as_str().to_string(),
            request: request.clone(),
            response: response.to_string(),
            stored_at: unix_now(),
        };
        let mut tmp = tempfile::Builder::new()
            .prefix(".tmp-")
            .tempfile_in(dir)
            .map_err(io)?;
        serde_json::to_writer_pretty(&mut tmp, &entry).map_err(|e| io(e.into()))?;
        tmp.write_all(b"\n").map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        Ok(entry)
    }

    fn files(&self) -> Vec<PathBuf> {
        let Ok(shards) = std::fs::read_dir(&self.root) else {
            return Vec::new();
        };
        let mut files: Vec<PathBuf> = shards
            .flatten()
            .filter(|d| d.path().is_dir())
            .flat_map(|d| std::fs::read_dir(d.path()).into_iter().flatten().flatten())
            .map(|f| f.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        files
    }

    pub fn stats(&self) -> CacheStats {
        let mut stats = CacheStats::default();
        for path in self.files() {
            let Ok(bytes) = std::fs::read(&path) else {
                stats.unreadable += 1;
                continue;
            };
            match serde_json::from_slice::<CacheEntry>(&bytes) {
                Ok(entry) => {
                    stats.entries += 1;
                    stats.bytes += bytes.len() as u64;
                    *stats.models.entry(entry.request.model_id).or_default() += 1;
                }
                Err(_) => stats.unreadable += 1,
            }
        }
        stats
    }

    /// Removes entries stored before `cutoff` (epoch seconds), or all
    /// entries when `cutoff` is `None`, plus leftover temp files and
    /// unreadable entries. When `model_id` is given only that model's
    /// entries are considered for age-based removal.
    pub fn prune(
        &self,
        cutoff: Option<u64>,
        model_id: Option<&str>,
    ) -> std::io::Result<PruneSummary> {
        let mut summary = PruneSummary::default();
        for path in self.files() {
            let entry = std::fs::read(&path)
                .ok()
                .and_then(|b| serde_json::from_slice::<CacheEntry>(&b).ok());
            let remove = match &entry {
                None => true,
                Some(e) => {
                    model_id.is_none_or(|m| e.request.model_id == m)
                        && cutoff.is_none_or(|c| e.stored_at < c)
                }
            };
            if remove {
                std::fs::remove_file(&path)?;
                summary.removed += 1;
            } else {
                summary.kept += 1;
            }
        }
        Ok(summary)
    }
}
