//! On-disk response cache keyed by request digest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::archive::ArchiveRecord;
use super::{Backend, Operation, Request, Response};
use crate::error::BackendError;

const STATS_FILE: &str = "stats.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: u64,
    pub total_hits: u64,
    pub total_misses: u64,
    pub last_run_hits: u64,
    pub last_run_misses: u64,
}

/// Directory of `<digest>.json` entries shared by concurrent readers and
/// writers. Writes go through a temp file and rename, so a reader sees either
/// a whole entry or none; identical keys hold identical results, so the last
/// writer winning is harmless.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
    tmp_seq: AtomicU64,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<Self, BackendError> {
        fs::create_dir_all(dir).map_err(|source| BackendError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            tmp_seq: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn get(&self, request: &Request) -> Option<Response> {
        let digest = request.digest();
        let path = self.entry_path(&digest);
        let bytes = fs::read(&path).ok()?;
        let parsed = serde_json::from_slice::<ArchiveRecord>(&bytes)
            .map_err(|e| e.to_string())
            .and_then(|rec| {
                if rec.digest != digest || rec.op != request.op() {
                    return Err("key mismatch".to_string());
                }
                Response::from_value(rec.op, rec.output).map_err(|e| e.to_string())
            });
        match parsed {
            Ok(resp) => Some(resp),
            Err(reason) => {
                log::warn!(
                    "invalidating corrupt cache entry {}: {reason}",
                    path.display()
                );
                let _ = fs::remove_file(&path);
                None
            }
        }
    }

    pub fn put(&self, request: &Request, response: &Response) -> Result<(), BackendError> {
        let rec = ArchiveRecord::new(request, response);
        let path = self.entry_path(&rec.digest);
        let tmp = self.dir.join(format!(
            ".{}.{}.{}.tmp",
            rec.digest,
            std::process::id(),
            self.tmp_seq.fetch_add(1, Ordering::Relaxed)
        ));
        let io = |source| BackendError::Io {
            path: path.clone(),
            source,
        };
        fs::write(
            &tmp,
            serde_json::to_vec(&rec).expect("cache record serializes"),
        )
        .map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    /// `(op, digest)` of every entry, sorted by digest.
    pub fn list(&self) -> Result<Vec<(Operation, String)>, BackendError> {
        let mut out = Vec::new();
        for path in self.entry_files()? {
            if let Ok(bytes) = fs::read(&path) {
                if let Ok(rec) = serde_json::from_slice::<ArchiveRecord>(&bytes) {
                    out.push((rec.op, rec.digest));
                }
            }
        }
        out.sort_by(|a, b| a.1.cmp(&b.1));
        Ok(out)
    }

    fn entry_files(&self) -> Result<Vec<PathBuf>, BackendError> {
        let rd = fs::read_dir(&self.dir).map_err(|source| BackendError::Io {
            path: self.dir.clone(),
            source,
        })?;
        Ok(rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "json")
                    && p.file_name().is_some_and(|n| n != STATS_FILE)
            })
            .collect())
    }

    /// Remove every entry and the persisted counters. Returns the number of
    /// entries removed.
    pub fn clear(&self) -> Result<usize, BackendError> {
        let files = self.entry_files()?;
        for p in &files {
            fs::remove_file(p).map_err(|source| BackendError::Io {
                path: p.clone(),
                source,
            })?;
        }
        let _ = fs::remove_file(self.dir.join(STATS_FILE));
        self.hits.store(0, Ordering::Relaxed);
        self.misses.store(0, Ordering::Relaxed);
        Ok(files.len())
    }

    fn persisted(&self) -> CacheStats {
        fs::read(self.dir.join(STATS_FILE))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default()
    }

    pub fn stats(&self) -> Result<CacheStats, BackendError> {
        let mut s = self.persisted();
        s.entries = self.entry_files()?.len() as u64;
        Ok(s)
    }

    /// Fold this process's counters into the persisted statistics.
    pub fn finish_run(&self) -> Result<CacheStats, BackendError> {
        let mut s = self.persisted();
        let (hits, misses) = (self.hits(), self.misses());
        s.total_hits += hits;
        s.total_misses += misses;
        s.last_run_hits = hits;
        s.last_run_misses = misses;
        s.entries = self.entry_files()?.len() as u64;
        let path = self.dir.join(STATS_FILE);
        fs::write(
            &path,
            serde_json::to_vec_pretty(&s).expect("stats serialize"),
        )
        .map_err(|source| BackendError::Io { path, source })?;
        Ok(s)
    }
}

/// Backend layer that answers repeated requests from a [`ResponseCache`].
pub struct CachedBackend<B> {
    inner: B,
    cache: Arc<ResponseCache>,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: Arc<ResponseCache>) -> Self {
        Self { inner, cache }
    }

    pub fn cache(&self) -> &Arc<ResponseCache> {
        &self.cache
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn call(&self, request: &Request) -> Result<Response, BackendError> {
        if let Some(hit) = self.cache.get(request) {
            self.cache.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.cache.misses.fetch_add(1, Ordering::Relaxed);
        let resp = self.inner.call(request)?;
        if let Err(e) = self.cache.put(request, &resp) {
            log::warn!("cache write failed: {e}");
        }
        Ok(resp)
    }

    fn single_flight(&self) -> bool {
        self.inner.single_flight()
    }

    fn name(&self) -> String {
        format!("cached({})", self.inner.name())
    }
}
