//! Recorded-response archives: one JSON record per distinct call.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backend, Operation, Request, Response};
use crate::error::BackendError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveRecord {
    pub op: Operation,
    pub digest: String,
    pub inputs: Value,
    pub output: Value,
}

impl ArchiveRecord {
    pub fn new(request: &Request, response: &Response) -> Self {
        Self {
            op: request.op(),
            digest: request.digest(),
            inputs: request.inputs(),
            output: response.to_value(),
        }
    }
}

pub fn read_archive(path: &Path) -> Result<Vec<ArchiveRecord>, BackendError> {
    let io = |source| BackendError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ArchiveRecord = serde_json::from_str(&line)
            .map_err(|e| BackendError::Config(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Answers requests from a recorded archive; never calls a model.
#[derive(Debug)]
pub struct ReplayBackend {
    source: PathBuf,
    responses: HashMap<String, Response>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let mut responses = HashMap::new();
        for rec in read_archive(path)? {
            let resp = Response::from_value(rec.op, rec.output).map_err(|e| {
                BackendError::Config(format!("{}: record {}: {e}", path.display(), rec.digest))
            })?;
            responses.insert(rec.digest, resp);
        }
        Ok(Self {
            source: path.to_path_buf(),
            responses,
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn call(&self, request: &Request) -> Result<Response, BackendError> {
        let digest = request.digest();
        self.responses
            .get(&digest)
            .cloned()
            .ok_or(BackendError::ReplayMiss {
                op: request.op(),
                digest,
            })
    }

    fn name(&self) -> String {
        format!("replay({})", self.source.display())
    }
}

/// Pass-through layer that keeps every successful call for an archive.
pub struct Recorder<B> {
    inner: B,
    records: Mutex<BTreeMap<String, ArchiveRecord>>,
}

impl<B: Backend> Recorder<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            records: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn records(&self) -> Vec<ArchiveRecord> {
        self.records.lock().unwrap().values().cloned().collect()
    }

    /// Write the archive sorted by digest, so identical runs produce
    /// identical files whatever the thread schedule.
    pub fn write(&self, path: &Path) -> Result<(), BackendError> {
        let mut out = String::new();
        for rec in self.records() {
            out.push_str(&serde_json::to_string(&rec).expect("archive record serializes"));
            out.push('\n');
        }
        fs::write(path, out).map_err(|source| BackendError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl<B: Backend> Backend for Recorder<B> {
    fn call(&self, request: &Request) -> Result<Response, BackendError> {
        let resp = self.inner.call(request)?;
        let rec = ArchiveRecord::new(request, &resp);
        self.records.lock().unwrap().insert(rec.digest.clone(), rec);
        Ok(resp)
    }

    fn single_flight(&self) -> bool {
        self.inner.single_flight()
    }

    fn name(&self) -> String {
        format!("record({})", self.inner.name())
    }
}
