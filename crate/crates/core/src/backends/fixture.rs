use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backend, Operation, Request, Response};
use crate::error::BackendError;

/// One scripted answer. Without `inputs` it is the default for `op`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureLine {
    op: Operation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inputs: Option<Value>,
    output: Value,
}

/// Deterministic scripted backend.
///
/// Requests are answered by exact input lookup, then by the per-operation
/// default; anything else is a fixture miss. Similarity is answered 1.0 for
/// identical strings and looked up in both argument orders. A default
/// relation takes its head and tail from the request.
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    exact: HashMap<String, (Request, Response)>,
    defaults: BTreeMap<Operation, Response>,
}

impl FixtureBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn respond(mut self, request: Request, response: Response) -> Self {
        self.insert(request, response);
        self
    }

    pub fn insert(&mut self, request: Request, response: Response) {
        assert!(
            response.op_matches(request.op()),
            "fixture response does not fit {}",
            request.op()
        );
        self.exact.insert(request.digest(), (request, response));
    }

    pub fn default_for(mut self, op: Operation, response: Response) -> Self {
        assert!(response.op_matches(op), "fixture default does not fit {op}");
        self.defaults.insert(op, response);
        self
    }

    /// Merge another fixture; entries of `other` win.
    pub fn merge(mut self, other: FixtureBackend) -> Self {
        self.exact.extend(other.exact);
        self.defaults.extend(other.defaults);
        self
    }

    pub fn len(&self) -> usize {
        self.exact.len() + self.defaults.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let file = fs::File::open(path).map_err(|source| BackendError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut fixture = Self::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| BackendError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let bad =
                |m: String| BackendError::Config(format!("{}:{}: {m}", path.display(), idx + 1));
            let entry: FixtureLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            let output =
                Response::from_value(entry.op, entry.output).map_err(|e| bad(e.to_string()))?;
            match entry.inputs {
                Some(inputs) => {
                    let req =
                        Request::from_parts(entry.op, inputs).map_err(|e| bad(e.to_string()))?;
                    fixture.insert(req, output);
                }
                None => {
                    fixture.defaults.insert(entry.op, output);
                }
            }
        }
        Ok(fixture)
    }

    /// Lines sorted by operation then digest, defaults first.
    pub fn to_jsonl(&self) -> String {
        let mut lines: Vec<(Operation, String, FixtureLine)> = Vec::new();
        for (op, resp) in &self.defaults {
            lines.push((
                *op,
                String::new(),
                FixtureLine {
                    op: *op,
                    digest: None,
                    inputs: None,
                    output: resp.to_value(),
                },
            ));
        }
        for (digest, (req, resp)) in &self.exact {
            lines.push((
                req.op(),
                digest.clone(),
                FixtureLine {
                    op: req.op(),
                    digest: Some(digest.clone()),
                    inputs: Some(req.inputs()),
                    output: resp.to_value(),
                },
            ));
        }
        lines.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        let mut out = String::new();
        for (_, _, l) in lines {
            out.push_str(&serde_json::to_string(&l).expect("fixture line serializes"));
            out.push('\n');
        }
        out
    }

    fn lookup(&self, request: &Request) -> Option<&Response> {
        self.exact.get(&request.digest()).map(|(_, r)| r)
    }
}

impl Backend for FixtureBackend {
    fn call(&self, request: &Request) -> Result<Response, BackendError> {
        if let Request::Similarity { a, b } = request {
            if a == b {
                return Ok(Response::Score(1.0));
            }
            let swapped = Request::Similarity {
                a: b.clone(),
                b: a.clone(),
            };
            if let Some(r) = self.lookup(request).or_else(|| self.lookup(&swapped)) {
                return Ok(r.clone());
            }
        } else if let Some(r) = self.lookup(request) {
            return Ok(r.clone());
        }
        let mut fallback =
            self.defaults
                .get(&request.op())
                .cloned()
                .ok_or_else(|| BackendError::FixtureMiss {
                    op: request.op(),
                    digest: request.digest(),
                })?;
        // a default relation is about whatever entities were asked for
        if let (Request::ExtractRelation { head, tail, .. }, Response::Relation(rel)) =
            (request, &mut fallback)
        {
            rel.head = head.clone();
            rel.tail = tail.clone();
        }
        Ok(fallback)
    }

    fn name(&self) -> String {
        "fixture".into()
    }
}
