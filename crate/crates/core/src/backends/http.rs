//! Generic HTTP adapter.
//!
//! `POST {endpoint}/{operation}` with body
//! `{"op": ..., "inputs": {...}, "image_data": <base64 or null>}`; the
//! service answers `{"output": ...}` shaped like the operation's result.

use std::fs;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backend, Operation, Request, Response};
use crate::error::BackendError;

const BACKOFF_BASE_MS: u64 = 100;
const BACKOFF_CAP_MS: u64 = 5_000;

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    op: Operation,
    inputs: Value,
    image_data: Option<&'a str>,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    output: Value,
}

pub struct HttpBackend {
    endpoint: String,
    token: Option<String>,
    retries: u32,
    agent: ureq::Agent,
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(endpoint: &str, token: Option<String>, timeout_ms: u64, retries: u32) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .http_status_as_error(false)
            .build();
        Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            token,
            retries,
            agent: ureq::Agent::new_with_config(config),
        }
    }

    fn image_data(request: &Request) -> Result<Option<String>, BackendError> {
        let Some(image) = request.image() else {
            return Ok(None);
        };
        let Some(path) = &image.path else {
            return Ok(None);
        };
        let bytes = fs::read(path).map_err(|e| BackendError::Input {
            op: request.op(),
            message: format!("unreadable image {}: {e}", image.locator),
        })?;
        Ok(Some(
            base64::engine::general_purpose::STANDARD.encode(bytes),
        ))
    }

    fn attempt(&self, request: &Request, body: &WireRequest<'_>) -> Result<Response, Attempt> {
        let op = request.op();
        let url = format!("{}/{}", self.endpoint, op.name());
        let mut req = self.agent.post(&url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Attempt::Fatal(BackendError::Remote {
                op,
                attempts: 1,
                message: format!("HTTP {status}: {text}"),
            }));
        }
        let wire: WireResponse = resp.body_mut().read_json().map_err(|e| {
            Attempt::Fatal(BackendError::Malformed {
                op,
                message: e.to_string(),
            })
        })?;
        Response::from_value(op, wire.output).map_err(|e| {
            Attempt::Fatal(BackendError::Malformed {
                op,
                message: e.to_string(),
            })
        })
    }
}

pub(crate) fn backoff(attempt: u32) -> Duration {
    let ms = BACKOFF_BASE_MS.saturating_mul(1u64 << attempt.min(16));
    Duration::from_millis(ms.min(BACKOFF_CAP_MS))
}

impl Backend for HttpBackend {
    fn call(&self, request: &Request) -> Result<Response, BackendError> {
        let image = Self::image_data(request)?;
        let body = WireRequest {
            op: request.op(),
            inputs: request.inputs(),
            image_data: image.as_deref(),
        };
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(backoff(attempt - 1));
            }
            match self.attempt(request, &body) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::debug!("{} attempt {} failed: {msg}", request.op(), attempt + 1);
                    last = msg;
                }
            }
        }
        Err(BackendError::Remote {
            op: request.op(),
            attempts: self.retries + 1,
            message: last,
        })
    }

    fn name(&self) -> String {
        format!("http({})", self.endpoint)
    }
}
