use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use super::archive::Recorder;
use super::{
    Backend, CandidateEntity, ChatMessage, EmbeddingVector, ImageInput, LabelPrediction, Operation,
    RawEntity, RelationPrediction, Request, Response, ResponseCache,
};
use crate::error::BackendError;
use crate::taxonomy::SimilarityScorer;

const RANGE_SLACK: f64 = 1e-9;

struct Router {
    routes: BTreeMap<Operation, Arc<dyn Backend>>,
    fallback: Option<Arc<dyn Backend>>,
}

impl Backend for Router {
    fn call(&self, request: &Request) -> Result<Response, BackendError> {
        let op = request.op();
        let backend = self
            .routes
            .get(&op)
            .or(self.fallback.as_ref())
            .ok_or(BackendError::Unrouted(op))?;
        let resp = backend.call(request)?;
        if !resp.op_matches(op) {
            return Err(BackendError::Malformed {
                op,
                message: "response kind does not match the operation".into(),
            });
        }
        Ok(resp)
    }

    fn name(&self) -> String {
        "router".into()
    }
}

#[derive(Default)]
pub struct BackendsBuilder {
    routes: BTreeMap<Operation, Arc<dyn Backend>>,
    fallback: Option<Arc<dyn Backend>>,
    caches: Vec<Arc<ResponseCache>>,
    embedding_dim: Option<usize>,
    record: bool,
}

impl BackendsBuilder {
    pub fn route(mut self, op: Operation, backend: Arc<dyn Backend>) -> Self {
        self.routes.insert(op, backend);
        self
    }

    pub fn fallback(mut self, backend: Arc<dyn Backend>) -> Self {
        self.fallback = Some(backend);
        self
    }

    pub(crate) fn fallback_if_unset(mut self, backend: Arc<dyn Backend>) -> Self {
        if self.fallback.is_none() {
            self.fallback = Some(backend);
        }
        self
    }

    pub fn cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.caches.push(cache);
        self
    }

    pub fn embedding_dim(mut self, dim: usize) -> Self {
        self.embedding_dim = Some(dim);
        self
    }

    /// Keep every answered call so it can be written as a replay archive.
    pub fn record(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn build(self) -> Backends {
        let router = Router {
            routes: self.routes,
            fallback: self.fallback,
        };
        let (inner, recorder): (Arc<dyn Backend>, _) = if self.record {
            let r = Arc::new(Recorder::new(router));
            (r.clone(), Some(r))
        } else {
            (Arc::new(router), None)
        };
        Backends {
            inner,
            recorder,
            caches: self.caches,
            embedding_dim: self.embedding_dim,
        }
    }
}

/// Typed entry point to the configured model backends.
///
/// Validates inputs before a call and normalizes outputs after it, so every
/// backend kind honours the same contracts.
#[derive(Clone)]
pub struct Backends {
    inner: Arc<dyn Backend>,
    recorder: Option<Arc<Recorder<Router>>>,
    caches: Vec<Arc<ResponseCache>>,
    embedding_dim: Option<usize>,
}

impl Backends {
    pub fn builder() -> BackendsBuilder {
        BackendsBuilder::default()
    }

    /// Every operation answered by one backend.
    pub fn single(backend: Arc<dyn Backend>) -> Self {
        Self::builder().fallback(backend).build()
    }

    pub fn caches(&self) -> &[Arc<ResponseCache>] {
        &self.caches
    }

    pub fn write_recording(&self, path: &Path) -> Result<bool, BackendError> {
        match &self.recorder {
            Some(r) => r.write(path).map(|_| true),
            None => Ok(false),
        }
    }

    pub fn call(&self, request: &Request) -> Result<Response, BackendError> {
        self.inner.call(request)
    }

    fn input_err(op: Operation, message: impl Into<String>) -> BackendError {
        BackendError::Input {
            op,
            message: message.into(),
        }
    }

    fn malformed(op: Operation, message: impl Into<String>) -> BackendError {
        BackendError::Malformed {
            op,
            message: message.into(),
        }
    }

    fn check_image(op: Operation, image: &ImageInput) -> Result<(), BackendError> {
        if let Some(path) = &image.path {
            let ok = std::fs::metadata(path)
                .map(|m| m.is_file() && m.len() > 0)
                .unwrap_or(false);
            if !ok {
                return Err(Self::input_err(
                    op,
                    format!("unreadable image {:?}", image.locator),
                ));
            }
        }
        Ok(())
    }

    fn check_unit(op: Operation, what: &str, v: f64) -> Result<f64, BackendError> {
        if !v.is_finite() || !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&v) {
            return Err(Self::malformed(op, format!("{what} {v} outside [0, 1]")));
        }
        Ok(v.clamp(0.0, 1.0))
    }

    /// Top-`k` labels, confidence-descending.
    pub fn classify_image(
        &self,
        image: &ImageInput,
        k: usize,
    ) -> Result<Vec<LabelPrediction>, BackendError> {
        let op = Operation::ClassifyImage;
        if k == 0 {
            return Err(Self::input_err(op, "k must be at least 1"));
        }
        Self::check_image(op, image)?;
        let Response::Labels(mut labels) = self.call(&Request::ClassifyImage {
            image: image.clone(),
            k,
        })?
        else {
            unreachable!("router checks response kind")
        };
        for l in &mut labels {
            l.confidence = Self::check_unit(op, "confidence", l.confidence)?;
        }
        labels.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        labels.truncate(k);
        Ok(labels)
    }

    /// Noun entities of `text` ordered by span start.
    pub fn extract_entities(&self, text: &str) -> Result<Vec<CandidateEntity>, BackendError> {
        if text.trim().is_empty() {
            return Ok(Vec::new());
        }
        let Response::Entities(raw) = self.call(&Request::ExtractEntities {
            text: text.to_string(),
        })?
        else {
            unreachable!("router checks response kind")
        };
        resolve_spans(text, raw)
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError> {
        let op = Operation::Similarity;
        if a.trim().is_empty() || b.trim().is_empty() {
            return Err(Self::input_err(
                op,
                "similarity arguments must be non-empty",
            ));
        }
        let Response::Score(s) = self.call(&Request::Similarity {
            a: a.to_string(),
            b: b.to_string(),
        })?
        else {
            unreachable!("router checks response kind")
        };
        if !s.is_finite() || s.abs() > 1.0 + RANGE_SLACK {
            return Err(Self::malformed(
                op,
                format!("similarity {s} outside [-1, 1]"),
            ));
        }
        Ok(s.clamp(-1.0, 1.0))
    }

    fn check_embedding(
        &self,
        op: Operation,
        values: Vec<f64>,
    ) -> Result<EmbeddingVector, BackendError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Self::malformed(
                op,
                "embedding must be a non-empty finite vector",
            ));
        }
        if let Some(d) = self.embedding_dim {
            if values.len() != d {
                return Err(BackendError::Config(format!(
                    "{op} returned dimension {} but embedding_dim is {d}",
                    values.len()
                )));
            }
        }
        Ok(EmbeddingVector::new(values))
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let op = Operation::EmbedText;
        if text.trim().is_empty() {
            return Err(Self::input_err(op, "text must be non-empty"));
        }
        let Response::Embedding(v) = self.call(&Request::EmbedText {
            text: text.to_string(),
        })?
        else {
            unreachable!("router checks response kind")
        };
        self.check_embedding(op, v)
    }

    pub fn embed_image(&self, image: &ImageInput) -> Result<EmbeddingVector, BackendError> {
        let op = Operation::EmbedImage;
        Self::check_image(op, image)?;
        let Response::Embedding(v) = self.call(&Request::EmbedImage {
            image: image.clone(),
        })?
        else {
            unreachable!("router checks response kind")
        };
        self.check_embedding(op, v)
    }

    /// Relation between `head` and `tail` in the context of `text`; the image
    /// is passed to multimodal relation models.
    pub fn extract_relation(
        &self,
        text: &str,
        head: &str,
        tail: &str,
        image: Option<&ImageInput>,
    ) -> Result<RelationPrediction, BackendError> {
        let op = Operation::ExtractRelation;
        let lower = text.to_lowercase();
        for (role, e) in [("head", head), ("tail", tail)] {
            if e.trim().is_empty() || !lower.contains(&e.to_lowercase()) {
                return Err(Self::input_err(
                    op,
                    format!("{role} {e:?} not found in text"),
                ));
            }
        }
        if normalize(head) == normalize(tail) {
            return Err(Self::input_err(op, "head and tail must differ"));
        }
        if let Some(img) = image {
            Self::check_image(op, img)?;
        }
        let Response::Relation(mut rel) = self.call(&Request::ExtractRelation {
            text: text.to_string(),
            head: head.to_string(),
            tail: tail.to_string(),
            image: image.cloned(),
        })?
        else {
            unreachable!("router checks response kind")
        };
        rel.confidence = Self::check_unit(op, "confidence", rel.confidence)?;
        if normalize(&rel.head) == normalize(&rel.tail) {
            return Err(Self::malformed(op, "relation head equals tail"));
        }
        Ok(rel)
    }

    pub fn chat(
        &self,
        messages: &[ChatMessage],
        image: Option<&ImageInput>,
    ) -> Result<String, BackendError> {
        let op = Operation::Chat;
        if messages.is_empty() {
            return Err(Self::input_err(op, "messages must be non-empty"));
        }
        if let Some(img) = image {
            Self::check_image(op, img)?;
        }
        let Response::Completion(c) = self.call(&Request::Chat {
            messages: messages.to_vec(),
            image: image.cloned(),
        })?
        else {
            unreachable!("router checks response kind")
        };
        Ok(c)
    }
}

impl SimilarityScorer for Backends {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError> {
        Backends::similarity(self, a, b)
    }
}

/// Lowercase, trim, and collapse internal whitespace.
pub fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Give every raw entity a character span, checking supplied spans and
/// locating missing ones at their first unclaimed occurrence.
fn resolve_spans(text: &str, raw: Vec<RawEntity>) -> Result<Vec<CandidateEntity>, BackendError> {
    let op = Operation::ExtractEntities;
    let chars: Vec<char> = text.chars().collect();
    let mut out: Vec<CandidateEntity> = Vec::with_capacity(raw.len());
    for e in raw {
        if e.text.trim().is_empty() {
            return Err(Backends::malformed(op, "empty entity text"));
        }
        let needle: Vec<char> = e.text.chars().collect();
        let span = match e.span {
            Some((s, t)) => {
                if s >= t || t > chars.len() || chars[s..t] != needle[..] {
                    return Err(Backends::malformed(
                        op,
                        format!("span ({s}, {t}) does not hold {:?}", e.text),
                    ));
                }
                (s, t)
            }
            None => {
                let overlaps =
                    |s: usize, t: usize| out.iter().any(|c| s < c.span.1 && c.span.0 < t);
                (0..=chars.len().saturating_sub(needle.len()))
                    .filter(|&s| chars[s..s + needle.len()] == needle[..])
                    .map(|s| (s, s + needle.len()))
                    .find(|&(s, t)| !overlaps(s, t))
                    .ok_or_else(|| {
                        Backends::malformed(op, format!("entity {:?} not found in text", e.text))
                    })?
            }
        };
        out.push(CandidateEntity { text: e.text, span });
    }
    out.sort_by_key(|c| c.span);
    out.dedup_by(|a, b| a.span == b.span);
    Ok(out)
}
