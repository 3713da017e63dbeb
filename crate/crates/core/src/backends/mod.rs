//! Pluggable model interfaces.
//!
//! Every model call is a [`Request`] answered by a [`Response`]. Concrete
//! backends (scripted fixtures, replay archives, HTTP endpoints) and the
//! layers stacked on them (response cache, recorder) all implement the one
//! [`Backend`] trait, and [`Backends`] routes each operation to its backend
//! and exposes the typed calls the pipeline uses.

mod archive;
mod cache;
mod config;
mod facade;
mod fixture;
mod http;

use std::fmt;
use std::path::PathBuf;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::BackendError;

pub use archive::{ArchiveRecord, Recorder, ReplayBackend};
pub use cache::{CacheStats, CachedBackend, ResponseCache};
pub use config::{BackendConfig, BackendKind, BackendsFile};
pub use facade::{normalize, Backends, BackendsBuilder};
pub use fixture::FixtureBackend;
pub use http::HttpBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    ClassifyImage,
    ExtractEntities,
    Similarity,
    EmbedText,
    EmbedImage,
    ExtractRelation,
    Chat,
}

impl Operation {
    pub const ALL: [Operation; 7] = [
        Operation::ClassifyImage,
        Operation::ExtractEntities,
        Operation::Similarity,
        Operation::EmbedText,
        Operation::EmbedImage,
        Operation::ExtractRelation,
        Operation::Chat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operation::ClassifyImage => "classify_image",
            Operation::ExtractEntities => "extract_entities",
            Operation::Similarity => "similarity",
            Operation::EmbedText => "embed_text",
            Operation::EmbedImage => "embed_image",
            Operation::ExtractRelation => "extract_relation",
            Operation::Chat => "chat",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Image argument of a request. Serializes as the manifest locator only,
/// so digests do not depend on where the dataset is checked out.
#[derive(Debug, Clone)]
pub struct ImageInput {
    pub locator: String,
    pub path: Option<PathBuf>,
}

impl ImageInput {
    pub fn locator(locator: impl Into<String>) -> Self {
        Self {
            locator: locator.into(),
            path: None,
        }
    }
}

impl From<&crate::dataset::ImageRef> for ImageInput {
    fn from(r: &crate::dataset::ImageRef) -> Self {
        Self {
            locator: r.locator.clone(),
            path: r.path.clone(),
        }
    }
}

impl PartialEq for ImageInput {
    fn eq(&self, other: &Self) -> bool {
        self.locator == other.locator
    }
}

impl Serialize for ImageInput {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.locator)
    }
}

impl<'de> Deserialize<'de> for ImageInput {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d).map(ImageInput::locator)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

/// One model call with canonical inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "inputs", rename_all = "snake_case")]
pub enum Request {
    ClassifyImage {
        image: ImageInput,
        k: usize,
    },
    ExtractEntities {
        text: String,
    },
    Similarity {
        a: String,
        b: String,
    },
    EmbedText {
        text: String,
    },
    EmbedImage {
        image: ImageInput,
    },
    ExtractRelation {
        text: String,
        head: String,
        tail: String,
        #[serde(default)]
        image: Option<ImageInput>,
    },
    Chat {
        messages: Vec<ChatMessage>,
        #[serde(default)]
        image: Option<ImageInput>,
    },
}

impl Request {
    pub fn op(&self) -> Operation {
        match self {
            Request::ClassifyImage { .. } => Operation::ClassifyImage,
            Request::ExtractEntities { .. } => Operation::ExtractEntities,
            Request::Similarity { .. } => Operation::Similarity,
            Request::EmbedText { .. } => Operation::EmbedText,
            Request::EmbedImage { .. } => Operation::EmbedImage,
            Request::ExtractRelation { .. } => Operation::ExtractRelation,
            Request::Chat { .. } => Operation::Chat,
        }
    }

    /// Inputs as a JSON value with a fixed field order.
    pub fn inputs(&self) -> Value {
        match serde_json::to_value(self).expect("requests serialize") {
            Value::Object(mut map) => map.remove("inputs").unwrap_or(Value::Null),
            _ => unreachable!("adjacently tagged enum serializes to an object"),
        }
    }

    pub fn from_parts(op: Operation, inputs: Value) -> Result<Self, serde_json::Error> {
        serde_json::from_value(serde_json::json!({ "op": op, "inputs": inputs }))
    }

    /// Hex SHA-256 of the operation name and canonical inputs.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.op().name().as_bytes());
        h.update(b"\n");
        h.update(self.inputs().to_string().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn image(&self) -> Option<&ImageInput> {
        match self {
            Request::ClassifyImage { image, .. } | Request::EmbedImage { image } => Some(image),
            Request::ExtractRelation { image, .. } | Request::Chat { image, .. } => image.as_ref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPrediction {
    pub label: String,
    pub confidence: f64,
}

/// Entity as returned by an extractor. A missing span is located in the
/// source text by the facade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEntity {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

/// A noun or noun phrase with its character span in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateEntity {
    pub text: String,
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationPrediction {
    pub head: String,
    pub tail: String,
    pub label: String,
    pub confidence: f64,
}

impl RelationPrediction {
    pub fn is_none(&self) -> bool {
        self.label.trim().eq_ignore_ascii_case("none")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Labels(Vec<LabelPrediction>),
    Entities(Vec<RawEntity>),
    Score(f64),
    Embedding(Vec<f64>),
    Relation(RelationPrediction),
    Completion(String),
}

impl Response {
    pub fn to_value(&self) -> Value {
        let v = match self {
            Response::Labels(l) => serde_json::to_value(l),
            Response::Entities(e) => serde_json::to_value(e),
            Response::Score(s) => serde_json::to_value(s),
            Response::Embedding(e) => serde_json::to_value(e),
            Response::Relation(r) => serde_json::to_value(r),
            Response::Completion(c) => serde_json::to_value(c),
        };
        v.expect("responses serialize")
    }

    pub fn from_value(op: Operation, value: Value) -> Result<Self, serde_json::Error> {
        Ok(match op {
            Operation::ClassifyImage => Response::Labels(serde_json::from_value(value)?),
            Operation::ExtractEntities => Response::Entities(serde_json::from_value(value)?),
            Operation::Similarity => Response::Score(serde_json::from_value(value)?),
            Operation::EmbedText | Operation::EmbedImage => {
                Response::Embedding(serde_json::from_value(value)?)
            }
            Operation::ExtractRelation => Response::Relation(serde_json::from_value(value)?),
            Operation::Chat => match value {
                Value::String(s) => Response::Completion(s),
                other => {
                    return Err(serde_json::Error::custom(format!(
                        "expected string, got {other}"
                    )))
                }
            },
        })
    }

    pub fn op_matches(&self, op: Operation) -> bool {
        matches!(
            (self, op),
            (Response::Labels(_), Operation::ClassifyImage)
                | (Response::Entities(_), Operation::ExtractEntities)
                | (Response::Score(_), Operation::Similarity)
                | (
                    Response::Embedding(_),
                    Operation::EmbedText | Operation::EmbedImage
                )
                | (Response::Relation(_), Operation::ExtractRelation)
                | (Response::Completion(_), Operation::Chat)
        )
    }
}

/// A model service answering requests.
///
/// Implementations must be callable from several worker threads at once
/// unless [`Backend::single_flight`] returns true, in which case the router
/// serializes calls.
pub trait Backend: Send + Sync {
    fn call(&self, request: &Request) -> Result<Response, BackendError>;

    fn single_flight(&self) -> bool {
        false
    }

    fn name(&self) -> String {
        "backend".into()
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn call(&self, request: &Request) -> Result<Response, BackendError> {
        (**self).call(request)
    }

    fn single_flight(&self) -> bool {
        (**self).single_flight()
    }

    fn name(&self) -> String {
        (**self).name()
    }
}
