//! Relation taxonomy between a base and its additive.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::BackendError;

pub const DEFAULT_RELATION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    ProblemDriven,
    SimilarityDriven,
    InspirationDriven,
}

impl Approach {
    pub fn title(self) -> &'static str {
        match self {
            Approach::ProblemDriven => "Problem-driven",
            Approach::SimilarityDriven => "Similarity-driven",
            Approach::InspirationDriven => "Inspiration-driven",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationEntry {
    pub approach: Approach,
    pub term: String,
    pub description: String,
}

impl RelationEntry {
    fn new(approach: Approach, term: &str, description: &str) -> Self {
        Self {
            approach,
            term: term.into(),
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationMatch {
    pub entry: RelationEntry,
    pub score: f64,
    pub matched: bool,
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("taxonomy is empty")]
    Empty,
    #[error("relation term must be non-empty")]
    EmptyTerm,
    #[error("duplicate relation term {0:?}")]
    DuplicateTerm(String),
    #[error("cannot read taxonomy {path}: {message}")]
    Load { path: String, message: String },
}

/// An ordered, validated set of relation entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Taxonomy {
    entries: Vec<RelationEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyFile {
    relation: Vec<RelationEntry>,
}

impl Taxonomy {
    pub fn new(entries: Vec<RelationEntry>) -> Result<Self, TaxonomyError> {
        if entries.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        let mut seen = HashSet::new();
        for e in &entries {
            let key = e.term.trim().to_lowercase();
            if key.is_empty() {
                return Err(TaxonomyError::EmptyTerm);
            }
            if !seen.insert(key) {
                return Err(TaxonomyError::DuplicateTerm(e.term.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn builtin() -> Self {
        Self::new(builtin_taxonomy()).expect("builtin taxonomy is valid")
    }

    /// Load `[[relation]]` tables from a TOML file.
    pub fn from_toml_file(path: &Path) -> Result<Self, TaxonomyError> {
        let load = |message: String| TaxonomyError::Load {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| load(e.to_string()))?;
        let file: TaxonomyFile = toml::from_str(&text).map_err(|e| load(e.to_string()))?;
        Self::new(file.relation)
    }

    /// Builtin entries followed by the entries of `path`.
    pub fn builtin_extended_with(path: &Path) -> Result<Self, TaxonomyError> {
        let extra = Self::from_toml_file(path)?;
        let mut entries = builtin_taxonomy();
        entries.extend(extra.entries);
        Self::new(entries)
    }

    pub fn entries(&self) -> &[RelationEntry] {
        &self.entries
    }

    /// Approach-grouped listing used as a hint in prompts.
    pub fn category_hint(&self) -> String {
        let mut lines = Vec::new();
        let mut approaches: Vec<Approach> = Vec::new();
        for e in &self.entries {
            if !approaches.contains(&e.approach) {
                approaches.push(e.approach);
            }
        }
        for a in approaches {
            let terms: Vec<String> = self
                .entries
                .iter()
                .filter(|e| e.approach == a)
                .map(|e| format!("{} ({})", e.term, e.description))
                .collect();
            lines.push(format!("- {}: {}", a.title(), terms.join("; ")));
        }
        lines.join("\n")
    }
}

/// The six predefined relations, grouped by combination approach.
pub fn builtin_taxonomy() -> Vec<RelationEntry> {
    use Approach::*;
    vec![
        RelationEntry::new(
            ProblemDriven,
            "solution",
            "provides a specific solution to the base",
        ),
        RelationEntry::new(
            ProblemDriven,
            "integration",
            "combines with the base to solve a more complex problem",
        ),
        RelationEntry::new(
            SimilarityDriven,
            "complementarity",
            "complements the base, enhancing its original characteristics or functionalities",
        ),
        RelationEntry::new(
            SimilarityDriven,
            "harmonization",
            "harmoniously combines with the base in function or design, improving overall consistency and effectiveness",
        ),
        RelationEntry::new(
            InspirationDriven,
            "innovation",
            "brings novel and unique features or functionalities to the base",
        ),
        RelationEntry::new(
            InspirationDriven,
            "transformation",
            "completely changes the traditional use or appearance",
        ),
    ]
}

/// Semantic similarity between two short strings, in [-1, 1].
pub trait SimilarityScorer {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError>;
}

impl<F> SimilarityScorer for F
where
    F: Fn(&str, &str) -> Result<f64, BackendError>,
{
    fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError> {
        self(a, b)
    }
}

#[derive(Debug, Error)]
#[error("scoring relation label {label:?}: {source}")]
pub struct MatchError {
    pub label: String,
    #[source]
    pub source: BackendError,
}

/// Best taxonomy entry for a free-form relation label.
///
/// Ties keep the earlier entry; `matched` is `score >= threshold`.
pub fn match_relation(
    label: &str,
    taxonomy: &Taxonomy,
    scorer: &dyn SimilarityScorer,
    threshold: f64,
) -> Result<RelationMatch, MatchError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, entry) in taxonomy.entries().iter().enumerate() {
        let score = scorer
            .similarity(label, &entry.term)
            .map_err(|source| MatchError {
                label: label.to_string(),
                source,
            })?;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    let (idx, score) = best.expect("taxonomy is never empty");
    Ok(RelationMatch {
        entry: taxonomy.entries()[idx].clone(),
        score,
        matched: score >= threshold,
    })
}
