//! Design-sample manifests.
//!
//! A manifest is a line-delimited JSON file, one product per line:
//!
//! ```text
//! {"id":"2","name":"Sharp 1","image":"images/sharp1.png","description":"...","base":"Knife Block","additive":"Knife Sharpener"}
//! ```
//!
//! `image` is a locator relative to the manifest's directory (or an
//! `http(s)` URL). A list of locators is also accepted; only the first one
//! is consumed by the pipeline.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_SENTENCES: usize = 5;

/// Image locator as written in the manifest plus its resolved location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRef {
    pub locator: String,
    /// Local file the locator resolves to; `None` for remote URLs.
    pub path: Option<PathBuf>,
}

impl ImageRef {
    pub fn resolve(locator: &str, base_dir: &Path) -> Self {
        let path = if is_url(locator) {
            None
        } else {
            let p = Path::new(locator);
            Some(if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            })
        };
        Self {
            locator: locator.to_string(),
            path,
        }
    }

    pub fn is_url(&self) -> bool {
        self.path.is_none()
    }

    /// True when the locator is a URL or names a non-empty readable file.
    pub fn is_readable(&self) -> bool {
        match &self.path {
            None => true,
            Some(p) => fs::File::open(p)
                .and_then(|f| f.metadata())
                .map(|m| m.is_file() && m.len() > 0)
                .unwrap_or(false),
        }
    }
}

fn is_url(locator: &str) -> bool {
    let lower = locator.to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignSample {
    pub id: String,
    pub name: String,
    pub image_refs: Vec<ImageRef>,
    pub description: String,
    pub gold_base: Option<String>,
    pub gold_additive: Option<String>,
}

impl DesignSample {
    /// The canonical image. Extra images are ignored by every mode.
    pub fn image(&self) -> Option<&ImageRef> {
        if self.image_refs.len() > 1 {
            log::info!(
                "sample {}: {} extra image(s) ignored",
                self.id,
                self.image_refs.len() - 1
            );
        }
        self.image_refs.first()
    }

    pub fn gold_pair(&self) -> Option<(&str, &str)> {
        match (&self.gold_base, &self.gold_additive) {
            (Some(b), Some(a)) => Some((b.as_str(), a.as_str())),
            _ => None,
        }
    }

    pub fn to_record(&self) -> ManifestRecord {
        let mut locators: Vec<String> = self.image_refs.iter().map(|r| r.locator.clone()).collect();
        let image = if locators.len() == 1 {
            ImageField::One(locators.remove(0))
        } else {
            ImageField::Many(locators)
        };
        ManifestRecord {
            id: self.id.clone(),
            name: self.name.clone(),
            image,
            description: self.description.clone(),
            base: self.gold_base.clone(),
            additive: self.gold_additive.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageField {
    One(String),
    Many(Vec<String>),
}

/// On-disk form of one manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub name: String,
    pub image: ImageField,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub additive: Option<String>,
}

impl ManifestRecord {
    pub fn into_sample(self, base_dir: &Path) -> DesignSample {
        let locators = match self.image {
            ImageField::One(s) => vec![s],
            ImageField::Many(v) => v,
        };
        DesignSample {
            id: self.id,
            name: self.name,
            image_refs: locators
                .iter()
                .map(|l| ImageRef::resolve(l, base_dir))
                .collect(),
            description: self.description,
            gold_base: self.base,
            gold_additive: self.additive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    Invalid(Vec<Violation>),
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            Verdict::Ok => &[],
            Verdict::Invalid(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub line: usize,
    /// Record id when the line parsed far enough to have one.
    pub id: Option<String>,
    pub violations: Vec<Violation>,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} (record {id}): ", self.line)?,
            None => write!(f, "line {}: ", self.line)?,
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} invalid record(s) in {path}: {}", errors.len(), summarize(errors))]
    Invalid {
        path: PathBuf,
        errors: Vec<RecordError>,
    },
}

fn summarize(errors: &[RecordError]) -> String {
    errors
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join(" | ")
}

/// Load every record of a manifest, in file order.
///
/// All invalid records are collected before failing so one run reports the
/// full set of problems.
pub fn load_dataset(path: &Path) -> Result<Vec<DesignSample>, DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));

    let mut samples = Vec::new();
    let mut errors = Vec::new();
    let mut seen_ids = HashSet::new();

    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(String::from));
                errors.push(RecordError {
                    line: line_no,
                    id,
                    violations: vec![Violation {
                        field: "record",
                        message: e.to_string(),
                    }],
                });
                continue;
            }
        };
        let sample = record.into_sample(base_dir);
        let mut violations = validate_sample(&sample).violations().to_vec();
        if !seen_ids.insert(sample.id.clone()) {
            violations.push(Violation {
                field: "id",
                message: format!("duplicate id {:?}", sample.id),
            });
        }
        if violations.is_empty() {
            samples.push(sample);
        } else {
            errors.push(RecordError {
                line: line_no,
                id: Some(sample.id),
                violations,
            });
        }
    }

    if errors.is_empty() {
        Ok(samples)
    } else {
        Err(DatasetError::Invalid {
            path: path.to_path_buf(),
            errors,
        })
    }
}

/// Serialize samples back to manifest lines.
pub fn to_manifest_string(samples: &[DesignSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(&s.to_record()).expect("manifest record serializes"));
        out.push('\n');
    }
    out
}

pub fn validate_sample(sample: &DesignSample) -> Verdict {
    let mut v = Vec::new();
    if sample.id.trim().is_empty() {
        v.push(Violation {
            field: "id",
            message: "id must be non-empty".into(),
        });
    }
    if sample.name.trim().is_empty() {
        v.push(Violation {
            field: "name",
            message: "name must be non-empty".into(),
        });
    }
    match sample.image_refs.first() {
        None => v.push(Violation {
            field: "image",
            message: "at least one image is required".into(),
        }),
        Some(first) if !first.is_readable() => v.push(Violation {
            field: "image",
            message: format!("image {:?} is not a readable file", first.locator),
        }),
        Some(_) => {}
    }
    let sentences = count_sentences(&sample.description);
    if sentences > MAX_SENTENCES {
        v.push(Violation {
            field: "description",
            message: format!(
                "description has {sentences} sentences; at most {MAX_SENTENCES} are allowed"
            ),
        });
    }
    match (&sample.gold_base, &sample.gold_additive) {
        (Some(_), None) | (None, Some(_)) => v.push(Violation {
            field: "base/additive",
            message: "gold base and additive must be given together".into(),
        }),
        (Some(b), Some(a)) if b.trim().is_empty() || a.trim().is_empty() => v.push(Violation {
            field: "base/additive",
            message: "gold labels must be non-empty".into(),
        }),
        _ => {}
    }
    if v.is_empty() {
        Verdict::Ok
    } else {
        Verdict::Invalid(v)
    }
}

/// Product name and description joined as one text.
pub fn combined_text(sample: &DesignSample) -> String {
    let text = format!("{}. {}", sample.name, sample.description);
    text.trim_end().to_string()
}

/// Count sentences: a run of `.`, `!` or `?` ends a sentence when followed
/// by end-of-text or by whitespace and a non-lowercase character.
pub fn count_sentences(text: &str) -> usize {
    let chars: Vec<char> = text.chars().collect();
    let mut count = 0;
    let mut has_content = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if is_terminator(c) {
            let mut j = i;
            while j < chars.len() && is_terminator(chars[j]) {
                j += 1;
            }
            if j == chars.len() {
                if has_content {
                    count += 1;
                    has_content = false;
                }
                break;
            }
            if chars[j].is_whitespace() {
                let mut k = j;
                while k < chars.len() && chars[k].is_whitespace() {
                    k += 1;
                }
                let continues_lower = k < chars.len() && chars[k].is_lowercase();
                if !continues_lower && has_content {
                    count += 1;
                    has_content = false;
                }
            }
            i = j;
            continue;
        }
        if c.is_alphanumeric() {
            has_content = true;
        }
        i += 1;
    }
    if has_content {
        count += 1;
    }
    count
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Fraction of labelled samples whose gold base and additive both occur
/// (case-insensitively) in the combined text.
pub fn gold_substring_rate(samples: &[DesignSample]) -> Option<f64> {
    let labelled: Vec<_> = samples.iter().filter(|s| s.gold_pair().is_some()).collect();
    if labelled.is_empty() {
        return None;
    }
    let hits = labelled
        .iter()
        .filter(|s| {
            let text = combined_text(s).to_lowercase();
            let (b, a) = s.gold_pair().unwrap();
            text.contains(&b.to_lowercase()) && text.contains(&a.to_lowercase())
        })
        .count();
    Some(hits as f64 / labelled.len() as f64)
}
