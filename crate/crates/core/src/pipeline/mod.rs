//! Base/additive interpretation of a single design sample.
//!
//! Every mode answers with an [`InterpretationResult`] whose [`Trace`]
//! records each model call's evidence, so a result can always be audited.

mod batch;
mod chat;
pub mod prompts;

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{
    normalize, Backends, CandidateEntity, ImageInput, LabelPrediction, RelationPrediction,
};
use crate::dataset::{combined_text, DesignSample};
use crate::error::{KernelError, PipelineError};
use crate::kernels::compatibility_score;
use crate::taxonomy::{match_relation, RelationMatch, Taxonomy, DEFAULT_RELATION_THRESHOLD};

pub use batch::{run_batch, SampleOutcome};
pub use chat::{interpret_generative, interpret_vanilla};
pub use prompts::{parse_llm_answer, PromptTemplates};

pub const DEFAULT_K_LABELS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Unimodal,
    Multimodal,
    Generative,
    Vanilla,
    /// Image-free diagnostic that scores every candidate pair.
    RelationPairs,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Unimodal => "unimodal",
            Mode::Multimodal => "multimodal",
            Mode::Generative => "generative",
            Mode::Vanilla => "vanilla",
            Mode::RelationPairs => "relation_pairs",
        }
    }
}

/// Variants of the ablation run without any image input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoImageMode {
    Generative,
    Vanilla,
    RelationPairs,
}

impl NoImageMode {
    pub fn mode(self) -> Mode {
        match self {
            NoImageMode::Generative => Mode::Generative,
            NoImageMode::Vanilla => Mode::Vanilla,
            NoImageMode::RelationPairs => Mode::RelationPairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: CandidateEntity,
    pub score: f64,
}

/// One relation query: the entities asked about, the model's answer and its
/// taxonomy match (absent when the model answered "none").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub head: CandidateEntity,
    pub tail: CandidateEntity,
    pub prediction: RelationPrediction,
    pub relation_match: Option<RelationMatch>,
}

impl RelationRecord {
    fn matched_score(&self) -> Option<f64> {
        self.relation_match
            .as_ref()
            .filter(|m| m.matched)
            .map(|m| m.score)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptReply {
    pub prompt: String,
    pub reply: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub image_labels: Vec<LabelPrediction>,
    pub candidates: Vec<CandidateEntity>,
    pub base_scores: Vec<ScoredCandidate>,
    pub relations: Vec<RelationRecord>,
    pub prompts_and_replies: Vec<PromptReply>,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationResult {
    pub sample_id: String,
    pub mode: Mode,
    pub base: String,
    pub additive: String,
    pub used_image: bool,
    /// Omitted when results are written with the trace elided.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Trace>,
}

impl InterpretationResult {
    fn new(
        sample: &DesignSample,
        mode: Mode,
        base: String,
        additive: String,
        used_image: bool,
        trace: Trace,
    ) -> Result<Self, PipelineError> {
        if normalize(&base) == normalize(&additive) {
            return Err(PipelineError::Input(format!(
                "sample {}: base and additive are both {base:?}",
                sample.id
            )));
        }
        Ok(Self {
            sample_id: sample.id.clone(),
            mode,
            base,
            additive,
            used_image,
            trace: Some(trace),
        })
    }

    pub fn elided(mut self) -> Self {
        self.trace = None;
        self
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub k_labels: usize,
    pub relation_threshold: f64,
    pub taxonomy: Taxonomy,
    pub prompts: PromptTemplates,
    /// Cap on scored pairs in relation-pair mode; pairs beyond it are sampled
    /// with `seed`.
    pub max_pairs: Option<usize>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_labels: DEFAULT_K_LABELS,
            relation_threshold: DEFAULT_RELATION_THRESHOLD,
            taxonomy: Taxonomy::builtin(),
            prompts: PromptTemplates::builtin(),
            max_pairs: None,
            seed: 0,
        }
    }
}

pub(crate) fn sample_image(sample: &DesignSample) -> Result<ImageInput, PipelineError> {
    sample
        .image()
        .map(ImageInput::from)
        .ok_or_else(|| PipelineError::Input(format!("sample {} has no image", sample.id)))
}

fn candidates(
    sample: &DesignSample,
    text: &str,
    backends: &Backends,
) -> Result<Vec<CandidateEntity>, PipelineError> {
    let found = backends
        .extract_entities(text)
        .map_err(PipelineError::backend("extract_entities"))?;
    if found.is_empty() {
        return Err(PipelineError::NoCandidates(sample.id.clone()));
    }
    Ok(found)
}

/// Image labels, then the candidate noun most similar to any label.
pub fn interpret_unimodal(
    sample: &DesignSample,
    backends: &Backends,
    cfg: &PipelineConfig,
) -> Result<InterpretationResult, PipelineError> {
    let image = sample_image(sample)?;
    let labels = backends
        .classify_image(&image, cfg.k_labels)
        .map_err(PipelineError::backend("classify_image"))?;
    if labels.is_empty() {
        return Err(PipelineError::Input(format!(
            "sample {}: image classifier returned no labels",
            sample.id
        )));
    }
    let text = combined_text(sample);
    let cands = candidates(sample, &text, backends)?;

    // (score, confidence of the best label) per candidate
    let mut scored = Vec::with_capacity(cands.len());
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, cand) in cands.iter().enumerate() {
        let mut top: Option<(f64, f64)> = None;
        for label in &labels {
            let s = backends
                .similarity(&cand.text, &label.label)
                .map_err(PipelineError::backend("similarity"))?;
            let better = match top {
                None => true,
                Some((ts, tc)) => s > ts || (s == ts && label.confidence > tc),
            };
            if better {
                top = Some((s, label.confidence));
            }
        }
        let (s, conf) = top.expect("labels are non-empty");
        scored.push(ScoredCandidate {
            candidate: cand.clone(),
            score: s,
        });
        let better = match best {
            None => true,
            Some((_, bs, bc)) => s > bs || (s == bs && conf > bc),
        };
        if better {
            best = Some((i, s, conf));
        }
    }
    let base = cands[best.expect("candidates are non-empty").0].clone();

    let pick = select_additive(&base, &cands, &text, backends, cfg, None)?;
    let trace = Trace {
        image_labels: labels,
        candidates: cands,
        base_scores: scored,
        relations: pick.relations,
        prompts_and_replies: Vec::new(),
        fallback_used: pick.fallback_used,
    };
    InterpretationResult::new(
        sample,
        Mode::Unimodal,
        base.text,
        pick.additive.text,
        true,
        trace,
    )
}

/// Candidate with the highest text–image compatibility as base; relations
/// are extracted with the image attached.
pub fn interpret_multimodal(
    sample: &DesignSample,
    backends: &Backends,
    cfg: &PipelineConfig,
) -> Result<InterpretationResult, PipelineError> {
    let image = sample_image(sample)?;
    let text = combined_text(sample);
    let cands = candidates(sample, &text, backends)?;
    let image_vec = backends
        .embed_image(&image)
        .map_err(PipelineError::backend("embed_image"))?;
    if image_vec.is_zero() {
        return Err(PipelineError::Input(format!(
            "sample {}: image embedding is the zero vector",
            sample.id
        )));
    }

    let mut scored = Vec::with_capacity(cands.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in cands.iter().enumerate() {
        let tv = backends
            .embed_text(&cand.text)
            .map_err(PipelineError::backend("embed_text"))?;
        let s = compatibility_score(&tv, &image_vec).map_err(|e| match e {
            KernelError::Input(_) => PipelineError::Input(format!(
                "sample {}: zero embedding for candidate {:?}",
                sample.id, cand.text
            )),
            other => PipelineError::Kernel(other),
        })?;
        scored.push(ScoredCandidate {
            candidate: cand.clone(),
            score: s,
        });
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    let base = cands[best.expect("candidates are non-empty").0].clone();

    let pick = select_additive(&base, &cands, &text, backends, cfg, Some(&image))?;
    let trace = Trace {
        image_labels: Vec::new(),
        candidates: cands,
        base_scores: scored,
        relations: pick.relations,
        prompts_and_replies: Vec::new(),
        fallback_used: pick.fallback_used,
    };
    InterpretationResult::new(
        sample,
        Mode::Multimodal,
        base.text,
        pick.additive.text,
        true,
        trace,
    )
}

#[derive(Debug, Clone)]
pub struct AdditivePick {
    pub additive: CandidateEntity,
    pub relations: Vec<RelationRecord>,
    pub fallback_used: bool,
}

/// Query the relation between `head` and `tail`; when the model has no
/// relation in that direction, the reverse direction is also tried. Returns
/// the records queried, forward first.
fn relation_records(
    head: &CandidateEntity,
    tail: &CandidateEntity,
    text: &str,
    backends: &Backends,
    cfg: &PipelineConfig,
    image: Option<&ImageInput>,
) -> Result<Vec<RelationRecord>, PipelineError> {
    let mut out = Vec::with_capacity(2);
    for (h, t) in [(head, tail), (tail, head)] {
        let prediction = backends
            .extract_relation(text, &h.text, &t.text, image)
            .map_err(PipelineError::backend("extract_relation"))?;
        let relation_match = if prediction.is_none() {
            None
        } else {
            Some(
                match_relation(
                    &prediction.label,
                    &cfg.taxonomy,
                    backends,
                    cfg.relation_threshold,
                )
                .map_err(|e| PipelineError::Backend {
                    step: "match_relation",
                    source: e.source,
                })?,
            )
        };
        let done = !prediction.is_none();
        out.push(RelationRecord {
            head: h.clone(),
            tail: t.clone(),
            prediction,
            relation_match,
        });
        if done {
            break;
        }
    }
    Ok(out)
}

/// Best record of a query: the highest matched score, else any non-"none"
/// answer, else the forward record.
fn best_record(records: &[RelationRecord]) -> &RelationRecord {
    let key = |r: &RelationRecord| (r.matched_score(), !r.prediction.is_none());
    records
        .iter()
        .reduce(|a, b| {
            if cmp_record_key(key(b), key(a)) == Ordering::Greater {
                b
            } else {
                a
            }
        })
        .expect("at least one record")
}

fn cmp_record_key(a: (Option<f64>, bool), b: (Option<f64>, bool)) -> Ordering {
    match (a.0, b.0) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Greater,
        (None, Some(_)) => Ordering::Less,
        (None, None) => a.1.cmp(&b.1),
    }
}

/// Choose the additive among `candidates` for a fixed base.
///
/// Candidates whose relation to the base matches the taxonomy compete on
/// match score, then relation confidence, then text position. Without any
/// match, the candidate with the most confident non-"none" relation wins;
/// when every relation is "none", the candidate least similar to the base.
pub fn select_additive(
    base: &CandidateEntity,
    candidates: &[CandidateEntity],
    text: &str,
    backends: &Backends,
    cfg: &PipelineConfig,
    image: Option<&ImageInput>,
) -> Result<AdditivePick, PipelineError> {
    let base_norm = normalize(&base.text);
    let others: Vec<&CandidateEntity> = candidates
        .iter()
        .filter(|c| normalize(&c.text) != base_norm)
        .collect();
    if others.is_empty() {
        return Err(PipelineError::NoCandidates(format!(
            "no additive candidate besides the base {:?}",
            base.text
        )));
    }

    let mut relations = Vec::new();
    // (candidate, match score, confidence, has relation)
    let mut evidence: Vec<(&CandidateEntity, Option<f64>, f64, bool)> = Vec::new();
    for cand in &others {
        let recs = relation_records(base, cand, text, backends, cfg, image)?;
        let best = best_record(&recs);
        evidence.push((
            cand,
            best.matched_score(),
            best.prediction.confidence,
            !best.prediction.is_none(),
        ));
        relations.extend(recs);
    }

    let mut matched: Option<(&CandidateEntity, f64, f64)> = None;
    for &(cand, score, conf, _) in &evidence {
        let Some(score) = score else { continue };
        if matched.is_none_or(|(_, s, c)| score > s || (score == s && conf > c)) {
            matched = Some((cand, score, conf));
        }
    }
    if let Some((cand, _, _)) = matched {
        return Ok(AdditivePick {
            additive: cand.clone(),
            relations,
            fallback_used: false,
        });
    }

    let mut related: Option<(&CandidateEntity, f64)> = None;
    for &(cand, _, conf, has) in &evidence {
        if has && related.is_none_or(|(_, c)| conf > c) {
            related = Some((cand, conf));
        }
    }
    let additive = match related {
        Some((cand, _)) => cand.clone(),
        None => {
            let mut least: Option<(&CandidateEntity, f64)> = None;
            for cand in &others {
                let s = backends
                    .similarity(&base.text, &cand.text)
                    .map_err(PipelineError::backend("similarity"))?;
                if least.is_none_or(|(_, l)| s < l) {
                    least = Some((cand, s));
                }
            }
            least.expect("others are non-empty").0.clone()
        }
    };
    Ok(AdditivePick {
        additive,
        relations,
        fallback_used: true,
    })
}

/// Every unordered pair of candidates, ordered lexicographically by the
/// spans of its members (which come first by span).
pub fn enumerate_candidate_pairs(
    candidates: &[CandidateEntity],
) -> Result<Vec<(CandidateEntity, CandidateEntity)>, PipelineError> {
    if candidates.len() < 2 {
        return Err(PipelineError::Input(format!(
            "pair enumeration needs at least 2 candidates, got {}",
            candidates.len()
        )));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| a.span.cmp(&b.span).then_with(|| a.text.cmp(&b.text)));
    let mut pairs = Vec::with_capacity(sorted.len() * (sorted.len() - 1) / 2);
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            pairs.push((sorted[i].clone(), sorted[j].clone()));
        }
    }
    Ok(pairs)
}

/// Deterministic per-sample subset of `pairs` when a cap is configured.
fn sample_pairs<T: Clone>(pairs: Vec<T>, cfg: &PipelineConfig, sample_id: &str) -> Vec<T> {
    let Some(cap) = cfg.max_pairs else {
        return pairs;
    };
    if pairs.len() <= cap {
        return pairs;
    }
    let mut h = Sha256::new();
    h.update(cfg.seed.to_le_bytes());
    h.update(sample_id.as_bytes());
    let seed: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut idx = rand::seq::index::sample(&mut rng, pairs.len(), cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pairs[i].clone()).collect()
}

/// Score the relation of every (sampled) pair of candidates, with the image
/// attached for multimodal relation models.
pub fn score_pairs(
    sample_id: &str,
    cands: &[CandidateEntity],
    text: &str,
    backends: &Backends,
    cfg: &PipelineConfig,
    image: Option<&ImageInput>,
) -> Result<Vec<Vec<RelationRecord>>, PipelineError> {
    let pairs = sample_pairs(enumerate_candidate_pairs(cands)?, cfg, sample_id);
    pairs
        .iter()
        .filter(|(a, b)| normalize(&a.text) != normalize(&b.text))
        .map(|(a, b)| relation_records(a, b, text, backends, cfg, image))
        .collect()
}

/// `(base, additive)` of a pair record: the relation's head is the base.
fn orient(rec: &RelationRecord) -> (CandidateEntity, CandidateEntity) {
    let head = normalize(&rec.prediction.head);
    if !rec.prediction.is_none() && head == normalize(&rec.tail.text) {
        (rec.tail.clone(), rec.head.clone())
    } else {
        (rec.head.clone(), rec.tail.clone())
    }
}

fn interpret_relation_pairs(
    sample: &DesignSample,
    backends: &Backends,
    cfg: &PipelineConfig,
) -> Result<InterpretationResult, PipelineError> {
    let text = combined_text(sample);
    let cands = candidates(sample, &text, backends)?;
    let scored = score_pairs(&sample.id, &cands, &text, backends, cfg, None)?;
    if scored.is_empty() {
        return Err(PipelineError::NoCandidates(sample.id.clone()));
    }

    let mut matched: Option<(&RelationRecord, f64)> = None;
    let mut related: Option<(&RelationRecord, f64)> = None;
    for recs in &scored {
        let rec = best_record(recs);
        let conf = rec.prediction.confidence;
        if let Some(s) = rec.matched_score() {
            let better =
                matched.is_none_or(|(m, ms)| s > ms || (s == ms && conf > m.prediction.confidence));
            if better {
                matched = Some((rec, s));
            }
        }
        if !rec.prediction.is_none() && related.is_none_or(|(_, c)| conf > c) {
            related = Some((rec, conf));
        }
    }

    let (base, additive, fallback_used) = if let Some((rec, _)) = matched {
        let (b, a) = orient(rec);
        (b, a, false)
    } else if let Some((rec, _)) = related {
        let (b, a) = orient(rec);
        (b, a, true)
    } else {
        let mut least: Option<(&RelationRecord, f64)> = None;
        for recs in &scored {
            let r = &recs[0];
            let s = backends
                .similarity(&r.head.text, &r.tail.text)
                .map_err(PipelineError::backend("similarity"))?;
            if least.is_none_or(|(_, l)| s < l) {
                least = Some((r, s));
            }
        }
        let r = least.expect("scored is non-empty").0;
        (r.head.clone(), r.tail.clone(), true)
    };

    let trace = Trace {
        candidates: cands,
        relations: scored.into_iter().flatten().collect(),
        fallback_used,
        ..Trace::default()
    };
    InterpretationResult::new(
        sample,
        Mode::RelationPairs,
        base.text,
        additive.text,
        false,
        trace,
    )
}

/// Run a mode with no image input at all.
pub fn interpret_no_image(
    sample: &DesignSample,
    backends: &Backends,
    cfg: &PipelineConfig,
    mode: NoImageMode,
) -> Result<InterpretationResult, PipelineError> {
    match mode {
        NoImageMode::Generative => chat::interpret_generative_text_only(sample, backends, cfg),
        NoImageMode::Vanilla => chat::vanilla(sample, backends, cfg, false),
        NoImageMode::RelationPairs => interpret_relation_pairs(sample, backends, cfg),
    }
}

/// Dispatch one sample to a with-image mode.
pub fn interpret(
    sample: &DesignSample,
    backends: &Backends,
    cfg: &PipelineConfig,
    mode: Mode,
) -> Result<InterpretationResult, PipelineError> {
    match mode {
        Mode::Unimodal => interpret_unimodal(sample, backends, cfg),
        Mode::Multimodal => interpret_multimodal(sample, backends, cfg),
        Mode::Generative => interpret_generative(sample, backends, cfg),
        Mode::Vanilla => interpret_vanilla(sample, backends, cfg),
        Mode::RelationPairs => interpret_relation_pairs(sample, backends, cfg),
    }
}
