//! Scoring predictions against gold labels and rendering reports.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backends, CandidateEntity, ImageInput};
use crate::dataset::{combined_text, DesignSample};
use crate::error::PipelineError;
use crate::pipeline::{score_pairs, InterpretationResult, Mode, PipelineConfig, Trace};

/// Default similarity at which an image label counts as naming the base.
pub const DEFAULT_IMAGE_MATCH_THRESHOLD: f64 = 0.75;

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "nor", "but", "of", "in", "on", "at", "to", "for", "with", "by",
    "from", "into", "onto", "as", "about", "over", "under", "via", "per",
];

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("{0}")]
    Input(String),
    #[error("sample {sample}: {source}")]
    Backend {
        sample: String,
        #[source]
        source: PipelineError,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchOptions {
    /// Treat a trailing plural "s" as insignificant. Off by default.
    pub fold_plural: bool,
}

fn keywords(s: &str, opts: MatchOptions) -> BTreeSet<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !STOPWORDS.contains(t))
        .map(|t| {
            if opts.fold_plural && t.len() > 3 && t.ends_with('s') && !t.ends_with("ss") {
                t[..t.len() - 1].to_string()
            } else {
                t.to_string()
            }
        })
        .collect()
}

/// A prediction is correct when it shares at least one keyword with the gold
/// label. Keywords are lowercase alphanumeric tokens minus stopwords.
pub fn match_label(predicted: &str, gold: &str) -> bool {
    match_label_with(predicted, gold, MatchOptions::default())
}

pub fn match_label_with(predicted: &str, gold: &str, opts: MatchOptions) -> bool {
    let g = keywords(gold, opts);
    if g.is_empty() {
        // a gold label made only of stopwords or punctuation
        let norm = |s: &str| {
            s.split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .to_lowercase()
        };
        return !gold.trim().is_empty() && norm(predicted) == norm(gold);
    }
    !keywords(predicted, opts).is_disjoint(&g)
}

/// Predicted base and additive are each other's gold labels, and the pair is
/// not simply correct.
pub fn detect_reversal(predicted: (&str, &str), gold: (&str, &str)) -> bool {
    detect_reversal_with(predicted, gold, MatchOptions::default())
}

fn detect_reversal_with(predicted: (&str, &str), gold: (&str, &str), opts: MatchOptions) -> bool {
    let straight =
        match_label_with(predicted.0, gold.0, opts) && match_label_with(predicted.1, gold.1, opts);
    let swapped =
        match_label_with(predicted.0, gold.1, opts) && match_label_with(predicted.1, gold.0, opts);
    swapped && !straight
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountingMode {
    /// Reversed pairs count as wrong.
    #[default]
    Strict,
    /// Reversed pairs count as both correct.
    ReversalOk,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleVerdict {
    pub sample_id: String,
    pub base_correct: bool,
    pub additive_correct: bool,
    pub reversed: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n: usize,
    pub both: usize,
    pub none: usize,
    pub base: usize,
    pub additive: usize,
    pub reversed: usize,
}

impl Counts {
    fn add(mut self, v: &SampleVerdict) -> Self {
        self.n += 1;
        self.both += usize::from(v.base_correct && v.additive_correct);
        self.none += usize::from(!v.base_correct && !v.additive_correct);
        self.base += usize::from(v.base_correct);
        self.additive += usize::from(v.additive_correct);
        self.reversed += usize::from(v.reversed);
        self
    }
}

/// `count / n` as a percentage in tenths, rounded half-up.
pub fn percent_tenths(count: usize, n: usize) -> u64 {
    if n == 0 {
        return 0;
    }
    let (c, n) = (count as u128, n as u128);
    ((2 * c * 1000 + n) / (2 * n)) as u64
}

/// One decimal place, half-up.
pub fn format_percent(count: usize, n: usize) -> String {
    let t = percent_tenths(count, n);
    format!("{}.{}%", t / 10, t % 10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n: usize,
    pub both_pct: f64,
    pub none_pct: f64,
    pub base_pct: f64,
    pub additive_pct: f64,
    pub reversal_pct: f64,
    pub counts: Counts,
    pub verdicts: Vec<SampleVerdict>,
    pub counting_mode: CountingMode,
}

impl EvaluationReport {
    pub fn from_verdicts(verdicts: Vec<SampleVerdict>, counting_mode: CountingMode) -> Self {
        let counts = verdicts.iter().fold(Counts::default(), Counts::add);
        let mut r = Self::from_counts(counts, counting_mode);
        r.verdicts = verdicts;
        r
    }

    /// A report from aggregate counts alone, without per-sample verdicts.
    pub fn from_counts(counts: Counts, counting_mode: CountingMode) -> Self {
        let pct = |c| percent_tenths(c, counts.n) as f64 / 10.0;
        Self {
            n: counts.n,
            both_pct: pct(counts.both),
            none_pct: pct(counts.none),
            base_pct: pct(counts.base),
            additive_pct: pct(counts.additive),
            reversal_pct: pct(counts.reversed),
            counts,
            verdicts: Vec::new(),
            counting_mode,
        }
    }
}

fn gold_index(golds: &[DesignSample]) -> HashMap<&str, &DesignSample> {
    golds.iter().map(|s| (s.id.as_str(), s)).collect()
}

fn gold_for<'a>(
    index: &HashMap<&str, &'a DesignSample>,
    id: &str,
) -> Result<(&'a str, &'a str), EvaluationError> {
    index
        .get(id)
        .ok_or_else(|| EvaluationError::Input(format!("sample {id} is not in the dataset")))?
        .gold_pair()
        .ok_or_else(|| EvaluationError::Input(format!("sample {id} has no gold labels")))
}

pub fn verdict(
    result: &InterpretationResult,
    gold: (&str, &str),
    mode: CountingMode,
    opts: MatchOptions,
) -> SampleVerdict {
    let reversed = detect_reversal_with((&result.base, &result.additive), gold, opts);
    let ok = mode == CountingMode::ReversalOk && reversed;
    SampleVerdict {
        sample_id: result.sample_id.clone(),
        base_correct: ok || match_label_with(&result.base, gold.0, opts),
        additive_correct: ok || match_label_with(&result.additive, gold.1, opts),
        reversed,
    }
}

pub fn evaluate_run(
    results: &[InterpretationResult],
    golds: &[DesignSample],
    mode: CountingMode,
) -> Result<EvaluationReport, EvaluationError> {
    evaluate_run_with(results, golds, mode, MatchOptions::default())
}

pub fn evaluate_run_with(
    results: &[InterpretationResult],
    golds: &[DesignSample],
    mode: CountingMode,
    opts: MatchOptions,
) -> Result<EvaluationReport, EvaluationError> {
    let index = gold_index(golds);
    let mut seen = HashSet::new();
    let mut verdicts = Vec::with_capacity(results.len());
    for r in results {
        if !seen.insert(r.sample_id.as_str()) {
            return Err(EvaluationError::Input(format!(
                "sample {} appears more than once in the results",
                r.sample_id
            )));
        }
        verdicts.push(verdict(r, gold_for(&index, &r.sample_id)?, mode, opts));
    }
    if opts.fold_plural {
        log::info!("plural folding is enabled for label matching");
    }
    Ok(EvaluationReport::from_verdicts(verdicts, mode))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    Image,
    Entity,
    Relation,
}

impl Module {
    pub fn title(self) -> &'static str {
        match self {
            Module::Image => "Image interpretation",
            Module::Entity => "Noun entity extraction",
            Module::Relation => "Relation extraction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleVerdict {
    pub sample_id: String,
    pub image: bool,
    pub entity: bool,
    pub relation: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleRow {
    pub module: String,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModularReport {
    pub n: usize,
    pub rows: Vec<ModuleRow>,
    pub verdicts: Vec<ModuleVerdict>,
}

impl ModularReport {
    pub fn from_verdicts(verdicts: Vec<ModuleVerdict>) -> Self {
        let n = verdicts.len();
        let count = |f: fn(&ModuleVerdict) -> bool| verdicts.iter().filter(|v| f(v)).count();
        let rows = vec![
            ModuleRow {
                module: Module::Image.title().to_string(),
                correct: count(|v| v.image),
                total: n,
            },
            ModuleRow {
                module: Module::Entity.title().to_string(),
                correct: count(|v| v.entity),
                total: n,
            },
            ModuleRow {
                module: Module::Relation.title().to_string(),
                correct: count(|v| v.relation),
                total: n,
            },
        ];
        Self { n, rows, verdicts }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModularConfig {
    pub image_threshold: f64,
    pub match_options: MatchOptions,
}

impl Default for ModularConfig {
    fn default() -> Self {
        Self {
            image_threshold: DEFAULT_IMAGE_MATCH_THRESHOLD,
            match_options: MatchOptions::default(),
        }
    }
}

fn image_module(
    trace: &Trace,
    gold_base: &str,
    backends: &Backends,
    cfg: &ModularConfig,
) -> Result<bool, PipelineError> {
    if !trace.image_labels.is_empty() {
        for l in &trace.image_labels {
            let s = backends
                .similarity(&l.label, gold_base)
                .map_err(PipelineError::backend("similarity"))?;
            if s >= cfg.image_threshold {
                return Ok(true);
            }
        }
        return Ok(false);
    }
    // Embedding-based traces have no labels; the best-scoring candidate is
    // the image module's answer.
    let top = trace
        .base_scores
        .iter()
        .reduce(|a, b| if b.score > a.score { b } else { a });
    Ok(top.is_some_and(|t| match_label_with(&t.candidate.text, gold_base, cfg.match_options)))
}

fn relation_module(
    sample: &DesignSample,
    mode: Mode,
    cands: &[CandidateEntity],
    gold: (&str, &str),
    backends: &Backends,
    pipeline: &PipelineConfig,
    opts: MatchOptions,
) -> Result<bool, PipelineError> {
    if cands.len() < 2 {
        return Ok(false);
    }
    let text = combined_text(sample);
    let image = match mode {
        Mode::Multimodal => sample.image().map(ImageInput::from),
        _ => None,
    };
    let scored = score_pairs(&sample.id, cands, &text, backends, pipeline, image.as_ref())?;
    let m = |p: &str, g: &str| match_label_with(p, g, opts);
    Ok(scored.iter().flatten().any(|r| {
        r.relation_match.as_ref().is_some_and(|x| x.matched)
            && ((m(&r.head.text, gold.0) && m(&r.tail.text, gold.1))
                || (m(&r.head.text, gold.1) && m(&r.tail.text, gold.0)))
    }))
}

/// Per-module diagnostics over traced results: the image module names the
/// base, the entity extractor finds the additive, and some taxonomy-matched
/// candidate pair is the gold pair in either orientation. Pairs of
/// multimodal results are scored with the image attached.
pub fn modular_eval(
    results: &[InterpretationResult],
    golds: &[DesignSample],
    backends: &Backends,
    pipeline: &PipelineConfig,
    cfg: &ModularConfig,
) -> Result<ModularReport, EvaluationError> {
    let index = gold_index(golds);
    let mut verdicts = Vec::with_capacity(results.len());
    for r in results {
        let gold = gold_for(&index, &r.sample_id)?;
        let sample = index[r.sample_id.as_str()];
        let trace = r.trace.as_ref().ok_or_else(|| {
            EvaluationError::Input(format!("result for sample {} has no trace", r.sample_id))
        })?;
        if trace.image_labels.is_empty() && trace.base_scores.is_empty() {
            return Err(EvaluationError::Input(format!(
                "trace of sample {} has neither image labels nor base scores",
                r.sample_id
            )));
        }
        let wrap = |source| EvaluationError::Backend {
            sample: r.sample_id.clone(),
            source,
        };
        let image = image_module(trace, gold.0, backends, cfg).map_err(wrap)?;
        let entity = trace
            .candidates
            .iter()
            .any(|c| match_label_with(&c.text, gold.1, cfg.match_options));
        let relation = relation_module(
            sample,
            r.mode,
            &trace.candidates,
            gold,
            backends,
            pipeline,
            cfg.match_options,
        )
        .map_err(wrap)?;
        verdicts.push(ModuleVerdict {
            sample_id: r.sample_id.clone(),
            image,
            entity,
            relation,
        });
    }
    Ok(ModularReport::from_verdicts(verdicts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportStyle {
    Table3,
    Table4,
    Table5,
}

fn no_samples_note(out: &mut String, n: usize) {
    if n == 0 {
        out.push_str("\nn = 0: no samples were scored.\n");
    }
}

/// Overall and single measures, one row per labelled report.
pub fn render_accuracy_table(style: ReportStyle, rows: &[(&str, &EvaluationReport)]) -> String {
    let first = if style == ReportStyle::Table5 {
        "Setting"
    } else {
        "Method"
    };
    let mut out =
        format!("| {first} | Both↑ | None↓ | Base↑ | Additive↑ |\n|---|---|---|---|---|\n");
    for (label, r) in rows.iter().filter(|(_, r)| r.n > 0) {
        let c = &r.counts;
        let _ = writeln!(
            out,
            "| {label} | {} | {} | {} | {} |",
            format_percent(c.both, c.n),
            format_percent(c.none, c.n),
            format_percent(c.base, c.n),
            format_percent(c.additive, c.n),
        );
    }
    let total: usize = rows.iter().map(|(_, r)| r.n).sum();
    no_samples_note(&mut out, total);
    if let Some((_, r)) = rows.iter().find(|(_, r)| r.n > 0) {
        let _ = writeln!(
            out,
            "\nn = {}; counting mode: {}",
            r.n,
            match r.counting_mode {
                CountingMode::Strict => "strict",
                CountingMode::ReversalOk => "reversal_ok",
            }
        );
    }
    out
}

pub fn render_modular_table(report: &ModularReport) -> String {
    let mut out = String::from("| Module | Correct | Accuracy |\n|---|---|---|\n");
    if report.n > 0 {
        for row in &report.rows {
            let _ = writeln!(
                out,
                "| {} | {} / {} | {} |",
                row.module,
                row.correct,
                row.total,
                format_percent(row.correct, row.total)
            );
        }
    }
    no_samples_note(&mut out, report.n);
    out
}

/// Single-report convenience for the accuracy layouts.
pub fn render_report(report: &EvaluationReport, label: &str, style: ReportStyle) -> String {
    match style {
        ReportStyle::Table4 => {
            let c = &report.counts;
            let row = |name: &str, correct| ModuleRow {
                module: format!("{label}: {name}"),
                correct,
                total: c.n,
            };
            render_modular_table(&ModularReport {
                n: c.n,
                rows: vec![
                    row("base", c.base),
                    row("additive", c.additive),
                    row("both", c.both),
                ],
                verdicts: Vec::new(),
            })
        }
        _ => render_accuracy_table(style, &[(label, report)]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_matching_rules() {
        assert!(match_label("tree", "Tree"));
        assert!(match_label("rack stand", "Drying Rack"));
        assert!(!match_label("fork", "Tree"));
        assert!(!match_label("the", "The Rack"));
        assert!(match_label(" DRYING   rack ", "drying rack"));
    }

    #[test]
    fn plural_fold_is_opt_in() {
        assert!(!match_label("trees", "tree"));
        let fold = MatchOptions { fold_plural: true };
        assert!(match_label_with("trees", "tree", fold));
        assert!(!match_label_with("glass", "glas", fold));
    }

    #[test]
    fn reversal_examples() {
        assert!(detect_reversal(
            ("tree", "drying rack"),
            ("Drying Rack", "Tree")
        ));
        assert!(!detect_reversal(
            ("drying rack", "tree"),
            ("Drying Rack", "Tree")
        ));
        assert!(detect_reversal(("fork", "spoon"), ("spoon", "fork")));
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(format_percent(1, 8), "12.5%");
        assert_eq!(format_percent(1, 3), "33.3%");
        assert_eq!(format_percent(2, 3), "66.7%");
        assert_eq!(format_percent(1, 16), "6.3%"); // 6.25
        assert_eq!(format_percent(9, 200), "4.5%");
        assert_eq!(format_percent(138, 200), "69.0%");
        assert_eq!(format_percent(0, 0), "0.0%");
    }

    #[test]
    fn empty_tables_carry_note() {
        let r = EvaluationReport::from_verdicts(Vec::new(), CountingMode::Strict);
        let t = render_report(&r, "x", ReportStyle::Table3);
        assert!(t.starts_with("| Method | Both↑"));
        assert!(t.contains("n = 0"));
        assert_eq!(t.lines().filter(|l| l.starts_with("| x")).count(), 0);
        let m = render_modular_table(&ModularReport::from_verdicts(Vec::new()));
        assert!(m.contains("n = 0"));
    }
}
