use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use blendscope::backends::{Backends, BackendsFile, ResponseCache};
use blendscope::dataset::{load_dataset, DesignSample};
use blendscope::evaluation::{
    evaluate_run_with, modular_eval, render_accuracy_table, render_modular_table, render_report,
    EvaluationReport, ModularConfig, ModularReport, ReportStyle,
};
use blendscope::pipeline::{
    interpret, interpret_no_image, run_batch, InterpretationResult, Mode, NoImageMode,
    PipelineConfig, SampleOutcome,
};
use clap::ValueEnum;
use serde_json::json;

use crate::config::RunConfig;

/// Exit status when at least one sample failed.
pub const EXIT_SAMPLE_FAILURES: u8 = 1;
/// Exit status when a run was interrupted before every sample finished.
pub const EXIT_INTERRUPTED: u8 = 130;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CacheAction {
    List,
    Clear,
    Stats,
}

fn cancel_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let handler_flag = flag.clone();
    if let Err(e) = ctrlc::set_handler(move || {
        if !handler_flag.swap(true, Ordering::SeqCst) {
            eprintln!("interrupted: finishing in-flight samples");
        }
    }) {
        log::warn!("cannot install Ctrl-C handler: {e}");
    }
    flag
}

fn open_backends(cfg: &RunConfig) -> Result<Backends> {
    let path = cfg.backends()?;
    let file = BackendsFile::load(path)?;
    let mut builder = file.build(cfg.cache_dir.as_deref(), cfg.use_cache)?;
    if cfg.record.is_some() {
        builder = builder.record();
    }
    Ok(builder.build())
}

fn finish_backends(cfg: &RunConfig, backends: &Backends) -> Result<()> {
    if let Some(path) = &cfg.record {
        backends.write_recording(path)?;
        log::info!("recorded backend exchanges to {}", path.display());
    }
    for cache in backends.caches() {
        let s = cache.finish_run()?;
        log::info!(
            "cache {}: {} hits, {} misses this run",
            cache.dir().display(),
            s.last_run_hits,
            s.last_run_misses
        );
    }
    Ok(())
}

/// Outcome of a batch, with failures and skips already reported.
struct Batch {
    results: Vec<InterpretationResult>,
    failed: Vec<String>,
    skipped: usize,
}

fn run(
    samples: &[DesignSample],
    cfg: &RunConfig,
    cancel: &AtomicBool,
    f: impl Fn(&DesignSample) -> Result<InterpretationResult, blendscope::error::PipelineError> + Sync,
) -> Result<Batch> {
    let mut batch = Batch {
        results: Vec::new(),
        failed: Vec::new(),
        skipped: 0,
    };
    for outcome in run_batch(samples, cfg.workers, cancel, f)? {
        match outcome {
            SampleOutcome::Done(r) => batch.results.push(r),
            SampleOutcome::Failed { sample_id, error } => {
                eprintln!("sample {sample_id} failed: {error}");
                batch.failed.push(sample_id);
            }
            SampleOutcome::Skipped { .. } => batch.skipped += 1,
        }
    }
    Ok(batch)
}

fn exit_code(batch: &Batch) -> ExitCode {
    if !batch.failed.is_empty() {
        eprintln!(
            "{} sample(s) failed: {}",
            batch.failed.len(),
            batch.failed.join(", ")
        );
    }
    if batch.skipped > 0 {
        ExitCode::from(EXIT_INTERRUPTED)
    } else if !batch.failed.is_empty() {
        ExitCode::from(EXIT_SAMPLE_FAILURES)
    } else {
        ExitCode::SUCCESS
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

/// Results in the line-delimited form read back by `read_results`. An
/// interrupted run ends with a `{"truncated":true,...}` marker line.
fn write_results(out: &mut dyn Write, batch: &Batch, total: usize, elide: bool) -> Result<()> {
    for r in &batch.results {
        let r = if elide { r.clone().elided() } else { r.clone() };
        writeln!(out, "{}", serde_json::to_string(&r)?)?;
    }
    if batch.skipped > 0 {
        let marker = json!({
            "truncated": true,
            "completed": batch.results.len(),
            "failed": batch.failed.len(),
            "total": total,
        });
        writeln!(out, "{marker}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<InterpretationResult>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading results {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: not JSON", path.display(), i + 1))?;
        if value.get("truncated").and_then(|v| v.as_bool()) == Some(true) {
            log::warn!("{} is from an interrupted run: {value}", path.display());
            continue;
        }
        out.push(
            serde_json::from_value(value)
                .with_context(|| format!("{}:{}: not a result record", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn results_path<'a>(explicit: Option<&'a Path>, cfg: &'a RunConfig) -> Result<&'a Path> {
    explicit
        .or(cfg.output.as_deref())
        .context("no results file given (--results)")
}

fn run_label(results: &[InterpretationResult]) -> String {
    let mut modes: Vec<Mode> = results.iter().map(|r| r.mode).collect();
    modes.sort();
    modes.dedup();
    match modes.as_slice() {
        [m] => m.name().to_string(),
        [] => "none".to_string(),
        _ => "mixed".to_string(),
    }
}

pub fn cmd_interpret(cfg: &RunConfig) -> Result<ExitCode> {
    let samples = load_dataset(cfg.dataset()?)?;
    let pipeline = cfg.pipeline()?;
    let backends = open_backends(cfg)?;
    let mut out = open_output(cfg.output.as_deref())?;
    let cancel = cancel_flag();
    let mode = cfg.mode;
    let batch = run(&samples, cfg, &cancel, |s| {
        interpret(s, &backends, &pipeline, mode)
    })?;
    write_results(out.as_mut(), &batch, samples.len(), cfg.elide_trace)?;
    finish_backends(cfg, &backends)?;
    Ok(exit_code(&batch))
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    results: Option<&Path>,
    report_json: Option<&Path>,
) -> Result<ExitCode> {
    let samples = load_dataset(cfg.dataset()?)?;
    let results = read_results(results_path(results, cfg)?)?;
    let report = evaluate_run_with(&results, &samples, cfg.counting_mode, cfg.match_options)?;
    print!(
        "{}",
        render_report(&report, &run_label(&results), ReportStyle::Table3)
    );
    if let Some(path) = report_json {
        write_json(path, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_modular(
    cfg: &RunConfig,
    results: Option<&Path>,
    report_json: Option<&Path>,
) -> Result<ExitCode> {
    let samples = load_dataset(cfg.dataset()?)?;
    let results = read_results(results_path(results, cfg)?)?;
    let traced = results.iter().filter(|r| r.trace.is_some()).count();
    let report = if traced == 0 {
        log::warn!("no result carries a trace; rerun interpret without --elide-trace");
        eprintln!("warning: no traced results to analyse");
        ModularReport::from_verdicts(Vec::new())
    } else {
        let backends = open_backends(cfg)?;
        let modular = ModularConfig {
            image_threshold: cfg.image_threshold,
            match_options: cfg.match_options,
        };
        let report = modular_eval(&results, &samples, &backends, &cfg.pipeline()?, &modular)?;
        finish_backends(cfg, &backends)?;
        report
    };
    print!("{}", render_modular_table(&report));
    if let Some(path) = report_json {
        write_json(path, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

/// With-image counterpart of each image-free variant.
fn paired_mode(mode: NoImageMode) -> Mode {
    match mode {
        NoImageMode::Generative => Mode::Generative,
        NoImageMode::Vanilla => Mode::Vanilla,
        NoImageMode::RelationPairs => Mode::Unimodal,
    }
}

pub fn cmd_ablate(
    cfg: &RunConfig,
    variant: NoImageMode,
    out_dir: Option<&Path>,
) -> Result<ExitCode> {
    let samples = load_dataset(cfg.dataset()?)?;
    let pipeline: PipelineConfig = cfg.pipeline()?;
    let backends = open_backends(cfg)?;
    let cancel = cancel_flag();
    let with_mode = paired_mode(variant);
    let with = run(&samples, cfg, &cancel, |s| {
        interpret(s, &backends, &pipeline, with_mode)
    })?;
    let without = run(&samples, cfg, &cancel, |s| {
        interpret_no_image(s, &backends, &pipeline, variant)
    })?;
    finish_backends(cfg, &backends)?;

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        for (name, batch) in [
            ("with_image.jsonl", &with),
            ("without_image.jsonl", &without),
        ] {
            let mut f = open_output(Some(&dir.join(name)))?;
            write_results(f.as_mut(), batch, samples.len(), cfg.elide_trace)?;
        }
    }

    let evaluate = |b: &Batch| -> Result<EvaluationReport> {
        Ok(evaluate_run_with(
            &b.results,
            &samples,
            cfg.counting_mode,
            cfg.match_options,
        )?)
    };
    let (w, wo) = (evaluate(&with)?, evaluate(&without)?);
    println!(
        "Ablation: {} with image vs {} without image",
        with_mode.name(),
        variant.mode().name()
    );
    print!(
        "{}",
        render_accuracy_table(ReportStyle::Table5, &[("w/ image", &w), ("w/o image", &wo)])
    );
    let combined = Batch {
        failed: with.failed.iter().chain(&without.failed).cloned().collect(),
        skipped: with.skipped + without.skipped,
        results: Vec::new(),
    };
    Ok(exit_code(&combined))
}

fn cache_dirs(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    if let Some(d) = &cfg.cache_dir {
        return Ok(vec![d.clone()]);
    }
    let dirs = BackendsFile::load(cfg.backends()?)?.cache_dirs();
    if dirs.is_empty() {
        bail!("no cache directory: pass --cache-dir or set cache_dir in the backends file");
    }
    Ok(dirs)
}

pub fn cmd_cache(cfg: &RunConfig, action: CacheAction) -> Result<ExitCode> {
    for dir in cache_dirs(cfg)? {
        let cache = ResponseCache::open(&dir)?;
        match action {
            CacheAction::List => {
                for (op, digest) in cache.list()? {
                    println!("{op}\t{digest}");
                }
            }
            CacheAction::Clear => {
                let n = cache.clear()?;
                println!("removed {n} entries from {}", dir.display());
            }
            CacheAction::Stats => {
                let s = cache.stats()?;
                println!(
                    "{}: entries={} total_hits={} total_misses={} last_run_hits={} last_run_misses={}",
                    dir.display(),
                    s.entries,
                    s.total_hits,
                    s.total_misses,
                    s.last_run_hits,
                    s.last_run_misses
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
