//! Run configuration: an optional TOML file overridden flag by flag.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blendscope::evaluation::{CountingMode, MatchOptions, DEFAULT_IMAGE_MATCH_THRESHOLD};
use blendscope::pipeline::{Mode, PipelineConfig, PromptTemplates, DEFAULT_K_LABELS};
use blendscope::taxonomy::{Taxonomy, DEFAULT_RELATION_THRESHOLD};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::Deserialize;

/// Flags shared by every subcommand. Each one mirrors a key of the config
/// file and wins over it.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML file with defaults for any of the flags below.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset manifest (line-delimited JSON).
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Backends TOML file.
    #[arg(long, value_name = "FILE")]
    pub backends: Option<PathBuf>,
    /// unimodal | multimodal | generative | vanilla | relation_pairs
    #[arg(long, value_parser = parse_enum::<Mode>)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub k_labels: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub relation_threshold: Option<f64>,
    /// Similarity needed for an image label to count as the base (modular).
    #[arg(long, allow_negative_numbers = true)]
    pub image_threshold: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// strict | reversal_ok
    #[arg(long, value_parser = parse_enum::<CountingMode>)]
    pub counting_mode: Option<CountingMode>,
    /// Treat a trailing plural "s" as insignificant when matching labels.
    #[arg(long)]
    pub fold_plural: bool,
    /// Results file to write (interpret) or the default for --results.
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// Response cache directory; overrides the backends file.
    #[arg(long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Bypass every response cache.
    #[arg(long)]
    pub no_cache: bool,
    /// Write every backend exchange to this replay archive.
    #[arg(long, value_name = "FILE")]
    pub record: Option<PathBuf>,
    /// Seed for sampled candidate pairs.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Score at most this many candidate pairs per sample (relation_pairs).
    #[arg(long)]
    pub max_pairs: Option<usize>,
    /// Directory of `<template>.txt` files replacing the builtin prompts.
    #[arg(long, value_name = "DIR")]
    pub prompts_dir: Option<PathBuf>,
    /// Extra relation entries appended to the builtin taxonomy.
    #[arg(long, value_name = "FILE")]
    pub taxonomy: Option<PathBuf>,
    /// Omit evidence traces from written results.
    #[arg(long)]
    pub elide_trace: bool,
}

/// Parse a snake_case enum value through its serde representation.
pub fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown value {s:?}"))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<PathBuf>,
    backends: Option<PathBuf>,
    mode: Option<Mode>,
    k_labels: Option<usize>,
    relation_threshold: Option<f64>,
    image_threshold: Option<f64>,
    workers: Option<usize>,
    counting_mode: Option<CountingMode>,
    fold_plural: Option<bool>,
    output: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    no_cache: Option<bool>,
    record: Option<PathBuf>,
    seed: Option<u64>,
    max_pairs: Option<usize>,
    prompts_dir: Option<PathBuf>,
    taxonomy: Option<PathBuf>,
    elide_trace: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub backends: Option<PathBuf>,
    pub mode: Mode,
    pub k_labels: usize,
    pub relation_threshold: f64,
    pub image_threshold: f64,
    pub workers: usize,
    pub counting_mode: CountingMode,
    pub match_options: MatchOptions,
    pub output: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub use_cache: bool,
    pub record: Option<PathBuf>,
    pub seed: u64,
    pub max_pairs: Option<usize>,
    pub prompts_dir: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub elide_trace: bool,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let (file, base) = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let file: FileConfig = toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?;
                (
                    file,
                    path.parent().map(Path::to_path_buf).unwrap_or_default(),
                )
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        // paths in the config file are relative to the file
        let rel = |p: Option<PathBuf>| p.map(|p| base.join(p));
        let cfg = Self {
            dataset: args.dataset.clone().or(rel(file.dataset)),
            backends: args.backends.clone().or(rel(file.backends)),
            mode: args.mode.or(file.mode).unwrap_or(Mode::Multimodal),
            k_labels: args.k_labels.or(file.k_labels).unwrap_or(DEFAULT_K_LABELS),
            relation_threshold: args
                .relation_threshold
                .or(file.relation_threshold)
                .unwrap_or(DEFAULT_RELATION_THRESHOLD),
            image_threshold: args
                .image_threshold
                .or(file.image_threshold)
                .unwrap_or(DEFAULT_IMAGE_MATCH_THRESHOLD),
            workers: args
                .workers
                .or(file.workers)
                .unwrap_or_else(default_workers),
            counting_mode: args
                .counting_mode
                .or(file.counting_mode)
                .unwrap_or_default(),
            match_options: MatchOptions {
                fold_plural: args.fold_plural || file.fold_plural.unwrap_or(false),
            },
            output: args.output.clone().or(rel(file.output)),
            cache_dir: args.cache_dir.clone().or(rel(file.cache_dir)),
            use_cache: !(args.no_cache || file.no_cache.unwrap_or(false)),
            record: args.record.clone().or(rel(file.record)),
            seed: args.seed.or(file.seed).unwrap_or(0),
            max_pairs: args.max_pairs.or(file.max_pairs),
            prompts_dir: args.prompts_dir.clone().or(rel(file.prompts_dir)),
            taxonomy: args.taxonomy.clone().or(rel(file.taxonomy)),
            elide_trace: args.elide_trace || file.elide_trace.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("relation_threshold", self.relation_threshold),
            ("image_threshold", self.image_threshold),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                bail!("{name} must be within [-1, 1], got {v}");
            }
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.k_labels == 0 {
            bail!("k_labels must be at least 1");
        }
        if self.max_pairs == Some(0) {
            bail!("max_pairs must be at least 1");
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .context("no dataset given (--dataset or `dataset` in the config file)")
    }

    pub fn backends(&self) -> Result<&Path> {
        self.backends
            .as_deref()
            .context("no backends file given (--backends or `backends` in the config file)")
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let taxonomy = match &self.taxonomy {
            Some(p) => Taxonomy::builtin_extended_with(p)?,
            None => Taxonomy::builtin(),
        };
        let prompts = match &self.prompts_dir {
            Some(d) => PromptTemplates::with_overrides(d)?,
            None => PromptTemplates::builtin(),
        };
        Ok(PipelineConfig {
            k_labels: self.k_labels,
            relation_threshold: self.relation_threshold,
            taxonomy,
            prompts,
            max_pairs: self.max_pairs,
            seed: self.seed,
        })
    }
}
