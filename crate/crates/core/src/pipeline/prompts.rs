//! Prompt templates and reply parsing for the chat-based modes.
//!
//! Templates are plain text with `{placeholder}` slots. The built-in wording
//! ships as asset files; a directory holding files of the same names
//! overrides them one by one.

use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;

use crate::error::PipelineError;

macro_rules! asset {
    ($name:literal) => {
        (
            $name,
            include_str!(concat!("../../assets/prompts/", $name, ".txt")),
        )
    };
}

const BUILTIN: [(&str, &str); 6] = [
    asset!("generative_base"),
    asset!("generative_nouns"),
    asset!("generative_additive"),
    asset!("no_image_nouns"),
    asset!("no_image_pair"),
    asset!("vanilla"),
];

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub generative_base: String,
    pub generative_nouns: String,
    pub generative_additive: String,
    pub no_image_nouns: String,
    pub no_image_pair: String,
    pub vanilla: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        let get = |n: &str| {
            BUILTIN
                .iter()
                .find(|(name, _)| *name == n)
                .map(|(_, t)| t.to_string())
                .expect("builtin template")
        };
        Self {
            generative_base: get("generative_base"),
            generative_nouns: get("generative_nouns"),
            generative_additive: get("generative_additive"),
            no_image_nouns: get("no_image_nouns"),
            no_image_pair: get("no_image_pair"),
            vanilla: get("vanilla"),
        }
    }

    /// Built-in templates with any `<name>.txt` found in `dir` substituted.
    pub fn with_overrides(dir: &Path) -> Result<Self, PipelineError> {
        let mut out = Self::builtin();
        for (name, _) in BUILTIN {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::Template {
                name: name.to_string(),
                message: format!("{}: {e}", path.display()),
            })?;
            log::info!("prompt template {name} overridden from {}", path.display());
            *out.slot(name) = text;
        }
        Ok(out)
    }

    fn slot(&mut self, name: &str) -> &mut String {
        match name {
            "generative_base" => &mut self.generative_base,
            "generative_nouns" => &mut self.generative_nouns,
            "generative_additive" => &mut self.generative_additive,
            "no_image_nouns" => &mut self.no_image_nouns,
            "no_image_pair" => &mut self.no_image_pair,
            "vanilla" => &mut self.vanilla,
            _ => unreachable!("unknown template {name}"),
        }
    }
}

/// Fill `{key}` placeholders. Unknown placeholders left in the result are an
/// error, so a typo in an override never reaches a model.
pub fn render(name: &str, template: &str, vars: &[(&str, &str)]) -> Result<String, PipelineError> {
    let mut missing = Vec::new();
    let out = PLACEHOLDER.replace_all(template, |c: &regex::Captures<'_>| {
        let key = &c[1];
        match vars.iter().find(|(k, _)| *k == key) {
            Some((_, v)) => v.to_string(),
            None => {
                missing.push(key.to_string());
                c[0].to_string()
            }
        }
    });
    if !missing.is_empty() {
        return Err(PipelineError::Template {
            name: name.to_string(),
            message: format!("unfilled placeholder(s): {}", missing.join(", ")),
        });
    }
    Ok(out.trim_end().to_string())
}

static PAIR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)(?:output\s*)?\[?\s*base\s*:\s*([^;\]\n]*?)\s*;\s*additive\s*:\s*([^;\]\n]*?)\s*(?:\]|$|\n)")
        .unwrap()
});

fn parse_err(step: &'static str, raw: &str) -> PipelineError {
    PipelineError::Parse {
        step,
        raw: raw.to_string(),
    }
}

/// Extract `(base, additive)` from a reply like
/// `Output [Base: Drying Rack; Additive: Tree]`.
pub fn parse_llm_answer(reply: &str) -> Result<(String, String), PipelineError> {
    let caps = PAIR
        .captures(reply)
        .ok_or_else(|| parse_err("answer", reply))?;
    let clean = |s: &str| {
        s.trim()
            .trim_matches(|c| c == '"' || c == '\'')
            .trim()
            .to_string()
    };
    let (base, additive) = (clean(&caps[1]), clean(&caps[2]));
    if base.is_empty() || additive.is_empty() {
        return Err(parse_err("answer", reply));
    }
    Ok((base, additive))
}

/// Value after `key:` on the first line that has it.
fn keyed_line(reply: &str, key: &str) -> Option<String> {
    let key = key.to_lowercase();
    reply.lines().find_map(|line| {
        let l = line.trim().trim_start_matches(['*', '-', ' ']);
        let (k, v) = l.split_once(':')?;
        (k.trim().trim_matches('*').to_lowercase() == key).then(|| {
            v.trim_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '"' | '\'' | '.'))
                .to_string()
        })
    })
}

pub(crate) fn parse_base_reply(reply: &str) -> Result<String, PipelineError> {
    if let Some(v) = keyed_line(reply, "base").filter(|v| !v.is_empty()) {
        return Ok(v);
    }
    // A terse reply consisting of just the keyword is also accepted.
    let trimmed = reply.trim().trim_end_matches('.');
    let words = trimmed.split_whitespace().count();
    if !trimmed.contains('\n') && (1..=4).contains(&words) && !trimmed.contains(':') {
        return Ok(trimmed.to_string());
    }
    Err(parse_err("base", reply))
}

pub(crate) fn parse_nouns_reply(reply: &str) -> Result<Vec<String>, PipelineError> {
    let line = keyed_line(reply, "nouns").ok_or_else(|| parse_err("nouns", reply))?;
    let sep = if line.contains(';') { ';' } else { ',' };
    let mut nouns: Vec<String> = Vec::new();
    for n in line.split(sep).map(str::trim).filter(|n| !n.is_empty()) {
        if !nouns.iter().any(|m| m.eq_ignore_ascii_case(n)) {
            nouns.push(n.to_string());
        }
    }
    if nouns.is_empty() {
        return Err(parse_err("nouns", reply));
    }
    Ok(nouns)
}

pub(crate) fn parse_additive_reply(reply: &str) -> Result<String, PipelineError> {
    keyed_line(reply, "additive")
        .filter(|v| !v.is_empty())
        .ok_or_else(|| parse_err("additive", reply))
}
