use crate::backends::{normalize, Backends, ChatMessage, ImageInput};
use crate::dataset::DesignSample;
use crate::error::PipelineError;

use super::prompts::{
    parse_additive_reply, parse_base_reply, parse_llm_answer, parse_nouns_reply, render,
};
use super::{sample_image, InterpretationResult, Mode, PipelineConfig, PromptReply, Trace};

/// A growing conversation with one chat backend.
struct Conversation<'a> {
    backends: &'a Backends,
    image: Option<ImageInput>,
    messages: Vec<ChatMessage>,
    log: Vec<PromptReply>,
}

impl<'a> Conversation<'a> {
    fn new(backends: &'a Backends, image: Option<ImageInput>) -> Self {
        Self {
            backends,
            image,
            messages: Vec::new(),
            log: Vec::new(),
        }
    }

    fn ask(&mut self, prompt: String) -> Result<String, PipelineError> {
        self.messages.push(ChatMessage::user(prompt.clone()));
        let reply = self
            .backends
            .chat(&self.messages, self.image.as_ref())
            .map_err(PipelineError::backend("chat"))?;
        self.messages.push(ChatMessage::assistant(reply.clone()));
        self.log.push(PromptReply {
            prompt,
            reply: reply.clone(),
        });
        Ok(reply)
    }

    fn trace(self) -> Trace {
        Trace {
            prompts_and_replies: self.log,
            ..Trace::default()
        }
    }
}

fn others(nouns: &[String], base: &str) -> Vec<String> {
    let b = normalize(base);
    nouns
        .iter()
        .filter(|n| normalize(n) != b)
        .cloned()
        .collect()
}

/// Three-step prompting: base from the image, nouns from the text, then the
/// additive by relation analysis with the category hint.
pub fn interpret_generative(
    sample: &DesignSample,
    backends: &Backends,
    cfg: &PipelineConfig,
) -> Result<InterpretationResult, PipelineError> {
    let image = sample_image(sample)?;
    let t = &cfg.prompts;
    let mut conv = Conversation::new(backends, Some(image));

    let p1 = render(
        "generative_base",
        &t.generative_base,
        &[("name", &sample.name), ("description", &sample.description)],
    )?;
    let base = parse_base_reply(&conv.ask(p1)?)?;

    let p2 = render("generative_nouns", &t.generative_nouns, &[])?;
    let nouns = parse_nouns_reply(&conv.ask(p2)?)?;
    let pool = others(&nouns, &base);
    if pool.is_empty() {
        return Err(PipelineError::NoCandidates(sample.id.clone()));
    }

    let hint = cfg.taxonomy.category_hint();
    let p3 = render(
        "generative_additive",
        &t.generative_additive,
        &[
            ("base", &base),
            ("candidates", &pool.join("; ")),
            ("category_hint", &hint),
        ],
    )?;
    let additive = parse_additive_reply(&conv.ask(p3)?)?;
    InterpretationResult::new(sample, Mode::Generative, base, additive, true, conv.trace())
}

/// Text-only variant: nouns first, then one question choosing the pair
/// among them.
pub(crate) fn interpret_generative_text_only(
    sample: &DesignSample,
    backends: &Backends,
    cfg: &PipelineConfig,
) -> Result<InterpretationResult, PipelineError> {
    let t = &cfg.prompts;
    let mut conv = Conversation::new(backends, None);
    let p1 = render(
        "no_image_nouns",
        &t.no_image_nouns,
        &[("name", &sample.name), ("description", &sample.description)],
    )?;
    let nouns = parse_nouns_reply(&conv.ask(p1)?)?;
    if nouns.len() < 2 {
        return Err(PipelineError::NoCandidates(sample.id.clone()));
    }
    let hint = cfg.taxonomy.category_hint();
    let p2 = render(
        "no_image_pair",
        &t.no_image_pair,
        &[("candidates", &nouns.join("; ")), ("category_hint", &hint)],
    )?;
    let (base, additive) = parse_llm_answer(&conv.ask(p2)?)?;
    InterpretationResult::new(
        sample,
        Mode::Generative,
        base,
        additive,
        false,
        conv.trace(),
    )
}

/// Single prompt with two in-context examples.
pub fn interpret_vanilla(
    sample: &DesignSample,
    backends: &Backends,
    cfg: &PipelineConfig,
) -> Result<InterpretationResult, PipelineError> {
    vanilla(sample, backends, cfg, true)
}

pub(crate) fn vanilla(
    sample: &DesignSample,
    backends: &Backends,
    cfg: &PipelineConfig,
    with_image: bool,
) -> Result<InterpretationResult, PipelineError> {
    let image = if with_image {
        Some(sample_image(sample)?)
    } else {
        None
    };
    let mut conv = Conversation::new(backends, image);
    let prompt = render(
        "vanilla",
        &cfg.prompts.vanilla,
        &[("name", &sample.name), ("description", &sample.description)],
    )?;
    let (base, additive) = parse_llm_answer(&conv.ask(prompt)?)?;
    InterpretationResult::new(
        sample,
        Mode::Vanilla,
        base,
        additive,
        with_image,
        conv.trace(),
    )
}
