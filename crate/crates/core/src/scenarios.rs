//! Scripted worked examples.
//!
//! Each scenario pairs a real product sample with fixture answers for every
//! model call its interpretation makes, so the whole pipeline runs offline
//! and deterministically. [`write_dataset`] materializes all of them as a
//! manifest, placeholder images, a fixture file and a backends file.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use crate::backends::{
    Backends, ChatMessage, FixtureBackend, ImageInput, LabelPrediction, Operation, RawEntity,
    RelationPrediction, Request, Response,
};
use crate::dataset::{combined_text, to_manifest_string, DesignSample, ImageRef};
use crate::pipeline::prompts::{render, PromptTemplates};
use crate::pipeline::Mode;
use crate::taxonomy::Taxonomy;

/// 1×1 transparent PNG used as a stand-in product image.
pub const PLACEHOLDER_PNG: &[u8] = &[
    0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48, 0x44, 0x52,
    0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1F, 0x15, 0xC4,
    0x89, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9C, 0x63, 0x00, 0x01, 0x00, 0x00,
    0x05, 0x00, 0x01, 0x0D, 0x0A, 0x2D, 0xB4, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4E, 0x44, 0xAE,
    0x42, 0x60, 0x82,
];

pub const EMBEDDING_DIM: usize = 4;

pub struct Scenario {
    pub sample: DesignSample,
    /// Mode the scripted answers were written for.
    pub mode: Mode,
    pub expected: (&'static str, &'static str),
    pub fixture: FixtureBackend,
}

impl Scenario {
    pub fn backends(&self) -> Backends {
        Backends::single(Arc::new(with_defaults(self.fixture.clone())))
    }
}

fn sample(id: &str, name: &str, description: &str, gold: (&str, &str)) -> DesignSample {
    DesignSample {
        id: id.into(),
        name: name.into(),
        image_refs: vec![ImageRef {
            locator: format!("images/{id}.png"),
            path: None,
        }],
        description: description.into(),
        gold_base: Some(gold.0.into()),
        gold_additive: Some(gold.1.into()),
    }
}

fn image(s: &DesignSample) -> ImageInput {
    ImageInput::from(&s.image_refs[0])
}

fn sim(f: &mut FixtureBackend, a: &str, b: &str, score: f64) {
    f.insert(
        Request::Similarity {
            a: a.into(),
            b: b.into(),
        },
        Response::Score(score),
    );
}

fn entities(f: &mut FixtureBackend, s: &DesignSample, names: &[&str]) {
    f.insert(
        Request::ExtractEntities {
            text: combined_text(s),
        },
        Response::Entities(
            names
                .iter()
                .map(|n| RawEntity {
                    text: n.to_string(),
                    span: None,
                })
                .collect(),
        ),
    );
}

fn relation(
    f: &mut FixtureBackend,
    s: &DesignSample,
    with_image: bool,
    (head, tail): (&str, &str),
    label: &str,
    confidence: f64,
) {
    f.insert(
        Request::ExtractRelation {
            text: combined_text(s),
            head: head.into(),
            tail: tail.into(),
            image: with_image.then(|| image(s)),
        },
        Response::Relation(RelationPrediction {
            head: head.into(),
            tail: tail.into(),
            label: label.into(),
            confidence,
        }),
    );
}

/// Script a conversation: each user prompt with the replies so far.
fn conversation(f: &mut FixtureBackend, image: Option<ImageInput>, turns: &[(String, &str)]) {
    let mut messages = Vec::new();
    for (prompt, reply) in turns {
        messages.push(ChatMessage::user(prompt.clone()));
        f.insert(
            Request::Chat {
                messages: messages.clone(),
                image: image.clone(),
            },
            Response::Completion(reply.to_string()),
        );
        messages.push(ChatMessage::assistant(*reply));
    }
}

fn prompt(name: &str, template: &str, vars: &[(&str, &str)]) -> String {
    render(name, template, vars).expect("builtin templates render")
}

/// Answers for calls no scenario scripts explicitly: no relation, zero
/// similarity, and an embedding far from every scripted image.
pub fn with_defaults(fixture: FixtureBackend) -> FixtureBackend {
    FixtureBackend::new()
        .default_for(Operation::Similarity, Response::Score(0.0))
        .default_for(
            Operation::ExtractRelation,
            Response::Relation(RelationPrediction {
                head: String::new(),
                tail: String::new(),
                label: "none".into(),
                confidence: 0.05,
            }),
        )
        .default_for(
            Operation::EmbedText,
            Response::Embedding(vec![0.0, 0.0, 0.2, 1.0]),
        )
        .merge(fixture)
}

/// Image labels name a vase; two relations exist among seven entities.
pub fn bionic() -> Scenario {
    let s = sample(
        "bionic",
        "Bionic",
        "The design idea for this vase series was inspired by tree trunks and their branches, \
         and aims to increase awareness of the great importance of preserving the environment.",
        ("vase series", "tree trunks"),
    );
    let mut f = FixtureBackend::new();
    f.insert(
        Request::ClassifyImage {
            image: image(&s),
            k: 10,
        },
        Response::Labels(vec![
            LabelPrediction {
                label: "vase".into(),
                confidence: 0.62,
            },
            LabelPrediction {
                label: "pot".into(),
                confidence: 0.17,
            },
            LabelPrediction {
                label: "driftwood".into(),
                confidence: 0.08,
            },
        ]),
    );
    entities(
        &mut f,
        &s,
        &[
            "design idea",
            "vase series",
            "tree trunks",
            "branches",
            "awareness",
            "importance",
            "environment",
        ],
    );
    sim(&mut f, "vase series", "vase", 0.83);
    sim(&mut f, "vase series", "pot", 0.41);
    sim(&mut f, "tree trunks", "driftwood", 0.58);
    sim(&mut f, "branches", "driftwood", 0.44);
    relation(
        &mut f,
        &s,
        false,
        ("vase series", "tree trunks"),
        "inspired by",
        0.91,
    );
    relation(
        &mut f,
        &s,
        false,
        ("design idea", "tree trunks"),
        "inspired by",
        0.64,
    );
    sim(&mut f, "inspired by", "innovation", 0.71);
    sim(&mut f, "inspired by", "transformation", 0.38);
    Scenario {
        sample: s,
        mode: Mode::Unimodal,
        expected: ("vase series", "tree trunks"),
        fixture: f,
    }
}

/// A knife block whose sharpener is mentioned twice.
pub fn sharp_one() -> Scenario {
    let s = sample(
        "sharp-1",
        "Sharp 1",
        "This knife block set and its integrated knife sharpener are a space-saving combination \
         of different functions. It saves users from having to search for a knife sharpener when needed.",
        ("Knife Block", "Knife Sharpener"),
    );
    let mut f = FixtureBackend::new();
    f.insert(
        Request::ClassifyImage {
            image: image(&s),
            k: 10,
        },
        Response::Labels(vec![
            LabelPrediction {
                label: "knife block".into(),
                confidence: 0.55,
            },
            LabelPrediction {
                label: "cleaver".into(),
                confidence: 0.25,
            },
            LabelPrediction {
                label: "whetstone".into(),
                confidence: 0.1,
            },
        ]),
    );
    entities(
        &mut f,
        &s,
        &[
            "knife block",
            "knife sharpener",
            "combination",
            "functions",
            "users",
            "knife sharpener",
        ],
    );
    sim(&mut f, "knife sharpener", "whetstone", 0.66);
    sim(&mut f, "knife sharpener", "knife block", 0.52);
    sim(&mut f, "knife sharpener", "cleaver", 0.47);
    sim(&mut f, "knife block", "cleaver", 0.49);
    relation(
        &mut f,
        &s,
        false,
        ("knife block", "knife sharpener"),
        "integrated with",
        0.88,
    );
    sim(&mut f, "integrated with", "integration", 0.86);
    sim(&mut f, "integrated with", "complementarity", 0.42);
    Scenario {
        sample: s,
        mode: Mode::Unimodal,
        expected: ("knife block", "knife sharpener"),
        fixture: f,
    }
}

/// Embeddings place the pendant luminaire closest to the image. Image labels
/// and image-free relations are scripted too, so the unimodal method also
/// runs on this sample.
pub fn eggboard() -> Scenario {
    let s = sample(
        "eggboard",
        "Eggboard",
        "The design of the Eggboard pendant luminaire picks up this principle, translating it into \
         a high-quality lighting option. Surfaces of simple egg cartons possess outstanding sound \
         absorption qualities thanks to the specific surface structure.",
        ("pendant luminaire", "egg cartons"),
    );
    let mut f = FixtureBackend::new();
    let names = [
        "Eggboard",
        "design",
        "pendant luminaire",
        "principle",
        "lighting option",
        "egg cartons",
        "sound absorption qualities",
        "surface structure",
    ];
    entities(&mut f, &s, &names);
    f.insert(
        Request::EmbedImage { image: image(&s) },
        Response::Embedding(vec![0.9, 0.35, 0.1, 0.0]),
    );
    for (text, v) in [
        ("pendant luminaire", [0.85, 0.3, 0.1, 0.05]),
        ("egg cartons", [0.3, 0.9, 0.1, 0.0]),
        ("lighting option", [0.6, 0.1, 0.5, 0.1]),
        ("surface structure", [0.2, 0.6, 0.3, 0.2]),
    ] {
        f.insert(
            Request::EmbedText { text: text.into() },
            Response::Embedding(v.to_vec()),
        );
    }
    relation(
        &mut f,
        &s,
        true,
        ("pendant luminaire", "egg cartons"),
        "complemented by",
        0.82,
    );
    relation(
        &mut f,
        &s,
        true,
        ("pendant luminaire", "lighting option"),
        "is a",
        0.74,
    );
    sim(&mut f, "complemented by", "complementarity", 0.79);
    sim(&mut f, "is a", "harmonization", 0.21);
    f.insert(
        Request::ClassifyImage {
            image: image(&s),
            k: 10,
        },
        Response::Labels(vec![
            LabelPrediction {
                label: "pendant lamp".into(),
                confidence: 0.71,
            },
            LabelPrediction {
                label: "lampshade".into(),
                confidence: 0.14,
            },
        ]),
    );
    sim(&mut f, "pendant luminaire", "pendant lamp", 0.88);
    sim(&mut f, "lighting option", "pendant lamp", 0.61);
    relation(
        &mut f,
        &s,
        false,
        ("pendant luminaire", "egg cartons"),
        "complemented by",
        0.77,
    );
    Scenario {
        sample: s,
        mode: Mode::Multimodal,
        expected: ("pendant luminaire", "egg cartons"),
        fixture: f,
    }
}

/// Single-prompt baseline answering in the in-context format.
pub fn yedoo_wolfer() -> Scenario {
    let s = sample(
        "yedoo-wolfer",
        "Yedoo Wolfer",
        "The Yedoo Wolfer racing scooter features an attractive appearance and very good riding \
         characteristics, which are similar to a bicycle.",
        ("racing scooter", "bicycle"),
    );
    let t = PromptTemplates::builtin();
    let p = prompt(
        "vanilla",
        &t.vanilla,
        &[("name", &s.name), ("description", &s.description)],
    );
    let reply = "Output [Base: racing scooter; Additive: bicycle]";
    let mut f = FixtureBackend::new();
    conversation(&mut f, Some(image(&s)), &[(p.clone(), reply)]);
    conversation(&mut f, None, &[(p, reply)]);
    Scenario {
        sample: s,
        mode: Mode::Vanilla,
        expected: ("racing scooter", "bicycle"),
        fixture: f,
    }
}

/// Three-step prompting; the base only appears in the product name.
pub fn drying_rack() -> Scenario {
    let s = sample(
        "baby-bottle-drying-rack",
        "Baby Bottle Drying Rack",
        "The form is inspired by a natural tree shape and eliminates water pooling and prevents \
         minerals and bacteria from building up.",
        ("Drying Rack", "Tree"),
    );
    let t = PromptTemplates::builtin();
    let hint = Taxonomy::builtin().category_hint();
    let info = [
        ("name", s.name.as_str()),
        ("description", s.description.as_str()),
    ];
    let nouns = "Nouns: drying rack; form; tree; shape; water pooling; minerals; bacteria";
    let mut f = FixtureBackend::new();
    conversation(
        &mut f,
        Some(image(&s)),
        &[
            (
                prompt("generative_base", &t.generative_base, &info),
                "Base: Drying Rack",
            ),
            (prompt("generative_nouns", &t.generative_nouns, &[]), nouns),
            (
                prompt(
                    "generative_additive",
                    &t.generative_additive,
                    &[
                        ("base", "Drying Rack"),
                        (
                            "candidates",
                            "form; tree; shape; water pooling; minerals; bacteria",
                        ),
                        ("category_hint", &hint),
                    ],
                ),
                "The tree shape inspires the rack's form (inspiration-driven).\nAdditive: Tree",
            ),
        ],
    );
    conversation(
        &mut f,
        None,
        &[
            (prompt("no_image_nouns", &t.no_image_nouns, &info), nouns),
            (
                prompt(
                    "no_image_pair",
                    &t.no_image_pair,
                    &[
                        (
                            "candidates",
                            "drying rack; form; tree; shape; water pooling; minerals; bacteria",
                        ),
                        ("category_hint", &hint),
                    ],
                ),
                "Output [Base: Drying Rack; Additive: Tree]",
            ),
        ],
    );
    Scenario {
        sample: s,
        mode: Mode::Generative,
        expected: ("Drying Rack", "Tree"),
        fixture: f,
    }
}

pub fn all() -> Vec<Scenario> {
    vec![
        drying_rack(),
        sharp_one(),
        bionic(),
        eggboard(),
        yedoo_wolfer(),
    ]
}

/// Every scenario's answers plus the shared defaults.
pub fn combined_fixture() -> FixtureBackend {
    with_defaults(
        all()
            .into_iter()
            .fold(FixtureBackend::new(), |acc, s| acc.merge(s.fixture)),
    )
}

pub fn combined_backends() -> Backends {
    Backends::builder()
        .fallback(Arc::new(combined_fixture()))
        .embedding_dim(EMBEDDING_DIM)
        .build()
}

pub const BACKENDS_TOML: &str =
    "embedding_dim = 4\n\n[[backend]]\nkind = \"fixture\"\npath = \"fixtures.jsonl\"\n";

/// Write `manifest.jsonl`, `images/*.png`, `fixtures.jsonl` and
/// `backends.toml` for all scenarios into `dir`.
pub fn write_dataset(dir: &Path) -> io::Result<()> {
    let samples: Vec<DesignSample> = all().into_iter().map(|s| s.sample).collect();
    fs::create_dir_all(dir.join("images"))?;
    for s in &samples {
        fs::write(dir.join(&s.image_refs[0].locator), PLACEHOLDER_PNG)?;
    }
    fs::write(dir.join("manifest.jsonl"), to_manifest_string(&samples))?;
    fs::write(dir.join("fixtures.jsonl"), combined_fixture().to_jsonl())?;
    fs::write(dir.join("backends.toml"), BACKENDS_TOML)?;
    Ok(())
}
