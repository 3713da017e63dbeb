use std::fs;
use std::path::Path;

use blendscope::dataset::*;
use blendscope::scenarios;
use proptest::prelude::*;

fn sentence() -> impl Strategy<Value = String> {
    (
        "[A-Z][a-z]{0,7}",
        prop::collection::vec("[a-z]{1,8}", 0..5),
        "[.!?]",
    )
        .prop_map(|(head, rest, end)| {
            let mut s = head;
            for w in rest {
                s.push(' ');
                s.push_str(&w);
            }
            s + &end
        })
}

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(sentence(), 0..4).prop_map(|v| v.join(" "))
}

type Row = (String, String, Option<(String, String)>);

fn sample_strategy() -> impl Strategy<Value = Row> {
    (
        "[A-Za-z ]{1,12}",
        prop::collection::vec(sentence(), 0..6).prop_map(|v| v.join(" ")),
        prop::option::of(("[a-z ]{1,10}", "[a-z ]{1,10}")),
    )
}

proptest! {
    #[test]
    fn sentence_count_is_additive(a in text(), b in text()) {
        let joined = format!("{a} {b}");
        prop_assert_eq!(count_sentences(&joined), count_sentences(&a) + count_sentences(&b));
    }

    #[test]
    fn combined_text_contains_name(name in "[A-Za-z0-9 ,'-]{1,20}", desc in "[ -~]{0,40}") {
        prop_assume!(!name.trim().is_empty());
        let s = DesignSample {
            id: "1".into(),
            name: name.clone(),
            image_refs: vec![ImageRef::resolve("https://example.org/a.png", Path::new("."))],
            description: desc,
            gold_base: None,
            gold_additive: None,
        };
        prop_assert!(combined_text(&s).contains(name.trim_end()));
    }

    #[test]
    fn manifest_round_trip(rows in prop::collection::vec(sample_strategy(), 1..6)) {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("img.png"), scenarios::PLACEHOLDER_PNG).unwrap();
        let samples: Vec<DesignSample> = rows
            .into_iter()
            .enumerate()
            .filter(|(_, (name, desc, _))| !name.trim().is_empty() && count_sentences(desc) <= MAX_SENTENCES)
            .map(|(i, (name, desc, gold))| {
                let gold = gold.filter(|(b, a)| !b.trim().is_empty() && !a.trim().is_empty());
                DesignSample {
                    id: format!("s{i}"),
                    name,
                    image_refs: vec![ImageRef::resolve("img.png", dir.path())],
                    description: desc,
                    gold_base: gold.as_ref().map(|g| g.0.clone()),
                    gold_additive: gold.map(|g| g.1),
                }
            })
            .collect();
        let path = dir.path().join("manifest.jsonl");
        fs::write(&path, to_manifest_string(&samples)).unwrap();
        let first = load_dataset(&path).unwrap();
        prop_assert_eq!(&first, &samples);
        fs::write(&path, to_manifest_string(&first)).unwrap();
        prop_assert_eq!(load_dataset(&path).unwrap(), first);
    }
}

#[test]
fn worked_sentence_counts() {
    assert_eq!(count_sentences(""), 0);
    assert_eq!(count_sentences("A. B. C."), 3);
    let sharp = scenarios::sharp_one().sample;
    assert_eq!(count_sentences(&sharp.description), 2);
}

#[test]
fn six_sentences_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.png"), scenarios::PLACEHOLDER_PNG).unwrap();
    let path = dir.path().join("m.jsonl");
    fs::write(
        &path,
        concat!(
            r#"{"id":"ok","name":"A","image":"a.png","description":"One. Two."}"#,
            "\n",
            r#"{"id":"long","name":"B","image":"a.png","description":"A. B. C. D. E. F."}"#,
            "\n"
        ),
    )
    .unwrap();
    let err = load_dataset(&path).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("long") && msg.contains("at most 5"), "{msg}");
}

#[test]
fn scenario_manifest_validates() {
    let dir = tempfile::tempdir().unwrap();
    scenarios::write_dataset(dir.path()).unwrap();
    let samples = load_dataset(&dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(samples.len(), scenarios::all().len());
    assert!(samples.iter().all(|s| validate_sample(s).is_ok()));
    assert!(samples.iter().all(|s| s.gold_pair().is_some()));
}

/// The committed files under tests/data are what `write_dataset` produces.
/// Set `UPDATE_FIXTURES=1` to regenerate them.
#[test]
fn committed_fixtures_are_current() {
    let committed = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    if std::env::var_os("UPDATE_FIXTURES").is_some() {
        scenarios::write_dataset(&committed).unwrap();
    }
    let fresh = tempfile::tempdir().unwrap();
    scenarios::write_dataset(fresh.path()).unwrap();
    for name in ["manifest.jsonl", "fixtures.jsonl", "backends.toml"] {
        let want = fs::read_to_string(fresh.path().join(name)).unwrap();
        let got = fs::read_to_string(committed.join(name))
            .unwrap_or_else(|e| panic!("{name}: {e}; run with UPDATE_FIXTURES=1"));
        assert_eq!(got, want, "{name} is stale; run with UPDATE_FIXTURES=1");
    }
}
