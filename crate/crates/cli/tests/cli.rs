use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blendscope::dataset::{load_dataset, to_manifest_string, DesignSample};
use blendscope::scenarios;

const BIN: &str = env!("CARGO_BIN_EXE_blendscope");

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        scenarios::write_dataset(dir.path()).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Manifest holding only the listed sample ids.
    fn manifest(&self, name: &str, ids: &[&str]) -> PathBuf {
        let all = load_dataset(&self.path("manifest.jsonl")).unwrap();
        let picked: Vec<DesignSample> = ids
            .iter()
            .map(|id| all.iter().find(|s| s.id == *id).unwrap().clone())
            .collect();
        let path = self.path(name);
        fs::write(&path, to_manifest_string(&picked)).unwrap();
        path
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .args(args)
            .current_dir(self.dir.path())
            .env("RUST_LOG", "off")
            .output()
            .unwrap()
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(String::from)
        .collect()
}

const UNIMODAL: &[&str] = &["sharp-1", "bionic", "eggboard"];

fn interpret(ws: &Workspace, manifest: &str, mode: &str, out: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "interpret",
        "--dataset",
        manifest,
        "--backends",
        "backends.toml",
        "--mode",
        mode,
        "--output",
        out,
    ];
    args.extend_from_slice(extra);
    ws.run(&args)
}

#[test]
fn interpret_writes_one_record_per_sample() {
    let ws = Workspace::new();
    ws.manifest("three.jsonl", UNIMODAL);
    let o = interpret(&ws, "three.jsonl", "unimodal", "out.jsonl", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let records = lines(&ws.path("out.jsonl"));
    assert_eq!(records.len(), 3);
    assert!(
        records[2].contains("\"base\":\"pendant luminaire\""),
        "{}",
        records[2]
    );
}

#[test]
fn missing_fixture_keeps_partial_results() {
    let ws = Workspace::new();
    ws.manifest("mixed.jsonl", &["sharp-1", "yedoo-wolfer", "bionic"]);
    let o = interpret(&ws, "mixed.jsonl", "unimodal", "out.jsonl", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(lines(&ws.path("out.jsonl")).len(), 2);
    let err = stderr(&o);
    assert!(err.contains("1 sample(s) failed: yedoo-wolfer"), "{err}");
    assert!(err.contains("fixture miss"), "{err}");
}

#[test]
fn startup_errors_exit_before_any_sample() {
    let ws = Workspace::new();
    let o = interpret(
        &ws,
        "manifest.jsonl",
        "unimodal",
        "out.jsonl",
        &["--workers", "0"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("workers"));
    assert!(!ws.path("out.jsonl").exists());

    let o = interpret(&ws, "nope.jsonl", "unimodal", "out.jsonl", &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = ws.run(&[
        "interpret",
        "--dataset",
        "manifest.jsonl",
        "--backends",
        "missing.toml",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = interpret(
        &ws,
        "manifest.jsonl",
        "unimodal",
        "out.jsonl",
        &["--relation-threshold", "1.5"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_prints_a_perfect_row() {
    let ws = Workspace::new();
    ws.manifest("three.jsonl", UNIMODAL);
    interpret(
        &ws,
        "three.jsonl",
        "unimodal",
        "out.jsonl",
        &["--elide-trace"],
    );
    let o = ws.run(&[
        "evaluate",
        "--dataset",
        "three.jsonl",
        "--results",
        "out.jsonl",
        "--report-json",
        "r.json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("| unimodal | 100.0% | 0.0% | 100.0% | 100.0% |"),
        "{}",
        stdout(&o)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.path("r.json")).unwrap()).unwrap();
    assert_eq!(report["counts"]["n"], 3);
}

fn write_results(ws: &Workspace, name: &str, rows: &[(&str, &str, &str)]) {
    let body: String = rows
        .iter()
        .map(|(id, b, a)| {
            format!(
                "{}\n",
                serde_json::json!({"sample_id": id, "mode": "vanilla", "base": b, "additive": a, "used_image": true})
            )
        })
        .collect();
    fs::write(ws.path(name), body).unwrap();
}

#[test]
fn evaluate_four_verdict_set() {
    let ws = Workspace::new();
    let gold = |id: &str| {
        serde_json::json!({"id": id, "name": id, "image": "images/bionic.png", "description": "",
            "base": "drying rack", "additive": "tree"})
        .to_string()
    };
    let manifest: String = ["tt", "tf", "ft", "ff"]
        .iter()
        .map(|id| gold(id) + "\n")
        .collect();
    fs::write(ws.path("four.jsonl"), manifest).unwrap();
    write_results(
        &ws,
        "four_results.jsonl",
        &[
            ("tt", "rack", "tree"),
            ("tf", "rack", "fork"),
            ("ft", "bottle", "tree"),
            ("ff", "bottle", "fork"),
        ],
    );
    let o = ws.run(&[
        "evaluate",
        "--dataset",
        "four.jsonl",
        "--results",
        "four_results.jsonl",
    ]);
    assert!(
        stdout(&o).contains("| vanilla | 25.0% | 25.0% | 50.0% | 50.0% |"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn reversal_ok_counts_swapped_pairs() {
    let ws = Workspace::new();
    ws.manifest("pairs.jsonl", &["bionic", "eggboard", "yedoo-wolfer"]);
    write_results(
        &ws,
        "swapped.jsonl",
        &[
            ("bionic", "tree trunks", "vase series"),
            ("eggboard", "egg cartons", "pendant luminaire"),
            ("yedoo-wolfer", "bicycle", "racing scooter"),
        ],
    );
    let base = [
        "evaluate",
        "--dataset",
        "pairs.jsonl",
        "--results",
        "swapped.jsonl",
    ];
    let strict = ws.run(&base);
    assert!(
        stdout(&strict).contains("| vanilla | 0.0% | 100.0% | 0.0% | 0.0% |"),
        "{}",
        stdout(&strict)
    );
    let mut lenient = base.to_vec();
    lenient.extend(["--counting-mode", "reversal_ok"]);
    let lenient = ws.run(&lenient);
    assert!(
        stdout(&lenient).contains("| vanilla | 100.0% | 0.0% | 100.0% | 100.0% |"),
        "{}",
        stdout(&lenient)
    );
}

#[test]
fn evaluate_rejects_unknown_samples() {
    let ws = Workspace::new();
    write_results(&ws, "stray.jsonl", &[("not-in-dataset", "a", "b")]);
    let o = ws.run(&[
        "evaluate",
        "--dataset",
        "manifest.jsonl",
        "--results",
        "stray.jsonl",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not-in-dataset"));
}

#[test]
fn second_identical_run_is_served_from_cache() {
    let ws = Workspace::new();
    ws.manifest("three.jsonl", UNIMODAL);
    let cache = ["--cache-dir", "cache"];
    interpret(&ws, "three.jsonl", "unimodal", "a.jsonl", &cache);
    let first = ws.run(&["cache", "stats", "--cache-dir", "cache"]);
    interpret(&ws, "three.jsonl", "unimodal", "b.jsonl", &cache);
    let second = ws.run(&["cache", "stats", "--cache-dir", "cache"]);
    assert_eq!(
        fs::read(ws.path("a.jsonl")).unwrap(),
        fs::read(ws.path("b.jsonl")).unwrap()
    );

    let field = |o: &Output, key: &str| -> u64 {
        let s = stdout(o);
        let tail = s
            .split(&format!("{key}="))
            .nth(1)
            .unwrap_or_else(|| panic!("{key} in {s}"));
        tail.split_whitespace().next().unwrap().parse().unwrap()
    };
    // repeated requests within the first run already hit the cache
    let calls = field(&first, "last_run_hits") + field(&first, "last_run_misses");
    let entries = field(&first, "entries");
    assert!(entries > 0);
    assert_eq!(entries, field(&first, "last_run_misses"));
    assert_eq!(field(&second, "last_run_hits"), calls);
    assert_eq!(field(&second, "last_run_misses"), 0);
    assert_eq!(field(&second, "entries"), entries);

    let listed = ws.run(&["cache", "list", "--cache-dir", "cache"]);
    assert_eq!(stdout(&listed).lines().count() as u64, entries);
    let cleared = ws.run(&["cache", "clear", "--cache-dir", "cache"]);
    assert!(stdout(&cleared).contains(&format!("removed {entries} entries")));
    assert_eq!(
        field(
            &ws.run(&["cache", "stats", "--cache-dir", "cache"]),
            "entries"
        ),
        0
    );
}

#[test]
fn modular_without_traces_prints_header_only() {
    let ws = Workspace::new();
    ws.manifest("three.jsonl", UNIMODAL);
    interpret(
        &ws,
        "three.jsonl",
        "unimodal",
        "out.jsonl",
        &["--elide-trace"],
    );
    let o = ws.run(&[
        "modular",
        "--dataset",
        "three.jsonl",
        "--backends",
        "backends.toml",
        "--results",
        "out.jsonl",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("| Module | Correct | Accuracy |"));
    assert!(!stdout(&o).contains("Image interpretation"));
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn modular_reports_each_module() {
    let ws = Workspace::new();
    ws.manifest("three.jsonl", UNIMODAL);
    interpret(&ws, "three.jsonl", "unimodal", "out.jsonl", &[]);
    let o = ws.run(&[
        "modular",
        "--dataset",
        "three.jsonl",
        "--backends",
        "backends.toml",
        "--results",
        "out.jsonl",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    for module in [
        "Image interpretation",
        "Noun entity extraction",
        "Relation extraction",
    ] {
        assert!(out.contains(&format!("| {module} |")), "{out}");
    }
}

#[test]
fn ablate_pairs_with_and_without_image() {
    let ws = Workspace::new();
    ws.manifest("rack.jsonl", &["baby-bottle-drying-rack"]);
    let o = ws.run(&[
        "ablate",
        "--dataset",
        "rack.jsonl",
        "--backends",
        "backends.toml",
        "--variant",
        "generative",
        "--results-dir",
        "ablation",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(
        out.contains("| w/ image | 100.0% | 0.0% | 100.0% | 100.0% |"),
        "{out}"
    );
    assert!(
        out.contains("| w/o image | 100.0% | 0.0% | 100.0% | 100.0% |"),
        "{out}"
    );
    let without = fs::read_to_string(ws.path("ablation/without_image.jsonl")).unwrap();
    assert!(without.contains("\"used_image\":false"));
}

#[test]
fn vanilla_prompt_comes_from_the_template_and_replays() {
    let ws = Workspace::new();
    ws.manifest("yedoo.jsonl", &["yedoo-wolfer"]);
    let o = interpret(
        &ws,
        "yedoo.jsonl",
        "vanilla",
        "live.jsonl",
        &["--record", "archive.jsonl"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let archive = fs::read_to_string(ws.path("archive.jsonl")).unwrap();
    assert!(archive.contains("The current material is"));

    fs::write(
        ws.path("replay.toml"),
        "[[backend]]\nkind = \"replay\"\npath = \"archive.jsonl\"\n",
    )
    .unwrap();
    for out in ["r1.jsonl", "r2.jsonl"] {
        let o = ws.run(&[
            "interpret",
            "--dataset",
            "yedoo.jsonl",
            "--backends",
            "replay.toml",
            "--mode",
            "vanilla",
            "--output",
            out,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let live = fs::read(ws.path("live.jsonl")).unwrap();
    assert_eq!(live, fs::read(ws.path("r1.jsonl")).unwrap());
    assert_eq!(live, fs::read(ws.path("r2.jsonl")).unwrap());
}

#[test]
fn config_file_supplies_defaults() {
    let ws = Workspace::new();
    ws.manifest("three.jsonl", UNIMODAL);
    fs::write(
        ws.path("run.toml"),
        "dataset = \"three.jsonl\"\nbackends = \"backends.toml\"\nmode = \"unimodal\"\nworkers = 2\noutput = \"cfg.jsonl\"\n",
    )
    .unwrap();
    let o = ws.run(&["interpret", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(lines(&ws.path("cfg.jsonl")).len(), 3);
    let o = ws.run(&["evaluate", "--config", "run.toml", "--results", "cfg.jsonl"]);
    assert!(stdout(&o).contains("| unimodal | 100.0%"), "{}", stdout(&o));
}

#[test]
fn truncated_results_are_read_without_the_marker() {
    let ws = Workspace::new();
    ws.manifest("three.jsonl", UNIMODAL);
    interpret(
        &ws,
        "three.jsonl",
        "unimodal",
        "out.jsonl",
        &["--elide-trace"],
    );
    let mut body = fs::read_to_string(ws.path("out.jsonl")).unwrap();
    body.push_str("{\"truncated\":true,\"completed\":3,\"failed\":0,\"total\":5}\n");
    fs::write(ws.path("out.jsonl"), body).unwrap();
    let o = ws.run(&[
        "evaluate",
        "--dataset",
        "three.jsonl",
        "--results",
        "out.jsonl",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("n = 3"));
}
