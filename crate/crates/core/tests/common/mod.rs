//! Brute-force oracles, strategies and checks shared by the test targets.
#![allow(dead_code)]

use blendscope::backends::EmbeddingVector;
use blendscope::dataset::{DesignSample, ImageRef};
use blendscope::evaluation::{evaluate_run, CountingMode};
use blendscope::kernels::*;
use blendscope::pipeline::{InterpretationResult, Mode};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub const TOL: f64 = 1e-9;
pub const SUM_TOL: f64 = 1e-6;

pub type Check = Result<(), TestCaseError>;

// ---- kernel oracles ----

pub fn oracle_bilinear(o: &Array2<f64>, a: &Array2<f64>, t: &Array1<f64>) -> Vec<f64> {
    let (m, d) = o.dim();
    let mut g = vec![0.0; m];
    for i in 0..m {
        for j in 0..d {
            for k in 0..d {
                g[i] += o[[i, j]] * a[[j, k]] * t[k];
            }
        }
    }
    g
}

pub fn oracle_softmax(x: &[f64]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &v in x {
        if v > max {
            max = v;
        }
    }
    let mut e = Vec::new();
    let mut total = 0.0;
    for &v in x {
        let z = (v - max).exp();
        e.push(z);
        total += z;
    }
    e.into_iter().map(|z| z / total).collect()
}

pub fn oracle_context(a: &[f64], o: &Array2<f64>) -> Vec<f64> {
    let mut c = vec![0.0; o.ncols()];
    for i in 0..o.nrows() {
        for j in 0..o.ncols() {
            c[j] += a[i] * o[[i, j]];
        }
    }
    c
}

pub fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

pub fn oracle_affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), w.nrows()));
    for r in 0..x.nrows() {
        for o in 0..w.nrows() {
            let mut acc = b[o];
            for i in 0..x.ncols() {
                acc += w[[o, i]] * x[[r, i]];
            }
            out[[r, o]] = acc;
        }
    }
    out
}

pub fn oracle_alignment(q: &Array2<f64>, k: &Array2<f64>, d: f64, mask: &[u8]) -> Array2<f64> {
    let mut beta = Array2::zeros((q.nrows(), k.nrows()));
    for i in 0..q.nrows() {
        let mut logits = Vec::new();
        let mut live = Vec::new();
        for j in 0..k.nrows() {
            if mask[j] == 1 {
                let mut dot = 0.0;
                for c in 0..q.ncols() {
                    dot += q[[i, c]] * k[[j, c]];
                }
                logits.push(dot / d.sqrt());
                live.push(j);
            }
        }
        for (w, j) in oracle_softmax(&logits).into_iter().zip(live) {
            beta[[i, j]] = w;
        }
    }
    beta
}

pub fn oracle_summary(beta: &Array2<f64>, v: &Array2<f64>) -> Vec<f64> {
    let mut y = vec![0.0; v.ncols()];
    for i in 0..beta.nrows() {
        for j in 0..beta.ncols() {
            for c in 0..v.ncols() {
                y[c] += beta[[i, j]] * v[[j, c]];
            }
        }
    }
    y
}

pub fn close(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> Check {
    let (a, b): (Vec<f64>, Vec<f64>) = (a.into_iter().collect(), b.into_iter().collect());
    prop_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        prop_assert!((x - y).abs() <= TOL, "{} vs {}", x, y);
    }
    Ok(())
}

// ---- kernel strategies ----

pub fn vecs(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, len)
}

pub fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    vecs(rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

pub fn context_case() -> impl Strategy<Value = ContextAttentionInputs> {
    (1usize..6, 1usize..6).prop_flat_map(|(m, d)| {
        (matrix(m, d), matrix(d, d), vecs(d)).prop_map(|(o, a, t)| ContextAttentionInputs {
            contextual_reps: o,
            target_rep: Array1::from(t),
            bilinear: a,
        })
    })
}

pub fn logits() -> impl Strategy<Value = (Vec<f64>, f64)> {
    (
        prop::collection::vec(-50.0f64..50.0, 1..12),
        -100.0f64..100.0,
    )
}

pub fn cosine_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, f64)> {
    (
        (1usize..8).prop_flat_map(|n| (vecs(n), vecs(n))),
        0.01f64..100.0,
        0.01f64..100.0,
    )
        .prop_map(|((a, b), s, t)| (a, b, s, t))
        .prop_filter("non-zero vectors", |(a, b, _, _)| {
            a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3)
        })
}

pub fn align_case() -> impl Strategy<Value = AlignmentInputs> {
    (
        1usize..7,
        1usize..5,
        1usize..5,
        1usize..5,
        1usize..5,
        1usize..4,
    )
        .prop_flat_map(|(l, m, dx, dy, d, dv)| {
            (
                matrix(l, dx),
                matrix(m, dy),
                matrix(d, dx),
                vecs(d),
                matrix(d, dy),
                vecs(d),
                matrix(dv, dx),
                vecs(dv),
                prop::collection::vec(0u8..2, l),
                0usize..l,
            )
                .prop_map(move |(x, y, wk, bk, wq, bq, wv, bv, mut mask, keep)| {
                    mask[keep] = 1;
                    AlignmentInputs {
                        text: x,
                        objects: y,
                        w_k: wk,
                        b_k: Array1::from(bk),
                        w_q: wq,
                        b_q: Array1::from(bq),
                        w_v: wv,
                        b_v: Array1::from(bv),
                        scale_dim: d as f64,
                        token_mask: mask,
                    }
                })
        })
}

// ---- kernel checks ----

pub fn check_bilinear(c: &ContextAttentionInputs) -> Check {
    let got = bilinear_scores(c).unwrap();
    close(
        got.iter().copied(),
        oracle_bilinear(&c.contextual_reps, &c.bilinear, &c.target_rep),
    )
}

pub fn check_softmax(x: &[f64], shift: f64) -> Check {
    let got = attention_weights(Array1::from(x.to_vec()).view()).unwrap();
    close(got.iter().copied(), oracle_softmax(x))?;
    prop_assert!((got.sum() - 1.0).abs() < SUM_TOL);
    prop_assert!(got.iter().all(|&w| (0.0..=1.0).contains(&w)));
    let shifted = attention_weights(Array1::from(x.to_vec()).mapv(|v| v + shift).view()).unwrap();
    close(got.iter().copied(), shifted.iter().copied())
}

pub fn check_context(c: &ContextAttentionInputs) -> Check {
    let g = bilinear_scores(c).unwrap();
    let a = attention_weights(g.view()).unwrap();
    let oc = context_representation(a.view(), c.contextual_reps.view()).unwrap();
    close(
        oc.iter().copied(),
        oracle_context(a.as_slice().unwrap(), &c.contextual_reps),
    )?;
    let full = context_attention(c).unwrap();
    let d = c.target_rep.len();
    prop_assert_eq!(full.len(), 2 * d);
    close(full.iter().take(d).copied(), c.target_rep.iter().copied())?;
    close(full.iter().skip(d).copied(), oc.iter().copied())
}

pub fn check_cosine(a: &[f64], b: &[f64], s: f64, t: f64) -> Check {
    let ea = EmbeddingVector::new(a.to_vec());
    let eb = EmbeddingVector::new(b.to_vec());
    let got = compatibility_score(&ea, &eb).unwrap();
    prop_assert!((got - oracle_cosine(a, b)).abs() <= TOL);
    let scaled = compatibility_score(
        &EmbeddingVector::new(a.iter().map(|v| v * s).collect()),
        &EmbeddingVector::new(b.iter().map(|v| v * t).collect()),
    )
    .unwrap();
    prop_assert!((got - scaled).abs() <= TOL);
    prop_assert!((-1.0..=1.0).contains(&got));
    Ok(())
}

pub fn check_projections(i: &AlignmentInputs) -> Check {
    let (k, q, v) = qkv_project(i).unwrap();
    close(
        k.iter().copied(),
        oracle_affine(&i.text, &i.w_k, &i.b_k).iter().copied(),
    )?;
    close(
        q.iter().copied(),
        oracle_affine(&i.objects, &i.w_q, &i.b_q).iter().copied(),
    )?;
    close(
        v.iter().copied(),
        oracle_affine(&i.text, &i.w_v, &i.b_v).iter().copied(),
    )
}

pub fn check_alignment(i: &AlignmentInputs) -> Check {
    let (k, q, _) = qkv_project(i).unwrap();
    let beta = alignment_weights(q.view(), k.view(), i.scale_dim, &i.token_mask).unwrap();
    close(
        beta.iter().copied(),
        oracle_alignment(&q, &k, i.scale_dim, &i.token_mask)
            .iter()
            .copied(),
    )?;
    for row in beta.rows() {
        prop_assert!((row.sum() - 1.0).abs() < SUM_TOL);
        for (w, &m) in row.iter().zip(&i.token_mask) {
            if m == 0 {
                prop_assert_eq!(*w, 0.0);
            }
        }
    }
    Ok(())
}

pub fn check_summary(i: &AlignmentInputs) -> Check {
    let (beta, v, y) = align(i).unwrap();
    prop_assert_eq!(y.len(), v.ncols());
    close(y.iter().copied(), oracle_summary(&beta, &v))
}

// ---- evaluation fixtures ----

/// Hand-written truth table: (prediction, gold, expected).
pub const MATCH_TRUTH_TABLE: &[(&str, &str, bool)] = &[
    ("tree", "Tree", true),
    ("rack stand", "Drying Rack", true),
    ("Drying Rack", "Drying Rack", true),
    ("rack", "Drying Rack", true),
    ("drying", "Drying Rack", true),
    ("fork", "Tree", false),
    ("trees", "Tree", false),
    ("a tree", "Tree", true),
    ("knife block set", "Knife Block", true),
    ("sharpener", "Knife Sharpener", true),
    ("block", "Knife Sharpener", false),
    ("the lamp", "The Shade", false),
    ("lamp-shade", "shade", true),
    ("Pendant Luminaire", "pendant luminaire", true),
    ("luminaire", "pendant luminaire", true),
    ("egg carton", "egg cartons", true),
    ("carton", "egg cartons", false),
    ("bicycle", "racing scooter", false),
    ("scooter", "racing scooter", true),
    ("tree trunk", "tree trunks", true),
    ("branches", "tree trunks", false),
    ("vase", "vase series", true),
    ("", "Tree", false),
    ("of the", "Tree", false),
];

/// Gold pairs whose base and additive share no keyword.
pub const SWAPPABLE: &[(&str, &str)] = &[
    ("Drying Rack", "Tree"),
    ("pendant luminaire", "egg cartons"),
    ("racing scooter", "bicycle"),
    ("vase series", "tree trunks"),
    ("spoon", "fork"),
];

pub fn result(id: &str, base: &str, additive: &str) -> InterpretationResult {
    InterpretationResult {
        sample_id: id.into(),
        mode: Mode::Unimodal,
        base: base.into(),
        additive: additive.into(),
        used_image: true,
        trace: None,
    }
}

pub fn gold(id: &str, base: &str, additive: &str) -> DesignSample {
    DesignSample {
        id: id.into(),
        name: id.into(),
        image_refs: vec![ImageRef {
            locator: format!("{id}.png"),
            path: None,
        }],
        description: String::new(),
        gold_base: Some(base.into()),
        gold_additive: Some(additive.into()),
    }
}

/// Data cells of the markdown row labelled `label`, space-joined.
pub fn cells(table: &str, label: &str) -> String {
    let line = table
        .lines()
        .find(|l| l.starts_with(&format!("| {label} |")))
        .unwrap_or_else(|| panic!("no row {label} in\n{table}"));
    line.split('|')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .skip(1)
        .collect::<Vec<_>>()
        .join(" ")
}

/// One sample per verdict pattern: both right, base only, additive only, neither.
pub fn four_verdicts() -> (Vec<InterpretationResult>, Vec<DesignSample>) {
    let golds = vec![
        gold("tt", "drying rack", "tree"),
        gold("tf", "drying rack", "tree"),
        gold("ft", "drying rack", "tree"),
        gold("ff", "drying rack", "tree"),
    ];
    let results = vec![
        result("tt", "rack", "tree"),
        result("tf", "rack", "fork"),
        result("ft", "bottle", "tree"),
        result("ff", "bottle", "fork"),
    ];
    (results, golds)
}

/// Both samples swapped: predictions are the gold pairs reversed.
pub fn swapped_set() -> (Vec<InterpretationResult>, Vec<DesignSample>) {
    SWAPPABLE
        .iter()
        .enumerate()
        .map(|(i, (b, a))| (result(&i.to_string(), a, b), gold(&i.to_string(), b, a)))
        .unzip()
}

const WORDS: &[&str] = &[
    "tree", "rack", "drying", "fork", "spoon", "knife", "block", "the", "of",
];

pub type VerdictRow = (String, String, String, String);

pub fn phrase() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 1..4).prop_map(|w| w.join(" "))
}

pub fn verdict_set() -> impl Strategy<Value = Vec<VerdictRow>> {
    prop::collection::vec((phrase(), phrase(), phrase(), phrase()), 0..30)
}

pub fn build(set: &[VerdictRow]) -> (Vec<InterpretationResult>, Vec<DesignSample>) {
    set.iter()
        .enumerate()
        .map(|(i, (pb, pa, gb, ga))| (result(&i.to_string(), pb, pa), gold(&i.to_string(), gb, ga)))
        .unzip()
}

/// Counts partition n and Both never exceeds Base or Additive.
pub fn check_report_invariants(set: &[VerdictRow], mode: CountingMode) -> Check {
    let (results, golds) = build(set);
    let r = evaluate_run(&results, &golds, mode).unwrap();
    let c = r.counts;
    prop_assert_eq!(c.n, set.len());
    prop_assert!(c.both <= c.base.min(c.additive));
    prop_assert!(c.none <= c.n - c.base.max(c.additive));
    let only_base = c.base - c.both;
    let only_add = c.additive - c.both;
    prop_assert_eq!(c.both + only_base + only_add + c.none, c.n);
    prop_assert!(r.both_pct <= r.base_pct.min(r.additive_pct));
    // exact on counts; rounded percentages may overshoot by one tenth
    prop_assert!(r.none_pct <= 100.0 - r.base_pct.max(r.additive_pct) + 0.1 + 1e-9);
    if mode == CountingMode::Strict {
        for v in &r.verdicts {
            prop_assert!(!(v.reversed && v.base_correct && v.additive_correct));
        }
    }
    Ok(())
}
