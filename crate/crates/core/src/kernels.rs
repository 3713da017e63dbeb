//! Reference numerics for the relation and alignment models.
//!
//! Context-aware relation attention scores each contextual relation
//! representation `o_i` against the target `o_t` with a bilinear form,
//! softmaxes the scores and sums the weighted rows. The multimodal path
//! projects text tokens `X` and detected objects `Y` into keys, queries and
//! values, attends from objects to (unmasked) tokens and reduces `βV` over
//! the object axis into one visual summary vector.
//!
//! Everything here is pure and allocation-only; matrices are row-major
//! `ndarray` arrays of `f64`.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::backends::EmbeddingVector;
use crate::error::KernelError;

pub const CLS: &str = "[cls]";
pub const SEP: &str = "[sep]";
pub const START: &str = "[start]";
pub const END: &str = "[end]";
pub const PAD: &str = "[pad]";

fn dim_err(msg: String) -> KernelError {
    KernelError::Dimension(msg)
}

#[derive(Debug, Clone)]
pub struct ContextAttentionInputs {
    /// One contextual relation representation per row.
    pub contextual_reps: Array2<f64>,
    pub target_rep: Array1<f64>,
    /// Square bilinear weight matrix.
    pub bilinear: Array2<f64>,
}

impl ContextAttentionInputs {
    fn check(&self) -> Result<(), KernelError> {
        let (m, o) = self.contextual_reps.dim();
        if m == 0 {
            return Err(KernelError::Input(
                "at least one contextual relation is required".into(),
            ));
        }
        if self.target_rep.len() != o || self.bilinear.dim() != (o, o) {
            return Err(dim_err(format!(
                "rows have width {o}, target has {}, bilinear is {:?}",
                self.target_rep.len(),
                self.bilinear.dim()
            )));
        }
        Ok(())
    }
}

/// `g_i = o_i · A · o_t` for every contextual row.
pub fn bilinear_scores(inputs: &ContextAttentionInputs) -> Result<Array1<f64>, KernelError> {
    inputs.check()?;
    let a_ot = inputs.bilinear.dot(&inputs.target_rep);
    Ok(inputs.contextual_reps.dot(&a_ot))
}

/// Softmax of the scores, shifted by their maximum.
pub fn attention_weights(scores: ArrayView1<f64>) -> Result<Array1<f64>, KernelError> {
    if scores.is_empty() {
        return Err(KernelError::Input("scores must be non-empty".into()));
    }
    if scores.iter().any(|g| !g.is_finite()) {
        return Err(KernelError::Input("scores must be finite".into()));
    }
    let max = scores.fold(f64::NEG_INFINITY, |m, &g| m.max(g));
    let exp = scores.mapv(|g| (g - max).exp());
    let total = exp.sum();
    Ok(exp / total)
}

/// `o_c = Σ a_i o_i`.
pub fn context_representation(
    weights: ArrayView1<f64>,
    contextual_reps: ArrayView2<f64>,
) -> Result<Array1<f64>, KernelError> {
    if weights.len() != contextual_reps.nrows() {
        return Err(dim_err(format!(
            "{} weights for {} contextual rows",
            weights.len(),
            contextual_reps.nrows()
        )));
    }
    Ok(contextual_reps.t().dot(&weights))
}

/// `[o_t, o_c]`, the input of the relation classifier.
pub fn concat_target_context(target: ArrayView1<f64>, context: ArrayView1<f64>) -> Array1<f64> {
    concatenate(Axis(0), &[target, context]).expect("1-d concatenation")
}

/// Full context-attention pass: scores, weights, and `[o_t, o_c]`.
pub fn context_attention(inputs: &ContextAttentionInputs) -> Result<Array1<f64>, KernelError> {
    let g = bilinear_scores(inputs)?;
    let a = attention_weights(g.view())?;
    let oc = context_representation(a.view(), inputs.contextual_reps.view())?;
    Ok(concat_target_context(inputs.target_rep.view(), oc.view()))
}

/// Cosine similarity of two equal-length nonzero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, KernelError> {
    if a.len() != b.len() {
        return Err(dim_err(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(KernelError::Input(
            "cosine of a zero vector is undefined".into(),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Text-image compatibility: cosine of the two embeddings.
pub fn compatibility_score(
    text_vec: &EmbeddingVector,
    image_vec: &EmbeddingVector,
) -> Result<f64, KernelError> {
    cosine(&text_vec.values, &image_vec.values)
}

#[derive(Debug, Clone)]
pub struct AlignmentInputs {
    /// Token representations, `l × d_x`.
    pub text: Array2<f64>,
    /// Object features, `m × d_y`.
    pub objects: Array2<f64>,
    /// `d × d_x`
    pub w_k: Array2<f64>,
    pub b_k: Array1<f64>,
    /// `d × d_y`
    pub w_q: Array2<f64>,
    pub b_q: Array1<f64>,
    /// `d_v × d_x`
    pub w_v: Array2<f64>,
    pub b_v: Array1<f64>,
    pub scale_dim: f64,
    /// 1 for a real token, 0 for padding; one entry per text row.
    pub token_mask: Vec<u8>,
}

/// Row-wise affine map `W x + b` over the rows of `input`.
pub fn affine_rows(
    input: ArrayView2<f64>,
    weight: ArrayView2<f64>,
    bias: ArrayView1<f64>,
) -> Result<Array2<f64>, KernelError> {
    if weight.ncols() != input.ncols() {
        return Err(dim_err(format!(
            "weight is {:?} but input rows have width {}",
            weight.dim(),
            input.ncols()
        )));
    }
    if bias.len() != weight.nrows() {
        return Err(dim_err(format!(
            "bias has length {} for {} outputs",
            bias.len(),
            weight.nrows()
        )));
    }
    Ok(input.dot(&weight.t()) + bias)
}

/// `(K, Q, V)` row matrices.
pub type Projections = (Array2<f64>, Array2<f64>, Array2<f64>);

/// `(β, V, ŷ)`.
pub type Alignment = (Array2<f64>, Array2<f64>, Array1<f64>);

/// Keys and values from the text, queries from the objects.
pub fn qkv_project(inputs: &AlignmentInputs) -> Result<Projections, KernelError> {
    let k = affine_rows(inputs.text.view(), inputs.w_k.view(), inputs.b_k.view())?;
    let q = affine_rows(inputs.objects.view(), inputs.w_q.view(), inputs.b_q.view())?;
    let v = affine_rows(inputs.text.view(), inputs.w_v.view(), inputs.b_v.view())?;
    if q.ncols() != k.ncols() {
        return Err(dim_err(format!(
            "queries have width {} but keys have width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    Ok((k, q, v))
}

/// `β = softmax(Q Kᵀ / √d)` per query row. Keys whose mask entry is 0 get
/// weight exactly 0.
pub fn alignment_weights(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    scale_dim: f64,
    key_mask: &[u8],
) -> Result<Array2<f64>, KernelError> {
    if q.ncols() != k.ncols() {
        return Err(dim_err(format!("Q is {:?}, K is {:?}", q.dim(), k.dim())));
    }
    if key_mask.len() != k.nrows() {
        return Err(dim_err(format!(
            "mask has {} entries for {} keys",
            key_mask.len(),
            k.nrows()
        )));
    }
    if scale_dim.is_nan() || scale_dim <= 0.0 {
        return Err(KernelError::Input(
            "scale dimension must be positive".into(),
        ));
    }
    if !key_mask.iter().any(|&m| m != 0) {
        return Err(KernelError::Input("every key is masked".into()));
    }
    let scale = scale_dim.sqrt();
    let mut beta = q.dot(&k.t()) / scale;
    for mut row in beta.rows_mut() {
        let max = row
            .iter()
            .zip(key_mask)
            .filter(|(_, &m)| m != 0)
            .fold(f64::NEG_INFINITY, |acc, (&x, _)| acc.max(x));
        let mut total = 0.0;
        for (x, &m) in row.iter_mut().zip(key_mask) {
            *x = if m != 0 { (*x - max).exp() } else { 0.0 };
            total += *x;
        }
        row /= total;
    }
    Ok(beta)
}

/// `ŷ = 1ᵀ(βV)`: the attended values summed over the object axis.
pub fn visual_summary(
    beta: ArrayView2<f64>,
    v: ArrayView2<f64>,
) -> Result<Array1<f64>, KernelError> {
    if beta.ncols() != v.nrows() {
        return Err(dim_err(format!(
            "β is {:?}, V is {:?}",
            beta.dim(),
            v.dim()
        )));
    }
    Ok(beta.dot(&v).sum_axis(Axis(0)))
}

/// Projection, masked alignment and summary in one pass. Returns `(β, V, ŷ)`.
pub fn align(inputs: &AlignmentInputs) -> Result<Alignment, KernelError> {
    if inputs.token_mask.len() != inputs.text.nrows() {
        return Err(dim_err(format!(
            "mask has {} entries for {} tokens",
            inputs.token_mask.len(),
            inputs.text.nrows()
        )));
    }
    let (k, q, v) = qkv_project(inputs)?;
    let beta = alignment_weights(q.view(), k.view(), inputs.scale_dim, &inputs.token_mask)?;
    let summary = visual_summary(beta.view(), v.view())?;
    Ok((beta, v, summary))
}

/// Append zero rows so `objects` has exactly `m` rows.
pub fn pad_objects(objects: ArrayView2<f64>, m: usize) -> Result<Array2<f64>, KernelError> {
    if m == 0 {
        return Err(KernelError::Input("object count must be positive".into()));
    }
    if objects.nrows() > m {
        return Err(KernelError::Input(format!(
            "{} objects exceed the limit of {m}",
            objects.nrows()
        )));
    }
    let mut out = Array2::zeros((m, objects.ncols()));
    out.slice_mut(s![..objects.nrows(), ..]).assign(&objects);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedSequence {
    pub tokens: Vec<String>,
    pub mask: Vec<u8>,
    /// Positions of the `[start]` markers of the head and tail entities.
    pub entity_starts: [usize; 2],
}

impl MarkedSequence {
    /// Content tokens with every control token removed.
    pub fn content_tokens(&self) -> Vec<&str> {
        self.tokens
            .iter()
            .map(String::as_str)
            .filter(|t| ![CLS, SEP, START, END, PAD].contains(t))
            .collect()
    }
}

/// Whitespace tokens with their character ranges.
fn whitespace_tokens(text: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut cur = String::new();
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        n = i + 1;
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, i, std::mem::take(&mut cur)));
            }
        } else {
            start.get_or_insert(i);
            cur.push(c);
        }
    }
    if let Some(s) = start {
        out.push((s, n, cur));
    }
    out
}

/// Wrap the head and tail entities (character spans) in `[start]`/`[end]`,
/// frame the sequence with `[cls]`/`[sep]` and pad to `max_len`.
pub fn mark_entities(
    text: &str,
    head_span: (usize, usize),
    tail_span: (usize, usize),
    max_len: usize,
) -> Result<MarkedSequence, KernelError> {
    let tokens = whitespace_tokens(text);
    let covering = |(s, e): (usize, usize)| -> Result<(usize, usize), KernelError> {
        if s >= e {
            return Err(KernelError::Input(format!("empty span ({s}, {e})")));
        }
        let idx: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, (ts, te, _))| *ts < e && s < *te)
            .map(|(i, _)| i)
            .collect();
        match (idx.first(), idx.last()) {
            (Some(&a), Some(&b)) => Ok((a, b + 1)),
            _ => Err(KernelError::Input(format!(
                "span ({s}, {e}) covers no token"
            ))),
        }
    };
    let head = covering(head_span)?;
    let tail = covering(tail_span)?;
    if head.0 < tail.1 && tail.0 < head.1 {
        return Err(KernelError::Input("head and tail spans overlap".into()));
    }

    let required = tokens.len() + 6;
    if required > max_len {
        return Err(KernelError::Input(format!(
            "marked sequence needs {required} positions but max length is {max_len}"
        )));
    }

    let mut out = Vec::with_capacity(max_len);
    let mut starts = [0usize; 2];
    out.push(CLS.to_string());
    for (i, (_, _, tok)) in tokens.iter().enumerate() {
        for (slot, span) in [head, tail].iter().enumerate() {
            if i == span.0 {
                starts[slot] = out.len();
                out.push(START.to_string());
            }
        }
        out.push(tok.clone());
        for span in [head, tail] {
            if i + 1 == span.1 {
                out.push(END.to_string());
            }
        }
    }
    out.push(SEP.to_string());
    let real = out.len();
    out.resize(max_len, PAD.to_string());
    let mask = (0..max_len).map(|i| u8::from(i < real)).collect();
    Ok(MarkedSequence {
        tokens: out,
        mask,
        entity_starts: starts,
    })
}

/// `concat(v[E1_start], v[E2_start], ŷ)`, the relation classifier input.
pub fn relation_features(
    values: ArrayView2<f64>,
    marked: &MarkedSequence,
    summary: ArrayView1<f64>,
) -> Result<Array1<f64>, KernelError> {
    if values.nrows() != marked.tokens.len() {
        return Err(dim_err(format!(
            "V has {} rows for a sequence of {}",
            values.nrows(),
            marked.tokens.len()
        )));
    }
    let [e1, e2] = marked.entity_starts;
    Ok(
        concatenate(Axis(0), &[values.row(e1), values.row(e2), summary])
            .expect("1-d concatenation"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn bilinear_identity_and_zero() {
        let inp = ContextAttentionInputs {
            contextual_reps: array![[1.0, 0.0], [1.0, 0.0]],
            target_rep: array![1.0, 0.0],
            bilinear: Array2::eye(2),
        };
        assert_eq!(bilinear_scores(&inp).unwrap(), array![1.0, 1.0]);
        let zero = ContextAttentionInputs {
            bilinear: Array2::zeros((2, 2)),
            ..inp
        };
        assert_eq!(bilinear_scores(&zero).unwrap(), array![0.0, 0.0]);
    }

    #[test]
    fn bilinear_shape_mismatch() {
        let inp = ContextAttentionInputs {
            contextual_reps: array![[1.0, 0.0]],
            target_rep: array![1.0, 0.0, 0.0],
            bilinear: Array2::eye(2),
        };
        assert!(matches!(
            bilinear_scores(&inp),
            Err(KernelError::Dimension(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(attention_weights(array![3.0].view()).unwrap(), array![1.0]);
        assert_eq!(
            attention_weights(array![2.0, 2.0].view()).unwrap(),
            array![0.5, 0.5]
        );
        let w = attention_weights(array![0.0, 3f64.ln()].view()).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-12 && (w[1] - 0.75).abs() < 1e-12);
        let big = attention_weights(array![1000.0, 1000.0].view()).unwrap();
        assert_eq!(big, array![0.5, 0.5]);
        assert!(attention_weights(Array1::<f64>::zeros(0).view()).is_err());
        assert!(attention_weights(array![f64::NAN].view()).is_err());
    }

    #[test]
    fn context_examples() {
        let v = array![[1.0, 2.0]];
        assert_eq!(
            context_representation(array![1.0].view(), v.view()).unwrap(),
            array![1.0, 2.0]
        );
        let uv = array![[1.0, 2.0], [3.0, 6.0]];
        assert_eq!(
            context_representation(array![0.5, 0.5].view(), uv.view()).unwrap(),
            array![2.0, 4.0]
        );
        assert!(context_representation(array![1.0].view(), uv.view()).is_err());
        let full = context_attention(&ContextAttentionInputs {
            contextual_reps: uv,
            target_rep: array![1.0, 1.0],
            bilinear: Array2::zeros((2, 2)),
        })
        .unwrap();
        assert_eq!(full, array![1.0, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn cosine_examples() {
        let e = |v: Vec<f64>| EmbeddingVector::new(v);
        assert!(
            (compatibility_score(&e(vec![2.0, 3.0]), &e(vec![2.0, 3.0])).unwrap() - 1.0).abs()
                < 1e-15
        );
        assert_eq!(
            compatibility_score(&e(vec![1.0, 0.0]), &e(vec![0.0, 1.0])).unwrap(),
            0.0
        );
        let s = compatibility_score(&e(vec![1.0, 0.0]), &e(vec![1.0, 1.0])).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            compatibility_score(&e(vec![0.0, 0.0]), &e(vec![1.0, 1.0])),
            Err(KernelError::Input(_))
        ));
        assert!(matches!(
            compatibility_score(&e(vec![1.0]), &e(vec![1.0, 1.0])),
            Err(KernelError::Dimension(_))
        ));
    }

    fn inputs(x: Array2<f64>, y: Array2<f64>, d: usize) -> AlignmentInputs {
        let (l, dx) = x.dim();
        let dy = y.ncols();
        AlignmentInputs {
            w_k: Array2::eye(d).slice(s![.., ..dx]).to_owned(),
            w_q: Array2::eye(d).slice(s![.., ..dy]).to_owned(),
            w_v: Array2::eye(dx),
            b_k: Array1::zeros(d),
            b_q: Array1::zeros(d),
            b_v: Array1::zeros(dx),
            text: x,
            objects: y,
            scale_dim: d as f64,
            token_mask: vec![1; l],
        }
    }

    #[test]
    fn projection_identity_and_zero_weights() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let y = array![[7.0, 8.0]];
        let inp = inputs(x.clone(), y.clone(), 2);
        let (k, q, v) = qkv_project(&inp).unwrap();
        assert_eq!(k, x);
        assert_eq!(q, y);
        assert_eq!(v, x);

        let zeroed = AlignmentInputs {
            w_k: Array2::zeros((2, 2)),
            b_k: array![0.5, -1.0],
            ..inp
        };
        let (k, _, _) = qkv_project(&zeroed).unwrap();
        for row in k.rows() {
            assert_eq!(row, array![0.5, -1.0]);
        }
    }

    #[test]
    fn alignment_masking() {
        let k = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let q0 = Array2::zeros((2, 2));
        let beta = alignment_weights(q0.view(), k.view(), 2.0, &[1, 1, 0]).unwrap();
        for row in beta.rows() {
            assert_eq!(row, array![0.5, 0.5, 0.0]);
        }
        let q = array![[3.0, -1.0], [0.2, 0.9]];
        let beta = alignment_weights(q.view(), k.view(), 2.0, &[0, 1, 0]).unwrap();
        for row in beta.rows() {
            assert_eq!(row, array![0.0, 1.0, 0.0]);
        }
        assert!(matches!(
            alignment_weights(q.view(), k.view(), 2.0, &[0, 0, 0]),
            Err(KernelError::Input(_))
        ));
    }

    #[test]
    fn summary_examples() {
        let beta = array![[0.25, 0.75]];
        let v = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(
            visual_summary(beta.view(), v.view()).unwrap(),
            beta.dot(&v).row(0).to_owned()
        );
        let same = array![[0.25, 0.75], [0.25, 0.75], [0.25, 0.75]];
        assert_eq!(
            visual_summary(same.view(), v.view()).unwrap(),
            array![7.5, 10.5]
        );
        assert!(visual_summary(array![[1.0]].view(), v.view()).is_err());
    }

    #[test]
    fn marking_layout() {
        let m = mark_entities("a b", (0, 1), (2, 3), 12).unwrap();
        assert_eq!(m.tokens.len(), 12);
        assert_eq!(m.mask.iter().map(|&x| x as usize).sum::<usize>(), 8);
        assert_eq!(
            &m.tokens[..8],
            &[CLS, START, "a", END, START, "b", END, SEP].map(String::from)
        );
        assert!(m.tokens[8..].iter().all(|t| t == PAD));
        assert_eq!(m.entity_starts, [1, 4]);

        let exact = mark_entities("a b", (0, 1), (2, 3), 8).unwrap();
        assert!(exact.mask.iter().all(|&x| x == 1));
        assert!(!exact.tokens.contains(&PAD.to_string()));

        let err = mark_entities("a b", (0, 1), (2, 3), 7).unwrap_err();
        assert!(err.to_string().contains("needs 8"));
        assert!(mark_entities("a b c", (0, 3), (2, 5), 20).is_err());
    }

    #[test]
    fn marking_multiword_entities_in_reverse_order() {
        let text = "the vase series was inspired by tree trunks";
        let head = (4, 15); // vase series
        let tail = (32, 43); // tree trunks
        let m = mark_entities(text, tail, head, 20).unwrap();
        assert_eq!(
            m.content_tokens(),
            text.split_whitespace().collect::<Vec<_>>()
        );
        assert_eq!(m.tokens[m.entity_starts[0] + 1], "tree");
        assert_eq!(m.tokens[m.entity_starts[1] + 1], "vase");
    }

    #[test]
    fn padding_objects() {
        let y = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(pad_objects(y.view(), 2).unwrap(), y);
        let p = pad_objects(y.view(), 5).unwrap();
        assert_eq!(p.slice(s![..2, ..]), y);
        assert!(p.slice(s![2.., ..]).iter().all(|&x| x == 0.0));
        let empty = Array2::<f64>::zeros((0, 3));
        assert_eq!(
            pad_objects(empty.view(), 4).unwrap(),
            Array2::<f64>::zeros((4, 3))
        );
        assert!(pad_objects(y.view(), 1).is_err());
    }

    #[test]
    fn classifier_input_shape() {
        let m = mark_entities("a b", (0, 1), (2, 3), 10).unwrap();
        let x = Array2::from_shape_fn((10, 3), |(i, j)| (i * 3 + j) as f64);
        let objects = pad_objects(array![[1.0, 0.0]].view(), 3).unwrap();
        let inp = AlignmentInputs {
            token_mask: m.mask.clone(),
            ..inputs(x, objects, 3)
        };
        let (beta, v, y_hat) = align(&inp).unwrap();
        assert_eq!(beta.dim(), (3, 10));
        assert!(beta.slice(s![.., 8..]).iter().all(|&b| b == 0.0));
        let feats = relation_features(v.view(), &m, y_hat.view()).unwrap();
        assert_eq!(feats.len(), 9);
        assert_eq!(feats.slice(s![..3]), v.row(1));
        assert_eq!(feats.slice(s![3..6]), v.row(4));
    }
}
