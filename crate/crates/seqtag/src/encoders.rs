//! Per-token representations and emission scores: embedding lookup or
//! precomputed vectors, optional one-hot POS features, the BiLSTM
//! contextual encoder, and the dense classifier head.

pub mod lstm;

use std::collections::HashMap;

use crate::corpus::{repair_bio, LabelVocab, Sentence};
use crate::error::{Error, Result};
use crate::numeric::{outer_add, row_times_matrix_add, row_times_matrix_t_add, Matrix};
use rand::Rng;

/// Reserved row for tokens unseen at training time.
pub const UNK_ROW: usize = 0;

/// Source of per-token d-dimensional vectors. Trainable mode owns a
/// lookup table updated by backprop; precomputed mode serves frozen
/// per-sentence matrices keyed by sentence id.
#[derive(Clone, Debug, PartialEq)]
pub enum EmbeddingProvider {
    Trainable {
        /// Token strings in first-occurrence order; token i sits at
        /// table row i+1, row [`UNK_ROW`] is the unknown-token vector.
        tokens: Vec<String>,
        index: HashMap<String, usize>,
        table: Matrix,
    },
    Precomputed {
        dim: usize,
        cache: HashMap<String, Matrix>,
    },
}

impl EmbeddingProvider {
    /// Builds the token vocabulary from a corpus and initializes the
    /// table uniform in [-scale, scale], UNK row included.
    pub fn trainable(corpus: &[Sentence], dim: usize, rng: &mut impl Rng, scale: f64) -> Self {
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        for sentence in corpus {
            for token in &sentence.tokens {
                if !index.contains_key(token) {
                    index.insert(token.clone(), tokens.len() + 1);
                    tokens.push(token.clone());
                }
            }
        }
        let table = Matrix::from_fn(tokens.len() + 1, dim, |_, _| rng.random_range(-scale..=scale));
        EmbeddingProvider::Trainable {
            tokens,
            index,
            table,
        }
    }

    pub fn precomputed(dim: usize, cache: HashMap<String, Matrix>) -> Self {
        EmbeddingProvider::Precomputed { dim, cache }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::Trainable { table, .. } => table.cols(),
            EmbeddingProvider::Precomputed { dim, .. } => *dim,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, EmbeddingProvider::Trainable { .. })
    }

    /// Table row index for each token; `None` in precomputed mode.
    pub fn token_rows(&self, sentence: &Sentence) -> Option<Vec<usize>> {
        match self {
            EmbeddingProvider::Trainable { index, .. } => Some(
                sentence
                    .tokens
                    .iter()
                    .map(|t| index.get(t).copied().unwrap_or(UNK_ROW))
                    .collect(),
            ),
            EmbeddingProvider::Precomputed { .. } => None,
        }
    }

    /// The m x d representation of a sentence; row i belongs to token i.
    pub fn embed(&self, sentence: &Sentence) -> Result<Matrix> {
        match self {
            EmbeddingProvider::Trainable { table, .. } => {
                let rows = self.token_rows(sentence).expect("trainable mode");
                Ok(Matrix::from_fn(sentence.len(), table.cols(), |i, j| {
                    table.get(rows[i], j)
                }))
            }
            EmbeddingProvider::Precomputed { cache, .. } => {
                let id = sentence.id.as_deref().unwrap_or("");
                let emb = cache.get(id).ok_or_else(|| {
                    Error::Vocab(format!("no precomputed embeddings for sentence id {id:?}"))
                })?;
                if emb.rows() != sentence.len() {
                    return Err(Error::Shape(format!(
                        "sentence {id:?} has {} tokens but its embeddings have {} rows",
                        sentence.len(),
                        emb.rows()
                    )));
                }
                Ok(emb.clone())
            }
        }
    }
}

/// Parses the precomputed-embedding file format: a `dim=<d>` header,
/// then blank-line-separated blocks of `# id <sentence-id>` followed by
/// one line of d floats per token.
pub fn parse_embeddings(text: &str) -> Result<EmbeddingProvider> {
    let mut lines = text.lines().enumerate();
    let dim: usize = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((idx, l)) => {
                let l = l.trim();
                match l.strip_prefix("dim=") {
                    Some(d) => {
                        break d.parse().map_err(|_| Error::Parse {
                            line: idx + 1,
                            msg: format!("bad dimension in header: {l}"),
                        })?
                    }
                    None => {
                        return Err(Error::Parse {
                            line: idx + 1,
                            msg: format!("expected dim=<d> header, found: {l}"),
                        })
                    }
                }
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "empty embeddings file".to_string(),
                })
            }
        }
    };
    if dim == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "embedding dimension must be positive".to_string(),
        });
    }

    let mut cache: HashMap<String, Matrix> = HashMap::new();
    let mut current_id: Option<String> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut flush = |id: &mut Option<String>, rows: &mut Vec<Vec<f64>>| -> Result<()> {
        if let Some(id) = id.take() {
            let m = Matrix::from_rows(rows)?;
            cache.insert(id, m);
        }
        rows.clear();
        Ok(())
    };

    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            flush(&mut current_id, &mut rows)?;
            continue;
        }
        if let Some(rest) = line.strip_prefix("# id ") {
            flush(&mut current_id, &mut rows)?;
            current_id = Some(rest.trim().to_string());
            continue;
        }
        if current_id.is_none() {
            return Err(Error::Parse {
                line: line_no,
                msg: "embedding row before any '# id' block header".to_string(),
            });
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad float: {v}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {dim} values per row, found {}", values.len()),
            });
        }
        rows.push(values);
    }
    flush(&mut current_id, &mut rows)?;
    Ok(EmbeddingProvider::precomputed(dim, cache))
}

/// POS tag strings in first-occurrence order, for one-hot features.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PosVocab {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl PosVocab {
    pub fn from_corpus(corpus: &[Sentence]) -> Self {
        let mut v = PosVocab::default();
        for sentence in corpus {
            if let Some(pos) = &sentence.pos_tags {
                for tag in pos {
                    if !v.index.contains_key(tag) {
                        v.index.insert(tag.clone(), v.tags.len());
                        v.tags.push(tag.clone());
                    }
                }
            }
        }
        v
    }

    pub fn from_tags(tags: Vec<String>) -> Self {
        let index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        PosVocab { tags, index }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }
}

/// Appends a one-hot POS encoding (width = vocab size) to every row.
/// Unknown tags get an all-zero suffix.
pub fn concat_pos_features(
    emb: &Matrix,
    pos_tags: &[String],
    pos_vocab: &PosVocab,
) -> Result<Matrix> {
    if pos_tags.len() != emb.rows() {
        return Err(Error::Shape(format!(
            "{} POS tags for {} embedding rows",
            pos_tags.len(),
            emb.rows()
        )));
    }
    let (m, d) = emb.shape();
    let p = pos_vocab.len();
    let mut out = Matrix::zeros(m, d + p);
    for (i, pos) in pos_tags.iter().enumerate() {
        out.row_mut(i)[..d].copy_from_slice(emb.row(i));
        if let Some(idx) = pos_vocab.index_of(pos) {
            out.set(i, d + idx, 1.0);
        }
    }
    Ok(out)
}

/// One affine map; weights are input x output, bias is a single row.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineLayer {
    pub w: Matrix,
    pub b: Matrix,
}

impl AffineLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        AffineLayer {
            w: Matrix::zeros(input, output),
            b: Matrix::zeros(1, output),
        }
    }

    pub fn init(input: usize, output: usize, rng: &mut impl Rng, scale: f64) -> Self {
        let mut l = AffineLayer::zeros(input, output);
        for v in l.w.data_mut() {
            *v = rng.random_range(-scale..=scale);
        }
        l
    }
}

/// One or two affine maps applied row-wise, ReLU between two.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    pub layers: Vec<AffineLayer>,
}

impl LinearHead {
    pub fn single(input: usize, k: usize, rng: &mut impl Rng, scale: f64) -> Self {
        LinearHead {
            layers: vec![AffineLayer::init(input, k, rng, scale)],
        }
    }

    pub fn two_layer(input: usize, mid: usize, k: usize, rng: &mut impl Rng, scale: f64) -> Self {
        LinearHead {
            layers: vec![
                AffineLayer::init(input, mid, rng, scale),
                AffineLayer::init(mid, k, rng, scale),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").w.cols()
    }

    pub fn forward(&self, h: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(h)?.0)
    }

    pub(crate) fn forward_cached(&self, h: &Matrix) -> Result<(Matrix, HeadTrace)> {
        if h.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "head expects input width {} but got {}",
                self.input_dim(),
                h.cols()
            )));
        }
        let mut trace = HeadTrace {
            input: h.clone(),
            hidden: None,
        };
        let mut cur = affine_forward(h, &self.layers[0]);
        if self.layers.len() == 2 {
            for v in cur.data_mut() {
                *v = v.max(0.0);
            }
            trace.hidden = Some(cur.clone());
            cur = affine_forward(&cur, &self.layers[1]);
        }
        Ok((cur, trace))
    }

    /// Gradients given dLoss/dOutput; returns per-layer (dW, db) and
    /// dLoss/dInput.
    pub(crate) fn backward(
        &self,
        trace: &HeadTrace,
        d_out: &Matrix,
    ) -> (Vec<AffineLayer>, Matrix) {
        match self.layers.len() {
            1 => {
                let (g, d_in) = affine_backward(&trace.input, &self.layers[0], d_out);
                (vec![g], d_in)
            }
            2 => {
                let hidden = trace.hidden.as_ref().expect("two-layer trace");
                let (g2, mut d_hidden) = affine_backward(hidden, &self.layers[1], d_out);
                // ReLU gate: zero where the activation was clamped.
                for (dv, &hv) in d_hidden.data_mut().iter_mut().zip(hidden.data()) {
                    if hv == 0.0 {
                        *dv = 0.0;
                    }
                }
                let (g1, d_in) = affine_backward(&trace.input, &self.layers[0], &d_hidden);
                (vec![g1, g2], d_in)
            }
            n => unreachable!("head has {n} layers"),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct HeadTrace {
    input: Matrix,
    hidden: Option<Matrix>, // post-ReLU activations of the first layer
}

fn affine_forward(x: &Matrix, layer: &AffineLayer) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), layer.w.cols());
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        row.copy_from_slice(layer.b.row(0));
        row_times_matrix_add(x.row(i), &layer.w, row);
    }
    out
}

fn affine_backward(x: &Matrix, layer: &AffineLayer, d_out: &Matrix) -> (AffineLayer, Matrix) {
    let mut grads = AffineLayer::zeros(layer.w.rows(), layer.w.cols());
    let mut d_x = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        outer_add(x.row(i), d_out.row(i), &mut grads.w);
        for (b, &d) in grads.b.row_mut(0).iter_mut().zip(d_out.row(i)) {
            *b += d;
        }
        row_times_matrix_t_add(d_out.row(i), &layer.w, d_x.row_mut(i));
    }
    (grads, d_x)
}

/// Per-token argmax over emission scores (ties to the lower label
/// index), then BIO repair so the result is always a valid sequence.
pub fn softmax_decode(p: &Matrix, vocab: &LabelVocab) -> Result<Vec<String>> {
    if p.cols() != vocab.num_labels() {
        return Err(Error::Shape(format!(
            "{} emission columns for {} labels",
            p.cols(),
            vocab.num_labels()
        )));
    }
    let mut tags = Vec::with_capacity(p.rows());
    for i in 0..p.rows() {
        let row = p.row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = j;
            }
        }
        tags.push(vocab.tag_of(best).to_string());
    }
    Ok(repair_bio(&tags))
}

/// Inverted dropout. Training mode zeroes each entry with probability
/// `rate` and scales survivors by 1/(1-rate); inference is the identity.
pub fn apply_dropout(
    x: &Matrix,
    rate: f64,
    rng: &mut impl Rng,
    training: bool,
) -> Result<Matrix> {
    Ok(match dropout_mask(x.shape(), rate, rng, training)? {
        Some(mask) => {
            let mut out = x.clone();
            for (v, &m) in out.data_mut().iter_mut().zip(mask.data()) {
                *v *= m;
            }
            out
        }
        None => x.clone(),
    })
}

/// The multiplicative mask used by [`apply_dropout`]: entries are 0 or
/// 1/(1-rate). `None` when dropout is inactive. The same mask multiplies
/// the gradient on the way back.
pub(crate) fn dropout_mask(
    shape: (usize, usize),
    rate: f64,
    rng: &mut impl Rng,
    training: bool,
) -> Result<Option<Matrix>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Domain(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if !training || rate == 0.0 {
        return Ok(None);
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let (rows, cols) = shape;
    let mut mask = Matrix::zeros(rows, cols);
    for v in mask.data_mut() {
        if rng.random_range(0.0..1.0) >= rate {
            *v = keep_scale;
        }
    }
    Ok(Some(mask))
}
