//! Linear-chain CRF: sequence scoring, exact log-partition via the
//! forward algorithm, NLL with analytic forward-backward gradients, and
//! Viterbi decoding. All dynamic programming runs in log space.
//!
//! The transition matrix carries two virtual states, START (index k) and
//! END (index k+1). A sequence y_1..y_m is scored as
//!
//!   s = A[START, y_1] + sum_i P[i, y_i] + sum_i A[y_i, y_{i+1}] + A[y_m, END]
//!
//! Transitions into START and out of END are pinned to -10000 and masked
//! out of training updates; the recursions below never read them.

use crate::corpus::{BioTag, LabelVocab};
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, Matrix};
use rand::Rng;

/// Score pinned on forbidden transitions. Large enough to zero them out
/// under exp() in f64, small enough to keep every sum finite.
pub const MASKED_SCORE: f64 = -10000.0;

/// Emission scores, one row per token, one column per emittable label.
pub type EmissionMatrix = Matrix;

/// (k+2)x(k+2) transition scores over k emittable labels plus START/END.
/// Masked entries stay at [`MASKED_SCORE`] and never receive updates.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    a: Matrix,
    k: usize,
    mask: Vec<bool>,
}

impl TransitionMatrix {
    /// All trainable entries zero; masked entries pinned.
    pub fn new(k: usize) -> Self {
        assert!(k >= 1, "need at least one emittable label");
        let n = k + 2;
        let mut mask = vec![false; n * n];
        for i in 0..n {
            mask[i * n + k] = true; // into START
            mask[(k + 1) * n + i] = true; // out of END
        }
        let mut a = Matrix::zeros(n, n);
        for (idx, &masked) in mask.iter().enumerate() {
            if masked {
                a.data_mut()[idx] = MASKED_SCORE;
            }
        }
        TransitionMatrix { a, k, mask }
    }

    /// Wraps an existing (k+2)x(k+2) matrix, re-pinning the masked entries.
    pub fn from_matrix(a: Matrix) -> Result<Self> {
        if a.rows() != a.cols() || a.rows() < 3 {
            return Err(Error::Shape(format!(
                "transition matrix must be square with side >= 3, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        let k = a.rows() - 2;
        let mut t = TransitionMatrix::new(k);
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                if !t.is_masked(i, j) {
                    t.a.set(i, j, a.get(i, j));
                }
            }
        }
        Ok(t)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn start(&self) -> usize {
        self.k
    }

    pub fn end(&self) -> usize {
        self.k + 1
    }

    pub fn score(&self, from: usize, to: usize) -> f64 {
        self.a.get(from, to)
    }

    pub fn is_masked(&self, from: usize, to: usize) -> bool {
        self.mask[from * self.a.cols() + to]
    }

    pub fn set(&mut self, from: usize, to: usize, value: f64) {
        debug_assert!(!self.is_masked(from, to), "write to masked transition");
        self.a.set(from, to, value);
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    /// Raw storage plus mask, for optimizers that walk flat slices.
    pub(crate) fn raw_parts_mut(&mut self) -> (&mut Matrix, &[bool]) {
        (&mut self.a, &self.mask)
    }

    /// Uniform init on trainable entries, row-major order (deterministic
    /// for a given rng state).
    pub fn init_uniform(&mut self, rng: &mut impl Rng, scale: f64) {
        let n = self.a.rows();
        for i in 0..n {
            for j in 0..n {
                if !self.is_masked(i, j) {
                    self.a.set(i, j, rng.random_range(-scale..=scale));
                }
            }
        }
    }

    /// `self += factor * grad` on trainable entries only.
    pub fn add_scaled(&mut self, grad: &Matrix, factor: f64) {
        debug_assert_eq!(grad.shape(), self.a.shape());
        let n = self.a.rows();
        for i in 0..n {
            for j in 0..n {
                if !self.is_masked(i, j) {
                    let v = self.a.get(i, j) + factor * grad.get(i, j);
                    self.a.set(i, j, v);
                }
            }
        }
    }

    /// Extends the mask with transitions that can never occur in valid
    /// BIO: anything into I-X from a state that is not B-X or I-X.
    pub fn apply_bio_mask(&mut self, vocab: &LabelVocab) -> Result<()> {
        if vocab.num_labels() != self.k {
            return Err(Error::Shape(format!(
                "vocab has {} labels but transition matrix expects {}",
                vocab.num_labels(),
                self.k
            )));
        }
        let n = self.k + 2;
        for to in 0..self.k {
            let inside = match BioTag::parse(vocab.tag_of(to))? {
                BioTag::Inside(t) => t,
                _ => continue,
            };
            for from in 0..n {
                if from == self.end() {
                    continue; // whole row already masked
                }
                let legal = from < self.k
                    && matches!(
                        BioTag::parse(vocab.tag_of(from))?,
                        BioTag::Begin(t) | BioTag::Inside(t) if t == inside
                    );
                if !legal {
                    self.mask[from * n + to] = true;
                    self.a.set(from, to, MASKED_SCORE);
                }
            }
        }
        Ok(())
    }
}

fn check_shapes(p: &EmissionMatrix, a: &TransitionMatrix) -> Result<()> {
    if p.rows() == 0 {
        return Err(Error::Shape("emission matrix must have at least one row".into()));
    }
    if p.cols() != a.k() {
        return Err(Error::Shape(format!(
            "emissions have {} labels but transitions expect {}",
            p.cols(),
            a.k()
        )));
    }
    Ok(())
}

fn check_labels(y: &[usize], m: usize, k: usize) -> Result<()> {
    if y.len() != m {
        return Err(Error::Shape(format!(
            "label sequence length {} does not match {} tokens",
            y.len(),
            m
        )));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= k) {
        return Err(Error::Domain(format!(
            "label index {bad} out of range for {k} labels"
        )));
    }
    Ok(())
}

/// Exact score of one labeling, including the START and END transitions.
pub fn sequence_score(p: &EmissionMatrix, a: &TransitionMatrix, y: &[usize]) -> Result<f64> {
    check_shapes(p, a)?;
    check_labels(y, p.rows(), a.k())?;
    let m = y.len();
    let mut score = a.score(a.start(), y[0]);
    for (i, &label) in y.iter().enumerate() {
        score += p.get(i, label);
        if i + 1 < m {
            score += a.score(label, y[i + 1]);
        }
    }
    score += a.score(y[m - 1], a.end());
    Ok(score)
}

/// log of the sum of exp(sequence_score) over all k^m labelings, by the
/// alpha recursion.
pub fn log_partition(p: &EmissionMatrix, a: &TransitionMatrix) -> Result<f64> {
    check_shapes(p, a)?;
    let (m, k) = p.shape();
    let mut alpha: Vec<f64> = (0..k).map(|j| a.score(a.start(), j) + p.get(0, j)).collect();
    let mut scratch = vec![0.0; k];
    for t in 1..m {
        let mut next = vec![0.0; k];
        for (j, slot) in next.iter_mut().enumerate() {
            for (i, s) in scratch.iter_mut().enumerate() {
                *s = alpha[i] + a.score(i, j);
            }
            *slot = log_sum_exp(&scratch)? + p.get(t, j);
        }
        alpha = next;
    }
    for (j, s) in scratch.iter_mut().enumerate() {
        *s = alpha[j] + a.score(j, a.end());
    }
    log_sum_exp(&scratch)
}

/// Negative log-likelihood of the gold labeling:
/// log_partition - sequence_score(gold). Non-negative.
pub fn crf_nll(p: &EmissionMatrix, a: &TransitionMatrix, gold: &[usize]) -> Result<f64> {
    Ok(log_partition(p, a)? - sequence_score(p, a, gold)?)
}

/// Loss plus analytic gradients in one forward-backward sweep.
///
/// dLoss/dP[t,j] is the marginal probability of label j at position t
/// minus the gold indicator; dLoss/dA likewise with pairwise marginals.
/// Gradient entries at masked transitions are zero.
pub fn crf_loss_and_gradients(
    p: &EmissionMatrix,
    a: &TransitionMatrix,
    gold: &[usize],
) -> Result<(f64, Matrix, Matrix)> {
    check_shapes(p, a)?;
    check_labels(gold, p.rows(), a.k())?;
    let (m, k) = p.shape();
    let n = k + 2;

    // Forward: alpha[t][j] includes the emission at t.
    let mut alpha = vec![vec![0.0; k]; m];
    for (j, slot) in alpha[0].iter_mut().enumerate() {
        *slot = a.score(a.start(), j) + p.get(0, j);
    }
    let mut scratch = vec![0.0; k];
    for t in 1..m {
        for j in 0..k {
            for (i, s) in scratch.iter_mut().enumerate() {
                *s = alpha[t - 1][i] + a.score(i, j);
            }
            alpha[t][j] = log_sum_exp(&scratch)? + p.get(t, j);
        }
    }
    for (j, s) in scratch.iter_mut().enumerate() {
        *s = alpha[m - 1][j] + a.score(j, a.end());
    }
    let log_z = log_sum_exp(&scratch)?;

    // Backward: beta[t][i] excludes the emission at t.
    let mut beta = vec![vec![0.0; k]; m];
    for (i, slot) in beta[m - 1].iter_mut().enumerate() {
        *slot = a.score(i, a.end());
    }
    for t in (0..m - 1).rev() {
        for i in 0..k {
            for (j, s) in scratch.iter_mut().enumerate() {
                *s = a.score(i, j) + p.get(t + 1, j) + beta[t + 1][j];
            }
            beta[t][i] = log_sum_exp(&scratch)?;
        }
    }

    let mut d_p = Matrix::zeros(m, k);
    for t in 0..m {
        for j in 0..k {
            let marginal = (alpha[t][j] + beta[t][j] - log_z).exp();
            let indicator = if gold[t] == j { 1.0 } else { 0.0 };
            d_p.set(t, j, marginal - indicator);
        }
    }

    let mut d_a = Matrix::zeros(n, n);
    for j in 0..k {
        let gamma0 = (alpha[0][j] + beta[0][j] - log_z).exp();
        let ind = if gold[0] == j { 1.0 } else { 0.0 };
        d_a.set(a.start(), j, gamma0 - ind);

        let gamma_last = (alpha[m - 1][j] + beta[m - 1][j] - log_z).exp();
        let ind = if gold[m - 1] == j { 1.0 } else { 0.0 };
        d_a.set(j, a.end(), gamma_last - ind);
    }
    for t in 0..m - 1 {
        for (i, &alpha_ti) in alpha[t].iter().enumerate() {
            for (j, &beta_next) in beta[t + 1].iter().enumerate() {
                let xi = (alpha_ti + a.score(i, j) + p.get(t + 1, j) + beta_next - log_z).exp();
                d_a.set(i, j, d_a.get(i, j) + xi);
            }
        }
        let (gi, gj) = (gold[t], gold[t + 1]);
        d_a.set(gi, gj, d_a.get(gi, gj) - 1.0);
    }

    let loss = log_z - sequence_score(p, a, gold)?;
    Ok((loss, d_p, d_a))
}

/// Gradients of [`crf_nll`] with respect to emissions and transitions.
pub fn crf_gradients(
    p: &EmissionMatrix,
    a: &TransitionMatrix,
    gold: &[usize],
) -> Result<(Matrix, Matrix)> {
    let (_, d_p, d_a) = crf_loss_and_gradients(p, a, gold)?;
    Ok((d_p, d_a))
}

/// Max-product decoding. Returns the labeling with the highest
/// [`sequence_score`] and that score; ties prefer the lower label index
/// at each backtracking step.
pub fn viterbi_decode(p: &EmissionMatrix, a: &TransitionMatrix) -> Result<(Vec<usize>, f64)> {
    check_shapes(p, a)?;
    let (m, k) = p.shape();
    let mut delta: Vec<f64> = (0..k).map(|j| a.score(a.start(), j) + p.get(0, j)).collect();
    let mut back = vec![vec![0usize; k]; m];
    for (t, back_t) in back.iter_mut().enumerate().skip(1) {
        let mut next = vec![0.0; k];
        for (j, slot) in next.iter_mut().enumerate() {
            let mut best_i = 0;
            let mut best = delta[0] + a.score(0, j);
            for (i, &d) in delta.iter().enumerate().skip(1) {
                let cand = d + a.score(i, j);
                if cand > best {
                    best = cand;
                    best_i = i;
                }
            }
            *slot = best + p.get(t, j);
            back_t[j] = best_i;
        }
        delta = next;
    }
    let mut best_j = 0;
    let mut best = delta[0] + a.score(0, a.end());
    for (j, &d) in delta.iter().enumerate().skip(1) {
        let cand = d + a.score(j, a.end());
        if cand > best {
            best = cand;
            best_j = j;
        }
    }
    let mut path = vec![0usize; m];
    path[m - 1] = best_j;
    for t in (1..m).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok((path, best))
}
