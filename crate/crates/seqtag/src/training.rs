//! Mini-batch gradient training of the three architectures, dev-set
//! model selection, and the glue between encoder forward passes and
//! their hand-written backward passes.

pub mod serialize;

use std::fmt;
use std::str::FromStr;

use crate::corpus::{LabelVocab, Sentence};
use crate::crf::{crf_loss_and_gradients, viterbi_decode, TransitionMatrix};
use crate::encoders::lstm::{
    bilstm_backward, bilstm_forward_cached, BiLstmGrads, BiLstmParams, BiLstmTrace, LstmGrads,
};
use crate::encoders::{
    concat_pos_features, dropout_mask, softmax_decode, AffineLayer, EmbeddingProvider, HeadTrace,
    LinearHead, PosVocab,
};
use crate::error::{Error, Result};
use crate::evaluation::score_sentences;
use crate::numeric::{log_sum_exp, Matrix};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const INIT_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Linear,
    Crf,
    BilstmCrf,
}

impl Architecture {
    pub fn as_str(&self) -> &'static str {
        match self {
            Architecture::Linear => "linear",
            Architecture::Crf => "crf",
            Architecture::BilstmCrf => "bilstm-crf",
        }
    }

    pub fn uses_crf(&self) -> bool {
        !matches!(self, Architecture::Linear)
    }

    pub fn uses_bilstm(&self) -> bool {
        matches!(self, Architecture::BilstmCrf)
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Architecture::Linear),
            "crf" => Ok(Architecture::Crf),
            "bilstm-crf" => Ok(Architecture::BilstmCrf),
            other => Err(Error::Config(format!(
                "unknown architecture {other:?} (expected linear, crf, or bilstm-crf)"
            ))),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::Config(format!(
                "unknown optimizer {other:?} (expected sgd or adam)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Consecutive non-improving dev epochs before stopping; 0 disables.
    pub patience: usize,
    pub pos_features: bool,
    pub bio_mask: bool,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub optimizer: Optimizer,
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    /// Per-architecture defaults: 5 epochs for the linear model, 20 for
    /// the CRF variants; from-scratch learning rates.
    pub fn defaults_for(architecture: Architecture) -> Self {
        let (epochs, learning_rate) = match architecture {
            Architecture::Linear => (5, 0.05),
            Architecture::Crf => (20, 0.05),
            Architecture::BilstmCrf => (20, 0.01),
        };
        TrainConfig {
            architecture,
            epochs,
            learning_rate,
            dropout: 0.3,
            batch_size: 8,
            seed: 0,
            patience: 0,
            pos_features: false,
            bio_mask: false,
            hidden_dim: 128,
            embed_dim: 32,
            optimizer: Optimizer::Sgd,
            clip_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config("hidden and embedding dims must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 || !c.is_finite() {
                return Err(Error::Config(format!(
                    "gradient clip norm must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// All trainable state of one model plus the vocab and config snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: TrainConfig,
    pub vocab: LabelVocab,
    pub provider: EmbeddingProvider,
    pub pos_vocab: Option<PosVocab>,
    pub bilstm: Option<BiLstmParams>,
    pub head: LinearHead,
    pub transitions: Option<TransitionMatrix>,
}

/// Where token vectors come from during training.
pub enum EmbeddingSource {
    /// Lookup table built from the training corpus, updated by backprop.
    Trainable,
    /// Frozen per-sentence vectors, e.g. parsed from an embeddings file.
    Precomputed(EmbeddingProvider),
}

impl ModelParams {
    /// Fresh parameters. Draw order from the single seeded generator:
    /// embedding table, BiLSTM forward then backward, head layers,
    /// transitions. The same generator then drives shuffling and dropout.
    pub fn init(
        train_set: &[Sentence],
        config: &TrainConfig,
        source: EmbeddingSource,
        rng: &mut ChaCha8Rng,
    ) -> Result<ModelParams> {
        config.validate()?;
        let vocab = LabelVocab::full();
        let provider = match source {
            EmbeddingSource::Trainable => {
                EmbeddingProvider::trainable(train_set, config.embed_dim, rng, INIT_SCALE)
            }
            EmbeddingSource::Precomputed(p) => p,
        };
        let pos_vocab = if config.pos_features {
            let v = PosVocab::from_corpus(train_set);
            if v.is_empty() {
                return Err(Error::Config(
                    "POS features enabled but the training corpus has no POS column".into(),
                ));
            }
            Some(v)
        } else {
            None
        };
        let input_dim = provider.dim() + pos_vocab.as_ref().map_or(0, PosVocab::len);
        let k = vocab.num_labels();

        let bilstm = config
            .architecture
            .uses_bilstm()
            .then(|| BiLstmParams::init(input_dim, config.hidden_dim, rng, INIT_SCALE));
        let head = match config.architecture {
            Architecture::Linear => LinearHead::two_layer(input_dim, input_dim, k, rng, INIT_SCALE),
            Architecture::Crf => LinearHead::single(input_dim, k, rng, INIT_SCALE),
            Architecture::BilstmCrf => {
                LinearHead::single(2 * config.hidden_dim, k, rng, INIT_SCALE)
            }
        };
        let transitions = if config.architecture.uses_crf() {
            let mut t = TransitionMatrix::new(k);
            t.init_uniform(rng, INIT_SCALE);
            if config.bio_mask {
                t.apply_bio_mask(&vocab)?;
            }
            Some(t)
        } else {
            None
        };
        Ok(ModelParams {
            config: config.clone(),
            vocab,
            provider,
            pos_vocab,
            bilstm,
            head,
            transitions,
        })
    }
}

/// Gradient buffers, one per trainable tensor, same shapes as the
/// parameters they pair with.
#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub table: Option<Matrix>,
    pub bilstm: Option<BiLstmGrads>,
    pub head: Vec<AffineLayer>,
    pub transitions: Option<Matrix>,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let table = match &params.provider {
            EmbeddingProvider::Trainable { table, .. } => {
                Some(Matrix::zeros(table.rows(), table.cols()))
            }
            EmbeddingProvider::Precomputed { .. } => None,
        };
        let bilstm = params.bilstm.as_ref().map(|b| BiLstmGrads {
            forward: LstmGrads::zeros_like(&b.forward),
            backward: LstmGrads::zeros_like(&b.backward),
        });
        let head = params
            .head
            .layers
            .iter()
            .map(|l| AffineLayer::zeros(l.w.rows(), l.w.cols()))
            .collect();
        let transitions = params
            .transitions
            .as_ref()
            .map(|t| Matrix::zeros(t.matrix().rows(), t.matrix().cols()));
        ModelGrads {
            table,
            bilstm,
            head,
            transitions,
        }
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let Some(t) = &mut self.table {
            out.push(t.data_mut());
        }
        if let Some(b) = &mut self.bilstm {
            for g in [&mut b.forward, &mut b.backward] {
                out.push(g.w_input.data_mut());
                out.push(g.w_hidden.data_mut());
                out.push(g.bias.data_mut());
            }
        }
        for l in &mut self.head {
            out.push(l.w.data_mut());
            out.push(l.b.data_mut());
        }
        if let Some(t) = &mut self.transitions {
            out.push(t.data_mut());
        }
        out
    }

    pub fn zero(&mut self) {
        for s in self.slices_mut() {
            s.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            for v in s {
                *v *= factor;
            }
        }
    }

    fn l2_norm(&mut self) -> f64 {
        let mut sq = 0.0;
        for s in self.slices_mut() {
            for v in s {
                sq += *v * *v;
            }
        }
        sq.sqrt()
    }

    /// Scales all gradients down so the global L2 norm is at most `max`.
    pub fn clip_global_norm(&mut self, max: f64) {
        let norm = self.l2_norm();
        if norm > max {
            self.scale(max / norm);
        }
    }
}

/// Parameter slice paired with its gradient; `mask` marks entries that
/// must not move (pinned transitions).
struct TensorPair<'a> {
    param: &'a mut [f64],
    grad: &'a [f64],
    mask: Option<&'a [bool]>,
}

fn tensor_pairs<'a>(params: &'a mut ModelParams, grads: &'a ModelGrads) -> Vec<TensorPair<'a>> {
    let mut out = Vec::new();
    if let (EmbeddingProvider::Trainable { table, .. }, Some(g)) =
        (&mut params.provider, &grads.table)
    {
        out.push(TensorPair {
            param: table.data_mut(),
            grad: g.data(),
            mask: None,
        });
    }
    if let (Some(b), Some(g)) = (&mut params.bilstm, &grads.bilstm) {
        for (p, g) in [(&mut b.forward, &g.forward), (&mut b.backward, &g.backward)] {
            out.push(TensorPair {
                param: p.w_input.data_mut(),
                grad: g.w_input.data(),
                mask: None,
            });
            out.push(TensorPair {
                param: p.w_hidden.data_mut(),
                grad: g.w_hidden.data(),
                mask: None,
            });
            out.push(TensorPair {
                param: p.bias.data_mut(),
                grad: g.bias.data(),
                mask: None,
            });
        }
    }
    for (l, g) in params.head.layers.iter_mut().zip(&grads.head) {
        out.push(TensorPair {
            param: l.w.data_mut(),
            grad: g.w.data(),
            mask: None,
        });
        out.push(TensorPair {
            param: l.b.data_mut(),
            grad: g.b.data(),
            mask: None,
        });
    }
    if let (Some(t), Some(g)) = (&mut params.transitions, &grads.transitions) {
        let (m, mask) = t.raw_parts_mut();
        out.push(TensorPair {
            param: m.data_mut(),
            grad: g.data(),
            mask: Some(mask),
        });
    }
    out
}

/// `p -= lr * g` on every trainable entry; masked entries stay put.
pub fn sgd_step(params: &mut ModelParams, grads: &ModelGrads, lr: f64) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    for pair in tensor_pairs(params, grads) {
        for (idx, (p, &g)) in pair.param.iter_mut().zip(pair.grad).enumerate() {
            if pair.mask.is_some_and(|m| m[idx]) {
                continue;
            }
            *p -= lr * g;
        }
    }
    Ok(())
}

/// Adam/SGD bookkeeping for one training run; never serialized.
pub struct OptimizerState {
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new() -> Self {
        OptimizerState {
            step: 0,
            moments: Vec::new(),
        }
    }
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self::new()
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_update(
    params: &mut ModelParams,
    grads: &ModelGrads,
    lr: f64,
    optimizer: Optimizer,
    state: &mut OptimizerState,
) -> Result<()> {
    match optimizer {
        Optimizer::Sgd => sgd_step(params, grads, lr),
        Optimizer::Adam => {
            let pairs = tensor_pairs(params, grads);
            if state.moments.is_empty() {
                state.moments = pairs
                    .iter()
                    .map(|p| (vec![0.0; p.param.len()], vec![0.0; p.param.len()]))
                    .collect();
            }
            state.step += 1;
            let t = state.step as f64;
            let bias1 = 1.0 - ADAM_BETA1.powf(t);
            let bias2 = 1.0 - ADAM_BETA2.powf(t);
            for (pair, (m, v)) in pairs.into_iter().zip(&mut state.moments) {
                for idx in 0..pair.param.len() {
                    if pair.mask.is_some_and(|mk| mk[idx]) {
                        continue;
                    }
                    let g = pair.grad[idx];
                    m[idx] = ADAM_BETA1 * m[idx] + (1.0 - ADAM_BETA1) * g;
                    v[idx] = ADAM_BETA2 * v[idx] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = m[idx] / bias1;
                    let v_hat = v[idx] / bias2;
                    pair.param[idx] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
            Ok(())
        }
    }
}

/// Everything one forward pass produced that backward needs.
struct ForwardTrace {
    x: Matrix,
    token_rows: Option<Vec<usize>>,
    dropout: Option<Matrix>,
    lstm: Option<BiLstmTrace>,
    head: HeadTrace,
    emissions: Matrix,
}

fn forward(
    sentence: &Sentence,
    params: &ModelParams,
    dropout: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardTrace> {
    if sentence.is_empty() {
        return Err(Error::Contract("cannot encode an empty sentence".into()));
    }
    let emb = params.provider.embed(sentence)?;
    let token_rows = params.provider.token_rows(sentence);
    let mut x = match &params.pos_vocab {
        Some(pos_vocab) => {
            let pos = sentence.pos_tags.as_ref().ok_or_else(|| {
                Error::Contract(format!(
                    "POS features enabled but sentence {:?} has no POS tags",
                    sentence.id.as_deref().unwrap_or("<unnamed>")
                ))
            })?;
            concat_pos_features(&emb, pos, pos_vocab)?
        }
        None => emb,
    };
    let mask = match rng {
        Some(r) => dropout_mask(x.shape(), dropout, r, true)?,
        None => None,
    };
    if let Some(mask) = &mask {
        for (v, &m) in x.data_mut().iter_mut().zip(mask.data()) {
            *v *= m;
        }
    }
    let (features, lstm) = match &params.bilstm {
        Some(p) => {
            let (h, trace) = bilstm_forward_cached(&x, p)?;
            (h, Some(trace))
        }
        None => (x.clone(), None),
    };
    let (emissions, head) = params.head.forward_cached(&features)?;
    Ok(ForwardTrace {
        x,
        token_rows,
        dropout: mask,
        lstm,
        head,
        emissions,
    })
}

fn gold_indices(sentence: &Sentence, vocab: &LabelVocab) -> Result<Vec<usize>> {
    let tags = sentence.gold_tags.as_ref().ok_or_else(|| {
        Error::Contract(format!(
            "sentence {:?} has no gold tags",
            sentence.id.as_deref().unwrap_or("<unnamed>")
        ))
    })?;
    tags.iter().map(|t| vocab.label_of(t)).collect()
}

/// Mean per-token cross-entropy and its emission gradient.
fn token_ce_loss(emissions: &Matrix, gold: &[usize]) -> Result<(f64, Matrix)> {
    let (m, k) = emissions.shape();
    let mut d = Matrix::zeros(m, k);
    let mut total = 0.0;
    let inv_m = 1.0 / m as f64;
    for i in 0..m {
        let row = emissions.row(i);
        let lse = log_sum_exp(row)?;
        total += lse - row[gold[i]];
        for (j, &v) in row.iter().enumerate() {
            d.set(i, j, (v - lse).exp() * inv_m);
        }
        d.set(i, gold[i], d.get(i, gold[i]) - inv_m);
    }
    Ok((total * inv_m, d))
}

fn emission_loss(
    trace: &ForwardTrace,
    params: &ModelParams,
    gold: &[usize],
) -> Result<(f64, Matrix, Option<Matrix>)> {
    match &params.transitions {
        None => {
            let (loss, d_p) = token_ce_loss(&trace.emissions, gold)?;
            Ok((loss, d_p, None))
        }
        Some(a) => {
            let (loss, d_p, d_a) = crf_loss_and_gradients(&trace.emissions, a, gold)?;
            Ok((loss, d_p, Some(d_a)))
        }
    }
}

/// Training loss of one tagged sentence, dropout active.
pub fn loss_for_sentence(
    sentence: &Sentence,
    params: &ModelParams,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let gold = gold_indices(sentence, &params.vocab)?;
    let trace = forward(sentence, params, config.dropout, Some(rng))?;
    emission_loss(&trace, params, &gold).map(|(loss, _, _)| loss)
}

/// Loss plus gradients accumulated into `grads` (summed, not averaged).
pub fn loss_and_grads(
    sentence: &Sentence,
    params: &ModelParams,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    grads: &mut ModelGrads,
) -> Result<f64> {
    let gold = gold_indices(sentence, &params.vocab)?;
    let trace = forward(sentence, params, config.dropout, Some(rng))?;
    let (loss, d_emissions, d_transitions) = emission_loss(&trace, params, &gold)?;

    if let (Some(da), Some(acc)) = (d_transitions, &mut grads.transitions) {
        acc.add_scaled(&da, 1.0);
    }
    let (head_grads, d_features) = params.head.backward(&trace.head, &d_emissions);
    for (acc, g) in grads.head.iter_mut().zip(head_grads) {
        acc.w.add_scaled(&g.w, 1.0);
        acc.b.add_scaled(&g.b, 1.0);
    }
    let mut d_x = match (&params.bilstm, &trace.lstm) {
        (Some(p), Some(lstm_trace)) => {
            let (lstm_grads, d_x) = bilstm_backward(&trace.x, p, lstm_trace, &d_features)?;
            let acc = grads.bilstm.as_mut().expect("paired buffer");
            for (a, g) in [
                (&mut acc.forward, &lstm_grads.forward),
                (&mut acc.backward, &lstm_grads.backward),
            ] {
                a.w_input.add_scaled(&g.w_input, 1.0);
                a.w_hidden.add_scaled(&g.w_hidden, 1.0);
                a.bias.add_scaled(&g.bias, 1.0);
            }
            d_x
        }
        _ => d_features,
    };
    if let Some(mask) = &trace.dropout {
        for (v, &m) in d_x.data_mut().iter_mut().zip(mask.data()) {
            *v *= m;
        }
    }
    if let (Some(rows), Some(table_grad)) = (&trace.token_rows, &mut grads.table) {
        // Only the first d columns reach the embedding table; any POS
        // one-hot suffix is a fixed feature.
        let d = table_grad.cols();
        for (i, &row) in rows.iter().enumerate() {
            for j in 0..d {
                let v = table_grad.get(row, j) + d_x.get(i, j);
                table_grad.set(row, j, v);
            }
        }
    }
    Ok(loss)
}

/// Emission + transition decode of one sentence; always valid BIO.
pub fn decode_sentence(params: &ModelParams, sentence: &Sentence) -> Result<Vec<String>> {
    let trace = forward(sentence, params, 0.0, None)?;
    match &params.transitions {
        None => softmax_decode(&trace.emissions, &params.vocab),
        Some(a) => {
            let (path, _) = viterbi_decode(&trace.emissions, a)?;
            let tags: Vec<String> = path
                .iter()
                .map(|&l| params.vocab.tag_of(l).to_string())
                .collect();
            Ok(crate::corpus::repair_bio(&tags))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStat {
    pub epoch: usize,
    pub loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
}

/// TSV log, one row per epoch.
pub fn format_epoch_log(stats: &[EpochStat]) -> String {
    let mut out = String::from("epoch\tloss\tdev_p\tdev_r\tdev_f1\n");
    for s in stats {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.4}\t{:.4}\t{:.4}\n",
            s.epoch, s.loss, s.dev_precision, s.dev_recall, s.dev_f1
        ));
    }
    out
}

fn check_tagged(set: &[Sentence], name: &str) -> Result<()> {
    for (i, s) in set.iter().enumerate() {
        if s.gold_tags.is_none() {
            return Err(Error::Contract(format!(
                "{name} sentence {i} has no gold tags"
            )));
        }
    }
    Ok(())
}

fn dev_metrics(params: &ModelParams, dev: &[Sentence]) -> Result<(f64, f64, f64)> {
    let mut preds = Vec::with_capacity(dev.len());
    for s in dev {
        preds.push(decode_sentence(params, s)?);
    }
    let report = score_sentences(dev, &preds, &params.vocab)?;
    Ok((report.macro_precision, report.macro_recall, report.macro_f1))
}

/// Full training loop: seeded shuffling, mini-batch averaged gradients,
/// optional global-norm clipping, per-epoch dev evaluation, and
/// best-dev-macro-F1 model selection. Without a dev set the last-epoch
/// parameters are returned and the dev columns log as zero.
pub fn train(
    train_set: &[Sentence],
    dev_set: Option<&[Sentence]>,
    config: &TrainConfig,
    source: EmbeddingSource,
) -> Result<(ModelParams, Vec<EpochStat>)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    check_tagged(train_set, "train")?;
    if let Some(dev) = dev_set {
        check_tagged(dev, "dev")?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(train_set, config, source, &mut rng)?;
    let mut grads = ModelGrads::zeros_like(&params);
    let mut opt_state = OptimizerState::new();

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale_epochs = 0usize;
    let mut indices: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        indices.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for batch in indices.chunks(config.batch_size) {
            grads.zero();
            for &i in batch {
                total_loss += loss_and_grads(&train_set[i], &params, config, &mut rng, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max) = config.clip_norm {
                grads.clip_global_norm(max);
            }
            apply_update(
                &mut params,
                &grads,
                config.learning_rate,
                config.optimizer,
                &mut opt_state,
            )?;
        }
        let loss = total_loss / train_set.len() as f64;

        let (dev_precision, dev_recall, dev_f1) = match dev_set {
            Some(dev) => dev_metrics(&params, dev)?,
            None => (0.0, 0.0, 0.0),
        };
        log.push(EpochStat {
            epoch,
            loss,
            dev_precision,
            dev_recall,
            dev_f1,
        });

        if dev_set.is_some() {
            let improved = best.as_ref().is_none_or(|(f, _)| dev_f1 > *f);
            if improved {
                best = Some((dev_f1, params.clone()));
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if config.patience > 0 && stale_epochs >= config.patience {
                    break;
                }
            }
        }
    }
    let final_params = match best {
        Some((_, p)) => p,
        None => params,
    };
    Ok((final_params, log))
}
