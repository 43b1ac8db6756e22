//! Extractive reader at desk scale.
//!
//! Each passage token gets a feature row `E[token] + [token ∈ question]·u`.
//! Start/end logits are those rows dotted with `w_start`/`w_end`; the
//! passage-selection logit is the mean row dotted with `w_selected`.
//! Training maximises the marginal likelihood of every gold span in the
//! positive passage plus the likelihood of selecting that passage.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{BinReader, BinWriter};
use crate::corpus::{tokenize, tokenize_with_offsets, PassageStore};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::optim::{Adam, AdamConfig, LinearSchedule};
use crate::qa_dataset::QAPair;
use crate::ranking::PassageId;
use crate::scalar::{dot, log_sum_exp, softmax, Scalar};
use crate::seed::derive_seed;
use crate::vocab::{TokenId, Vocab, UNK_ID};

const MAGIC: &[u8; 4] = b"DPRR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ReaderParams<T> {
    pub embed: Matrix<T>,
    /// Added to the feature row of every token that also occurs in the
    /// question.
    pub match_vec: Vec<T>,
    pub w_start: Vec<T>,
    pub w_end: Vec<T>,
    pub w_selected: Vec<T>,
}

impl<T: Scalar> ReaderParams<T> {
    pub fn init(vocab_size: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vec = |rng: &mut ChaCha8Rng| Matrix::<T>::random_normal(1, hidden, 0.1, rng).as_slice().to_vec();
        let embed = Matrix::random_normal(vocab_size, hidden, 0.1, &mut rng);
        ReaderParams {
            embed,
            match_vec: vec(&mut rng),
            w_start: vec(&mut rng),
            w_end: vec(&mut rng),
            w_selected: vec(&mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let h = self.hidden();
        ReaderParams {
            embed: Matrix::zeros(self.embed.rows(), h),
            match_vec: vec![T::zero(); h],
            w_start: vec![T::zero(); h],
            w_end: vec![T::zero(); h],
            w_selected: vec![T::zero(); h],
        }
    }

    pub fn hidden(&self) -> usize {
        self.embed.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows()
    }

    pub fn tensors(&self) -> [&[T]; 5] {
        [
            self.embed.as_slice(),
            &self.match_vec,
            &self.w_start,
            &self.w_end,
            &self.w_selected,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 5] {
        [
            self.embed.as_mut_slice(),
            &mut self.match_vec,
            &mut self.w_start,
            &mut self.w_end,
            &mut self.w_selected,
        ]
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(MAGIC, VERSION);
        w.u32(self.vocab_size() as u32);
        w.u32(self.hidden() as u32);
        for t in self.tensors() {
            for &v in t {
                w.f32(v.as_f32());
            }
        }
        w.into_bytes()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut r, version) = BinReader::open(path, MAGIC, "reader model")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported reader model version {version}")));
        }
        let v = r.u32()? as usize;
        let h = r.u32()? as usize;
        let mut read = |n: usize| -> Result<Vec<T>> {
            Ok(r.f32_vec(n)?.into_iter().map(|x| T::lit(x as f64)).collect())
        };
        let params = ReaderParams {
            embed: Matrix::from_vec(v, h, read(v * h)?),
            match_vec: read(h)?,
            w_start: read(h)?,
            w_end: read(h)?,
            w_selected: read(h)?,
        };
        r.finish()?;
        if !params.all_finite() {
            return Err(Error::NonFinite("reader parameters".into()));
        }
        Ok(params)
    }
}

/// Per-token features of one passage and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PassageRepr<T> {
    pub token_matrix: Matrix<T>,
    pub summary_vector: Vec<T>,
    tokens: Vec<TokenId>,
    in_question: Vec<bool>,
}

impl<T: Scalar> PassageRepr<T> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn featurize<T: Scalar>(
    params: &ReaderParams<T>,
    passage: &[TokenId],
    question: &[TokenId],
) -> Result<PassageRepr<T>> {
    if passage.is_empty() {
        return Err(Error::invalid("reader passage must have at least one token"));
    }
    let qset: HashSet<TokenId> = question.iter().copied().filter(|&t| t != UNK_ID).collect();
    let h = params.hidden();
    let mut m = Matrix::zeros(passage.len(), h);
    let mut in_question = Vec::with_capacity(passage.len());
    for (i, &t) in passage.iter().enumerate() {
        if t as usize >= params.vocab_size() {
            return Err(Error::invalid(format!("token id {t} outside reader vocabulary")));
        }
        let hit = qset.contains(&t);
        in_question.push(hit);
        let row = m.row_mut(i);
        row.copy_from_slice(params.embed.row(t as usize));
        if hit {
            row.iter_mut().zip(&params.match_vec).for_each(|(r, &u)| *r += u);
        }
    }
    let inv = T::one() / T::lit(passage.len() as f64);
    let mut summary = vec![T::zero(); h];
    for i in 0..passage.len() {
        summary.iter_mut().zip(m.row(i)).for_each(|(s, &v)| *s += v * inv);
    }
    Ok(PassageRepr {
        token_matrix: m,
        summary_vector: summary,
        tokens: passage.to_vec(),
        in_question,
    })
}

/// Start and end distributions over the passage's tokens.
pub fn span_distributions<T: Scalar>(params: &ReaderParams<T>, repr: &PassageRepr<T>) -> (Vec<T>, Vec<T>) {
    let start = repr.token_matrix.right_mul(&params.w_start);
    let end = repr.token_matrix.right_mul(&params.w_end);
    (softmax(&start), softmax(&end))
}

/// Distribution over candidate passages.
pub fn passage_selection<T: Scalar>(params: &ReaderParams<T>, reprs: &[&PassageRepr<T>]) -> Vec<T> {
    let logits: Vec<T> = reprs
        .iter()
        .map(|r| dot(&r.summary_vector, &params.w_selected))
        .collect();
    softmax(&logits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub pid: PassageId,
    pub start: usize,
    pub end: usize,
    pub span_score: f64,
    pub selection_score: f64,
}

/// Picks the passage with the highest selection probability (ties to the
/// lower pid), then the admissible span `s ≤ t < s + max_span_len` with the
/// largest `P_start(s)·P_end(t)` (ties to the smallest `(s, t)`).
pub fn best_span<T: Scalar>(
    params: &ReaderParams<T>,
    candidates: &[(PassageId, PassageRepr<T>)],
    max_span_len: usize,
) -> Result<SpanPrediction> {
    if candidates.is_empty() {
        return Err(Error::invalid("best_span needs at least one passage"));
    }
    if max_span_len == 0 {
        return Err(Error::invalid("max_span_len must be at least 1"));
    }
    let reprs: Vec<&PassageRepr<T>> = candidates.iter().map(|(_, r)| r).collect();
    let sel = passage_selection(params, &reprs);
    let mut chosen = 0;
    for i in 1..candidates.len() {
        let better = sel[i] > sel[chosen]
            || (sel[i] == sel[chosen] && candidates[i].0 < candidates[chosen].0);
        if better {
            chosen = i;
        }
    }
    let (pid, repr) = &candidates[chosen];
    let (ps, pe) = span_distributions(params, repr);
    let mut best = (0, 0, ps[0] * pe[0]);
    for s in 0..repr.len() {
        for t in s..repr.len().min(s + max_span_len) {
            let score = ps[s] * pe[t];
            if score > best.2 {
                best = (s, t, score);
            }
        }
    }
    Ok(SpanPrediction {
        pid: *pid,
        start: best.0,
        end: best.1,
        span_score: best.2.as_f64(),
        selection_score: sel[chosen].as_f64(),
    })
}

/// One sampled training instance: the positive passage with its gold spans
/// and the negatives it competes with for selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ReaderInstance {
    pub question: Vec<TokenId>,
    pub positive: Vec<TokenId>,
    pub gold_spans: Vec<(usize, usize)>,
    pub negatives: Vec<Vec<TokenId>>,
}

fn accumulate_token_grads<T: Scalar>(grads: &mut ReaderParams<T>, repr: &PassageRepr<T>, d_rows: &Matrix<T>) {
    for (i, &t) in repr.tokens.iter().enumerate() {
        let d = d_rows.row(i);
        grads
            .embed
            .row_mut(t as usize)
            .iter_mut()
            .zip(d)
            .for_each(|(g, &v)| *g += v);
        if repr.in_question[i] {
            grads.match_vec.iter_mut().zip(d).for_each(|(g, &v)| *g += v);
        }
    }
}

/// `−log Σ_gold P_start(s)·P_end(t) − log P_selected(positive)` and its
/// gradient. Duplicate gold spans count once.
pub fn reader_loss_and_grad<T: Scalar>(
    params: &ReaderParams<T>,
    inst: &ReaderInstance,
) -> Result<(T, ReaderParams<T>)> {
    if inst.gold_spans.is_empty() {
        return Err(Error::invalid("reader instance needs at least one gold span"));
    }
    let pos = featurize(params, &inst.positive, &inst.question)?;
    let l = pos.len();
    let mut spans: Vec<(usize, usize)> = inst.gold_spans.clone();
    spans.sort_unstable();
    spans.dedup();
    if spans.iter().any(|&(s, t)| s > t || t >= l) {
        return Err(Error::invalid("gold span outside the positive passage"));
    }
    let negs = inst
        .negatives
        .iter()
        .map(|n| featurize(params, n, &inst.question))
        .collect::<Result<Vec<_>>>()?;

    // Span term, in log space for stability.
    let a = pos.token_matrix.right_mul(&params.w_start);
    let b = pos.token_matrix.right_mul(&params.w_end);
    let (lse_a, lse_b) = (log_sum_exp(&a), log_sum_exp(&b));
    let joint: Vec<T> = spans.iter().map(|&(s, t)| a[s] + b[t]).collect();
    let log_m = log_sum_exp(&joint) - lse_a - lse_b;
    let (ps, pe) = (softmax(&a), softmax(&b));
    let weights = softmax(&joint);
    let mut da = ps.clone();
    let mut db = pe.clone();
    for (&(s, t), &w) in spans.iter().zip(&weights) {
        da[s] -= w;
        db[t] -= w;
    }

    // Selection term; the positive is candidate 0.
    let all: Vec<&PassageRepr<T>> = std::iter::once(&pos).chain(negs.iter()).collect();
    let logits: Vec<T> = all.iter().map(|r| dot(&r.summary_vector, &params.w_selected)).collect();
    let log_sel = logits[0] - log_sum_exp(&logits);
    let mut dc = softmax(&logits);
    dc[0] -= T::one();

    let loss = -log_m - log_sel;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("reader loss {loss}")));
    }

    let mut grads = params.zeros_like();
    for j in 0..l {
        crate::scalar::axpy(da[j], pos.token_matrix.row(j), &mut grads.w_start);
        crate::scalar::axpy(db[j], pos.token_matrix.row(j), &mut grads.w_end);
    }
    for (repr, &dci) in all.iter().zip(&dc) {
        crate::scalar::axpy(dci, &repr.summary_vector, &mut grads.w_selected);
        let h = params.hidden();
        let mut d_rows = Matrix::zeros(repr.len(), h);
        let share = dci / T::lit(repr.len() as f64);
        for i in 0..repr.len() {
            crate::scalar::axpy(share, &params.w_selected, d_rows.row_mut(i));
        }
        if std::ptr::eq(*repr, &pos) {
            for j in 0..l {
                crate::scalar::axpy(da[j], &params.w_start, d_rows.row_mut(j));
                crate::scalar::axpy(db[j], &params.w_end, d_rows.row_mut(j));
            }
        }
        accumulate_token_grads(&mut grads, repr, &d_rows);
    }
    Ok((loss, grads))
}

/// A question with every positive candidate (and its gold spans) and a pool
/// of negative passages, as drawn from retrieval results.
#[derive(Debug, Clone, PartialEq)]
pub struct ReaderExample {
    pub question: Vec<TokenId>,
    pub positives: Vec<(Vec<TokenId>, Vec<(usize, usize)>)>,
    pub negatives: Vec<Vec<TokenId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReaderConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_frac: f64,
    /// Passages per question: one positive and `passages − 1` negatives.
    pub passages: usize,
    pub max_span_len: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for ReaderConfig {
    fn default() -> Self {
        ReaderConfig {
            epochs: 10,
            batch_size: 4,
            lr: 1e-2,
            warmup_frac: 0.1,
            passages: 8,
            max_span_len: 10,
            hidden: 32,
            seed: 0,
        }
    }
}

impl ReaderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.passages == 0 || self.max_span_len == 0 || self.hidden == 0 {
            return Err(Error::invalid(
                "reader batch_size, passages, max_span_len and hidden must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::invalid("warmup_frac must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReaderOutcome<T> {
    pub params: ReaderParams<T>,
    pub loss_trace: Vec<f64>,
}

fn sample_instance(ex: &ReaderExample, passages: usize, rng: &mut ChaCha8Rng) -> ReaderInstance {
    let (positive, spans) = ex.positives.choose(rng).expect("positives checked non-empty").clone();
    let n = (passages - 1).min(ex.negatives.len());
    let negatives = sample(rng, ex.negatives.len(), n)
        .into_iter()
        .map(|i| ex.negatives[i].clone())
        .collect();
    ReaderInstance {
        question: ex.question.clone(),
        positive,
        gold_spans: spans,
        negatives,
    }
}

/// Minibatch Adam over the examples; each epoch resamples one positive and
/// up to `passages − 1` negatives per question.
pub fn train_reader<T: Scalar>(
    params: ReaderParams<T>,
    examples: &[ReaderExample],
    config: &ReaderConfig,
) -> Result<ReaderOutcome<T>> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("reader training set is empty"));
    }
    if examples.iter().any(|e| e.positives.is_empty()) {
        return Err(Error::invalid("every reader example needs a positive passage"));
    }
    if config.epochs == 0 {
        return Ok(ReaderOutcome { params, loss_trace: Vec::new() });
    }
    let per_epoch = examples.len().div_ceil(config.batch_size) as u64;
    let total = per_epoch * config.epochs as u64;
    let warmup = (config.warmup_frac * total as f64).round() as u64;
    let schedule = LinearSchedule::new(config.lr, warmup, total)?;
    let mut params = params;
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::<T>::new(AdamConfig::default(), &sizes);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x5245_4144, epoch as u64]));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let scale = T::one() / T::lit(chunk.len() as f64);
            let mut total_grad = params.zeros_like();
            for &i in chunk {
                let inst = sample_instance(&examples[i], config.passages, &mut rng);
                let (loss, g) = reader_loss_and_grad(&params, &inst)?;
                epoch_loss += loss.as_f64() / chunk.len() as f64;
                for (acc, part) in total_grad.tensors_mut().into_iter().zip(g.tensors()) {
                    crate::scalar::axpy(scale, part, acc);
                }
            }
            let lr = schedule.lr_at_step(adam.t)?;
            adam.step(&mut params.tensors_mut(), &total_grad.tensors(), lr);
            if !params.all_finite() {
                return Err(Error::NonFinite(format!("reader diverged at step {}", adam.t)));
            }
        }
        trace.push(epoch_loss / per_epoch as f64);
    }
    Ok(ReaderOutcome { params, loss_trace: trace })
}

/// All occurrences of any answer token sequence in the passage, limited to
/// spans no longer than `max_span_len`.
pub fn find_answer_spans<S: AsRef<str>>(
    passage_tokens: &[S],
    answers: &[Vec<String>],
    max_span_len: usize,
) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    for ans in answers {
        if ans.is_empty() || ans.len() > max_span_len || ans.len() > passage_tokens.len() {
            continue;
        }
        for s in 0..=passage_tokens.len() - ans.len() {
            if passage_tokens[s..s + ans.len()]
                .iter()
                .zip(ans)
                .all(|(p, a)| p.as_ref() == a)
            {
                spans.push((s, s + ans.len() - 1));
            }
        }
    }
    spans.sort_unstable();
    spans.dedup();
    spans
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub question: String,
    pub pid: PassageId,
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub score: f64,
}

/// Splits each question's candidates into positives (with their answer
/// spans) and negatives over body tokens. Questions with no answer-bearing
/// candidate are dropped; the second value counts them.
pub fn build_reader_examples(
    store: &PassageStore,
    vocab: &Vocab,
    pairs: &[QAPair],
    candidates: &[Vec<PassageId>],
    max_span_len: usize,
) -> Result<(Vec<ReaderExample>, usize)> {
    if pairs.len() != candidates.len() {
        return Err(Error::invalid(format!(
            "{} candidate lists for {} questions",
            candidates.len(),
            pairs.len()
        )));
    }
    let tok = store.tokenizer();
    let mut examples = Vec::new();
    let mut dropped = 0;
    for (pair, cands) in pairs.iter().zip(candidates) {
        let answers: Vec<Vec<String>> = pair.answers.iter().map(|a| tokenize(tok, a)).collect();
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for &pid in cands {
            let p = store.passage(pid)?;
            if p.body_tokens.is_empty() {
                continue;
            }
            let ids = vocab.encode(&p.body_tokens);
            let spans = find_answer_spans(&p.body_tokens, &answers, max_span_len);
            if spans.is_empty() {
                negatives.push(ids);
            } else {
                positives.push((ids, spans));
            }
        }
        if positives.is_empty() {
            dropped += 1;
            continue;
        }
        examples.push(ReaderExample {
            question: vocab.encode(&tokenize(tok, &pair.question)),
            positives,
            negatives,
        });
    }
    Ok((examples, dropped))
}

/// Reads the best span out of `candidates` and maps it back to the
/// passage's source text.
pub fn answer_question<T: Scalar>(
    params: &ReaderParams<T>,
    store: &PassageStore,
    vocab: &Vocab,
    question: &str,
    candidates: &[PassageId],
    max_span_len: usize,
) -> Result<PredictionRecord> {
    let tok = store.tokenizer();
    let q = vocab.encode(&tokenize(tok, question));
    let mut reprs = Vec::with_capacity(candidates.len());
    for &pid in candidates {
        let p = store.passage(pid)?;
        if !p.body_tokens.is_empty() {
            reprs.push((pid, featurize(params, &vocab.encode(&p.body_tokens), &q)?));
        }
    }
    if reprs.is_empty() {
        return Err(Error::invalid("no candidate passage has body tokens"));
    }
    let pred = best_span(params, &reprs, max_span_len)?;
    let p = store.passage(pred.pid)?;
    let spans = tokenize_with_offsets(tok, &p.body_text);
    if spans.len() != p.body_tokens.len() {
        return Err(Error::invalid(format!("passage {} body text does not re-tokenize", pred.pid)));
    }
    Ok(PredictionRecord {
        question: question.to_string(),
        pid: pred.pid,
        start: pred.start,
        end: pred.end,
        text: p.body_text[spans[pred.start].start..spans[pred.end].end].to_string(),
        score: pred.span_score * pred.selection_score,
    })
}
