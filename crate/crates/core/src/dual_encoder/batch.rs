use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{row_loss_and_grad, LossKind};
use super::params::{EncoderParams, Tower};
use super::similarity::{similarity, similarity_with_grad, SimilarityKind};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// Every question scores all positives of the batch plus the shared hard
    /// negatives.
    #[default]
    InBatch,
    /// Every question scores only its own positive and its own negatives.
    Explicit,
}

/// One mini-batch of token-id sequences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainBatch {
    pub questions: Vec<Vec<TokenId>>,
    pub positives: Vec<Vec<TokenId>>,
    /// Shared across all questions in in-batch mode.
    pub hard_negatives: Vec<Vec<TokenId>>,
    /// Per-question negatives for explicit mode.
    pub explicit_negatives: Vec<Vec<Vec<TokenId>>>,
}

impl TrainBatch {
    pub fn size(&self) -> usize {
        self.questions.len()
    }

    pub fn validate(&self, mode: BatchMode) -> Result<()> {
        if self.questions.is_empty() {
            return Err(Error::invalid("batch must contain at least one question"));
        }
        if self.positives.len() != self.questions.len() {
            return Err(Error::invalid("batch needs one positive per question"));
        }
        if mode == BatchMode::Explicit && self.explicit_negatives.len() != self.questions.len() {
            return Err(Error::invalid(
                "explicit mode needs a negative list per question",
            ));
        }
        Ok(())
    }

    fn layout(&self, mode: BatchMode) -> Layout<'_> {
        match mode {
            BatchMode::InBatch => {
                let columns: Vec<&[TokenId]> = self
                    .positives
                    .iter()
                    .chain(&self.hard_negatives)
                    .map(Vec::as_slice)
                    .collect();
                let all: Vec<usize> = (0..columns.len()).collect();
                let rows = (0..self.size()).map(|i| (all.clone(), i)).collect();
                Layout { columns, rows }
            }
            BatchMode::Explicit => {
                let mut columns = Vec::new();
                let mut rows = Vec::new();
                for (pos, negs) in self.positives.iter().zip(&self.explicit_negatives) {
                    let first = columns.len();
                    columns.push(pos.as_slice());
                    columns.extend(negs.iter().map(Vec::as_slice));
                    rows.push(((first..columns.len()).collect(), 0));
                }
                Layout { columns, rows }
            }
        }
    }
}

/// Passage columns and, per question, the columns it is scored against and
/// the position of its positive among them.
struct Layout<'a> {
    columns: Vec<&'a [TokenId]>,
    rows: Vec<(Vec<usize>, usize)>,
}

/// Row `i` holds question `i` against the `B` in-batch positives followed by
/// the shared hard negatives; the gold column of row `i` is `i`.
pub fn in_batch_scores<T: Scalar>(
    params: &EncoderParams<T>,
    batch: &TrainBatch,
    kind: SimilarityKind,
) -> Result<Matrix<T>> {
    batch.validate(BatchMode::InBatch)?;
    let qs = batch
        .questions
        .iter()
        .map(|q| params.encode(q, Tower::Question))
        .collect::<Result<Vec<_>>>()?;
    let ps = batch
        .positives
        .iter()
        .chain(&batch.hard_negatives)
        .map(|p| params.encode(p, Tower::Passage))
        .collect::<Result<Vec<_>>>()?;
    let mut s = Matrix::zeros(qs.len(), ps.len());
    for (i, q) in qs.iter().enumerate() {
        for (j, p) in ps.iter().enumerate() {
            s.set(i, j, similarity(kind, q, p)?);
        }
    }
    Ok(s)
}

/// Forward state of one encoded sequence.
struct Encoded<T> {
    pooled: Vec<T>,
    /// Inverted-dropout multipliers applied to `pooled`; `None` when off.
    mask: Option<Vec<T>>,
    out: Vec<T>,
}

fn encode_for_training<T: Scalar>(
    params: &EncoderParams<T>,
    tokens: &[TokenId],
    tower: Tower,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<Encoded<T>> {
    let pooled = params.pool(tokens)?;
    let mask = dropout.and_then(|(rate, rng)| {
        if rate <= 0.0 {
            return None;
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        Some(
            (0..pooled.len())
                .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                .collect::<Vec<T>>(),
        )
    });
    let dropped: Vec<T> = match &mask {
        Some(m) => pooled.iter().zip(m).map(|(&x, &k)| x * k).collect(),
        None => pooled.clone(),
    };
    let out = params.projection(tower).left_mul(&dropped);
    Ok(Encoded { pooled, mask, out })
}

fn backprop_encoding<T: Scalar>(
    params: &EncoderParams<T>,
    grads: &mut EncoderParams<T>,
    tokens: &[TokenId],
    tower: Tower,
    enc: &Encoded<T>,
    d_out: &[T],
) {
    let dropped: Vec<T> = match &enc.mask {
        Some(m) => enc.pooled.iter().zip(m).map(|(&x, &k)| x * k).collect(),
        None => enc.pooled.clone(),
    };
    grads.projection_mut(tower).add_outer(T::one(), &dropped, d_out);
    let mut d_pooled = params.projection(tower).right_mul(d_out);
    if let Some(m) = &enc.mask {
        d_pooled.iter_mut().zip(m).for_each(|(g, &k)| *g *= k);
    }
    let inv = T::one() / T::lit(tokens.len() as f64);
    for &t in tokens {
        for (g, &dp) in grads.vocab_embed.row_mut(t as usize).iter_mut().zip(&d_pooled) {
            *g += dp * inv;
        }
    }
}

/// Dropout settings for one forward/backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    pub seed: u64,
}

/// Mean per-question loss of a batch and its gradient with respect to every
/// encoder parameter.
pub fn batch_loss_and_grad<T: Scalar>(
    params: &EncoderParams<T>,
    batch: &TrainBatch,
    mode: BatchMode,
    kind: SimilarityKind,
    loss: &LossKind,
    dropout: Option<Dropout>,
) -> Result<(T, EncoderParams<T>)> {
    batch.validate(mode)?;
    loss.validate()?;
    let layout = batch.layout(mode);
    let mut rng = dropout.map(|d| (d.rate, ChaCha8Rng::seed_from_u64(d.seed)));
    let mut encode = |tokens: &[TokenId], tower| {
        let dr = rng.as_mut().map(|(rate, r)| (*rate, r));
        encode_for_training(params, tokens, tower, dr)
    };
    let qs = batch
        .questions
        .iter()
        .map(|q| encode(q, Tower::Question))
        .collect::<Result<Vec<_>>>()?;
    let ps = layout
        .columns
        .iter()
        .map(|p| encode(p, Tower::Passage))
        .collect::<Result<Vec<_>>>()?;

    let b = T::lit(qs.len() as f64);
    let mut total = T::zero();
    let mut d_q: Vec<Vec<T>> = qs.iter().map(|q| vec![T::zero(); q.out.len()]).collect();
    let mut d_p: Vec<Vec<T>> = ps.iter().map(|p| vec![T::zero(); p.out.len()]).collect();
    for (i, (cols, label)) in layout.rows.iter().enumerate() {
        let mut row = Vec::with_capacity(cols.len());
        let mut partials = Vec::with_capacity(cols.len());
        for &j in cols {
            let (s, gq, gp) = similarity_with_grad(kind, &qs[i].out, &ps[j].out)?;
            row.push(s);
            partials.push((gq, gp));
        }
        let (l, d_row) = row_loss_and_grad(loss, &row, *label);
        total += l;
        for ((&j, ds), (gq, gp)) in cols.iter().zip(&d_row).zip(&partials) {
            let ds = *ds / b;
            if ds == T::zero() {
                continue;
            }
            crate::scalar::axpy(ds, gq, &mut d_q[i]);
            crate::scalar::axpy(ds, gp, &mut d_p[j]);
        }
    }
    let mean = total / b;
    if !mean.is_finite() {
        return Err(Error::NonFinite(format!("batch loss {mean}")));
    }

    let mut grads = params.zeros_like();
    for ((tokens, enc), d) in batch.questions.iter().zip(&qs).zip(&d_q) {
        backprop_encoding(params, &mut grads, tokens, Tower::Question, enc, d);
    }
    for ((tokens, enc), d) in layout.columns.iter().zip(&ps).zip(&d_p) {
        backprop_encoding(params, &mut grads, tokens, Tower::Passage, enc, d);
    }
    Ok((mean, grads))
}
