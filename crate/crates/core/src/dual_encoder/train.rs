use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{batch_loss_and_grad, BatchMode, Dropout, TrainBatch};
use super::loss::LossKind;
use super::params::EncoderParams;
use super::similarity::SimilarityKind;
use crate::corpus::{tokenize, PassageStore};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig, LinearSchedule};
use crate::qa_dataset::{NegativeKind, NegativeSpec, TrainExample};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::vocab::{TokenId, Vocab};

/// Adam moments, step counter and the learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub adam: Adam<T>,
    pub schedule: LinearSchedule,
    pub dropout_rate: f64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &EncoderParams<T>, schedule: LinearSchedule, dropout_rate: f64) -> Result<Self> {
        schedule.validate()?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {dropout_rate}")));
        }
        Ok(OptimizerState {
            adam: Adam::new(AdamConfig::default(), &params.tensor_sizes()),
            schedule,
            dropout_rate,
        })
    }

    pub fn step(&self) -> u64 {
        self.adam.t
    }

    pub fn lr_at_step(&self, step: u64) -> Result<f64> {
        self.schedule.lr_at_step(step)
    }
}

/// One optimisation step: forward, analytic backward and an Adam update at
/// the scheduled learning rate. Returns the batch loss measured before the
/// update.
pub fn train_step<T: Scalar>(
    params: &mut EncoderParams<T>,
    state: &mut OptimizerState<T>,
    batch: &TrainBatch,
    mode: BatchMode,
    kind: SimilarityKind,
    loss: &LossKind,
    seed: u64,
) -> Result<T> {
    let dropout = (state.dropout_rate > 0.0).then_some(Dropout {
        rate: state.dropout_rate,
        seed,
    });
    let (value, grads) = batch_loss_and_grad(params, batch, mode, kind, loss, dropout)?;
    let lr = state.lr_at_step(state.step())?;
    let grads = grads.tensors();
    state.adam.step(&mut params.tensors_mut(), &grads, lr);
    if !params.all_finite() {
        return Err(Error::NonFinite(format!(
            "parameters diverged at step {}",
            state.step()
        )));
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    #[default]
    Nll,
    Triplet,
}

/// Training configuration as read from / written to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub warmup_frac: f64,
    pub loss: LossName,
    pub margin: f64,
    pub similarity: SimilarityKind,
    pub mode: BatchMode,
    pub negatives: NegativeSpec,
    pub seed: u64,
    pub dropout: f64,
    pub dim: usize,
    pub embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 40,
            lr: 1e-2,
            warmup_frac: 0.1,
            loss: LossName::Nll,
            margin: 1.0,
            similarity: SimilarityKind::Dot,
            mode: BatchMode::InBatch,
            negatives: NegativeSpec::default(),
            seed: 0,
            dropout: 0.1,
            dim: 64,
            embed_dim: 64,
        }
    }
}

impl TrainConfig {
    pub fn loss_kind(&self) -> LossKind {
        match self.loss {
            LossName::Nll => LossKind::Nll,
            LossName::Triplet => LossKind::Triplet {
                margin: self.margin,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::invalid("warmup_frac must be in [0, 1)"));
        }
        if self.dim == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        self.loss_kind().validate()
    }
}

/// A training example already mapped to token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub question: Vec<TokenId>,
    pub positive: Vec<TokenId>,
    pub negatives: Vec<(Vec<TokenId>, NegativeKind)>,
}

impl EncodedExample {
    pub fn from_example(ex: &TrainExample, store: &PassageStore, vocab: &Vocab) -> Result<Self> {
        let question = vocab.encode(&tokenize(store.tokenizer(), &ex.question));
        if question.is_empty() {
            return Err(Error::invalid(format!("question {:?} has no tokens", ex.question)));
        }
        let negatives = ex
            .negatives
            .iter()
            .map(|n| Ok((vocab.encode_passage(store.passage(n.pid)?), n.kind)))
            .collect::<Result<_>>()?;
        Ok(EncodedExample {
            question,
            positive: vocab.encode_passage(store.passage(ex.positive_pid)?),
            negatives,
        })
    }

    fn negatives_of(&self, kind: NegativeKind, count: usize) -> impl Iterator<Item = &Vec<TokenId>> {
        self.negatives
            .iter()
            .filter(move |(_, k)| *k == kind)
            .take(count)
            .map(|(t, _)| t)
    }
}

/// Assembles a batch from examples according to the negative spec.
pub fn make_batch(examples: &[&EncodedExample], mode: BatchMode, spec: &NegativeSpec) -> TrainBatch {
    let mut batch = TrainBatch {
        questions: examples.iter().map(|e| e.question.clone()).collect(),
        positives: examples.iter().map(|e| e.positive.clone()).collect(),
        ..Default::default()
    };
    match mode {
        BatchMode::InBatch => {
            for e in examples {
                batch.hard_negatives.extend(e.negatives_of(NegativeKind::Random, spec.random).cloned());
                batch.hard_negatives.extend(e.negatives_of(NegativeKind::Bm25, spec.bm25).cloned());
            }
        }
        BatchMode::Explicit => {
            batch.explicit_negatives = examples
                .iter()
                .map(|e| {
                    e.negatives_of(NegativeKind::Random, spec.random)
                        .chain(e.negatives_of(NegativeKind::Bm25, spec.bm25))
                        .chain(e.negatives_of(NegativeKind::GoldOther, spec.gold_other))
                        .cloned()
                        .collect()
                })
                .collect();
        }
    }
    batch
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub params: EncoderParams<T>,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
    pub steps: u64,
}

/// Runs `config.epochs` passes over seeded shuffles of `examples`. The last
/// batch of an epoch may be smaller than `batch_size`.
pub fn train<T: Scalar>(
    params: EncoderParams<T>,
    examples: &[EncodedExample],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("training needs at least one example"));
    }
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            params,
            loss_trace: Vec::new(),
            steps: 0,
        });
    }
    let per_epoch = examples.len().div_ceil(config.batch_size) as u64;
    let total = per_epoch * config.epochs as u64;
    let warmup = (config.warmup_frac * total as f64).round() as u64;
    let schedule = LinearSchedule::new(config.lr, warmup, total)?;
    let mut params = params;
    let mut state = OptimizerState::new(&params, schedule, config.dropout)?;
    let loss_kind = config.loss_kind();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x5348_5546, epoch as u64]));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let members: Vec<&EncodedExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let batch = make_batch(&members, config.mode, &config.negatives);
            let step_seed = derive_seed(config.seed, &[0x4452_4f50, state.step()]);
            let loss = train_step(
                &mut params,
                &mut state,
                &batch,
                config.mode,
                config.similarity,
                &loss_kind,
                step_seed,
            )
            .map_err(|e| match e {
                Error::NonFinite(msg) => {
                    Error::NonFinite(format!("{msg} (epoch {epoch}, step {})", state.step()))
                }
                other => other,
            })?;
            epoch_loss += loss.as_f64();
        }
        let mean = epoch_loss / per_epoch as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.6}");
        trace.push(mean);
    }
    Ok(TrainOutcome {
        params,
        loss_trace: trace,
        steps: state.step(),
    })
}
