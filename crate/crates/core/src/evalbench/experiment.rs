use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Document, PassageStore, TokenizerConfig};
use crate::dense_index::embed_store;
use crate::dual_encoder::{train, BatchMode, EncodedExample, EncoderParams, LossName, SimilarityKind, TrainConfig};
use crate::error::{Error, Result};
use crate::qa_dataset::{build_training_set, BuildReport, NegativeSpec, PositiveMode, QAPair};
use crate::ranking::RankedList;
use crate::retrieval::{DenseSide, Retriever, RetrieverKind};
use crate::scalar::Scalar;
use crate::sparse_index::{Bm25Params, InvertedIndex};
use crate::synth::SyntheticQa;
use crate::vocab::Vocab;

use super::metrics::{top_k_accuracy, EvalReport};

/// A corpus with its BM25 index and vocabulary, a training question set and
/// a held-out evaluation set.
pub struct Experiment {
    pub store: PassageStore,
    pub index: InvertedIndex,
    pub vocab: Vocab,
    pub train: Vec<QAPair>,
    pub test: Vec<QAPair>,
    pub ks: Vec<usize>,
}

impl Experiment {
    pub fn new(store: PassageStore, bm25: Bm25Params, train: Vec<QAPair>, test: Vec<QAPair>) -> Result<Self> {
        if test.is_empty() {
            return Err(Error::invalid("evaluation question set is empty"));
        }
        let index = InvertedIndex::build(&store, bm25)?;
        let question_tokens: Vec<Vec<String>> = train
            .iter()
            .chain(&test)
            .map(|p| tokenize(store.tokenizer(), &p.question))
            .collect();
        let vocab = Vocab::build(store.passages(), question_tokens.iter().map(|t| t.as_slice()));
        Ok(Experiment {
            store,
            index,
            vocab,
            train,
            test,
            ks: vec![1, 5, 20, 100],
        })
    }

    pub fn from_documents(docs: &[Document], train: Vec<QAPair>, test: Vec<QAPair>) -> Result<Self> {
        let store = PassageStore::from_documents(docs, 100, TokenizerConfig::default())?;
        Self::new(store, Bm25Params::default(), train, test)
    }

    pub fn from_synthetic(task: &SyntheticQa) -> Result<Self> {
        Self::from_documents(&task.documents, task.train.clone(), task.test.clone())
    }

    /// Training examples in question order, each carrying up to `spec`
    /// negatives of every kind.
    pub fn training_pool(
        &self,
        mode: PositiveMode,
        spec: &NegativeSpec,
        seed: u64,
    ) -> Result<(Vec<EncodedExample>, BuildReport)> {
        let (examples, report) = build_training_set(&self.train, &self.store, &self.index, spec, mode, seed)?;
        let encoded = examples
            .iter()
            .map(|e| EncodedExample::from_example(e, &self.store, &self.vocab))
            .collect::<Result<_>>()?;
        Ok((encoded, report))
    }

    fn depth(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(1)
    }

    pub fn dense_results<T: Scalar>(&self, params: &EncoderParams<T>) -> Result<Vec<RankedList>> {
        let vectors = embed_store(params, &self.vocab, &self.store)?;
        let retriever = Retriever {
            tokenizer: self.store.tokenizer(),
            sparse: Some(&self.index),
            dense: Some(DenseSide { params, vocab: &self.vocab, vectors: &vectors, hnsw: None }),
        };
        let kind = RetrieverKind::Dense { backend: Default::default() };
        self.test
            .iter()
            .map(|p| retriever.retrieve(kind, &p.question, self.depth()))
            .collect()
    }

    pub fn evaluate_dense<T: Scalar>(&self, params: &EncoderParams<T>) -> Result<EvalReport> {
        top_k_accuracy(&self.dense_results(params)?, &self.test, &self.store, &self.ks)
    }

    pub fn evaluate_bm25(&self) -> Result<EvalReport> {
        let results: Vec<RankedList> = self
            .test
            .iter()
            .map(|p| self.index.search(&tokenize(self.store.tokenizer(), &p.question), self.depth()))
            .collect();
        top_k_accuracy(&results, &self.test, &self.store, &self.ks)
    }

    /// Trains a freshly initialised encoder on `examples` and evaluates it.
    pub fn run_cell(&self, examples: &[EncodedExample], config: &TrainConfig) -> Result<EvalReport> {
        let params = EncoderParams::<f32>::init(self.vocab.len(), config.embed_dim, config.dim, config.seed);
        let outcome = train(params, examples, config)?;
        self.evaluate_dense(&outcome.params)
    }
}

/// One training configuration in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub name: String,
    pub mode: BatchMode,
    pub negatives: NegativeSpec,
    pub batch_size: usize,
    pub similarity: SimilarityKind,
    pub loss: LossName,
}

impl AblationCell {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            negatives: self.negatives,
            batch_size: self.batch_size,
            similarity: self.similarity,
            loss: self.loss,
            ..base.clone()
        }
    }
}

fn cell(name: &str, mode: BatchMode, negatives: NegativeSpec, batch_size: usize) -> AblationCell {
    AblationCell {
        name: name.to_string(),
        mode,
        negatives,
        batch_size,
        similarity: SimilarityKind::Dot,
        loss: LossName::Nll,
    }
}

/// Explicit-negative rows, in-batch rows over batch size and shared BM25
/// negatives, and the similarity × loss grid.
pub fn default_ablation_grid() -> Vec<AblationCell> {
    let spec = |random, bm25, gold_other| NegativeSpec { random, bm25, gold_other };
    let mut grid = vec![
        cell("random-7", BatchMode::Explicit, spec(7, 0, 0), 32),
        cell("bm25-7", BatchMode::Explicit, spec(0, 7, 0), 32),
        cell("gold-7", BatchMode::Explicit, spec(0, 0, 7), 32),
        cell("inbatch-gold-b8", BatchMode::InBatch, spec(0, 0, 0), 8),
        cell("inbatch-gold-b16", BatchMode::InBatch, spec(0, 0, 0), 16),
        cell("inbatch-gold-b32", BatchMode::InBatch, spec(0, 0, 0), 32),
        cell("inbatch-gold-b8+bm25-1", BatchMode::InBatch, spec(0, 1, 0), 8),
        cell("inbatch-gold-b16+bm25-1", BatchMode::InBatch, spec(0, 1, 0), 16),
        cell("inbatch-gold-b32+bm25-1", BatchMode::InBatch, spec(0, 1, 0), 32),
        cell("inbatch-gold-b32+bm25-2", BatchMode::InBatch, spec(0, 2, 0), 32),
    ];
    for similarity in [SimilarityKind::Dot, SimilarityKind::NegL2] {
        for loss in [LossName::Nll, LossName::Triplet] {
            let mut c = cell("", BatchMode::InBatch, spec(0, 0, 0), 32);
            c.name = format!("sim-{}-{}", similarity.name(), loss_label(loss));
            c.similarity = similarity;
            c.loss = loss;
            grid.push(c);
        }
    }
    grid
}

fn loss_label(loss: LossName) -> &'static str {
    match loss {
        LossName::Nll => "nll",
        LossName::Triplet => "triplet",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: String,
    pub mode: String,
    pub random: usize,
    pub bm25: usize,
    pub gold_other: usize,
    pub batch_size: usize,
    pub similarity: String,
    pub loss: String,
    pub top5: Option<f64>,
    pub top20: Option<f64>,
    pub top100: Option<f64>,
    pub status: String,
}

/// Trains every cell from the same seed; a failing cell is recorded with its
/// error and the sweep moves on.
pub fn ablation_sweep(
    exp: &Experiment,
    pool: &[EncodedExample],
    base: &TrainConfig,
    cells: &[AblationCell],
) -> Vec<AblationRow> {
    cells
        .iter()
        .map(|c| {
            let config = c.apply(base);
            let result = exp.run_cell(pool, &config);
            let mode = match c.mode {
                BatchMode::InBatch => "in_batch",
                BatchMode::Explicit => "explicit",
            };
            let (top5, top20, top100, status) = match &result {
                Ok(r) => (Some(r.at(5)), Some(r.at(20)), Some(r.at(100)), "ok".to_string()),
                Err(e) => {
                    log::warn!("ablation cell {} failed: {e}", c.name);
                    (None, None, None, format!("error: {e}"))
                }
            };
            log::info!("cell {}: top5 {top5:?} top20 {top20:?}", c.name);
            AblationRow {
                cell: c.name.clone(),
                mode: mode.to_string(),
                random: c.negatives.random,
                bm25: c.negatives.bm25,
                gold_other: c.negatives.gold_other,
                batch_size: c.batch_size,
                similarity: c.similarity.name().to_string(),
                loss: loss_label(c.loss).to_string(),
                top5,
                top20,
                top100,
                status,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub requested: usize,
    pub used: usize,
    pub top5: f64,
    pub top20: f64,
    pub top100: f64,
    pub bm25_top20: f64,
    /// Smallest training size whose dense top-20 reaches BM25's, if any.
    pub crossover: Option<usize>,
    pub note: String,
}

/// Trains on growing prefixes of `pool`; sizes beyond the pool are capped
/// and flagged in the `note` column.
pub fn sample_efficiency_curve(
    exp: &Experiment,
    pool: &[EncodedExample],
    base: &TrainConfig,
    sizes: &[usize],
) -> Result<Vec<CurveRow>> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::invalid("curve sizes must be non-empty and positive"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("curve sizes must be strictly ascending"));
    }
    let bm25 = exp.evaluate_bm25()?.at(20);
    let mut rows: Vec<CurveRow> = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let used = size.min(pool.len());
        let note = if used < size {
            format!("capped at {used} available examples")
        } else {
            String::new()
        };
        let report = exp.run_cell(&pool[..used], base)?;
        log::info!("curve size {used}: top20 {:.4}", report.at(20));
        rows.push(CurveRow {
            requested: size,
            used,
            top5: report.at(5),
            top20: report.at(20),
            top100: report.at(100),
            bm25_top20: bm25,
            crossover: None,
            note,
        });
    }
    let crossover = rows.iter().find(|r| r.top20 >= r.bm25_top20).map(|r| r.used);
    rows.iter_mut().for_each(|r| r.crossover = crossover);
    Ok(rows)
}

pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
