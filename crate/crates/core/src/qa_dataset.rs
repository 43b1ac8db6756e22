//! Training-set construction: positive passage resolution (gold matching or
//! distant supervision) and typed negative mining.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, tokenize, write_jsonl, PassageStore};
use crate::error::{Error, Result};
use crate::evalbench::contains_answer;
use crate::ranking::PassageId;
use crate::seed::derive_seed;
use crate::sparse_index::InvertedIndex;

/// Number of BM25 results inspected when looking for a distant positive.
pub const DISTANT_DEPTH: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_context: Option<String>,
}

impl QAPair {
    pub fn validate(&self) -> Result<()> {
        if self.question.trim().is_empty() {
            return Err(Error::invalid("question must be non-empty"));
        }
        if self.answers.is_empty() || self.answers.iter().any(|a| a.is_empty()) {
            return Err(Error::invalid(format!(
                "question {:?} needs at least one non-empty answer",
                self.question
            )));
        }
        Ok(())
    }
}

pub fn read_qa_pairs(path: &Path) -> Result<Vec<QAPair>> {
    let pairs: Vec<QAPair> = read_jsonl(path)?;
    for p in &pairs {
        p.validate()?;
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    Random,
    Bm25,
    GoldOther,
}

/// How many negatives of each kind to attach to every example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NegativeSpec {
    pub random: usize,
    pub bm25: usize,
    pub gold_other: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Negative {
    pub pid: PassageId,
    pub kind: NegativeKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExample {
    pub question: String,
    pub positive_pid: PassageId,
    pub negatives: Vec<Negative>,
}

#[derive(Serialize, Deserialize)]
struct TrainExampleRecord {
    question: String,
    positive: PassageId,
    negatives: Vec<Negative>,
}

pub fn write_training_set(path: &Path, examples: &[TrainExample]) -> Result<()> {
    let records: Vec<_> = examples
        .iter()
        .map(|e| TrainExampleRecord {
            question: e.question.clone(),
            positive: e.positive_pid,
            negatives: e.negatives.clone(),
        })
        .collect();
    write_jsonl(path, &records)
}

pub fn read_training_set(path: &Path) -> Result<Vec<TrainExample>> {
    let records: Vec<TrainExampleRecord> = read_jsonl(path)?;
    Ok(records
        .into_iter()
        .map(|r| TrainExample {
            question: r.question,
            positive_pid: r.positive,
            negatives: r.negatives,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveMode {
    #[default]
    Gold,
    Distant,
}

/// Bag-of-tokens F1 between two token lists.
pub fn token_f1<S: AsRef<str>, U: AsRef<str>>(a: &[S], b: &[U]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in a {
        *counts.entry(t.as_ref()).or_default() += 1;
    }
    let mut common = 0usize;
    for t in b {
        if let Some(c) = counts.get_mut(t.as_ref()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / b.len() as f64;
    let recall = common as f64 / a.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// The passage with maximal token-overlap F1 against the gold context (ties
/// to the lower id), provided that passage contains an answer.
pub fn match_gold_positive(pair: &QAPair, store: &PassageStore) -> Option<PassageId> {
    let gold = tokenize(store.tokenizer(), pair.gold_context.as_deref()?);
    let mut best: Option<(f64, PassageId)> = None;
    for p in store.iter() {
        let f1 = token_f1(&gold, &p.body_tokens);
        if f1 > 0.0 && best.is_none_or(|(b, _)| f1 > b) {
            best = Some((f1, p.passage_id));
        }
    }
    let (_, pid) = best?;
    contains_answer(&store.get(pid)?.body_text, &pair.answers).then_some(pid)
}

/// BM25 with question and answer tokens as the query; the best-ranked
/// answer-bearing passage among the top [`DISTANT_DEPTH`].
pub fn select_distant_positive(
    pair: &QAPair,
    index: &InvertedIndex,
    store: &PassageStore,
) -> Option<PassageId> {
    let mut query = tokenize(store.tokenizer(), &pair.question);
    for a in &pair.answers {
        query.extend(tokenize(store.tokenizer(), a));
    }
    index
        .search(&query, DISTANT_DEPTH)
        .pids()
        .find(|&pid| {
            store
                .get(pid)
                .is_some_and(|p| contains_answer(&p.body_text, &pair.answers))
        })
}

/// Highest-ranked BM25 passages for the question that contain no answer.
/// Returns fewer than `count` when the candidates run out.
pub fn mine_bm25_negatives(
    pair: &QAPair,
    index: &InvertedIndex,
    store: &PassageStore,
    count: usize,
) -> Vec<PassageId> {
    if count == 0 {
        return Vec::new();
    }
    let query = tokenize(store.tokenizer(), &pair.question);
    let mut depth = (4 * count).max(32);
    loop {
        let ranked = index.search(&query, depth);
        let found: Vec<PassageId> = ranked
            .pids()
            .filter(|&pid| {
                store
                    .get(pid)
                    .is_some_and(|p| !contains_answer(&p.body_text, &pair.answers))
            })
            .take(count)
            .collect();
        if found.len() == count || ranked.len() < depth {
            if found.len() < count {
                log::debug!(
                    "only {} of {count} BM25 negatives for {:?}",
                    found.len(),
                    pair.question
                );
            }
            return found;
        }
        depth *= 2;
    }
}

/// Uniform sample without replacement from all passages except `positive`.
pub fn sample_random_negatives(
    store_len: usize,
    positive: PassageId,
    count: usize,
    seed: u64,
) -> Result<Vec<PassageId>> {
    if count + 1 > store_len {
        return Err(Error::invalid(format!(
            "cannot sample {count} random negatives from a store of {store_len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, store_len - 1, count)
        .into_iter()
        .map(|i| {
            let pid = i as PassageId;
            if pid >= positive {
                pid + 1
            } else {
                pid
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub total: usize,
    pub kept: usize,
    pub dropped: usize,
}

impl std::fmt::Display for BuildReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "kept {} of {}, dropped {}", self.kept, self.total, self.dropped)
    }
}

/// One example per pair whose positive resolves; unresolvable pairs are
/// dropped and counted.
pub fn build_training_set(
    pairs: &[QAPair],
    store: &PassageStore,
    index: &InvertedIndex,
    spec: &NegativeSpec,
    mode: PositiveMode,
    seed: u64,
) -> Result<(Vec<TrainExample>, BuildReport)> {
    let positives: Vec<Option<PassageId>> = pairs
        .par_iter()
        .map(|pair| match mode {
            PositiveMode::Gold => match_gold_positive(pair, store),
            PositiveMode::Distant => select_distant_positive(pair, index, store),
        })
        .collect();
    let mut gold_pool: Vec<PassageId> = positives.iter().flatten().copied().collect();
    gold_pool.sort_unstable();
    gold_pool.dedup();

    let examples: Vec<Option<TrainExample>> = pairs
        .par_iter()
        .zip(&positives)
        .enumerate()
        .map(|(i, (pair, pos))| -> Result<Option<TrainExample>> {
            let Some(pos) = *pos else { return Ok(None) };
            let mut negatives = Vec::new();
            let random_seed = derive_seed(seed, &[1, i as u64]);
            let random_count = spec.random.min(store.len().saturating_sub(1));
            for pid in sample_random_negatives(store.len(), pos, random_count, random_seed)? {
                negatives.push(Negative { pid, kind: NegativeKind::Random });
            }
            // The positive contains an answer, so the miner never returns it.
            for pid in mine_bm25_negatives(pair, index, store, spec.bm25) {
                negatives.push(Negative { pid, kind: NegativeKind::Bm25 });
            }
            if spec.gold_other > 0 {
                let others: Vec<PassageId> = gold_pool.iter().copied().filter(|&p| p != pos).collect();
                let n = spec.gold_other.min(others.len());
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2, i as u64]));
                for j in sample(&mut rng, others.len(), n) {
                    negatives.push(Negative { pid: others[j], kind: NegativeKind::GoldOther });
                }
            }
            Ok(Some(TrainExample {
                question: pair.question.clone(),
                positive_pid: pos,
                negatives,
            }))
        })
        .collect::<Result<_>>()?;
    let examples: Vec<TrainExample> = examples.into_iter().flatten().collect();
    let report = BuildReport {
        total: pairs.len(),
        kept: examples.len(),
        dropped: pairs.len() - examples.len(),
    };
    if examples.is_empty() {
        return Err(Error::invalid(format!(
            "no training examples could be built ({report})"
        )));
    }
    log::info!("training set: {report}");
    Ok((examples, report))
}
