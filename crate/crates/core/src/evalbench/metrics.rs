use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::PassageStore;
use crate::error::{Error, Result};
use crate::qa_dataset::QAPair;
use crate::ranking::RankedList;

pub const DEFAULT_KS: [usize; 4] = [1, 5, 20, 100];

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn normalized_tokens(s: &str) -> Vec<String> {
    normalize_answer(s)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// True iff some answer, normalized, occurs as a contiguous token run of the
/// normalized passage body.
pub fn contains_answer<S: AsRef<str>>(body_text: &str, answers: &[S]) -> bool {
    let body = normalized_tokens(body_text);
    answers.iter().any(|a| {
        let ans = normalized_tokens(a.as_ref());
        !ans.is_empty() && body.windows(ans.len()).any(|w| w == ans.as_slice())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: BTreeMap<usize, f64>,
    pub questions: usize,
    pub fingerprint: String,
}

impl EvalReport {
    pub fn at(&self, k: usize) -> f64 {
        self.accuracy.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// For each k, the fraction of questions whose top-k contains an
/// answer-bearing passage.
pub fn top_k_accuracy(
    results: &[RankedList],
    pairs: &[QAPair],
    store: &PassageStore,
    ks: &[usize],
) -> Result<EvalReport> {
    if results.len() != pairs.len() {
        return Err(Error::invalid(format!(
            "{} retrieval results for {} questions",
            results.len(),
            pairs.len()
        )));
    }
    let first_hit: Vec<Option<usize>> = results
        .iter()
        .zip(pairs)
        .map(|(r, pair)| {
            r.iter().position(|s| {
                store
                    .get(s.pid)
                    .is_some_and(|p| contains_answer(&p.body_text, &pair.answers))
            })
        })
        .collect::<Vec<_>>();
    let n = pairs.len().max(1) as f64;
    let accuracy = ks
        .iter()
        .map(|&k| {
            let hits = first_hit.iter().filter(|h| h.is_some_and(|i| i < k)).count();
            (k, hits as f64 / n)
        })
        .collect();
    Ok(EvalReport {
        accuracy,
        questions: pairs.len(),
        fingerprint: String::new(),
    })
}

/// Fraction of predictions that normalize to one of the reference answers.
pub fn exact_match<S: AsRef<str>>(predictions: &[S], pairs: &[QAPair]) -> Result<f64> {
    if predictions.len() != pairs.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} questions",
            predictions.len(),
            pairs.len()
        )));
    }
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions
        .iter()
        .zip(pairs)
        .filter(|(p, pair)| {
            let pred = normalize_answer(p.as_ref());
            pair.answers.iter().any(|a| normalize_answer(a) == pred)
        })
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}
