//! BM25 over an inverted index.
//!
//! ```text
//! score(q, p) = Σ_{t ∈ unique(q)} idf(t) · tf·(k1+1) / (tf + k1·(1 − b + b·|p|/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! `|p|` counts title and body tokens. The `+1` inside the logarithm keeps
//! idf non-negative.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{BinReader, BinWriter};
use crate::corpus::PassageStore;
use crate::error::{Error, Result};
use crate::ranking::{PassageId, RankedList, TopK};

const MAGIC: &[u8; 4] = b"BM25";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(Error::invalid(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::invalid(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub pid: PassageId,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostingList {
    pub term: String,
    /// Strictly increasing by pid.
    pub entries: Vec<Posting>,
}

impl PostingList {
    pub fn df(&self) -> usize {
        self.entries.len()
    }

    pub fn tf(&self, pid: PassageId) -> u32 {
        self.entries
            .binary_search_by_key(&pid, |p| p.pid)
            .map(|i| self.entries[i].tf)
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    params: Bm25Params,
    /// Sorted by term.
    postings: Vec<PostingList>,
    lookup: HashMap<String, usize>,
    doc_len: Vec<u32>,
    avgdl: f64,
}

pub fn idf(n: usize, df: usize) -> f64 {
    let n = n as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// The BM25 term-frequency component for one term in one passage.
pub fn tf_weight(params: &Bm25Params, tf: f64, doc_len: f64, avgdl: f64) -> f64 {
    let norm = params.k1 * (1.0 - params.b + params.b * doc_len / avgdl);
    tf * (params.k1 + 1.0) / (tf + norm)
}

/// Query terms with duplicates removed, first occurrence order kept.
pub fn unique_terms<S: AsRef<str>>(tokens: &[S]) -> Vec<&str> {
    let mut seen = HashSet::new();
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| seen.insert(*t))
        .collect()
}

impl InvertedIndex {
    pub fn build(store: &PassageStore, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        if store.is_empty() {
            return Err(Error::invalid("cannot build a BM25 index over an empty store"));
        }
        let mut map: BTreeMap<&str, Vec<Posting>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(store.len());
        for p in store.iter() {
            let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
            for t in p.indexed_tokens() {
                *counts.entry(t).or_default() += 1;
            }
            for (t, tf) in counts {
                map.entry(t).or_default().push(Posting {
                    pid: p.passage_id,
                    tf,
                });
            }
            doc_len.push(p.indexed_len() as u32);
        }
        let postings = map
            .into_iter()
            .map(|(term, entries)| PostingList {
                term: term.to_string(),
                entries,
            })
            .collect();
        Ok(Self::assemble(params, postings, doc_len))
    }

    fn assemble(params: Bm25Params, postings: Vec<PostingList>, doc_len: Vec<u32>) -> Self {
        let lookup = postings
            .iter()
            .enumerate()
            .map(|(i, p)| (p.term.clone(), i))
            .collect();
        let total: f64 = doc_len.iter().map(|&l| l as f64).sum();
        let avgdl = total / doc_len.len() as f64;
        InvertedIndex {
            params,
            postings,
            lookup,
            doc_len,
            avgdl,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn num_passages(&self) -> usize {
        self.doc_len.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_len(&self, pid: PassageId) -> Option<u32> {
        self.doc_len.get(usize::try_from(pid).ok()?).copied()
    }

    pub fn posting(&self, term: &str) -> Option<&PostingList> {
        self.lookup.get(term).map(|&i| &self.postings[i])
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        match self.posting(term) {
            Some(p) => idf(self.num_passages(), p.df()),
            None => 0.0,
        }
    }

    /// BM25 score of a single passage.
    pub fn score<S: AsRef<str>>(&self, question_tokens: &[S], pid: PassageId) -> Result<f64> {
        let len = self
            .doc_len(pid)
            .ok_or_else(|| Error::invalid(format!("passage id {pid} out of range")))?
            as f64;
        let mut score = 0.0;
        for term in unique_terms(question_tokens) {
            let Some(pl) = self.posting(term) else {
                continue;
            };
            let tf = pl.tf(pid);
            if tf == 0 {
                continue;
            }
            score += idf(self.num_passages(), pl.df())
                * tf_weight(&self.params, tf as f64, len, self.avgdl);
        }
        Ok(score)
    }

    /// Top-k passages sharing at least one term with the question.
    pub fn search<S: AsRef<str>>(&self, question_tokens: &[S], k: usize) -> RankedList {
        let mut acc: HashMap<PassageId, f64> = HashMap::new();
        for term in unique_terms(question_tokens) {
            let Some(pl) = self.posting(term) else {
                continue;
            };
            let w = idf(self.num_passages(), pl.df());
            for e in &pl.entries {
                let len = self.doc_len[e.pid as usize] as f64;
                *acc.entry(e.pid).or_insert(0.0) +=
                    w * tf_weight(&self.params, e.tf as f64, len, self.avgdl);
            }
        }
        let mut top = TopK::new(k);
        for (pid, s) in acc {
            top.push(pid, s);
        }
        top.into_ranked()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_writer().write_to(path)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_writer().into_bytes()
    }

    fn to_writer(&self) -> BinWriter {
        let mut w = BinWriter::new(MAGIC, VERSION);
        w.f64(self.params.k1);
        w.f64(self.params.b);
        w.u64(self.doc_len.len() as u64);
        for &l in &self.doc_len {
            w.u32(l);
        }
        w.u64(self.postings.len() as u64);
        for pl in &self.postings {
            w.bytes(pl.term.as_bytes());
            w.u32(pl.entries.len() as u32);
            let mut prev = 0u64;
            for e in &pl.entries {
                w.u64(e.pid - prev);
                w.u32(e.tf);
                prev = e.pid;
            }
        }
        w
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut r, version) = BinReader::open(path, MAGIC, "BM25 index")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported BM25 index version {version}")));
        }
        let params = Bm25Params {
            k1: r.f64()?,
            b: r.f64()?,
        };
        params.validate()?;
        let n = r.u64()? as usize;
        if n == 0 {
            return Err(Error::Format("BM25 index has no passages".into()));
        }
        let doc_len = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let terms = r.u64()? as usize;
        let mut postings = Vec::with_capacity(terms.min(1 << 20));
        for _ in 0..terms {
            let term = String::from_utf8(r.bytes()?)
                .map_err(|_| Error::Format("BM25 term is not UTF-8".into()))?;
            let len = r.u32()? as usize;
            let mut entries = Vec::with_capacity(len.min(n));
            let mut pid = 0u64;
            for i in 0..len {
                let delta = r.u64()?;
                if i > 0 && delta == 0 {
                    return Err(Error::Format(format!("posting list for {term:?} not strictly increasing")));
                }
                pid += delta;
                if pid as usize >= n {
                    return Err(Error::Format(format!("posting pid {pid} out of range")));
                }
                entries.push(Posting { pid, tf: r.u32()? });
            }
            postings.push(PostingList { term, entries });
        }
        r.finish()?;
        Ok(Self::assemble(params, postings, doc_len))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, TokenizerConfig};

    fn store(bodies: &[&str]) -> PassageStore {
        let docs: Vec<_> = bodies
            .iter()
            .enumerate()
            .map(|(i, b)| Document {
                doc_id: format!("d{i}"),
                title: String::new(),
                body: b.to_string(),
            })
            .collect();
        PassageStore::from_documents(&docs, 100, TokenizerConfig::default()).unwrap()
    }

    #[test]
    fn counts_term_frequency() {
        let idx = InvertedIndex::build(&store(&["a b a"]), Bm25Params::default()).unwrap();
        assert_eq!(idx.posting("a").unwrap().entries, vec![Posting { pid: 0, tf: 2 }]);
        assert!(idx.posting("zzz").is_none());
    }

    #[test]
    fn avgdl_is_mean_length() {
        let idx = InvertedIndex::build(&store(&["a b c d", "a b c d e f"]), Bm25Params::default())
            .unwrap();
        assert_eq!(idx.avgdl(), 5.0);
    }

    #[test]
    fn empty_store_is_rejected() {
        assert!(InvertedIndex::build(&store(&[]), Bm25Params::default()).is_err());
    }

    #[test]
    fn hand_derived_score_constant() {
        // N=3, "sea" occurs twice in passage 0 only, every passage has 4 tokens.
        let s = store(&["sea sea x y", "a b c d", "e f g h"]);
        let idx = InvertedIndex::build(&s, Bm25Params::default()).unwrap();
        let expected = (8.0f64 / 3.0).ln() * 3.8 / 2.9;
        // Equal up to evaluation-order rounding (one ulp here).
        assert!((idx.score(&["sea"], 0).unwrap() - expected).abs() <= 1e-15);
    }

    #[test]
    fn degenerate_queries_score_zero() {
        let idx = InvertedIndex::build(&store(&["a b", "c d"]), Bm25Params::default()).unwrap();
        assert_eq!(idx.score::<&str>(&[], 0).unwrap(), 0.0);
        assert_eq!(idx.score(&["c"], 0).unwrap(), 0.0);
        assert!(idx.score(&["a"], 7).is_err());
    }

    #[test]
    fn equal_scores_rank_lower_pid_first() {
        let idx = InvertedIndex::build(&store(&["x a", "x b", "y"]), Bm25Params::default()).unwrap();
        let r = idx.search(&["x"], 10);
        assert_eq!(r.pids().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn params_are_validated() {
        assert!(Bm25Params { k1: -1.0, b: 0.4 }.validate().is_err());
        assert!(Bm25Params { k1: 0.9, b: 1.5 }.validate().is_err());
    }

    #[test]
    fn binary_round_trip() {
        let idx = InvertedIndex::build(&store(&["alpha beta", "beta gamma gamma", "delta"]), Bm25Params::default())
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bm25.idx");
        idx.save(&path).unwrap();
        assert_eq!(InvertedIndex::load(&path).unwrap(), idx);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"BM25");
    }
}
