//! One entry point over the sparse, dense and hybrid backends.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, write_jsonl, TokenizerConfig};
use crate::dense_index::{dot_f64, HnswIndex, VectorStore};
use crate::dual_encoder::{EncoderParams, Tower};
use crate::error::{Error, Result};
use crate::ranking::{PassageId, RankedList, ScoredPassage, TopK};
use crate::scalar::Scalar;
use crate::sparse_index::InvertedIndex;
use crate::vocab::Vocab;

pub const DEFAULT_LAMBDA: f64 = 1.1;
pub const DEFAULT_POOL: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenseBackend {
    #[default]
    Exact,
    Hnsw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RetrieverKind {
    Sparse,
    Dense { backend: DenseBackend },
    /// Union of the top `pool_n` BM25 and dense candidates, reranked by
    /// `BM25(q, p) + λ·sim(q, p)`.
    Hybrid {
        lambda: f64,
        pool_n: usize,
        backend: DenseBackend,
    },
}

impl RetrieverKind {
    pub fn hybrid_default() -> Self {
        RetrieverKind::Hybrid {
            lambda: DEFAULT_LAMBDA,
            pool_n: DEFAULT_POOL,
            backend: DenseBackend::Exact,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let RetrieverKind::Hybrid { lambda, pool_n, .. } = *self {
            if !lambda.is_finite() {
                return Err(Error::invalid("hybrid lambda must be finite"));
            }
            if pool_n == 0 {
                return Err(Error::invalid("hybrid pool size must be at least 1"));
            }
        }
        Ok(())
    }
}

/// The dense side of retrieval: question encoder plus passage vectors.
pub struct DenseSide<'a, T> {
    pub params: &'a EncoderParams<T>,
    pub vocab: &'a Vocab,
    pub vectors: &'a VectorStore,
    pub hnsw: Option<&'a HnswIndex>,
}

/// Borrowed view over whichever indexes are loaded.
pub struct Retriever<'a, T> {
    pub tokenizer: &'a TokenizerConfig,
    pub sparse: Option<&'a InvertedIndex>,
    pub dense: Option<DenseSide<'a, T>>,
}

impl<'a, T: Scalar> Retriever<'a, T> {
    fn sparse(&self) -> Result<&'a InvertedIndex> {
        self.sparse
            .ok_or_else(|| Error::MissingArtifact("BM25 index (build-sparse)".into()))
    }

    fn dense(&self) -> Result<&DenseSide<'a, T>> {
        self.dense.as_ref().ok_or_else(|| {
            Error::MissingArtifact("encoder model and passage vectors (train, embed)".into())
        })
    }

    pub fn question_vector(&self, question: &str) -> Result<Vec<f32>> {
        let dense = self.dense()?;
        let tokens = dense.vocab.encode(&tokenize(self.tokenizer, question));
        if tokens.is_empty() {
            // A question without tokens has no vector; treat it as all zeros.
            return Ok(vec![0.0; dense.params.dim()]);
        }
        Ok(dense
            .params
            .encode(&tokens, Tower::Question)?
            .into_iter()
            .map(Scalar::as_f32)
            .collect())
    }

    fn dense_search(&self, query: &[f32], k: usize, backend: DenseBackend) -> Result<RankedList> {
        let dense = self.dense()?;
        match backend {
            DenseBackend::Exact => Ok(dense.vectors.exact_search(query, k)),
            DenseBackend::Hnsw => {
                let hnsw = dense
                    .hnsw
                    .ok_or_else(|| Error::MissingArtifact("HNSW index (build-dense)".into()))?;
                Ok(hnsw.search(dense.vectors, query, k))
            }
        }
    }

    pub fn retrieve(&self, kind: RetrieverKind, question: &str, k: usize) -> Result<RankedList> {
        kind.validate()?;
        match kind {
            RetrieverKind::Sparse => {
                let tokens = tokenize(self.tokenizer, question);
                Ok(self.sparse()?.search(&tokens, k))
            }
            RetrieverKind::Dense { backend } => {
                let q = self.question_vector(question)?;
                self.dense_search(&q, k, backend)
            }
            RetrieverKind::Hybrid {
                lambda,
                pool_n,
                backend,
            } => self.retrieve_hybrid(question, k, lambda, pool_n, backend),
        }
    }

    /// Both scores are recomputed for every union member, so a passage found
    /// by only one backend still gets its true score from the other.
    pub fn retrieve_hybrid(
        &self,
        question: &str,
        k: usize,
        lambda: f64,
        pool_n: usize,
        backend: DenseBackend,
    ) -> Result<RankedList> {
        let sparse = self.sparse()?;
        let dense = self.dense()?;
        let tokens = tokenize(self.tokenizer, question);
        let q = self.question_vector(question)?;
        let pool = pool_n.min(dense.vectors.len());
        let mut union: BTreeSet<PassageId> = sparse.search(&tokens, pool).pids().collect();
        union.extend(self.dense_search(&q, pool, backend)?.pids());
        let mut top = TopK::new(k);
        for pid in union {
            let row = dense
                .vectors
                .row_of(pid)
                .ok_or_else(|| Error::invalid(format!("passage {pid} has no vector")))?;
            let combined = sparse.score(&tokens, pid)? + lambda * dot_f64(&q, dense.vectors.vector(row));
            top.push(pid, combined);
        }
        Ok(top.into_ranked())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub pid: PassageId,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub question: String,
    pub results: Vec<RankedResult>,
}

impl RetrievalRecord {
    pub fn new(question: &str, list: &RankedList) -> Self {
        RetrievalRecord {
            question: question.to_string(),
            results: list
                .iter()
                .enumerate()
                .map(|(i, s)| RankedResult {
                    pid: s.pid,
                    score: s.score,
                    rank: i + 1,
                })
                .collect(),
        }
    }

    pub fn ranked_list(&self) -> RankedList {
        RankedList::from_sorted_unchecked(
            self.results
                .iter()
                .map(|r| ScoredPassage {
                    pid: r.pid,
                    score: r.score,
                })
                .collect(),
        )
    }
}

pub fn write_retrieval(path: &Path, records: &[RetrievalRecord]) -> Result<()> {
    write_jsonl(path, records)
}
