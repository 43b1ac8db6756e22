use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::binio::{BinReader, BinWriter};
use crate::corpus::PassageStore;
use crate::dual_encoder::{EncoderParams, Tower};
use crate::error::{Error, Result};
use crate::ranking::{PassageId, RankedList, TopK};
use crate::scalar::Scalar;
use crate::vocab::Vocab;

const MAGIC: &[u8; 4] = b"DPRV";
const VERSION: u32 = 1;

/// Dot product of f32 vectors accumulated in f64.
#[inline]
pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] as f64 * b[i] as f64;
        acc[1] += a[i + 1] as f64 * b[i + 1] as f64;
        acc[2] += a[i + 2] as f64 * b[i + 2] as f64;
        acc[3] += a[i + 3] as f64 * b[i + 3] as f64;
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] as f64 * b[i] as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// N×d passage vectors (f32, row-major) with their passage ids.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    data: Vec<f32>,
    pids: Vec<PassageId>,
}

impl VectorStore {
    pub fn new(dim: usize, data: Vec<f32>, pids: Vec<PassageId>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("vector dimension must be positive"));
        }
        if data.len() != dim * pids.len() {
            return Err(Error::invalid(format!(
                "{} floats do not form {} vectors of dimension {dim}",
                data.len(),
                pids.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector store entries".into()));
        }
        let mut sorted = pids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("vector store pids must be unique"));
        }
        Ok(VectorStore { dim, data, pids })
    }

    /// Row i holds passage i when `pids` is `0..N`.
    pub fn from_rows(rows: Vec<Vec<f32>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let pids = (0..rows.len() as PassageId).collect();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("rows of unequal length"));
        }
        Self::new(dim, rows.concat(), pids)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pids.is_empty()
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn pid(&self, row: usize) -> PassageId {
        self.pids[row]
    }

    pub fn pids(&self) -> &[PassageId] {
        &self.pids
    }

    /// Row holding `pid`, assuming the common dense layout first.
    pub fn row_of(&self, pid: PassageId) -> Option<usize> {
        match self.pids.get(pid as usize) {
            Some(&p) if p == pid => Some(pid as usize),
            _ => self.pids.iter().position(|&p| p == pid),
        }
    }

    /// Exhaustive inner-product top-k.
    pub fn exact_search(&self, query: &[f32], k: usize) -> RankedList {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        let mut top = TopK::new(k);
        for row in 0..self.len() {
            top.push(self.pids[row], dot_f64(query, self.vector(row)));
        }
        top.into_ranked()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(MAGIC, VERSION);
        w.u32(self.dim as u32);
        w.u64(self.pids.len() as u64);
        for &v in &self.data {
            w.f32(v);
        }
        for &p in &self.pids {
            w.u64(p);
        }
        w.into_bytes()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut r, version) = BinReader::open(path, MAGIC, "vector file")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported vector file version {version}")));
        }
        let dim = r.u32()? as usize;
        let n = r.u64()? as usize;
        let data = r.f32_vec(dim * n)?;
        let pids = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::new(dim, data, pids)
    }
}

/// Encodes every passage with the passage tower, in store order.
pub fn embed_store<T: Scalar>(
    params: &EncoderParams<T>,
    vocab: &Vocab,
    store: &PassageStore,
) -> Result<VectorStore> {
    let rows: Vec<Vec<f32>> = store
        .passages()
        .par_iter()
        .map(|p| {
            let v = params.encode(&vocab.encode_passage(p), Tower::Passage)?;
            Ok(v.into_iter().map(Scalar::as_f32).collect())
        })
        .collect::<Result<_>>()?;
    let dim = params.dim();
    let pids = store.iter().map(|p| p.passage_id).collect();
    VectorStore::new(dim, rows.concat(), pids)
}

/// `n` standard-normal vectors of dimension `dim` with pids `0..n`.
pub fn gaussian_vectors(n: usize, dim: usize, seed: u64) -> Result<VectorStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..n * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    VectorStore::new(dim, data, (0..n as PassageId).collect())
}

/// Mean over queries of |approx ∩ exact| / k.
pub fn recall_at_k(approx: &[RankedList], exact: &[RankedList], k: usize) -> Result<f64> {
    if approx.len() != exact.len() {
        return Err(Error::invalid(format!(
            "recall over {} approximate vs {} exact result lists",
            approx.len(),
            exact.len()
        )));
    }
    if k == 0 {
        return Err(Error::invalid("recall@0 is undefined"));
    }
    if approx.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = approx
        .iter()
        .zip(exact)
        .map(|(a, e)| {
            let truth: std::collections::HashSet<_> = e.pids().take(k).collect();
            a.pids().take(k).filter(|p| truth.contains(p)).count() as f64 / k as f64
        })
        .sum();
    Ok(total / approx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::ScoredPassage;

    fn list(pids: &[u64]) -> RankedList {
        RankedList::from_candidates(
            pids.iter().map(|&pid| ScoredPassage { pid, score: 1.0 }).collect(),
            pids.len(),
        )
    }

    #[test]
    fn recall_examples() {
        let exact = vec![list(&[1, 2]), list(&[3, 4])];
        assert_eq!(recall_at_k(&exact, &exact, 2).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[list(&[5, 6]), list(&[7, 8])], &exact, 2).unwrap(), 0.0);
        assert_eq!(recall_at_k(&[list(&[1, 9]), list(&[4, 9])], &exact, 2).unwrap(), 0.5);
        assert!(recall_at_k(&exact[..1], &exact, 2).is_err());
    }

    #[test]
    fn k_beyond_n_ranks_everything() {
        let vs = VectorStore::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let r = vs.exact_search(&[1.0, 0.2], 10);
        assert_eq!(r.pids().collect::<Vec<_>>(), vec![0, 2, 1]);
    }

    #[test]
    fn unit_query_finds_itself_first() {
        let rows: Vec<Vec<f32>> = (0..8)
            .map(|i| {
                let a = i as f32 * 0.7;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let vs = VectorStore::from_rows(rows.clone()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(vs.exact_search(r, 1).pids().next(), Some(i as u64));
        }
    }

    #[test]
    fn rejects_bad_shapes_and_duplicate_pids() {
        assert!(VectorStore::new(2, vec![0.0; 3], vec![0, 1]).is_err());
        assert!(VectorStore::new(1, vec![0.0, 1.0], vec![4, 4]).is_err());
        assert!(VectorStore::new(1, vec![f32::NAN], vec![0]).is_err());
    }

    #[test]
    fn vector_file_round_trips() {
        let vs = VectorStore::new(2, vec![1.0, 2.0, 3.0, 4.0], vec![7, 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.dprv");
        vs.save(&path).unwrap();
        assert_eq!(VectorStore::load(&path).unwrap(), vs);
        assert_eq!(vs.row_of(3), Some(1));
    }
}
