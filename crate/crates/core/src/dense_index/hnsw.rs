//! Hierarchical navigable small-world graph for maximum inner product
//! search.
//!
//! Nodes are rows of a [`VectorStore`]; the graph itself stores only
//! adjacency. Similarity is the raw inner product (no normalisation), so the
//! "closest" neighbour is the one with the largest dot product.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vectors::{dot_f64, VectorStore};
use crate::binio::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::ranking::{RankedList, ScoredPassage};

const MAGIC: &[u8; 4] = b"HNSW";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSelection {
    /// Keep the M highest-scoring candidates.
    Simple,
    /// Skip a candidate that scores higher against an already selected
    /// neighbour than against the base node; top up with skipped candidates.
    #[default]
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
    #[serde(default)]
    pub selection: NeighborSelection,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 200,
            ef_search: 128,
            seed: 0,
            selection: NeighborSelection::Heuristic,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::invalid("HNSW M must be at least 2"));
        }
        if self.ef_construction < self.m {
            return Err(Error::invalid("ef_construction must be at least M"));
        }
        if self.ef_search == 0 {
            return Err(Error::invalid("ef_search must be at least 1"));
        }
        Ok(())
    }

    pub fn max_degree(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.m
        } else {
            self.m
        }
    }
}

/// Candidate ordered by score, ties preferring the lower node id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    score: f64,
    node: u32,
}

impl Eq for Cand {}
impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then(other.node.cmp(&self.node))
    }
}

struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Visited {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
    }

    /// Marks `node`; returns true if it was not yet visited.
    fn insert(&mut self, node: u32) -> bool {
        let slot = &mut self.marks[node as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnswIndex {
    params: HnswParams,
    /// `links[node][level]` for every level the node belongs to.
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: usize,
}

struct Builder<'a> {
    vs: &'a VectorStore,
    params: HnswParams,
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: usize,
    visited: Visited,
}

impl Builder<'_> {
    fn score(&self, a: u32, b: u32) -> f64 {
        dot_f64(self.vs.vector(a as usize), self.vs.vector(b as usize))
    }

    fn greedy(&mut self, query: &[f32], mut cur: Cand, level: usize) -> Cand {
        search_greedy(&self.links, self.vs, query, &mut cur, level);
        cur
    }

    fn select(&self, base: u32, mut cands: Vec<Cand>, m: usize) -> Vec<u32> {
        cands.sort_by(|a, b| b.cmp(a));
        match self.params.selection {
            NeighborSelection::Simple => cands.iter().take(m).map(|c| c.node).collect(),
            NeighborSelection::Heuristic => {
                let mut chosen: Vec<Cand> = Vec::with_capacity(m);
                let mut skipped = Vec::new();
                for c in cands {
                    if chosen.len() >= m {
                        break;
                    }
                    if c.node == base {
                        continue;
                    }
                    let dominated = chosen.iter().any(|r| self.score(c.node, r.node) > c.score);
                    if dominated {
                        skipped.push(c);
                    } else {
                        chosen.push(c);
                    }
                }
                let mut out: Vec<u32> = chosen.iter().map(|c| c.node).collect();
                out.extend(skipped.iter().take(m - out.len()).map(|c| c.node));
                out
            }
        }
    }

    fn insert(&mut self, node: u32, level: usize) {
        self.links[node as usize] = vec![Vec::new(); level + 1];
        if node == 0 {
            self.entry = 0;
            self.max_level = level;
            return;
        }
        let query = self.vs.vector(node as usize).to_vec();
        let mut cur = Cand {
            score: dot_f64(&query, self.vs.vector(self.entry as usize)),
            node: self.entry,
        };
        for lc in (level + 1..=self.max_level).rev() {
            cur = self.greedy(&query, cur, lc);
        }
        let mut entries = vec![cur];
        for lc in (0..=level.min(self.max_level)).rev() {
            let found = search_layer(
                &self.links,
                self.vs,
                &query,
                &entries,
                self.params.ef_construction,
                lc,
                &mut self.visited,
            );
            let neighbors = self.select(node, found.clone(), self.params.m);
            let cap = self.params.max_degree(lc);
            for &nb in &neighbors {
                self.links[nb as usize][lc].push(node);
                if self.links[nb as usize][lc].len() > cap {
                    let cands = self.links[nb as usize][lc]
                        .iter()
                        .map(|&x| Cand {
                            score: self.score(nb, x),
                            node: x,
                        })
                        .collect();
                    self.links[nb as usize][lc] = self.select(nb, cands, cap);
                }
            }
            self.links[node as usize][lc] = neighbors;
            entries = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = node;
        }
    }

    /// Links every node unreachable from the entry point at layer 0 from a
    /// reachable node with spare degree.
    fn repair_reachability(&mut self) {
        let n = self.links.len();
        let cap = self.params.max_degree(0);
        for _ in 0..n {
            let reach = reachable(&self.links, self.entry, 0);
            let Some(orphan) = (0..n).find(|&i| !reach[i]) else {
                return;
            };
            let query = self.vs.vector(orphan).to_vec();
            let entry = Cand {
                score: dot_f64(&query, self.vs.vector(self.entry as usize)),
                node: self.entry,
            };
            let mut found = search_layer(
                &self.links,
                self.vs,
                &query,
                &[entry],
                self.params.ef_construction,
                0,
                &mut self.visited,
            );
            found.retain(|c| reach[c.node as usize]);
            let host = found
                .iter()
                .find(|c| self.links[c.node as usize][0].len() < cap)
                .map(|c| c.node)
                .or_else(|| {
                    let mut all: Vec<Cand> = (0..n as u32)
                        .filter(|&i| reach[i as usize])
                        .map(|i| Cand {
                            score: dot_f64(&query, self.vs.vector(i as usize)),
                            node: i,
                        })
                        .collect();
                    all.sort_by(|a, b| b.cmp(a));
                    all.iter()
                        .find(|c| self.links[c.node as usize][0].len() < cap)
                        .or(all.first())
                        .map(|c| c.node)
                });
            let Some(host) = host else { return };
            let list = &mut self.links[host as usize][0];
            if list.len() >= cap {
                list.pop();
            }
            list.push(orphan as u32);
        }
    }
}

fn search_greedy(
    links: &[Vec<Vec<u32>>],
    vs: &VectorStore,
    query: &[f32],
    cur: &mut Cand,
    level: usize,
) {
    loop {
        let mut improved = false;
        for &nb in &links[cur.node as usize][level] {
            let c = Cand {
                score: dot_f64(query, vs.vector(nb as usize)),
                node: nb,
            };
            if c > *cur {
                *cur = c;
                improved = true;
            }
        }
        if !improved {
            return;
        }
    }
}

/// Beam search of width `ef` on one layer. Returns candidates best first.
fn search_layer(
    links: &[Vec<Vec<u32>>],
    vs: &VectorStore,
    query: &[f32],
    entries: &[Cand],
    ef: usize,
    level: usize,
    visited: &mut Visited,
) -> Vec<Cand> {
    visited.reset();
    let mut frontier: BinaryHeap<Cand> = BinaryHeap::new();
    let mut best: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
    for &e in entries {
        if visited.insert(e.node) {
            frontier.push(e);
            best.push(Reverse(e));
            if best.len() > ef {
                best.pop();
            }
        }
    }
    while let Some(c) = frontier.pop() {
        if let Some(Reverse(worst)) = best.peek() {
            if best.len() >= ef && c < *worst {
                break;
            }
        }
        for &nb in &links[c.node as usize][level] {
            if !visited.insert(nb) {
                continue;
            }
            let cand = Cand {
                score: dot_f64(query, vs.vector(nb as usize)),
                node: nb,
            };
            let admit = best.len() < ef || best.peek().is_some_and(|Reverse(w)| cand > *w);
            if admit {
                frontier.push(cand);
                best.push(Reverse(cand));
                if best.len() > ef {
                    best.pop();
                }
            }
        }
    }
    let mut out: Vec<Cand> = best.into_iter().map(|Reverse(c)| c).collect();
    out.sort_by(|a, b| b.cmp(a));
    out
}

fn reachable(links: &[Vec<Vec<u32>>], entry: u32, level: usize) -> Vec<bool> {
    let mut seen = vec![false; links.len()];
    let mut queue = VecDeque::from([entry]);
    seen[entry as usize] = true;
    while let Some(n) = queue.pop_front() {
        for &nb in &links[n as usize][level] {
            if !seen[nb as usize] {
                seen[nb as usize] = true;
                queue.push_back(nb);
            }
        }
    }
    seen
}

impl HnswIndex {
    /// Inserts rows in order with levels drawn from a seeded geometric
    /// distribution (factor 1/ln M).
    pub fn build(vs: &VectorStore, params: HnswParams) -> Result<Self> {
        params.validate()?;
        if vs.is_empty() {
            return Err(Error::invalid("cannot build HNSW over zero vectors"));
        }
        if vs.len() > u32::MAX as usize {
            return Err(Error::invalid("too many vectors for a u32-addressed graph"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let ml = 1.0 / (params.m as f64).ln();
        let mut builder = Builder {
            vs,
            params,
            links: vec![Vec::new(); vs.len()],
            entry: 0,
            max_level: 0,
            visited: Visited::new(vs.len()),
        };
        for node in 0..vs.len() {
            let u: f64 = 1.0 - rng.random::<f64>();
            let level = (-u.ln() * ml).floor() as usize;
            builder.insert(node as u32, level);
        }
        builder.repair_reachability();
        Ok(HnswIndex {
            params,
            links: builder.links,
            entry: builder.entry,
            max_level: builder.max_level,
        })
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn entry_point(&self) -> u32 {
        self.entry
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn node_level(&self, node: usize) -> usize {
        self.links[node].len() - 1
    }

    pub fn neighbors(&self, node: usize, level: usize) -> &[u32] {
        &self.links[node][level]
    }

    pub fn search(&self, vs: &VectorStore, query: &[f32], k: usize) -> RankedList {
        self.search_with_ef(vs, query, k, self.params.ef_search)
    }

    /// Greedy descent through the upper layers, then a beam of
    /// `max(ef, k)` at layer 0.
    pub fn search_with_ef(&self, vs: &VectorStore, query: &[f32], k: usize, ef: usize) -> RankedList {
        assert_eq!(vs.len(), self.len(), "vector store does not match the graph");
        assert_eq!(query.len(), vs.dim(), "query dimension mismatch");
        if k == 0 {
            return RankedList::default();
        }
        let mut cur = Cand {
            score: dot_f64(query, vs.vector(self.entry as usize)),
            node: self.entry,
        };
        for level in (1..=self.max_level).rev() {
            search_greedy(&self.links, vs, query, &mut cur, level);
        }
        let mut visited = Visited::new(self.len());
        let found = search_layer(&self.links, vs, query, &[cur], ef.max(k), 0, &mut visited);
        RankedList::from_candidates(
            found
                .into_iter()
                .map(|c| ScoredPassage {
                    pid: vs.pid(c.node as usize),
                    score: c.score,
                })
                .collect(),
            k,
        )
    }

    /// Checks degree bounds, layer nesting, edge validity and layer-0
    /// reachability from the entry point. Returns the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.len();
        if self.entry as usize >= n {
            return Err("entry point out of range".into());
        }
        if self.node_level(self.entry as usize) != self.max_level {
            return Err("entry point is not on the top layer".into());
        }
        for (node, levels) in self.links.iter().enumerate() {
            if levels.is_empty() {
                return Err(format!("node {node} has no layers"));
            }
            if levels.len() - 1 > self.max_level {
                return Err(format!("node {node} above max level"));
            }
            for (level, nbs) in levels.iter().enumerate() {
                if nbs.len() > self.params.max_degree(level) {
                    return Err(format!("node {node} has degree {} at level {level}", nbs.len()));
                }
                for &nb in nbs {
                    if nb as usize >= n {
                        return Err(format!("edge {node}->{nb} leaves the graph"));
                    }
                    if nb as usize == node {
                        return Err(format!("self loop at {node}"));
                    }
                    if self.node_level(nb as usize) < level {
                        return Err(format!("edge {node}->{nb} at level {level} above target's level"));
                    }
                }
                let mut sorted = nbs.clone();
                sorted.sort_unstable();
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return Err(format!("duplicate edge at node {node} level {level}"));
                }
            }
        }
        let reach = reachable(&self.links, self.entry, 0);
        if let Some(orphan) = reach.iter().position(|r| !r) {
            return Err(format!("node {orphan} unreachable at layer 0"));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(MAGIC, VERSION);
        w.u32(self.params.m as u32);
        w.u32(self.params.ef_construction as u32);
        w.u32(self.params.ef_search as u32);
        w.u64(self.params.seed);
        w.u32(match self.params.selection {
            NeighborSelection::Simple => 0,
            NeighborSelection::Heuristic => 1,
        });
        w.u64(self.links.len() as u64);
        w.u32(self.entry);
        w.u32(self.max_level as u32);
        for levels in &self.links {
            w.u32((levels.len() - 1) as u32);
        }
        for levels in &self.links {
            for nbs in levels {
                w.u32(nbs.len() as u32);
                for &nb in nbs {
                    w.u32(nb);
                }
            }
        }
        w.into_bytes()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut r, version) = BinReader::open(path, MAGIC, "HNSW index")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported HNSW version {version}")));
        }
        let m = r.u32()? as usize;
        let ef_construction = r.u32()? as usize;
        let ef_search = r.u32()? as usize;
        let seed = r.u64()?;
        let selection = match r.u32()? {
            0 => NeighborSelection::Simple,
            1 => NeighborSelection::Heuristic,
            other => return Err(Error::Format(format!("unknown neighbour selection {other}"))),
        };
        let params = HnswParams {
            m,
            ef_construction,
            ef_search,
            seed,
            selection,
        };
        params.validate()?;
        let n = r.u64()? as usize;
        let entry = r.u32()?;
        let max_level = r.u32()? as usize;
        let levels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let mut links = Vec::with_capacity(n);
        for &lv in &levels {
            let mut per_level = Vec::with_capacity(lv as usize + 1);
            for _ in 0..=lv {
                let len = r.u32()? as usize;
                per_level.push((0..len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
            }
            links.push(per_level);
        }
        r.finish()?;
        let index = HnswIndex {
            params,
            links,
            entry,
            max_level,
        };
        index
            .check_invariants()
            .map_err(|e| Error::Format(format!("HNSW index: {e}")))?;
        Ok(index)
    }
}
