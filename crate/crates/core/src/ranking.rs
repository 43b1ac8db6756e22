use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

/// Passage identifier, dense from 0 in store order.
pub type PassageId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub pid: PassageId,
    pub score: f64,
}

impl ScoredPassage {
    /// Total order used everywhere results are ranked: score descending,
    /// then passage id ascending.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        // Signed zeros tie.
        (other.score + 0.0)
            .total_cmp(&(self.score + 0.0))
            .then(self.pid.cmp(&other.pid))
    }
}

/// Ranked retrieval output, sorted by (score desc, pid asc) with no
/// duplicate pids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList(Vec<ScoredPassage>);

impl RankedList {
    /// Sorts and truncates arbitrary candidates. Duplicate pids keep their
    /// best-ranked entry.
    pub fn from_candidates(mut items: Vec<ScoredPassage>, k: usize) -> Self {
        items.sort_by(ScoredPassage::rank_cmp);
        let mut seen = std::collections::HashSet::new();
        items.retain(|s| seen.insert(s.pid));
        items.truncate(k);
        RankedList(items)
    }

    pub fn from_sorted_unchecked(items: Vec<ScoredPassage>) -> Self {
        RankedList(items)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ScoredPassage> {
        self.0.iter()
    }

    pub fn pids(&self) -> impl Iterator<Item = PassageId> + '_ {
        self.0.iter().map(|s| s.pid)
    }

    pub fn as_slice(&self) -> &[ScoredPassage] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<ScoredPassage> {
        self.0
    }

    /// Checks the ordering and uniqueness invariants.
    pub fn is_well_formed(&self) -> bool {
        let strictly_sorted = self
            .0
            .windows(2)
            .all(|w| w[0].rank_cmp(&w[1]) == Ordering::Less);
        let mut pids: Vec<_> = self.pids().collect();
        pids.sort_unstable();
        pids.dedup();
        strictly_sorted && pids.len() == self.0.len()
    }
}

impl<'a> IntoIterator for &'a RankedList {
    type Item = &'a ScoredPassage;
    type IntoIter = std::slice::Iter<'a, ScoredPassage>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Heap entry whose `Ord` puts the worst-ranked candidate on top.
struct Worst(ScoredPassage);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

/// Bounded top-k collector under the (score desc, pid asc) order.
pub struct TopK {
    k: usize,
    heap: BinaryHeap<Worst>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub fn push(&mut self, pid: PassageId, score: f64) {
        if self.k == 0 {
            return;
        }
        let item = ScoredPassage { pid, score };
        if self.heap.len() < self.k {
            self.heap.push(Worst(item));
        } else if let Some(top) = self.heap.peek() {
            if item.rank_cmp(&top.0) == Ordering::Less {
                self.heap.pop();
                self.heap.push(Worst(item));
            }
        }
    }

    pub fn into_ranked(self) -> RankedList {
        let mut v: Vec<_> = self.heap.into_iter().map(|w| w.0).collect();
        v.sort_by(ScoredPassage::rank_cmp);
        RankedList(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_lower_pid() {
        let mut top = TopK::new(2);
        top.push(5, 1.0);
        top.push(2, 1.0);
        top.push(9, 1.0);
        let r = top.into_ranked();
        assert_eq!(r.pids().collect::<Vec<_>>(), vec![2, 5]);
        assert!(r.is_well_formed());
    }

    #[test]
    fn signed_zeros_tie() {
        let mut top = TopK::new(2);
        top.push(4, 0.0);
        top.push(3, -0.0);
        assert_eq!(top.into_ranked().pids().collect::<Vec<_>>(), vec![3, 4]);
    }

    #[test]
    fn from_candidates_dedups_and_truncates() {
        let items = vec![
            ScoredPassage { pid: 1, score: 0.5 },
            ScoredPassage { pid: 1, score: 0.9 },
            ScoredPassage { pid: 0, score: 0.1 },
        ];
        let r = RankedList::from_candidates(items, 5);
        assert_eq!(r.len(), 2);
        assert_eq!(r.as_slice()[0], ScoredPassage { pid: 1, score: 0.9 });
    }
}
