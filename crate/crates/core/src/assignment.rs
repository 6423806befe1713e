//! Item <-> code lookup maintained alongside the fine codebook.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::types::CoarseCodebook;

/// How an item got its fine code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignVia {
    /// Passed the similarity gate against an existing codeword.
    Matched,
    /// Founding member of a cluster created by the union-find pass.
    Founded,
    /// Unconditional nearest-codeword assignment (baseline quantizers).
    Nearest,
}

impl AssignVia {
    pub fn as_str(self) -> &'static str {
        match self {
            AssignVia::Matched => "matched",
            AssignVia::Founded => "founded",
            AssignVia::Nearest => "nearest",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "matched" => Some(AssignVia::Matched),
            "founded" => Some(AssignVia::Founded),
            "nearest" => Some(AssignVia::Nearest),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub coarse: Option<usize>,
    pub fine: usize,
    /// Cosine between the item and its codeword at assignment time.
    pub score: f64,
    pub via: AssignVia,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssignmentIndex {
    forward: HashMap<u64, Assignment>,
    reverse: HashMap<usize, Vec<u64>>,
}

impl AssignmentIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn get(&self, item_id: u64) -> Option<&Assignment> {
        self.forward.get(&item_id)
    }

    pub fn items_of(&self, fine: usize) -> &[u64] {
        self.reverse.get(&fine).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Record (or move) an item. A re-indexed item leaves its old slot list.
    pub fn assign(&mut self, item_id: u64, fine: usize, score: f64, via: AssignVia) {
        let entry = Assignment {
            coarse: None,
            fine,
            score,
            via,
        };
        self.insert(item_id, entry);
    }

    pub fn insert(&mut self, item_id: u64, entry: Assignment) {
        let fine = entry.fine;
        if let Some(old) = self.forward.insert(item_id, entry) {
            if let Some(list) = self.reverse.get_mut(&old.fine) {
                if let Some(pos) = list.iter().position(|&x| x == item_id) {
                    list.remove(pos);
                }
                if list.is_empty() {
                    self.reverse.remove(&old.fine);
                }
            }
        }
        self.reverse.entry(fine).or_default().push(item_id);
    }

    /// Drop every item attached to `fine`; returns the removed ids.
    pub fn clear_slot(&mut self, fine: usize) -> Vec<u64> {
        let items = self.reverse.remove(&fine).unwrap_or_default();
        for id in &items {
            self.forward.remove(id);
        }
        items
    }

    pub fn apply_hierarchy(&mut self, coarse: &CoarseCodebook) {
        for a in self.forward.values_mut() {
            a.coarse = coarse.parent_of(a.fine);
        }
    }

    /// Forward entries sorted by item id.
    pub fn entries(&self) -> Vec<(u64, Assignment)> {
        let sorted: BTreeMap<u64, Assignment> =
            self.forward.iter().map(|(k, v)| (*k, *v)).collect();
        sorted.into_iter().collect()
    }

    pub fn fine_codes(&self) -> impl Iterator<Item = usize> + '_ {
        self.reverse.keys().copied()
    }

    /// True when forward and reverse describe the same relation.
    pub fn is_consistent(&self) -> bool {
        let mut seen = 0usize;
        for (fine, items) in &self.reverse {
            for id in items {
                match self.forward.get(id) {
                    Some(a) if a.fine == *fine => seen += 1,
                    _ => return false,
                }
            }
        }
        seen == self.forward.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::CoarsePrototype;

    #[test]
    fn reassign_moves_between_slots() {
        let mut idx = AssignmentIndex::new();
        idx.assign(7, 0, 0.9, AssignVia::Matched);
        idx.assign(8, 0, 0.95, AssignVia::Matched);
        idx.assign(7, 3, 0.91, AssignVia::Founded);
        assert_eq!(idx.items_of(0), &[8]);
        assert_eq!(idx.items_of(3), &[7]);
        assert_eq!(idx.get(7).unwrap().fine, 3);
        assert!(idx.is_consistent());
    }

    #[test]
    fn clear_slot_removes_both_directions() {
        let mut idx = AssignmentIndex::new();
        idx.assign(1, 2, 0.9, AssignVia::Matched);
        idx.assign(2, 2, 0.9, AssignVia::Matched);
        idx.assign(3, 5, 0.9, AssignVia::Matched);
        assert_eq!(idx.clear_slot(2), vec![1, 2]);
        assert!(idx.get(1).is_none() && idx.get(2).is_none());
        assert!(idx.items_of(2).is_empty());
        assert_eq!(idx.len(), 1);
        assert!(idx.is_consistent());
    }

    #[test]
    fn hierarchy_fills_coarse_codes() {
        let mut idx = AssignmentIndex::new();
        idx.assign(1, 0, 1.0, AssignVia::Matched);
        idx.assign(2, 1, 1.0, AssignVia::Matched);
        let coarse = CoarseCodebook::from_prototypes(
            vec![CoarsePrototype {
                embedding: vec![1.0],
                ema_count: 2.0,
                members: vec![0, 1],
            }],
            2,
        );
        idx.apply_hierarchy(&coarse);
        assert_eq!(idx.get(2).unwrap().coarse, Some(0));
    }
}
