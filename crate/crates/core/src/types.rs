//! Domain types shared across the indexer, the baseline and the evaluator.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::norm;

/// One element of the item stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: u64,
    pub embedding: Vec<f64>,
    pub tag: u32,
    /// Synthetic view count. Only the evaluator looks at it.
    pub popularity: u64,
}

impl ItemRecord {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.embedding.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: self.embedding.len(),
            });
        }
        if self.embedding.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!(
                "item {} has a non-finite embedding component",
                self.item_id
            )));
        }
        if norm(&self.embedding) == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotState {
    Empty,
    Active,
}

/// A fine codebook entry with its EMA statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSlot {
    pub codeword: Vec<f64>,
    pub ema_sum: Vec<f64>,
    pub ema_count: f64,
    pub state: SlotState,
    pub created_step: u64,
    pub growing_since: Option<u64>,
}

impl ClusterSlot {
    pub fn empty(dim: usize) -> Self {
        Self {
            codeword: vec![0.0; dim],
            ema_sum: vec![0.0; dim],
            ema_count: 0.0,
            state: SlotState::Empty,
            created_step: 0,
            growing_since: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.state == SlotState::Active
    }

    /// Zero everything and mark the slot reusable.
    pub fn reset(&mut self) {
        self.codeword.iter_mut().for_each(|x| *x = 0.0);
        self.ema_sum.iter_mut().for_each(|x| *x = 0.0);
        self.ema_count = 0.0;
        self.state = SlotState::Empty;
        self.growing_since = None;
    }

    pub fn activate(&mut self, ema_sum: Vec<f64>, ema_count: f64, step: u64) {
        self.ema_sum = ema_sum;
        self.ema_count = ema_count;
        self.state = SlotState::Active;
        self.created_step = step;
        self.growing_since = None;
        self.refresh_codeword();
    }

    /// codeword = ema_sum / ema_count, for a positive count.
    pub fn refresh_codeword(&mut self) {
        if self.ema_count > 0.0 {
            let n = self.ema_count;
            for (q, s) in self.codeword.iter_mut().zip(&self.ema_sum) {
                *q = s / n;
            }
        }
    }
}

/// Slot `index` broke the codeword/EMA identity or the empty-slot invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditFailure {
    pub index: usize,
    pub reason: String,
}

/// The dynamically sized fine codebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineCodebook {
    pub dim: usize,
    pub slots: Vec<ClusterSlot>,
    /// Number of update steps applied so far.
    pub step: u64,
}

impl FineCodebook {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            slots: Vec::new(),
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_active())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_active()).count()
    }

    pub fn empty_indices(&self) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_active())
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks every slot: active slots with positive count must satisfy
    /// `codeword == ema_sum / ema_count` to `rel_tol`; empty slots must be
    /// all-zero.
    pub fn audit(&self, rel_tol: f64) -> std::result::Result<(), AuditFailure> {
        for (index, slot) in self.slots.iter().enumerate() {
            let fail = |reason: String| Err(AuditFailure { index, reason });
            if !(slot.ema_count.is_finite() && slot.ema_count >= 0.0) {
                return fail(format!("ema_count {} out of range", slot.ema_count));
            }
            match slot.state {
                SlotState::Empty => {
                    if slot.ema_count != 0.0
                        || slot.codeword.iter().any(|&x| x != 0.0)
                        || slot.ema_sum.iter().any(|&x| x != 0.0)
                    {
                        return fail("empty slot carries state".into());
                    }
                }
                SlotState::Active if slot.ema_count > 0.0 => {
                    for (j, (q, s)) in slot.codeword.iter().zip(&slot.ema_sum).enumerate() {
                        let expect = s / slot.ema_count;
                        let scale = expect.abs().max(q.abs()).max(f64::MIN_POSITIVE);
                        if (q - expect).abs() > rel_tol * scale {
                            return fail(format!(
                                "component {j}: codeword {q} vs ema_sum/ema_count {expect}"
                            ));
                        }
                    }
                }
                SlotState::Active => {}
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            dim: self.dim,
            codewords: self
                .slots
                .iter()
                .map(|s| s.is_active().then(|| s.codeword.clone()))
                .collect(),
            counts: self.slots.iter().map(|s| s.ema_count).collect(),
        }
    }
}

/// Immutable, thread-shareable view of a codebook: one optional codeword per
/// slot (`None` marks an empty slot).
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub dim: usize,
    pub codewords: Vec<Option<Vec<f64>>>,
    pub counts: Vec<f64>,
}

impl Snapshot {
    pub fn shared(self) -> Arc<Self> {
        Arc::new(self)
    }

    pub fn active(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.codewords
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.as_deref().map(|c| (i, c)))
    }

    pub fn active_count(&self) -> usize {
        self.codewords.iter().filter(|c| c.is_some()).count()
    }

    pub fn codeword(&self, index: usize) -> Option<&[f64]> {
        self.codewords.get(index).and_then(|c| c.as_deref())
    }
}

/// One coarse cluster: a count-weighted merge of fine slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarsePrototype {
    pub embedding: Vec<f64>,
    pub ema_count: f64,
    /// Fine slot indices, ascending.
    pub members: Vec<usize>,
}

/// The coarse layer plus its fine -> coarse map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseCodebook {
    pub prototypes: Vec<CoarsePrototype>,
    /// `parent[k]` is the coarse code of fine slot `k` (None for empty slots).
    pub parent: Vec<Option<usize>>,
}

impl CoarseCodebook {
    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn parent_of(&self, fine: usize) -> Option<usize> {
        self.parent.get(fine).copied().flatten()
    }

    pub fn from_prototypes(prototypes: Vec<CoarsePrototype>, fine_len: usize) -> Self {
        let mut parent = vec![None; fine_len];
        for (c, p) in prototypes.iter().enumerate() {
            for &m in &p.members {
                parent[m] = Some(c);
            }
        }
        Self { prototypes, parent }
    }
}
