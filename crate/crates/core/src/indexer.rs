//! One streaming update step over the fine codebook: match, EMA update,
//! occupancy sweep, union-find extension and fill-then-append.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{AssignVia, AssignmentIndex};
use crate::config::IndexConfig;
use crate::error::{Error, Result};
use crate::occupancy;
use crate::similarity::{cosine_from_parts, dot, norm};
use crate::types::{ClusterSlot, FineCodebook, ItemRecord};
use crate::union_find::UnionFind;

/// Best active slot per item and the matched/failed partition.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Best slot per batch position; `None` when no active slot exists.
    pub best: Vec<Option<usize>>,
    /// Best score per position; `-inf` without candidates.
    pub score: Vec<f64>,
    /// Batch positions with `score >= tau`, ascending.
    pub matched: Vec<usize>,
    /// Batch positions with `score < tau`, ascending.
    pub failed: Vec<usize>,
}

/// Connected components of the unmatched items.
#[derive(Debug, Clone, PartialEq)]
pub struct UnionFindResult {
    /// Member positions (into the input slice) per component, ordered by
    /// smallest member.
    pub groups: Vec<Vec<usize>>,
    /// Mean-pooled embedding per component.
    pub means: Vec<Vec<f64>>,
    /// Indices into `groups` of components with at least `m` members.
    pub valid: Vec<usize>,
    /// Positions of items in undersized components, ascending.
    pub rejected: Vec<usize>,
}

/// A cluster ready to be inserted by [`fill_then_append`].
#[derive(Debug, Clone, PartialEq)]
pub struct NewCluster {
    pub ema_sum: Vec<f64>,
    pub member_ids: Vec<u64>,
}

impl NewCluster {
    pub fn count(&self) -> usize {
        self.member_ids.len()
    }

    fn smallest_id(&self) -> u64 {
        self.member_ids.iter().copied().min().unwrap_or(u64::MAX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub matched_count: usize,
    pub new_clusters: usize,
    pub reset_count: usize,
    pub recycled_count: usize,
    pub codebook_active_size: usize,
}

/// A gate-passing assignment made during a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchEvent {
    pub item_id: u64,
    pub slot: usize,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub report: StepReport,
    pub matches: Vec<MatchEvent>,
    /// Items that neither matched nor joined a valid new cluster.
    pub rejected: Vec<ItemRecord>,
}

pub fn match_batch(batch: &[ItemRecord], fine: &FineCodebook, cfg: &IndexConfig) -> MatchResult {
    let candidates: Vec<(usize, &[f64], f64)> = fine
        .slots
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_active())
        .map(|(k, s)| (k, s.codeword.as_slice(), norm(&s.codeword)))
        .filter(|(_, _, n)| *n > 0.0 && n.is_finite())
        .collect();

    let best: Vec<(Option<usize>, f64)> = batch
        .par_iter()
        .map(|item| {
            let e = &item.embedding;
            let ne = norm(e);
            let mut best = (None, f64::NEG_INFINITY);
            for &(k, q, nq) in &candidates {
                let s = cosine_from_parts(dot(e, q), ne, nq);
                if s > best.1 {
                    best = (Some(k), s);
                }
            }
            best
        })
        .collect();

    let mut matched = Vec::new();
    let mut failed = Vec::new();
    for (i, &(k, s)) in best.iter().enumerate() {
        if k.is_some() && s >= cfg.tau {
            matched.push(i);
        } else {
            failed.push(i);
        }
    }
    MatchResult {
        best: best.iter().map(|b| b.0).collect(),
        score: best.iter().map(|b| b.1).collect(),
        matched,
        failed,
    }
}

/// `sum <- gamma * sum + (1 - gamma) * batch_sum`, same for the count.
pub fn ema_update(sum: &mut [f64], count: &mut f64, batch_sum: &[f64], batch_n: usize, gamma: f64) {
    let w = 1.0 - gamma;
    for (s, b) in sum.iter_mut().zip(batch_sum) {
        *s = gamma * *s + w * b;
    }
    *count = gamma * *count + w * batch_n as f64;
}

/// Per-slot sums and counts of the matched items.
pub(crate) fn accumulate<'a>(
    slots: usize,
    dim: usize,
    assigned: impl Iterator<Item = (usize, &'a [f64])>,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; slots];
    let mut counts = vec![0usize; slots];
    for (k, e) in assigned {
        for (s, x) in sums[k].iter_mut().zip(e) {
            *s += x;
        }
        counts[k] += 1;
    }
    (sums, counts)
}

/// EMA update of every active slot, including the ones nothing matched.
pub fn update_clusters(batch: &[ItemRecord], m: &MatchResult, fine: &mut FineCodebook, cfg: &IndexConfig) {
    let (sums, counts) = accumulate(
        fine.slots.len(),
        fine.dim,
        m.matched
            .iter()
            .map(|&i| (m.best[i].expect("matched item has a slot"), batch[i].embedding.as_slice())),
    );
    for (k, slot) in fine.slots.iter_mut().enumerate() {
        if !slot.is_active() {
            continue;
        }
        ema_update(&mut slot.ema_sum, &mut slot.ema_count, &sums[k], counts[k], cfg.gamma);
        slot.refresh_codeword();
    }
}

const ROW_BLOCK: usize = 64;

/// Connected components of the graph on `items` with an edge wherever the
/// cosine is at least `tau_prime`. Pairs already known to be connected are
/// skipped, which never changes the components.
pub fn union_find_extend(items: &[ItemRecord], cfg: &IndexConfig) -> UnionFindResult {
    let n = items.len();
    let norms: Vec<f64> = items.iter().map(|r| norm(&r.embedding)).collect();
    let mut uf = UnionFind::new(n);

    if cfg.tau_prime <= 1.0 {
        let mut start = 0;
        while start < n {
            let end = (start + ROW_BLOCK).min(n);
            let roots: Vec<usize> = (0..n).map(|x| uf.find(x)).collect();
            let edges: Vec<Vec<usize>> = (start..end)
                .into_par_iter()
                .map(|i| {
                    let ei = &items[i].embedding;
                    ((i + 1)..n)
                        .filter(|&j| {
                            roots[i] != roots[j]
                                && cosine_from_parts(dot(ei, &items[j].embedding), norms[i], norms[j])
                                    >= cfg.tau_prime
                        })
                        .collect()
                })
                .collect();
            for (i, js) in (start..end).zip(edges) {
                for j in js {
                    uf.union(i, j);
                }
            }
            start = end;
        }
    }

    let groups = uf.components();
    let dim = items.first().map_or(0, |r| r.embedding.len());
    let means = groups
        .iter()
        .map(|g| {
            let mut u = vec![0.0; dim];
            for &i in g {
                for (a, x) in u.iter_mut().zip(&items[i].embedding) {
                    *a += x;
                }
            }
            let len = g.len() as f64;
            u.iter_mut().for_each(|a| *a /= len);
            u
        })
        .collect();
    let mut valid = Vec::new();
    let mut rejected = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        if g.len() >= cfg.min_cluster_size {
            valid.push(gi);
        } else {
            rejected.extend_from_slice(g);
        }
    }
    rejected.sort_unstable();
    UnionFindResult {
        groups,
        means,
        valid,
        rejected,
    }
}

/// Insert new clusters, largest first (ties: smallest member id), into empty
/// slots in ascending order, then at the tail. Returns the slot per cluster in
/// the order the clusters were given.
pub fn fill_then_append(fine: &mut FineCodebook, valid: &[NewCluster]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..valid.len()).collect();
    order.sort_by(|&a, &b| {
        valid[b]
            .count()
            .cmp(&valid[a].count())
            .then(valid[a].smallest_id().cmp(&valid[b].smallest_id()))
    });
    let mut free = fine.empty_indices().into_iter();
    let mut placed = vec![0usize; valid.len()];
    let step = fine.step;
    for ci in order {
        let c = &valid[ci];
        let k = free.next().unwrap_or_else(|| {
            fine.slots.push(ClusterSlot::empty(fine.dim));
            fine.slots.len() - 1
        });
        fine.slots[k].activate(c.ema_sum.clone(), c.count() as f64, step);
        placed[ci] = k;
    }
    placed
}

/// The fine codebook together with its assignment index.
#[derive(Debug, Clone)]
pub struct Indexer {
    cfg: IndexConfig,
    codebook: FineCodebook,
    index: AssignmentIndex,
}

impl Indexer {
    pub fn new(cfg: IndexConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            codebook: FineCodebook::new(cfg.dim),
            cfg,
            index: AssignmentIndex::new(),
        })
    }

    pub fn with_codebook(cfg: IndexConfig, codebook: FineCodebook) -> Result<Self> {
        cfg.validate()?;
        if codebook.dim != cfg.dim {
            return Err(Error::Dimension {
                expected: cfg.dim,
                actual: codebook.dim,
            });
        }
        Ok(Self {
            cfg,
            codebook,
            index: AssignmentIndex::new(),
        })
    }

    pub fn config(&self) -> &IndexConfig {
        &self.cfg
    }

    pub fn codebook(&self) -> &FineCodebook {
        &self.codebook
    }

    pub fn index(&self) -> &AssignmentIndex {
        &self.index
    }

    pub fn into_parts(self) -> (IndexConfig, FineCodebook, AssignmentIndex) {
        (self.cfg, self.codebook, self.index)
    }

    pub fn run_step(&mut self, batch: Vec<ItemRecord>) -> Result<StepOutcome> {
        for item in &batch {
            item.validate(self.cfg.dim)?;
        }
        let cfg = &self.cfg;
        let fine = &mut self.codebook;
        fine.step += 1;

        let m = match_batch(&batch, fine, cfg);
        update_clusters(&batch, &m, fine, cfg);
        let matches: Vec<MatchEvent> = m
            .matched
            .iter()
            .map(|&i| MatchEvent {
                item_id: batch[i].item_id,
                slot: m.best[i].expect("matched item has a slot"),
                score: m.score[i],
            })
            .collect();
        for ev in &matches {
            self.index.assign(ev.item_id, ev.slot, ev.score, AssignVia::Matched);
        }

        let reset = if cfg.monitor_occupancy {
            occupancy::sweep(fine, cfg, &mut self.index)
        } else {
            Vec::new()
        };

        let mut failed: Vec<Option<ItemRecord>> = Vec::with_capacity(m.failed.len());
        let mut batch: Vec<Option<ItemRecord>> = batch.into_iter().map(Some).collect();
        for &i in &m.failed {
            failed.push(batch[i].take());
        }
        let failed: Vec<ItemRecord> = failed.into_iter().flatten().collect();

        let uf = union_find_extend(&failed, cfg);
        let new: Vec<NewCluster> = uf
            .valid
            .iter()
            .map(|&g| {
                let members = &uf.groups[g];
                let mut sum = vec![0.0; cfg.dim];
                for &i in members {
                    for (s, x) in sum.iter_mut().zip(&failed[i].embedding) {
                        *s += x;
                    }
                }
                NewCluster {
                    ema_sum: sum,
                    member_ids: members.iter().map(|&i| failed[i].item_id).collect(),
                }
            })
            .collect();
        let placed = fill_then_append(fine, &new);
        for (&g, &k) in uf.valid.iter().zip(&placed) {
            let q = &fine.slots[k].codeword;
            let nq = norm(q);
            for &i in &uf.groups[g] {
                let e = &failed[i].embedding;
                let score = cosine_from_parts(dot(e, q), norm(e), nq);
                self.index.assign(failed[i].item_id, k, score, AssignVia::Founded);
            }
        }

        let mut failed: Vec<Option<ItemRecord>> = failed.into_iter().map(Some).collect();
        let rejected: Vec<ItemRecord> = uf.rejected.iter().filter_map(|&i| failed[i].take()).collect();

        let report = StepReport {
            step: fine.step,
            matched_count: matches.len(),
            new_clusters: new.len(),
            reset_count: reset.len(),
            recycled_count: rejected.len(),
            codebook_active_size: fine.active_count(),
        };
        Ok(StepOutcome {
            report,
            matches,
            rejected,
        })
    }
}
