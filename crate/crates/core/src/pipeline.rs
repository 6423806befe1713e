//! End-to-end training loops: tag batching, per-step updates, recycling and
//! the end-of-stream drain.

use serde::{Deserialize, Serialize};

use crate::assignment::{AssignVia, AssignmentIndex};
use crate::baseline::{vq_train_step, Metric, RqCodebook, VqCodebook};
use crate::batcher::TagQueues;
use crate::config::IndexConfig;
use crate::error::Result;
use crate::indexer::{Indexer, StepOutcome, StepReport};
use crate::types::ItemRecord;

/// Flush/recycle rounds after the stream ends. A round in which every item
/// is rejected again ends the drain early.
pub const MAX_DRAIN_PASSES: usize = 8;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub items_seen: u64,
    pub items_indexed: usize,
    /// Recycled items evicted on overflow plus items still unplaced after
    /// the drain.
    pub items_dropped: u64,
    pub slots_reset: u64,
    pub active_slots: usize,
}

/// Trains the dynamic codebook over `items`. `on_step` sees every step's
/// outcome and the indexer state right after it; an error aborts training.
pub fn train_merge<I, F>(items: I, cfg: &IndexConfig, mut on_step: F) -> Result<(Indexer, TrainSummary)>
where
    I: IntoIterator<Item = Result<ItemRecord>>,
    F: FnMut(&StepOutcome, &Indexer) -> Result<()>,
{
    let mut indexer = Indexer::new(cfg.clone())?;
    let mut queues = TagQueues::new(cfg.batch_size, cfg.recycle_capacity());
    let mut summary = TrainSummary::default();
    let mut run = |batch: Vec<ItemRecord>, indexer: &mut Indexer, queues: &mut TagQueues, summary: &mut TrainSummary| -> Result<usize> {
        let n = batch.len();
        let mut out = indexer.run_step(batch)?;
        summary.steps += 1;
        summary.slots_reset += out.report.reset_count as u64;
        on_step(&out, indexer)?;
        let rejected = std::mem::take(&mut out.rejected);
        let placed = n - rejected.len();
        queues.recycle(rejected);
        Ok(placed)
    };
    for item in items {
        let item = item?;
        item.validate(cfg.dim)?;
        summary.items_seen += 1;
        if let Some(batch) = queues.push(item) {
            run(batch, &mut indexer, &mut queues, &mut summary)?;
        }
    }
    for _ in 0..MAX_DRAIN_PASSES {
        let batches = queues.flush();
        if batches.is_empty() {
            break;
        }
        let mut placed = 0;
        for batch in batches {
            placed += run(batch, &mut indexer, &mut queues, &mut summary)?;
        }
        if placed == 0 {
            break;
        }
    }
    let leftover: usize = queues.flush().iter().map(Vec::len).sum();
    summary.items_dropped = queues.evicted() + leftover as u64;
    summary.items_indexed = indexer.index().len();
    summary.active_slots = indexer.codebook().active_count();
    Ok((indexer, summary))
}

fn baseline_report(step: u64, n: usize, active: usize) -> StepReport {
    StepReport {
        step,
        matched_count: n,
        new_clusters: 0,
        reset_count: 0,
        recycled_count: 0,
        codebook_active_size: active,
    }
}

/// Feeds tag-homogeneous batches of `items` to `step`, flushing at the end.
fn drive_batches<I>(items: I, cfg: &IndexConfig, mut step: impl FnMut(Vec<ItemRecord>) -> Result<()>) -> Result<u64>
where
    I: IntoIterator<Item = Result<ItemRecord>>,
{
    let mut queues = TagQueues::new(cfg.batch_size, cfg.recycle_capacity());
    let mut seen = 0;
    for item in items {
        let item = item?;
        item.validate(cfg.dim)?;
        seen += 1;
        if let Some(batch) = queues.push(item) {
            step(batch)?;
        }
    }
    for batch in queues.flush() {
        step(batch)?;
    }
    Ok(seen)
}

/// Trains a fixed-size VQ codebook on the same tag-batched stream. Every
/// item is assigned to its nearest codeword at the time of its step.
pub fn train_vq<I, F>(
    items: I,
    cfg: &IndexConfig,
    capacity: usize,
    metric: Metric,
    mut on_step: F,
) -> Result<(VqCodebook, AssignmentIndex, TrainSummary)>
where
    I: IntoIterator<Item = Result<ItemRecord>>,
    F: FnMut(&StepReport) -> Result<()>,
{
    cfg.validate()?;
    let mut cb = VqCodebook::new(capacity, cfg.dim, metric)?;
    let mut index = AssignmentIndex::new();
    let mut steps = 0;
    let seen = drive_batches(items, cfg, |batch| {
        let codes = vq_train_step(&batch, &mut cb, cfg.gamma)?;
        for (item, (k, s)) in batch.iter().zip(codes) {
            index.assign(item.item_id, k, s, AssignVia::Nearest);
        }
        steps += 1;
        on_step(&baseline_report(cb.step, batch.len(), cb.len()))
    })?;
    let summary = TrainSummary {
        steps,
        items_seen: seen,
        items_indexed: index.len(),
        items_dropped: 0,
        slots_reset: 0,
        active_slots: cb.len(),
    };
    Ok((cb, index, summary))
}

/// Residual quantizer counterpart of [`train_vq`]. Returns each item's
/// per-layer codes, sorted by item id.
#[allow(clippy::type_complexity)]
pub fn train_rq<I, F>(
    items: I,
    cfg: &IndexConfig,
    layers: usize,
    capacity: usize,
    metric: Metric,
    mut on_step: F,
) -> Result<(RqCodebook, Vec<(u64, Vec<usize>)>, TrainSummary)>
where
    I: IntoIterator<Item = Result<ItemRecord>>,
    F: FnMut(&StepReport) -> Result<()>,
{
    cfg.validate()?;
    let mut rq = RqCodebook::new(layers, capacity, cfg.dim, metric)?;
    let mut codes = Vec::new();
    let mut steps = 0;
    let seen = drive_batches(items, cfg, |batch| {
        let c = rq.train_step(&batch, cfg.gamma)?;
        codes.extend(batch.iter().map(|r| r.item_id).zip(c));
        steps += 1;
        on_step(&baseline_report(rq.layers[0].step, batch.len(), rq.layers[0].len()))
    })?;
    codes.sort_by_key(|(id, _)| *id);
    let summary = TrainSummary {
        steps,
        items_seen: seen,
        items_indexed: codes.len(),
        items_dropped: 0,
        slots_reset: 0,
        active_slots: rq.layers[0].len(),
    };
    Ok((rq, codes, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tight(n: u64, dim: usize) -> Vec<Result<ItemRecord>> {
        (0..n)
            .map(|i| {
                let mut e = vec![1.0; dim];
                e[(i as usize) % dim] += 0.01;
                Ok(ItemRecord {
                    item_id: i,
                    embedding: e,
                    tag: 0,
                    popularity: 1,
                })
            })
            .collect()
    }

    #[test]
    fn single_tight_cluster_gives_one_slot() {
        let cfg = IndexConfig {
            dim: 8,
            ..Default::default()
        };
        let (ix, s) = train_merge(tight(100, 8), &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(ix.codebook().active_count(), 1);
        assert_eq!(s.items_indexed, 100);
        assert_eq!(s.items_dropped, 0);
    }

    #[test]
    fn vq_keeps_fixed_size() {
        let cfg = IndexConfig {
            dim: 8,
            batch_size: 32,
            ..Default::default()
        };
        let (cb, idx, s) = train_vq(tight(100, 8), &cfg, 16, Metric::Cosine, |_| Ok(())).unwrap();
        assert_eq!(cb.len(), 16);
        assert_eq!(idx.len(), 100);
        assert_eq!(s.steps, 4);
    }

    #[test]
    fn small_groups_are_dropped_after_drain() {
        let cfg = IndexConfig {
            dim: 2,
            ..Default::default()
        };
        let items = vec![
            Ok(ItemRecord {
                item_id: 0,
                embedding: vec![1.0, 0.0],
                tag: 0,
                popularity: 0,
            }),
            Ok(ItemRecord {
                item_id: 1,
                embedding: vec![0.0, 1.0],
                tag: 0,
                popularity: 0,
            }),
        ];
        let (ix, s) = train_merge(items, &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(ix.codebook().active_count(), 0);
        assert_eq!(s.items_dropped, 2);
    }
}
