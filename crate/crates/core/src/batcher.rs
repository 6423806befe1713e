//! Tag-homogeneous batch formation and the recycle queue.

use std::collections::{BTreeMap, VecDeque};

use crate::types::ItemRecord;

/// Per-tag FIFO queues plus a bounded recycle FIFO.
///
/// Recycled items move to the front of their tag queue the next time an item
/// with that tag is pushed, so they are emitted ahead of anything fresh.
#[derive(Debug, Clone)]
pub struct TagQueues {
    batch_size: usize,
    recycle_capacity: usize,
    queues: BTreeMap<u32, VecDeque<ItemRecord>>,
    recycled: VecDeque<ItemRecord>,
    recycled_per_tag: BTreeMap<u32, usize>,
    evicted: u64,
}

impl TagQueues {
    pub fn new(batch_size: usize, recycle_capacity: usize) -> Self {
        assert!(batch_size > 0, "batch_size must be positive");
        Self {
            batch_size,
            recycle_capacity,
            queues: BTreeMap::new(),
            recycled: VecDeque::new(),
            recycled_per_tag: BTreeMap::new(),
            evicted: 0,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Items dropped from the recycle queue on overflow, over the lifetime.
    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn recycled_len(&self) -> usize {
        self.recycled.len()
    }

    pub fn pending(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum::<usize>() + self.recycled.len()
    }

    pub fn push(&mut self, item: ItemRecord) -> Option<Vec<ItemRecord>> {
        let tag = item.tag;
        self.promote_recycled(tag);
        let queue = self.queues.entry(tag).or_default();
        queue.push_back(item);
        if queue.len() >= self.batch_size {
            Some(queue.drain(..self.batch_size).collect())
        } else {
            None
        }
    }

    pub fn recycle(&mut self, items: impl IntoIterator<Item = ItemRecord>) {
        for item in items {
            *self.recycled_per_tag.entry(item.tag).or_default() += 1;
            self.recycled.push_back(item);
            if self.recycled.len() > self.recycle_capacity {
                if let Some(old) = self.recycled.pop_front() {
                    self.forget_recycled(old.tag, 1);
                }
                self.evicted += 1;
            }
        }
    }

    /// Drain everything: tag queues first (ascending tag), then the recycle
    /// queue grouped by tag. Batches never exceed `batch_size`.
    pub fn flush(&mut self) -> Vec<Vec<ItemRecord>> {
        let mut out = Vec::new();
        for queue in self.queues.values_mut() {
            while !queue.is_empty() {
                let n = queue.len().min(self.batch_size);
                out.push(queue.drain(..n).collect());
            }
        }
        self.queues.clear();

        let mut by_tag: BTreeMap<u32, Vec<ItemRecord>> = BTreeMap::new();
        self.recycled_per_tag.clear();
        for item in self.recycled.drain(..) {
            by_tag.entry(item.tag).or_default().push(item);
        }
        for (_, items) in by_tag {
            let mut items = items.into_iter().peekable();
            while items.peek().is_some() {
                out.push(items.by_ref().take(self.batch_size).collect());
            }
        }
        out
    }

    fn promote_recycled(&mut self, tag: u32) {
        let Some(n) = self.recycled_per_tag.remove(&tag) else {
            return;
        };
        let (mine, rest): (VecDeque<_>, VecDeque<_>) =
            self.recycled.drain(..).partition(|r| r.tag == tag);
        debug_assert_eq!(mine.len(), n);
        self.recycled = rest;
        let queue = self.queues.entry(tag).or_default();
        for item in mine.into_iter().rev() {
            queue.push_front(item);
        }
    }

    fn forget_recycled(&mut self, tag: u32, n: usize) {
        if let Some(c) = self.recycled_per_tag.get_mut(&tag) {
            *c -= n;
            if *c == 0 {
                self.recycled_per_tag.remove(&tag);
            }
        }
    }
}
