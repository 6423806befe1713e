//! Occupancy monitoring: classify active slots by EMA count and reset the
//! ones that are underfilled or stuck in the growing band too long.

use serde::{Deserialize, Serialize};

use crate::assignment::AssignmentIndex;
use crate::config::IndexConfig;
use crate::error::{Error, Result};
use crate::types::{ClusterSlot, FineCodebook};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotStatus {
    Underfilled,
    Growing,
    Stable,
}

pub fn status_of_count(count: f64, eps1: f64, eps2: f64) -> SlotStatus {
    if count < eps1 {
        SlotStatus::Underfilled
    } else if count < eps2 {
        SlotStatus::Growing
    } else {
        SlotStatus::Stable
    }
}

pub fn classify(slot: &ClusterSlot, cfg: &IndexConfig) -> Result<SlotStatus> {
    if !slot.is_active() {
        return Err(Error::Invalid("cannot classify an empty slot".into()));
    }
    Ok(status_of_count(slot.ema_count, cfg.eps1, cfg.eps2))
}

/// One monitoring pass at the codebook's current step. Reset slots become
/// empty and lose their index entries. Returns the reset indices, ascending.
pub fn sweep(fine: &mut FineCodebook, cfg: &IndexConfig, index: &mut AssignmentIndex) -> Vec<usize> {
    let now = fine.step;
    let mut reset = Vec::new();
    for (k, slot) in fine.slots.iter_mut().enumerate() {
        if !slot.is_active() {
            continue;
        }
        let expired = match status_of_count(slot.ema_count, cfg.eps1, cfg.eps2) {
            SlotStatus::Underfilled => true,
            SlotStatus::Stable => {
                slot.growing_since = None;
                false
            }
            SlotStatus::Growing => {
                let since = *slot.growing_since.get_or_insert(now);
                now - since >= cfg.growing_window
            }
        };
        if expired {
            slot.reset();
            index.clear_slot(k);
            reset.push(k);
        }
    }
    reset
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::AssignVia;

    fn cfg() -> IndexConfig {
        IndexConfig {
            dim: 2,
            ..Default::default()
        }
    }

    fn active(count: f64) -> ClusterSlot {
        let mut s = ClusterSlot::empty(2);
        s.activate(vec![count, 0.0], count, 0);
        s
    }

    #[test]
    fn classify_boundaries() {
        let c = cfg();
        assert_eq!(classify(&active(0.20), &c).unwrap(), SlotStatus::Underfilled);
        assert_eq!(classify(&active(0.25), &c).unwrap(), SlotStatus::Growing);
        assert_eq!(classify(&active(0.2644), &c).unwrap(), SlotStatus::Stable);
        assert!(classify(&ClusterSlot::empty(2), &c).is_err());
    }

    #[test]
    fn stable_slots_survive_and_clear_window() {
        let c = cfg();
        let mut fine = FineCodebook::new(2);
        fine.slots = vec![active(5.0), active(1.0)];
        fine.slots[0].growing_since = Some(3);
        let mut idx = AssignmentIndex::new();
        assert!(sweep(&mut fine, &c, &mut idx).is_empty());
        assert!(fine.slots.iter().all(|s| s.growing_since.is_none()));
    }

    #[test]
    fn underfilled_slot_is_reset_and_cleared() {
        let c = cfg();
        let mut fine = FineCodebook::new(2);
        fine.slots = vec![active(5.0), active(0.1)];
        let mut idx = AssignmentIndex::new();
        idx.assign(1, 1, 0.9, AssignVia::Matched);
        idx.assign(2, 0, 0.9, AssignVia::Matched);
        assert_eq!(sweep(&mut fine, &c, &mut idx), vec![1]);
        assert_eq!(fine.slots[1], ClusterSlot::empty(2));
        assert!(idx.get(1).is_none());
        assert!(idx.get(2).is_some());
    }

    #[test]
    fn growing_window_expires_after_m_steps() {
        let c = cfg();
        let mut fine = FineCodebook::new(2);
        fine.slots = vec![active(0.26)];
        let mut idx = AssignmentIndex::new();
        for step in 100..180 {
            fine.step = step;
            assert!(sweep(&mut fine, &c, &mut idx).is_empty(), "step {step}");
            assert_eq!(fine.slots[0].growing_since, Some(100));
        }
        fine.step = 180;
        assert_eq!(sweep(&mut fine, &c, &mut idx), vec![0]);
    }

    #[test]
    fn window_restarts_after_stable_visit() {
        let c = cfg();
        let mut fine = FineCodebook::new(2);
        fine.slots = vec![active(0.26)];
        let mut idx = AssignmentIndex::new();
        fine.step = 10;
        sweep(&mut fine, &c, &mut idx);
        assert_eq!(fine.slots[0].growing_since, Some(10));
        fine.slots[0].ema_count = 1.0;
        fine.step = 50;
        sweep(&mut fine, &c, &mut idx);
        assert_eq!(fine.slots[0].growing_since, None);
        fine.slots[0].ema_count = 0.26;
        fine.step = 60;
        sweep(&mut fine, &c, &mut idx);
        assert_eq!(fine.slots[0].growing_since, Some(60));
        fine.step = 139;
        assert!(sweep(&mut fine, &c, &mut idx).is_empty());
    }
}
