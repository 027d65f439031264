//! Per-worker version slot recycling.

use std::collections::VecDeque;

use crate::storage::{EpochManager, Table, Version};

/// Epochs a retired slot sits out before reuse. A transaction never spans a
/// published epoch boundary, so two advances guarantee every pointer taken
/// before the unlink is gone.
const QUARANTINE_EPOCHS: u64 = 2;

/// Thread-local pool of version slots. Slots enter either through
/// [`release`](VersionCache::release) (never published: safe to reuse at
/// once) or [`retire`](VersionCache::retire) (unlinked from a chain:
/// quarantined first). `acquire` falls back to the table allocator only
/// when the pool is dry, counting each fallback.
pub struct VersionCache {
    free: Vec<*mut Version>,
    quarantine: VecDeque<(u64, *mut Version)>,
    fallback_alloc: u64,
}

// Safety: the cache is owned by one worker at a time; the raw pointers it
// holds are unreachable from any chain (release/retire contract), so moving
// the cache between threads moves exclusive ownership of the slots.
unsafe impl Send for VersionCache {}

impl Default for VersionCache {
    fn default() -> VersionCache {
        VersionCache::new()
    }
}

impl VersionCache {
    pub fn new() -> VersionCache {
        VersionCache {
            free: Vec::new(),
            quarantine: VecDeque::new(),
            fallback_alloc: 0,
        }
    }

    /// Preallocates `count` heap slots so steady state never touches the
    /// allocator.
    pub fn prewarm(&mut self, table: &Table, count: usize) {
        self.free.reserve(count);
        for _ in 0..count {
            self.free.push(table.alloc_version());
        }
    }

    pub fn len(&self) -> usize {
        self.free.len() + self.quarantine.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Allocator fallbacks since construction; stays flat once the cache is
    /// sized to the workload's birth rate.
    pub fn fallback_alloc(&self) -> u64 {
        self.fallback_alloc
    }

    /// Pops a reusable slot (most recently released first), promoting any
    /// quarantined slots whose waiting period has elapsed.
    pub fn acquire(&mut self, table: &Table, epochs: &EpochManager) -> *mut Version {
        self.promote(epochs.global());
        if let Some(slot) = self.free.pop() {
            return slot;
        }
        self.fallback_alloc += 1;
        table.alloc_version()
    }

    /// Returns a slot that was never linked into a chain (failed install,
    /// unused preparation). Immediately reusable.
    pub fn release(&mut self, slot: *mut Version) {
        self.free.push(slot);
    }

    /// Returns a slot that was just unlinked from a chain. It becomes
    /// reusable once the global epoch has advanced `QUARANTINE_EPOCHS` past
    /// `unlink_epoch`.
    pub fn retire(&mut self, slot: *mut Version, unlink_epoch: u64) {
        self.quarantine.push_back((unlink_epoch, slot));
    }

    fn promote(&mut self, global_epoch: u64) {
        while let Some(&(tag, slot)) = self.quarantine.front() {
            if global_epoch < tag + QUARANTINE_EPOCHS {
                break;
            }
            self.quarantine.pop_front();
            let v = unsafe { &*slot };
            if v.is_inline() {
                // Inline slots go home to their record, not the free list.
                v.inline_release();
            } else {
                self.free.push(slot);
            }
        }
    }
}
