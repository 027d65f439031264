//! Version lifetime management: the watermark, per-worker version caches,
//! and the two garbage collectors.
//!
//! Reclamation is cooperative and partitioned: worker `w` sweeps exactly the
//! keys with `key % workers == w`, so at most one thread ever unlinks from a
//! given chain and interior unlinking needs no CAS loop (installs only touch
//! the chain head, which sweeps never unlink). Unlinked slots pass through a
//! two-epoch quarantine before reuse: a transaction never spans an epoch
//! boundary publication, so once the global epoch has advanced twice past
//! the unlink, no thread can still hold a pointer into the slot.

mod cache;
mod gc;

pub use cache::VersionCache;
pub use gc::{aggressive_sweep, rapid_sweep, thomas_write_filter, SweepStats, WriteDisposition};

use std::sync::atomic::{AtomicU64, Ordering};

use crate::align::CacheAligned;
use crate::storage::Table;

const IDLE: u64 = u64::MAX;

/// Published begin timestamps of in-flight transactions, plus the pinned
/// stamps of starving readers that the aggressive collector must respect.
pub struct ActiveSet {
    in_flight: Box<[CacheAligned<AtomicU64>]>,
    pinned: Box<[CacheAligned<AtomicU64>]>,
}

impl ActiveSet {
    pub fn new(workers: usize) -> ActiveSet {
        assert!(workers > 0);
        let idle = |_| CacheAligned::new(AtomicU64::new(IDLE));
        ActiveSet {
            in_flight: (0..workers).map(idle).collect(),
            pinned: (0..workers).map(idle).collect(),
        }
    }

    pub fn workers(&self) -> usize {
        self.in_flight.len()
    }

    /// Publishes worker `w`'s begin timestamp. Must happen before the
    /// transaction walks any chain, or a sweep may reclaim under it.
    pub fn begin(&self, w: usize, ts: u64) {
        self.in_flight[w].store(ts, Ordering::SeqCst);
    }

    pub fn end(&self, w: usize) {
        self.in_flight[w].store(IDLE, Ordering::SeqCst);
    }

    /// Starvation guard: keep `ts` visible to sweeps across this worker's
    /// retries until [`unpin`](Self::unpin).
    pub fn pin(&self, w: usize, ts: u64) {
        self.pinned[w].store(ts, Ordering::SeqCst);
    }

    pub fn unpin(&self, w: usize) {
        self.pinned[w].store(IDLE, Ordering::SeqCst);
    }

    /// Minimum stamp any in-flight or pinned transaction may read at, or
    /// `None` when everything is idle.
    pub fn min_active(&self) -> Option<u64> {
        self.in_flight
            .iter()
            .chain(self.pinned.iter())
            .map(|s| s.load(Ordering::SeqCst))
            .filter(|&ts| ts != IDLE)
            .min()
    }

    /// Currently pinned stamps, for the aggressive sweep's keep-set.
    pub fn pinned_stamps(&self, out: &mut Vec<u64>) {
        out.clear();
        for slot in self.pinned.iter() {
            let ts = slot.load(Ordering::SeqCst);
            if ts != IDLE {
                out.push(ts);
            }
        }
    }
}

/// Monotone reclamation horizon.
pub struct Watermark {
    value: CacheAligned<AtomicU64>,
}

impl Default for Watermark {
    fn default() -> Watermark {
        Watermark { value: CacheAligned::new(AtomicU64::new(0)) }
    }
}

impl Watermark {
    pub fn current(&self) -> u64 {
        self.value.load(Ordering::SeqCst)
    }

    /// Raises the watermark to `candidate` if that is an advance; the stored
    /// value never moves backwards even if a laggard worker's clock makes a
    /// later candidate smaller.
    pub fn advance(&self, candidate: u64) -> u64 {
        self.value.fetch_max(candidate, Ordering::SeqCst).max(candidate)
    }
}

/// Recomputes the watermark from the live transaction set: the minimum
/// active begin timestamp, or the newest committed stamp when the system is
/// quiescent.
pub fn watermark_compute(active: &ActiveSet, table: &Table, watermark: &Watermark) -> u64 {
    let candidate = active.min_active().unwrap_or_else(|| table.newest_commit_ts());
    watermark.advance(candidate)
}
