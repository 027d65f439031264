//! Coarse global epochs.
//!
//! A dedicated ticker thread advances the global epoch on a fixed interval,
//! but only once every worker has published the current value. Workers
//! publish at transaction boundaries, so the global epoch and the slowest
//! published epoch never drift more than one apart. That bound is what lets
//! group commit, quarantine reuse, and the per-epoch record counters treat
//! "two epochs old" as "no concurrent observer left".

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use crate::align::CacheAligned;

pub struct EpochManager {
    global: CacheAligned<AtomicU64>,
    published: Box<[CacheAligned<AtomicU64>]>,
    interval: Duration,
}

impl EpochManager {
    pub const FIRST_EPOCH: u64 = 1;

    pub fn new(workers: usize, interval: Duration) -> EpochManager {
        assert!(workers > 0);
        EpochManager {
            global: CacheAligned::new(AtomicU64::new(Self::FIRST_EPOCH)),
            published: (0..workers)
                .map(|_| CacheAligned::new(AtomicU64::new(Self::FIRST_EPOCH)))
                .collect(),
            interval,
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    pub fn workers(&self) -> usize {
        self.published.len()
    }

    pub fn global(&self) -> u64 {
        self.global.load(Ordering::Acquire)
    }

    /// Worker `w` announces it has observed the current global epoch. Called
    /// between transactions, never inside one.
    pub fn publish(&self, w: usize) -> u64 {
        let e = self.global();
        self.published[w].store(e, Ordering::Release);
        e
    }

    /// Oldest epoch any worker might still be operating in.
    pub fn min_published(&self) -> u64 {
        self.published
            .iter()
            .map(|p| p.load(Ordering::Acquire))
            .min()
            .expect("at least one worker")
    }

    /// Ticker step: bump the global epoch iff every worker has caught up,
    /// keeping `global - min_published <= 1`. Returns the new global on
    /// advance.
    pub fn try_advance(&self) -> Option<u64> {
        let e = self.global();
        if self.min_published() < e {
            return None;
        }
        match self
            .global
            .compare_exchange(e, e + 1, Ordering::AcqRel, Ordering::Acquire)
        {
            Ok(_) => Some(e + 1),
            Err(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicBool;
    use std::sync::Arc;

    #[test]
    fn advance_waits_for_stragglers() {
        let em = EpochManager::new(2, Duration::from_millis(40));
        assert_eq!(em.global(), 1);
        assert_eq!(em.try_advance(), Some(2));
        assert_eq!(em.try_advance(), None, "nobody has published epoch 2");
        em.publish(0);
        assert_eq!(em.try_advance(), None, "worker 1 still at epoch 1");
        em.publish(1);
        assert_eq!(em.try_advance(), Some(3));
        assert_eq!(em.min_published(), 2);
    }

    #[test]
    fn drift_stays_bounded_under_concurrency() {
        let em = Arc::new(EpochManager::new(3, Duration::from_millis(1)));
        let stop = Arc::new(AtomicBool::new(false));
        let mut handles = Vec::new();
        for w in 0..3 {
            let em = Arc::clone(&em);
            let stop = Arc::clone(&stop);
            handles.push(std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    let seen = em.publish(w);
                    let global = em.global();
                    assert!(global >= seen && global - seen <= 1);
                    std::thread::yield_now();
                }
            }));
        }
        let deadline = std::time::Instant::now() + Duration::from_millis(200);
        let mut advances = 0;
        while std::time::Instant::now() < deadline {
            if em.try_advance().is_some() {
                advances += 1;
            }
            let (g, m) = (em.global(), em.min_published());
            assert!(g - m <= 1, "global {g} ran away from min published {m}");
            std::thread::yield_now();
        }
        stop.store(true, Ordering::Relaxed);
        for h in handles {
            h.join().unwrap();
        }
        assert!(advances > 0, "epoch never advanced");
    }
}
