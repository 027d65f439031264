//! Reader-writer record lock assembled from one CAS word.
//!
//! Pessimistic protocols want the lock itself to be the unit under test, so
//! this is deliberately a bare counter word and not a wrapper around an OS
//! lock: bit 63 is the writer bit, the low bits count readers. Waiting is
//! spinning with scheduler yields; fairness is whatever the cache gives you.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

const WRITER: u64 = 1 << 63;

/// How long a waiting acquisition may go unsatisfied before the watchdog
/// declares the run wedged. Sorted, de-duplicated access plus strict two-phase
/// locking cannot deadlock, so tripping this is a protocol bug, not load.
const WATCHDOG_LIMIT: Duration = Duration::from_secs(20);

#[derive(Debug, Default)]
#[repr(transparent)]
pub struct RecordRwLock(AtomicU64);

impl RecordRwLock {
    pub const fn new() -> Self {
        Self(AtomicU64::new(0))
    }

    /// Acquires a shared hold unless a writer is present. Pure CAS races
    /// against other readers are retried, so `false` means "writer held".
    pub fn try_shared(&self) -> bool {
        let mut cur = self.0.load(Ordering::Relaxed);
        loop {
            if cur & WRITER != 0 {
                return false;
            }
            match self
                .0
                .compare_exchange_weak(cur, cur + 1, Ordering::Acquire, Ordering::Relaxed)
            {
                Ok(_) => return true,
                Err(now) => cur = now,
            }
        }
    }

    pub fn shared_wait(&self) {
        self.wait(|| self.try_shared(), "shared");
    }

    pub fn unlock_shared(&self) {
        let prev = self.0.fetch_sub(1, Ordering::Release);
        debug_assert_ne!(prev & !WRITER, 0, "shared unlock with no readers");
    }

    /// Acquires the writer bit only when the lock is completely free.
    pub fn try_exclusive(&self) -> bool {
        self.0
            .compare_exchange(0, WRITER, Ordering::Acquire, Ordering::Relaxed)
            .is_ok()
    }

    pub fn exclusive_wait(&self) {
        self.wait(|| self.try_exclusive(), "exclusive");
    }

    /// Bounded acquisition: spins for roughly `budget` scheduler yields
    /// before giving up. Used where an unbounded wait could deadlock
    /// (lock-order violations that optimistic protocols resolve by aborting).
    pub fn exclusive_bounded(&self, budget: u32) -> bool {
        let backoff = crossbeam::utils::Backoff::new();
        for _ in 0..budget {
            if self.try_exclusive() {
                return true;
            }
            backoff.snooze();
        }
        false
    }

    /// Upgrades the caller's shared hold to exclusive. Fails if any other
    /// reader or a writer is present; the shared hold is kept either way.
    pub fn try_upgrade(&self) -> bool {
        self.0
            .compare_exchange(1, WRITER, Ordering::Acquire, Ordering::Relaxed)
            .is_ok()
    }

    /// Bounded upgrade, same contract as [`Self::exclusive_bounded`].
    pub fn upgrade_bounded(&self, budget: u32) -> bool {
        let backoff = crossbeam::utils::Backoff::new();
        for _ in 0..budget {
            if self.try_upgrade() {
                return true;
            }
            if self.0.load(Ordering::Relaxed) & WRITER != 0 {
                return false;
            }
            backoff.snooze();
        }
        false
    }

    pub fn unlock_exclusive(&self) {
        debug_assert_ne!(
            self.0.load(Ordering::Relaxed) & WRITER,
            0,
            "exclusive unlock without the writer bit"
        );
        self.0.store(0, Ordering::Release);
    }

    pub fn held_exclusive(&self) -> bool {
        self.0.load(Ordering::Relaxed) & WRITER != 0
    }

    fn wait(&self, mut attempt: impl FnMut() -> bool, mode: &str) {
        let backoff = crossbeam::utils::Backoff::new();
        let mut deadline: Option<Instant> = None;
        loop {
            if attempt() {
                return;
            }
            if backoff.is_completed() {
                let start = *deadline.get_or_insert_with(Instant::now);
                if start.elapsed() > WATCHDOG_LIMIT {
                    panic!("record lock watchdog: {mode} acquisition wedged; lock-order bug");
                }
                std::thread::yield_now();
            } else {
                backoff.snooze();
            }
        }
    }
}
