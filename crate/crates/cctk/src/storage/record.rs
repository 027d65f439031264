//! Per-record header.

use std::ptr;
use std::sync::atomic::{AtomicPtr, AtomicU64, Ordering};

use super::rwlock::RecordRwLock;
use super::version::Version;
use super::word::{TidWord, TsWord};

/// Fixed-size record header. Every protocol's per-record state lives here
/// side by side; a run touches only the representation its protocol owns.
/// The header is one full cache line so neighboring records never false-share.
#[repr(C, align(64))]
pub struct Record {
    /// Silo/MOCC transaction id word ([`TidWord`]).
    tid: AtomicU64,
    /// TicToc timestamp word ([`TsWord`]).
    ts: AtomicU64,
    /// 2PL/MOCC reader-writer lock.
    rw: RecordRwLock,
    /// MOCC temperature, packed `epoch(32) | count(32)`.
    temperature: AtomicU64,
    /// Per-record abort contribution, same packing; orders contended writes.
    contention: AtomicU64,
    /// Version chain head, newest first. Null for single-version runs.
    chain: AtomicPtr<Version>,
}

const _: () = assert!(std::mem::size_of::<Record>() == 64);

impl Record {
    pub fn new() -> Self {
        Record {
            tid: AtomicU64::new(TidWord::ZERO.raw()),
            ts: AtomicU64::new(TsWord::ZERO.raw()),
            rw: RecordRwLock::new(),
            temperature: AtomicU64::new(0),
            contention: AtomicU64::new(0),
            chain: AtomicPtr::new(ptr::null_mut()),
        }
    }

    pub fn tid_word(&self) -> TidWord {
        TidWord::from_raw(self.tid.load(Ordering::Acquire))
    }

    pub fn tid_atomic(&self) -> &AtomicU64 {
        &self.tid
    }

    pub fn ts_word(&self) -> TsWord {
        TsWord::from_raw(self.ts.load(Ordering::Acquire))
    }

    pub fn ts_atomic(&self) -> &AtomicU64 {
        &self.ts
    }

    pub fn rw(&self) -> &RecordRwLock {
        &self.rw
    }

    pub fn chain_head(&self) -> *mut Version {
        self.chain.load(Ordering::SeqCst)
    }

    pub(crate) fn chain_atomic(&self) -> &AtomicPtr<Version> {
        &self.chain
    }

    /// Temperature observed for `epoch`; a stale tag reads as cold.
    pub fn temperature(&self, epoch: u64) -> u32 {
        read_epoch_counter(&self.temperature, epoch)
    }

    /// Bumps the temperature for `epoch`, resetting the count at most once
    /// per epoch boundary and saturating thereafter.
    pub fn temperature_bump(&self, epoch: u64) {
        bump_epoch_counter(&self.temperature, epoch);
    }

    pub fn contention(&self, epoch: u64) -> u32 {
        read_epoch_counter(&self.contention, epoch)
    }

    pub fn contention_bump(&self, epoch: u64) {
        bump_epoch_counter(&self.contention, epoch);
    }
}

impl Default for Record {
    fn default() -> Self {
        Self::new()
    }
}

fn read_epoch_counter(word: &AtomicU64, epoch: u64) -> u32 {
    let cur = word.load(Ordering::Relaxed);
    if cur >> 32 == epoch & 0xFFFF_FFFF {
        cur as u32
    } else {
        0
    }
}

fn bump_epoch_counter(word: &AtomicU64, epoch: u64) {
    let tag = (epoch & 0xFFFF_FFFF) << 32;
    let mut cur = word.load(Ordering::Relaxed);
    loop {
        let next = if cur & 0xFFFF_FFFF_0000_0000 == tag {
            tag | u64::from((cur as u32).saturating_add(1))
        } else {
            tag | 1
        };
        match word.compare_exchange_weak(cur, next, Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return,
            Err(now) => cur = now,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_one_cache_line() {
        assert_eq!(std::mem::size_of::<Record>(), 64);
        assert_eq!(std::mem::align_of::<Record>(), 64);
    }

    #[test]
    fn temperature_resets_once_per_epoch_and_saturates() {
        let r = Record::new();
        assert_eq!(r.temperature(1), 0);
        for _ in 0..5 {
            r.temperature_bump(1);
        }
        assert_eq!(r.temperature(1), 5);

        // Epoch change: stale count reads as cold, first bump resets to 1.
        assert_eq!(r.temperature(2), 0);
        r.temperature_bump(2);
        assert_eq!(r.temperature(2), 1);
        r.temperature_bump(2);
        assert_eq!(r.temperature(2), 2);
    }

    #[test]
    fn temperature_saturates_at_u32_max() {
        let r = Record::new();
        r.temperature_bump(7);
        r.temperature.store(7 << 32 | u64::from(u32::MAX), Ordering::Relaxed);
        r.temperature_bump(7);
        assert_eq!(r.temperature(7), u32::MAX);
    }

    #[test]
    fn contention_counter_is_independent() {
        let r = Record::new();
        r.contention_bump(3);
        r.contention_bump(3);
        assert_eq!(r.contention(3), 2);
        assert_eq!(r.temperature(3), 0);
    }
}
