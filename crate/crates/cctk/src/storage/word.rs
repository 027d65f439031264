//! Packed 64-bit timestamp words.
//!
//! Both optimistic protocols keep their entire per-record ordering state in a
//! single atomic word so that locking, validation and installation are one
//! compare-and-swap away. The two layouts share the top bit as the lock bit,
//! which lets the word-lock helpers below serve either.

use std::sync::atomic::{AtomicU64, Ordering};

/// Lock bit shared by [`TidWord`] and [`TsWord`] (bit 63).
pub const LOCK_BIT: u64 = 1 << 63;

/// Largest epoch a [`TidWord`] can carry (29 bits).
pub const MAX_EPOCH: u64 = (1 << 29) - 1;
/// Largest in-epoch sequence number a [`TidWord`] can carry (32 bits).
pub const MAX_SEQ: u64 = (1 << 32) - 1;
/// Largest write timestamp a [`TsWord`] can carry (48 bits).
pub const MAX_WTS: u64 = (1 << 48) - 1;
/// Largest read-timestamp delta a [`TsWord`] can carry (15 bits).
pub const MAX_DELTA: u64 = (1 << 15) - 1;

const TID_SEQ_SHIFT: u32 = 2;
const TID_EPOCH_SHIFT: u32 = 34;
const TID_RESERVED_MASK: u64 = 0b11;

/// Silo-style transaction id word: `lock(1) | epoch(29) | seq(32) | reserved(2)`.
///
/// The two reserved bits stay zero, so the word with the lock bit masked off
/// compares exactly like the `(epoch, seq)` pair. Committed writes to one
/// record carry strictly increasing `(epoch, seq)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct TidWord(u64);

impl TidWord {
    pub const ZERO: TidWord = TidWord(0);

    pub fn new(epoch: u64, seq: u64) -> Self {
        debug_assert!(epoch <= MAX_EPOCH, "epoch {epoch} exceeds 29 bits");
        debug_assert!(seq <= MAX_SEQ, "seq {seq} exceeds 32 bits");
        TidWord(epoch << TID_EPOCH_SHIFT | seq << TID_SEQ_SHIFT)
    }

    pub fn from_raw(raw: u64) -> Self {
        debug_assert_eq!(raw & TID_RESERVED_MASK, 0, "reserved bits must be zero");
        TidWord(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn locked(self) -> bool {
        self.0 & LOCK_BIT != 0
    }

    pub fn epoch(self) -> u64 {
        (self.0 & !LOCK_BIT) >> TID_EPOCH_SHIFT
    }

    pub fn seq(self) -> u64 {
        (self.0 >> TID_SEQ_SHIFT) & MAX_SEQ
    }

    pub fn with_lock(self, locked: bool) -> Self {
        if locked {
            TidWord(self.0 | LOCK_BIT)
        } else {
            TidWord(self.0 & !LOCK_BIT)
        }
    }

    /// The `(epoch, seq)` pair as one number whose ordering is the pair's
    /// lexicographic ordering. The lock bit is excluded.
    pub fn tid(self) -> u64 {
        self.0 & !LOCK_BIT
    }
}

impl std::fmt::Debug for TidWord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "TidWord(epoch={}, seq={}{})",
            self.epoch(),
            self.seq(),
            if self.locked() { ", locked" } else { "" }
        )
    }
}

const TS_WTS_SHIFT: u32 = 15;

/// TicToc timestamp word: `lock(1) | wts(48) | delta(15)`.
///
/// The read timestamp is represented as `rts = wts + delta`. When an rts
/// extension would overflow the 15-bit delta, `with_rts` slides `wts` forward
/// instead; the represented rts is always exact and never decreases.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct TsWord(u64);

impl TsWord {
    pub const ZERO: TsWord = TsWord(0);

    pub fn new(wts: u64, delta: u64) -> Self {
        debug_assert!(wts <= MAX_WTS, "wts {wts} exceeds 48 bits");
        debug_assert!(delta <= MAX_DELTA, "delta {delta} exceeds 15 bits");
        TsWord(wts << TS_WTS_SHIFT | delta)
    }

    pub fn from_raw(raw: u64) -> Self {
        TsWord(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn locked(self) -> bool {
        self.0 & LOCK_BIT != 0
    }

    pub fn wts(self) -> u64 {
        (self.0 & !LOCK_BIT) >> TS_WTS_SHIFT
    }

    pub fn delta(self) -> u64 {
        self.0 & MAX_DELTA
    }

    pub fn rts(self) -> u64 {
        self.wts() + self.delta()
    }

    pub fn with_lock(self, locked: bool) -> Self {
        if locked {
            TsWord(self.0 | LOCK_BIT)
        } else {
            TsWord(self.0 & !LOCK_BIT)
        }
    }

    /// Re-encodes the word so that `rts() == target`. Requires `target` to be
    /// at least the current rts; when the delta would overflow, `wts` advances
    /// to `target - MAX_DELTA`.
    pub fn with_rts(self, target: u64) -> Self {
        debug_assert!(target >= self.rts(), "rts must never decrease");
        let wts = self.wts();
        let word = if target - wts <= MAX_DELTA {
            TsWord::new(wts, target - wts)
        } else {
            TsWord::new(target - MAX_DELTA, MAX_DELTA)
        };
        word.with_lock(self.locked())
    }
}

impl std::fmt::Debug for TsWord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "TsWord(wts={}, rts={}{})",
            self.wts(),
            self.rts(),
            if self.locked() { ", locked" } else { "" }
        )
    }
}

/// Sets the lock bit if it is clear. Returns false when the word is already
/// locked; CAS races on an unlocked word are retried internally so a `false`
/// always means "held by someone".
pub fn try_lock_word(word: &AtomicU64) -> bool {
    let mut cur = word.load(Ordering::Relaxed);
    loop {
        if cur & LOCK_BIT != 0 {
            return false;
        }
        match word.compare_exchange_weak(cur, cur | LOCK_BIT, Ordering::Acquire, Ordering::Relaxed)
        {
            Ok(_) => return true,
            Err(now) => cur = now,
        }
    }
}

/// Spins until the lock bit is acquired. Yields to the scheduler once the
/// spin budget is burnt so single-core hosts still make progress.
pub fn lock_word(word: &AtomicU64) {
    let backoff = crossbeam::utils::Backoff::new();
    while !try_lock_word(word) {
        backoff.snooze();
    }
}

/// Unlocks by storing `next` (which must have the lock bit clear) with
/// `Release` ordering, publishing any payload written under the lock.
/// Unlocking a word that is not locked is a caller bug.
pub fn unlock_word_with(word: &AtomicU64, next: u64) {
    debug_assert_ne!(
        word.load(Ordering::Relaxed) & LOCK_BIT,
        0,
        "unlock of an unlocked word"
    );
    debug_assert_eq!(next & LOCK_BIT, 0, "unlock value must not carry the lock bit");
    word.store(next, Ordering::Release);
}
