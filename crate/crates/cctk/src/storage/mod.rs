//! Records, version chains, packed timestamp words and epochs.
//!
//! One fixed-cardinality table holds every record. A record is a 64-byte
//! aligned header carrying all per-protocol concurrency state side by side
//! (TID word, timestamp word, reader-writer lock, temperature, version chain
//! head); exactly one representation is active for a given run, the rest sit
//! inert so that protocol switches never change the memory layout under test.
//!
//! # Concurrency model
//!
//! Shared mutable state is confined to atomic words and to payload bytes
//! guarded by those words. The discipline, module-wide:
//!
//! - Single-version payloads live in one arena and are only written while the
//!   record is locked (TID/TS lock bit or exclusive reader-writer lock). The
//!   unlocking store is `Release`; readers re-validate the word with `Acquire`
//!   loads around a speculative copy ([`Table::read_consistent`]) and discard
//!   torn copies. The copy itself is a plain memcpy, which is the usual
//!   seqlock compromise: the fence pair makes every accepted copy sound.
//! - A version's payload is written only before the version becomes reachable
//!   or while it is `PENDING` and owned by the installing worker. The
//!   `Release` store that flips status to `COMMITTED` publishes the bytes;
//!   readers observe status with `Acquire` before touching them.
//! - Version chains are singly linked, newest first. Installation CASes the
//!   head; only garbage collection unlinks interior nodes, and sweep ownership
//!   is partitioned per key, so interior `next` pointers have one writer at a
//!   time. Reclaimed versions are quarantined one full epoch before reuse,
//!   which keeps late readers (whose published epoch pins them) safe.
//! - Counters that merely observe (births, reclaims, extra reads) are
//!   `Relaxed`; anything that orders payload visibility is `Acquire`/`Release`.

mod epoch;
mod record;
mod rwlock;
mod table;
mod version;
mod word;

pub use epoch::EpochManager;
pub use record::Record;
pub use rwlock::RecordRwLock;
pub use table::{PendingPolicy, StorageKind, Table, VersionCounters};
pub use version::{Version, VersionStatus, SSTAMP_NONE};
pub use word::{
    lock_word, try_lock_word, unlock_word_with, TidWord, TsWord, LOCK_BIT, MAX_DELTA, MAX_EPOCH,
    MAX_SEQ, MAX_WTS,
};
