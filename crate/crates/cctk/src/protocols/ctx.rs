//! Per-worker transaction state: read/write sets, payload arenas, phase
//! timers, and the protocol-specific scalars (timestamps, SSN stamps, the
//! worker's logical clock). One struct serves every protocol; unused fields
//! stay at their reset values.

use std::time::Duration;

use crate::capture::{self, CapturedTxn};
use crate::lifetime::VersionCache;
use crate::storage::{TidWord, TsWord, Version};

use super::{AbortReason, TxnStatus};

/// What a read observed, for commit-time validation.
#[derive(Clone, Copy, Debug)]
pub enum Observed {
    Tid(TidWord),
    Ts(TsWord),
    Version(*const Version),
}

#[derive(Clone, Copy, Debug)]
pub struct ReadEntry {
    pub key: u64,
    pub observed: Observed,
    /// Offset of this read's payload copy in the read arena.
    pub buf_at: usize,
    pub for_update: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct WriteEntry {
    pub key: u64,
    /// Offset of the staged payload in the write arena.
    pub buf_at: usize,
    /// The installed version, while one exists (multi-version commits).
    pub version: *mut Version,
    pub installed: bool,
    /// Blind write elided by the non-visible-write rule: committed
    /// logically, no version installed.
    pub skipped_nwr: bool,
    /// Goes into the record's inline slot in place, after validation.
    pub inline: bool,
    /// Capture tag ordering this key's writers.
    pub tag: u64,
    /// SSN bookkeeping: the overwritten predecessor and the sstamp it held
    /// before the tentative stamp went in.
    pub pred: *const Version,
    pub pred_prior_sstamp: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LockMode {
    Shared,
    Exclusive,
}

/// Per-phase time accounting. Phases accrue into attempt-local slots first;
/// a commit settles them into the named phases, an abort settles the whole
/// attempt into `abort_retry_ns` so retry cost is attributed to aborting.
#[derive(Clone, Copy, Debug, Default)]
pub struct PhaseTimers {
    pub read_ns: u64,
    pub validation_ns: u64,
    pub write_ns: u64,
    pub gc_ns: u64,
    pub abort_retry_ns: u64,
    pub backoff_ns: u64,
    attempt_read_ns: u64,
    attempt_validation_ns: u64,
    attempt_write_ns: u64,
}

impl PhaseTimers {
    pub fn note_read(&mut self, d: Duration) {
        self.attempt_read_ns += d.as_nanos() as u64;
    }

    pub fn note_validation(&mut self, d: Duration) {
        self.attempt_validation_ns += d.as_nanos() as u64;
    }

    pub fn note_write(&mut self, d: Duration) {
        self.attempt_write_ns += d.as_nanos() as u64;
    }

    pub fn note_gc(&mut self, d: Duration) {
        self.gc_ns += d.as_nanos() as u64;
    }

    pub fn note_backoff(&mut self, d: Duration) {
        self.backoff_ns += d.as_nanos() as u64;
    }

    pub fn settle_commit(&mut self) {
        self.read_ns += self.attempt_read_ns;
        self.validation_ns += self.attempt_validation_ns;
        self.write_ns += self.attempt_write_ns;
        self.clear_attempt();
    }

    pub fn settle_abort(&mut self) {
        self.abort_retry_ns +=
            self.attempt_read_ns + self.attempt_validation_ns + self.attempt_write_ns;
        self.clear_attempt();
    }

    fn clear_attempt(&mut self) {
        self.attempt_read_ns = 0;
        self.attempt_validation_ns = 0;
        self.attempt_write_ns = 0;
    }
}

pub struct TxnCtx {
    pub worker: usize,
    pub payload_size: usize,
    pub status: TxnStatus,
    pub abort_reason: Option<AbortReason>,
    pub begin_ts: u64,
    pub commit_ts: u64,
    /// SSN exclusion-window bounds and commit stamp.
    pub eta: u64,
    pub pi: u64,
    pub cstamp: u64,
    pub last_commit_tid: TidWord,
    /// Id the current attempt will commit under.
    pub txn_id: u64,
    pub local_commits: u64,
    /// Consecutive GC-induced read failures; feeds the starvation guard.
    pub gc_read_fails: u32,
    pub pinned: bool,
    /// MVTO distributed-clock state (upper bits of the begin stamp).
    pub clock: u64,
    pub extra_reads: u64,
    pub shared_store_in_read: u64,
    pub timers: PhaseTimers,
    pub cache: VersionCache,
    pub read_set: Vec<ReadEntry>,
    pub write_set: Vec<WriteEntry>,
    read_buf: Vec<u8>,
    write_buf: Vec<u8>,
    /// MOCC retained shared locks, ascending keys.
    pub retained: Vec<u64>,
    /// 2PL lock table, acquisition order.
    pub held: Vec<(u64, LockMode)>,
}

// Safety: the raw version pointers reference table-owned slots that outlive
// every transaction, and a ctx has exactly one owner thread at a time.
unsafe impl Send for TxnCtx {}

impl TxnCtx {
    pub fn new(worker: usize, payload_size: usize, txn_size_hint: usize) -> TxnCtx {
        let hint = txn_size_hint.max(1);
        TxnCtx {
            worker,
            payload_size,
            status: TxnStatus::InFlight,
            abort_reason: None,
            begin_ts: 0,
            commit_ts: 0,
            eta: 0,
            pi: u64::MAX,
            cstamp: 0,
            last_commit_tid: TidWord::ZERO,
            txn_id: capture::txn_id(worker, 0),
            local_commits: 0,
            gc_read_fails: 0,
            pinned: false,
            clock: 0,
            extra_reads: 0,
            shared_store_in_read: 0,
            timers: PhaseTimers::default(),
            cache: VersionCache::new(),
            read_set: Vec::with_capacity(hint),
            write_set: Vec::with_capacity(hint),
            read_buf: Vec::with_capacity(hint * payload_size),
            write_buf: Vec::with_capacity(hint * payload_size),
            retained: Vec::with_capacity(hint),
            held: Vec::with_capacity(hint),
        }
    }

    /// Resets attempt state. Retry-relevant fields (`gc_read_fails`,
    /// `clock`, the pin, timers, counters) survive.
    pub fn begin_attempt(&mut self) {
        self.status = TxnStatus::InFlight;
        self.abort_reason = None;
        self.begin_ts = 0;
        self.commit_ts = 0;
        self.eta = 0;
        self.pi = u64::MAX;
        self.cstamp = 0;
        self.txn_id = capture::txn_id(self.worker, self.local_commits);
        self.read_set.clear();
        self.write_set.clear();
        self.read_buf.clear();
        self.write_buf.clear();
        debug_assert!(self.retained.is_empty() && self.held.is_empty());
    }

    /// Reserves the next read-arena slot and returns its offset.
    pub fn reserve_read_slot(&mut self) -> usize {
        let at = self.read_buf.len();
        self.read_buf.resize(at + self.payload_size, 0);
        at
    }

    pub fn read_slice(&mut self, at: usize) -> &mut [u8] {
        &mut self.read_buf[at..at + self.payload_size]
    }

    pub fn read_payload(&self, at: usize) -> &[u8] {
        &self.read_buf[at..at + self.payload_size]
    }

    pub fn push_read(&mut self, key: u64, observed: Observed, buf_at: usize, for_update: bool) {
        self.read_set.push(ReadEntry {
            key,
            observed,
            buf_at,
            for_update,
        });
    }

    pub fn find_write(&self, key: u64) -> Option<usize> {
        self.write_set.iter().position(|e| e.key == key)
    }

    pub fn read_set_contains(&self, key: u64) -> bool {
        self.read_set.iter().any(|e| e.key == key)
    }

    /// Upserts a write entry and stages its payload: the txn id in the
    /// first 8 bytes (writer attribution), a key-derived pattern after.
    /// Returns the entry index.
    pub fn stage_write(&mut self, key: u64) -> usize {
        let idx = match self.find_write(key) {
            Some(i) => i,
            None => {
                let buf_at = self.write_buf.len();
                self.write_buf.resize(buf_at + self.payload_size, 0);
                self.write_set.push(WriteEntry {
                    key,
                    buf_at,
                    version: std::ptr::null_mut(),
                    installed: false,
                    skipped_nwr: false,
                    inline: false,
                    tag: 0,
                    pred: std::ptr::null(),
                    pred_prior_sstamp: 0,
                });
                self.write_set.len() - 1
            }
        };
        let at = self.write_set[idx].buf_at;
        let id = self.txn_id;
        let buf = &mut self.write_buf[at..at + self.payload_size];
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < 8 {
                (id >> (8 * i)) as u8
            } else {
                (key as u8).wrapping_add(i as u8)
            };
        }
        idx
    }

    pub fn write_payload(&self, entry: &WriteEntry) -> &[u8] {
        &self.write_buf[entry.buf_at..entry.buf_at + self.payload_size]
    }

    /// Writer id a read observed, decoded from the copied payload prefix.
    /// Zeroed loader payloads decode to the loader id.
    pub fn observed_writer(&self, entry: &ReadEntry) -> u64 {
        let p = self.read_payload(entry.buf_at);
        debug_assert!(p.len() >= 8, "capture requires payload_size >= 8");
        u64::from_le_bytes(p[..8].try_into().unwrap())
    }

    /// Assembles the capture record for the just-committed attempt.
    pub fn captured(&self, pos: u64, ts: Option<(u64, u64)>) -> CapturedTxn {
        CapturedTxn {
            id: self.txn_id,
            worker: self.worker,
            pos,
            reads: self
                .read_set
                .iter()
                .map(|e| (e.key, self.observed_writer(e)))
                .collect(),
            writes: self.write_set.iter().map(|e| (e.key, e.tag)).collect(),
            ts,
        }
    }

    /// Commit bookkeeping shared by every protocol.
    pub fn finish_commit(&mut self) {
        self.status = TxnStatus::Committed;
        self.local_commits += 1;
        self.gc_read_fails = 0;
        self.timers.settle_commit();
    }

    /// Abort bookkeeping shared by every protocol; lock/version release is
    /// the protocol's job before calling this.
    pub fn finish_abort(&mut self) {
        self.status = TxnStatus::Aborted;
        debug_assert!(self.abort_reason.is_some());
        self.timers.settle_abort();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staged_writes_carry_the_txn_id_prefix() {
        let mut ctx = TxnCtx::new(3, 16, 4);
        ctx.begin_attempt();
        let idx = ctx.stage_write(7);
        let entry = ctx.write_set[idx];
        let payload = ctx.write_payload(&entry);
        assert_eq!(u64::from_le_bytes(payload[..8].try_into().unwrap()), ctx.txn_id);
        assert_eq!(ctx.txn_id, capture::txn_id(3, 0));
    }

    #[test]
    fn restaging_a_key_reuses_its_entry() {
        let mut ctx = TxnCtx::new(0, 8, 4);
        ctx.begin_attempt();
        let a = ctx.stage_write(7);
        let b = ctx.stage_write(9);
        let c = ctx.stage_write(7);
        assert_eq!(a, c);
        assert_ne!(a, b);
        assert_eq!(ctx.write_set.len(), 2);
    }

    #[test]
    fn txn_id_advances_only_on_commit() {
        let mut ctx = TxnCtx::new(1, 8, 4);
        ctx.begin_attempt();
        let first = ctx.txn_id;
        ctx.abort_reason = Some(AbortReason::ReadValidation);
        ctx.finish_abort();
        ctx.begin_attempt();
        assert_eq!(ctx.txn_id, first, "retries reuse the id");
        ctx.finish_commit();
        ctx.begin_attempt();
        assert_eq!(ctx.txn_id, capture::txn_id(1, 1));
    }

    #[test]
    fn loader_reads_attribute_to_txn_zero() {
        let mut ctx = TxnCtx::new(0, 8, 4);
        ctx.begin_attempt();
        let at = ctx.reserve_read_slot();
        ctx.push_read(5, Observed::Tid(TidWord::ZERO), at, false);
        let cap = ctx.captured(0, None);
        assert_eq!(cap.reads, vec![(5, capture::LOADER_TXN)]);
    }

    #[test]
    fn timers_settle_attempts_into_the_right_phases() {
        let mut t = PhaseTimers::default();
        t.note_read(Duration::from_nanos(60));
        t.note_validation(Duration::from_nanos(40));
        t.settle_abort();
        assert_eq!(t.abort_retry_ns, 100);
        assert_eq!(t.read_ns, 0);
        t.note_read(Duration::from_nanos(30));
        t.note_write(Duration::from_nanos(20));
        t.settle_commit();
        assert_eq!((t.read_ns, t.write_ns), (30, 20));
        assert_eq!(t.abort_retry_ns, 100);
    }

    #[test]
    fn arenas_do_not_reallocate_within_capacity() {
        let mut ctx = TxnCtx::new(0, 8, 10);
        ctx.begin_attempt();
        let base = ctx.read_buf.as_ptr();
        for key in 0..10 {
            let at = ctx.reserve_read_slot();
            ctx.push_read(key, Observed::Tid(TidWord::ZERO), at, false);
        }
        assert_eq!(ctx.read_buf.as_ptr(), base);
        ctx.begin_attempt();
        assert_eq!(ctx.read_buf.as_ptr(), base);
    }
}
