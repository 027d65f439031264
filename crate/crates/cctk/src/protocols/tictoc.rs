//! Timestamp OCC. Each record carries (wts, rts); reads observe both, the
//! commit timestamp is derived from the sets, and validation extends rts
//! only when the derived timestamp actually exceeds it.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::capture::Capture;
use crate::storage::{lock_word, try_lock_word, unlock_word_with, Table, TsWord};

use super::{AbortReason, Observed, Protocol, Toggles, TxnCtx};

const HISTORY_SLOTS: usize = 8;
const DEFAULT_NOWAIT_TT_WAIT: Duration = Duration::from_micros(1);

/// Recent overwrites of one record: (overwritten wts, overwrite ts) pairs
/// under a sequence lock. Written only by the record's lock holder; read by
/// validators without any lock.
struct HistoryRing {
    seq: AtomicU64,
    head: AtomicU64,
    slots: [(AtomicU64, AtomicU64); HISTORY_SLOTS],
}

impl HistoryRing {
    fn new() -> HistoryRing {
        HistoryRing {
            seq: AtomicU64::new(0),
            head: AtomicU64::new(0),
            slots: std::array::from_fn(|_| (AtomicU64::new(u64::MAX), AtomicU64::new(0))),
        }
    }

    /// Caller must hold the record's word lock.
    fn record(&self, old_wts: u64, end_ts: u64) {
        let head = self.head.load(Ordering::Relaxed);
        let at = head as usize % HISTORY_SLOTS;
        self.seq.fetch_add(1, Ordering::SeqCst);
        self.slots[at].0.store(old_wts, Ordering::SeqCst);
        self.slots[at].1.store(end_ts, Ordering::SeqCst);
        self.head.store(head + 1, Ordering::Relaxed);
        self.seq.fetch_add(1, Ordering::SeqCst);
    }

    /// When the version written at `wts` was overwritten, if the ring still
    /// remembers. Torn snapshots are retried a few times, then treated as
    /// no match (which only costs an abort).
    fn lookup(&self, wts: u64) -> Option<u64> {
        for _ in 0..64 {
            let s1 = self.seq.load(Ordering::SeqCst);
            if s1 % 2 == 1 {
                std::hint::spin_loop();
                continue;
            }
            let mut found = None;
            for (old, end) in &self.slots {
                if old.load(Ordering::SeqCst) == wts {
                    found = Some(end.load(Ordering::SeqCst));
                }
            }
            if self.seq.load(Ordering::SeqCst) == s1 {
                return found;
            }
        }
        None
    }
}

pub struct TicToc {
    table: Arc<Table>,
    toggles: Toggles,
    nowait_wait: Duration,
    history: Box<[HistoryRing]>,
    capture: Option<Arc<Capture>>,
}

impl TicToc {
    pub fn new(
        table: Arc<Table>,
        toggles: Toggles,
        nowait_wait: Option<Duration>,
        capture: Option<Arc<Capture>>,
    ) -> TicToc {
        assert!(!table.multi_version());
        let history = if toggles.timestamp_history {
            (0..table.cardinality()).map(|_| HistoryRing::new()).collect()
        } else {
            Box::default()
        };
        TicToc {
            table,
            toggles,
            nowait_wait: nowait_wait.unwrap_or(DEFAULT_NOWAIT_TT_WAIT),
            history,
            capture,
        }
    }

    /// The smallest admissible commit timestamp: at least the wts of every
    /// version read, and strictly above the rts of every record about to
    /// be overwritten.
    pub fn commit_ts(
        read_wts: impl IntoIterator<Item = u64>,
        overwritten_rts: impl IntoIterator<Item = u64>,
    ) -> u64 {
        let reads = read_wts.into_iter().max().unwrap_or(0);
        let writes = overwritten_rts.into_iter().map(|rts| rts + 1).max().unwrap_or(0);
        reads.max(writes)
    }

    /// The overwrite timestamp of the version read at `wts`, when history
    /// is enabled and remembers it.
    fn history_end(&self, key: u64, wts: u64) -> Option<u64> {
        self.history.get(key as usize).and_then(|r| r.lookup(wts))
    }

    fn unlock_prefix(&self, ctx: &TxnCtx, n: usize) {
        for entry in &ctx.write_set[..n] {
            let rec = self.table.record(entry.key);
            let original = rec.ts_word().with_lock(false);
            unlock_word_with(rec.ts_atomic(), original.raw());
        }
    }

    /// Locks the sorted write set. Wait mode blocks per record; NoWaitTT
    /// releases everything on a conflict, waits the fixed duration, and
    /// starts over (never aborts).
    fn lock_writes(&self, ctx: &TxnCtx) {
        'attempt: loop {
            for (i, entry) in ctx.write_set.iter().enumerate() {
                let rec = self.table.record(entry.key);
                if self.toggles.no_wait_tt {
                    if !try_lock_word(rec.ts_atomic()) {
                        self.unlock_prefix(ctx, i);
                        std::thread::sleep(self.nowait_wait);
                        continue 'attempt;
                    }
                } else {
                    lock_word(rec.ts_atomic());
                }
            }
            return;
        }
    }
}

impl Protocol for TicToc {
    fn begin(&self, ctx: &mut TxnCtx) {
        ctx.begin_attempt();
    }

    fn read(&self, ctx: &mut TxnCtx, key: u64, for_update: bool) -> Result<(), AbortReason> {
        if ctx.find_write(key).is_some() {
            return Ok(());
        }
        let at = ctx.reserve_read_slot();
        let mut extra = 0;
        let word = self
            .table
            .read_consistent_ts(key, ctx.read_slice(at), &mut extra);
        ctx.extra_reads += extra;
        ctx.push_read(key, Observed::Ts(word), at, for_update);
        Ok(())
    }

    fn write(&self, ctx: &mut TxnCtx, key: u64) -> Result<(), AbortReason> {
        ctx.stage_write(key);
        Ok(())
    }

    fn commit(&self, ctx: &mut TxnCtx) -> Result<(), AbortReason> {
        let vstart = Instant::now();

        if self.toggles.preemptive_abort {
            for entry in &ctx.read_set {
                let obs = observed_ts(entry.observed);
                let cur = self.table.record(entry.key).ts_word();
                let provably_dead = cur.wts() != obs.wts()
                    && obs.rts() < cur.wts()
                    && self.history_end(entry.key, obs.wts()).is_none();
                if provably_dead {
                    ctx.timers.note_validation(vstart.elapsed());
                    return Err(AbortReason::ReadValidation);
                }
            }
        }

        ctx.write_set.sort_unstable_by_key(|e| e.key);
        self.lock_writes(ctx);

        let commit_ts = TicToc::commit_ts(
            ctx.read_set.iter().map(|e| observed_ts(e.observed).wts()),
            ctx.write_set
                .iter()
                .map(|e| self.table.record(e.key).ts_word().rts()),
        );

        for entry in &ctx.read_set {
            let obs = observed_ts(entry.observed);
            if obs.rts() >= commit_ts {
                continue;
            }
            let own = ctx
                .write_set
                .binary_search_by_key(&entry.key, |e| e.key)
                .is_ok();
            let rec = self.table.record(entry.key);
            let mut cur = rec.ts_word();
            let valid = loop {
                if cur.wts() != obs.wts() {
                    // The version we read is gone; the ring may still prove
                    // it stayed valid past our commit timestamp.
                    break match self.history_end(entry.key, obs.wts()) {
                        Some(end_ts) => commit_ts < end_ts,
                        None => false,
                    };
                }
                if own {
                    break true;
                }
                if cur.rts() >= commit_ts {
                    break true;
                }
                if cur.locked() {
                    break false;
                }
                let widened = cur.with_rts(commit_ts);
                match rec.ts_atomic().compare_exchange_weak(
                    cur.raw(),
                    widened.raw(),
                    Ordering::SeqCst,
                    Ordering::SeqCst,
                ) {
                    Ok(_) => {
                        ctx.shared_store_in_read += 1;
                        break true;
                    }
                    Err(now) => cur = TsWord::from_raw(now),
                }
            };
            if !valid {
                self.unlock_prefix(ctx, ctx.write_set.len());
                ctx.timers.note_validation(vstart.elapsed());
                return Err(AbortReason::ReadValidation);
            }
        }
        ctx.timers.note_validation(vstart.elapsed());

        let wstart = Instant::now();
        if ctx.write_set.is_empty() {
            if let Some(cap) = &self.capture {
                cap.push(ctx.captured(cap.next_pos(), None));
            }
            ctx.finish_commit();
            return Ok(());
        }

        let new_word = TsWord::new(commit_ts, 0);
        let pos = self.capture.as_ref().map(|c| c.next_pos());
        for i in 0..ctx.write_set.len() {
            let key = ctx.write_set[i].key;
            let rec = self.table.record(key);
            if let Some(ring) = self.history.get(key as usize) {
                ring.record(rec.ts_word().wts(), commit_ts);
            }
            if self.capture.is_some() {
                ctx.write_set[i].tag = self.table.install_seq_bump(key);
            }
            unsafe {
                self.table.sv_write_payload(key, ctx.write_payload(&ctx.write_set[i]));
            }
            unlock_word_with(rec.ts_atomic(), new_word.raw());
        }
        ctx.commit_ts = commit_ts;
        if let (Some(cap), Some(pos)) = (&self.capture, pos) {
            cap.push(ctx.captured(pos, None));
        }
        ctx.timers.note_write(wstart.elapsed());
        ctx.finish_commit();
        Ok(())
    }

    fn abort(&self, ctx: &mut TxnCtx) {
        ctx.finish_abort();
    }
}

fn observed_ts(observed: Observed) -> TsWord {
    match observed {
        Observed::Ts(w) => w,
        _ => unreachable!("TicToc reads observe timestamp words"),
    }
}
