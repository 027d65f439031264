//! Silo with temperature-triggered pessimism. Reads of hot records take a
//! retained shared lock before the consistent copy; commit upgrades the
//! write set to exclusive record locks in canonical (ascending key) order,
//! so waiting unboundedly cannot deadlock.

use std::sync::atomic::{fence, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crate::capture::Capture;
use crate::storage::{lock_word, unlock_word_with, EpochManager, Table};

use super::silo::Silo;
use super::{AbortReason, LockMode, Observed, Protocol, TxnCtx};

/// Accesses per epoch at which a record counts as hot.
pub const HOT_THRESHOLD: u32 = 5;

pub struct Mocc {
    table: Arc<Table>,
    epochs: Arc<EpochManager>,
    capture: Option<Arc<Capture>>,
}

impl Mocc {
    pub fn new(table: Arc<Table>, epochs: Arc<EpochManager>, capture: Option<Arc<Capture>>) -> Mocc {
        assert!(!table.multi_version());
        Mocc {
            table,
            epochs,
            capture,
        }
    }

    /// Drops retained shared locks on keys above (or at, when `inclusive`)
    /// `key`, keeping every acquisition in ascending order. Dropped reads
    /// stay valid; commit validation still covers them.
    fn shed_retained_down_to(&self, ctx: &mut TxnCtx, key: u64, inclusive: bool) {
        while let Some(&last) = ctx.retained.last() {
            if last < key || (!inclusive && last == key) {
                break;
            }
            self.table.record(last).rw().unlock_shared();
            ctx.retained.pop();
        }
    }

    fn release_everything(&self, ctx: &mut TxnCtx) {
        for &(key, mode) in &ctx.held {
            let rw = self.table.record(key).rw();
            match mode {
                LockMode::Exclusive => rw.unlock_exclusive(),
                LockMode::Shared => rw.unlock_shared(),
            }
        }
        ctx.held.clear();
        for &key in &ctx.retained {
            self.table.record(key).rw().unlock_shared();
        }
        ctx.retained.clear();
    }
}

impl Protocol for Mocc {
    fn begin(&self, ctx: &mut TxnCtx) {
        ctx.begin_attempt();
    }

    fn read(&self, ctx: &mut TxnCtx, key: u64, for_update: bool) -> Result<(), AbortReason> {
        if ctx.find_write(key).is_some() {
            return Ok(());
        }
        let rec = self.table.record(key);
        if rec.temperature(self.epochs.global()) >= HOT_THRESHOLD {
            self.shed_retained_down_to(ctx, key, false);
            if ctx.retained.last() != Some(&key) {
                rec.rw().shared_wait();
                ctx.retained.push(key);
                ctx.shared_store_in_read += 1;
            }
        }
        let at = ctx.reserve_read_slot();
        let mut extra = 0;
        let word = self.table.read_consistent(key, ctx.read_slice(at), &mut extra);
        ctx.extra_reads += extra;
        ctx.push_read(key, Observed::Tid(word), at, for_update);
        Ok(())
    }

    fn write(&self, ctx: &mut TxnCtx, key: u64) -> Result<(), AbortReason> {
        ctx.stage_write(key);
        Ok(())
    }

    fn commit(&self, ctx: &mut TxnCtx) -> Result<(), AbortReason> {
        let vstart = Instant::now();
        ctx.write_set.sort_unstable_by_key(|e| e.key);
        let mut max_seen = ctx.last_commit_tid;

        for i in 0..ctx.write_set.len() {
            let key = ctx.write_set[i].key;
            // A retained shared lock on this very key would deadlock the
            // exclusive acquisition, and any above it would break the
            // canonical order; shed them first.
            self.shed_retained_down_to(ctx, key, true);
            let rec = self.table.record(key);
            rec.rw().exclusive_wait();
            ctx.held.push((key, LockMode::Exclusive));
            max_seen = Silo::max_tid(max_seen, rec.tid_word());
        }

        fence(Ordering::SeqCst);
        let epoch_now = self.epochs.global();

        for entry in &ctx.read_set {
            let rec = self.table.record(entry.key);
            let cur = rec.tid_word();
            let obs = match entry.observed {
                Observed::Tid(w) => w,
                _ => unreachable!("MOCC reads observe TID words"),
            };
            if cur.tid() != obs.tid() || cur.locked() {
                rec.temperature_bump(epoch_now);
                self.release_everything(ctx);
                ctx.timers.note_validation(vstart.elapsed());
                return Err(AbortReason::ReadValidation);
            }
            max_seen = Silo::max_tid(max_seen, obs);
        }
        ctx.timers.note_validation(vstart.elapsed());

        let wstart = Instant::now();
        if ctx.write_set.is_empty() {
            self.release_everything(ctx);
            if let Some(cap) = &self.capture {
                cap.push(ctx.captured(cap.next_pos(), None));
            }
            ctx.finish_commit();
            return Ok(());
        }

        let tid = Silo::next_tid(epoch_now, max_seen);
        let pos = self.capture.as_ref().map(|c| c.next_pos());
        for i in 0..ctx.write_set.len() {
            let key = ctx.write_set[i].key;
            let rec = self.table.record(key);
            // The word lock keeps concurrent seqlock readers consistent;
            // the record lock alone does not cover them.
            lock_word(rec.tid_atomic());
            if self.capture.is_some() {
                ctx.write_set[i].tag = self.table.install_seq_bump(key);
            }
            unsafe {
                self.table.sv_write_payload(key, ctx.write_payload(&ctx.write_set[i]));
            }
            unlock_word_with(rec.tid_atomic(), tid.raw());
            rec.rw().unlock_exclusive();
        }
        ctx.held.clear();
        self.release_everything(ctx);
        ctx.last_commit_tid = tid;
        ctx.commit_ts = tid.tid();
        if let (Some(cap), Some(pos)) = (&self.capture, pos) {
            cap.push(ctx.captured(pos, None));
        }
        ctx.timers.note_write(wstart.elapsed());
        ctx.finish_commit();
        Ok(())
    }

    fn abort(&self, ctx: &mut TxnCtx) {
        self.release_everything(ctx);
        ctx.finish_abort();
    }
}
