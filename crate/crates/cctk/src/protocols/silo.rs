//! Epoch-based OCC. Reads are invisible (no shared stores); commit sorts
//! and locks the write set, validates the read set against current TID
//! words, and installs under a TID that dominates everything observed.

use std::sync::atomic::{fence, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crate::capture::Capture;
use crate::storage::{
    lock_word, try_lock_word, unlock_word_with, EpochManager, Table, TidWord, MAX_SEQ,
};

use super::{AbortReason, Observed, Protocol, Toggles, TxnCtx};

pub struct Silo {
    table: Arc<Table>,
    epochs: Arc<EpochManager>,
    no_wait: bool,
    capture: Option<Arc<Capture>>,
}

impl Silo {
    pub fn new(
        table: Arc<Table>,
        epochs: Arc<EpochManager>,
        toggles: Toggles,
        capture: Option<Arc<Capture>>,
    ) -> Silo {
        assert!(!table.multi_version());
        Silo {
            table,
            epochs,
            no_wait: toggles.no_wait,
            capture,
        }
    }

    /// Smallest TID in `epoch_now` (or later, if something observed is
    /// already there) strictly greater than every observed TID.
    pub fn next_tid(epoch_now: u64, max_seen: TidWord) -> TidWord {
        if max_seen.epoch() >= epoch_now {
            debug_assert!(max_seen.seq() < MAX_SEQ);
            TidWord::new(max_seen.epoch(), max_seen.seq() + 1)
        } else {
            TidWord::new(epoch_now, 0)
        }
    }

    /// The larger of two TID words by packed (epoch, seq) value.
    pub fn max_tid(a: TidWord, b: TidWord) -> TidWord {
        if b.tid() > a.tid() {
            b
        } else {
            a
        }
    }

    /// Unlocks the first `n` (sorted) write-set records, restoring their
    /// pre-lock words.
    fn unlock_prefix(&self, ctx: &TxnCtx, n: usize) {
        for entry in &ctx.write_set[..n] {
            let rec = self.table.record(entry.key);
            let original = rec.tid_word().with_lock(false);
            unlock_word_with(rec.tid_atomic(), original.raw());
        }
    }
}

impl Protocol for Silo {
    fn begin(&self, ctx: &mut TxnCtx) {
        ctx.begin_attempt();
    }

    fn read(&self, ctx: &mut TxnCtx, key: u64, for_update: bool) -> Result<(), AbortReason> {
        if ctx.find_write(key).is_some() {
            return Ok(());
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

        for locked in 0..ctx.write_set.len() {
            let rec = self.table.record(ctx.write_set[locked].key);
            if self.no_wait {
                if !try_lock_word(rec.tid_atomic()) {
                    self.unlock_prefix(ctx, locked);
                    ctx.timers.note_validation(vstart.elapsed());
                    return Err(AbortReason::WriteLockConflict);
                }
            } else {
                lock_word(rec.tid_atomic());
            }
            max_seen = Silo::max_tid(max_seen, rec.tid_word());
        }

        fence(Ordering::SeqCst);
        let epoch_now = self.epochs.global();

        for entry in &ctx.read_set {
            let cur = self.table.record(entry.key).tid_word();
            let obs = match entry.observed {
                Observed::Tid(w) => w,
                _ => unreachable!("Silo reads observe TID words"),
            };
            let own = ctx
                .write_set
                .binary_search_by_key(&entry.key, |e| e.key)
                .is_ok();
            if cur.tid() != obs.tid() || (cur.locked() && !own) {
                self.unlock_prefix(ctx, ctx.write_set.len());
                ctx.timers.note_validation(vstart.elapsed());
                return Err(AbortReason::ReadValidation);
            }
            max_seen = Silo::max_tid(max_seen, obs);
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

        let tid = Silo::next_tid(epoch_now, max_seen);
        let pos = self.capture.as_ref().map(|c| c.next_pos());
        for i in 0..ctx.write_set.len() {
            let key = ctx.write_set[i].key;
            if self.capture.is_some() {
                ctx.write_set[i].tag = self.table.install_seq_bump(key);
            }
            unsafe {
                self.table.sv_write_payload(key, ctx.write_payload(&ctx.write_set[i]));
            }
            unlock_word_with(self.table.record(key).tid_atomic(), tid.raw());
        }
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
        ctx.finish_abort();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::{txn_id, LOADER_TXN};
    use crate::storage::StorageKind;
    use std::time::Duration;

    fn sv_fixture(cardinality: u64) -> (Arc<Table>, Arc<EpochManager>) {
        (
            Arc::new(Table::build(cardinality, 16, StorageKind::Single, false)),
            Arc::new(EpochManager::new(1, Duration::from_millis(40))),
        )
    }

    fn silo(cardinality: u64) -> Silo {
        let (table, epochs) = sv_fixture(cardinality);
        Silo::new(table, epochs, Toggles::default(), None)
    }

    #[test]
    fn tid_dominates_all_inputs() {
        // reads (1,3), (1,5); overwritten (1,4); last (1,2); epoch 1.
        let mut max = TidWord::new(1, 2);
        for w in [TidWord::new(1, 3), TidWord::new(1, 5), TidWord::new(1, 4)] {
            max = Silo::max_tid(max, w);
        }
        assert_eq!(Silo::next_tid(1, max), TidWord::new(1, 6));
        assert_eq!(Silo::next_tid(3, max), TidWord::new(3, 0), "fresh epoch restarts seq");
    }

    #[test]
    fn tid_formula_matches_linear_search() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let epoch_now = rng.gen_range(1..6u64);
            let inputs: Vec<TidWord> = (0..rng.gen_range(1..8usize))
                .map(|_| TidWord::new(rng.gen_range(0..=epoch_now), rng.gen_range(0..40u64)))
                .collect();
            let mut max = TidWord::ZERO;
            for &w in &inputs {
                max = Silo::max_tid(max, w);
            }
            let got = Silo::next_tid(epoch_now, max);
            // Reference: scan (epoch_now, 0), (epoch_now, 1), ... for the
            // first TID beating every input.
            let mut seq = 0;
            let expect = loop {
                let cand = TidWord::new(epoch_now.max(max.epoch()), seq);
                if inputs.iter().all(|w| cand.tid() > w.tid()) {
                    break cand;
                }
                seq += 1;
            };
            assert_eq!(got, expect);
            assert!(inputs.iter().all(|w| got.tid() > w.tid()));
        }
    }

    #[test]
    fn write_then_read_back() {
        let p = silo(8);
        let mut ctx = TxnCtx::new(0, 16, 4);
        p.begin(&mut ctx);
        p.write(&mut ctx, 3).unwrap();
        p.read(&mut ctx, 3, false).unwrap();
        assert!(ctx.read_set.is_empty(), "own-write reads stay out of the read set");
        let first_id = ctx.txn_id;
        p.commit(&mut ctx).unwrap();

        p.begin(&mut ctx);
        p.read(&mut ctx, 3, false).unwrap();
        let writer = ctx.observed_writer(&ctx.read_set[0]);
        assert_eq!(writer, first_id);
        p.commit(&mut ctx).unwrap();
    }

    #[test]
    fn interposed_writer_fails_validation() {
        let p = silo(8);
        let mut ctx = TxnCtx::new(0, 16, 4);
        p.begin(&mut ctx);
        p.read(&mut ctx, 2, false).unwrap();
        // Another transaction commits to key 2 between read and commit.
        let rec = p.table.record(2);
        lock_word(rec.tid_atomic());
        unsafe { p.table.sv_write_payload(2, &[9u8; 16]) };
        unlock_word_with(rec.tid_atomic(), TidWord::new(1, 1).raw());
        assert_eq!(p.commit(&mut ctx), Err(AbortReason::ReadValidation));
        ctx.abort_reason = Some(AbortReason::ReadValidation);
        p.abort(&mut ctx);
        // Retry of the same ops now sees the new value and commits.
        p.begin(&mut ctx);
        p.read(&mut ctx, 2, false).unwrap();
        p.commit(&mut ctx).unwrap();
    }

    #[test]
    fn nowait_aborts_on_held_lock_and_releases_earlier_locks() {
        let (table, epochs) = sv_fixture(8);
        let p = Silo::new(
            Arc::clone(&table),
            epochs,
            Toggles {
                no_wait: true,
                ..Toggles::default()
            },
            None,
        );
        lock_word(table.record(5).tid_atomic());
        let mut ctx = TxnCtx::new(0, 16, 4);
        p.begin(&mut ctx);
        p.write(&mut ctx, 1).unwrap();
        p.write(&mut ctx, 5).unwrap();
        assert_eq!(p.commit(&mut ctx), Err(AbortReason::WriteLockConflict));
        assert!(
            !table.record(1).tid_word().locked(),
            "the lock taken on key 1 must be released"
        );
        ctx.abort_reason = Some(AbortReason::WriteLockConflict);
        p.abort(&mut ctx);
    }

    #[test]
    fn read_only_commit_is_invisible() {
        let p = silo(8);
        let mut ctx = TxnCtx::new(0, 16, 4);
        p.begin(&mut ctx);
        for key in 0..4 {
            p.read(&mut ctx, key, false).unwrap();
        }
        p.commit(&mut ctx).unwrap();
        assert_eq!(ctx.shared_store_in_read, 0);
        assert_eq!(ctx.last_commit_tid, TidWord::ZERO, "no TID drawn");
    }

    #[test]
    fn committed_tids_rise_per_record() {
        let p = silo(4);
        let mut ctx = TxnCtx::new(0, 16, 4);
        let mut last = 0;
        for _ in 0..5 {
            p.begin(&mut ctx);
            p.write(&mut ctx, 0).unwrap();
            p.commit(&mut ctx).unwrap();
            let tid = p.table.record(0).tid_word().tid();
            assert!(tid > last);
            last = tid;
        }
    }

    #[test]
    fn capture_attributes_reads_and_orders_writes() {
        let table = Arc::new(Table::build(8, 16, StorageKind::Single, true));
        let epochs = Arc::new(EpochManager::new(1, Duration::from_millis(40)));
        let cap = Arc::new(Capture::new(2));
        let p = Silo::new(table, epochs, Toggles::default(), Some(Arc::clone(&cap)));
        let mut w0 = TxnCtx::new(0, 16, 4);
        p.begin(&mut w0);
        p.write(&mut w0, 3).unwrap();
        p.commit(&mut w0).unwrap();
        let mut w1 = TxnCtx::new(1, 16, 4);
        p.begin(&mut w1);
        p.read(&mut w1, 3, false).unwrap();
        p.read(&mut w1, 6, false).unwrap();
        p.write(&mut w1, 3).unwrap();
        p.commit(&mut w1).unwrap();

        let log = cap.drain_sorted();
        assert_eq!(log.len(), 2);
        assert_eq!(log[0].id, txn_id(0, 0));
        assert_eq!(log[1].reads, vec![(3, txn_id(0, 0)), (6, LOADER_TXN)]);
        let (tag0, tag1) = (log[0].writes[0].1, log[1].writes[0].1);
        assert!(tag1 > tag0, "same-key write tags follow install order");
    }
}
