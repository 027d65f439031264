//! Snapshot isolation over the version chains, optionally hardened to full
//! serializability with serial safety net stamps (the ERMIA configuration).
//! A central counter issues begin and commit stamps; writers install pending
//! versions under first-committer-wins and flip them at commit.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crate::align::CacheAligned;
use crate::capture::Capture;
use crate::lifetime::ActiveSet;
use crate::storage::{
    EpochManager, PendingPolicy, Table, Version, VersionStatus, SSTAMP_NONE,
};

use super::{AbortReason, Observed, Protocol, TxnCtx};

/// The exclusion-window test: the transaction must abort when its forward
/// edge bound does not clear its backward edge bound.
pub(crate) fn ssn_excluded(eta: u64, pi: u64) -> bool {
    pi <= eta
}

pub struct Si {
    table: Arc<Table>,
    epochs: Arc<EpochManager>,
    active: Arc<ActiveSet>,
    /// Serial safety net on top of the snapshot (ERMIA) when set.
    ssn: bool,
    counter: CacheAligned<AtomicU64>,
    capture: Option<Arc<Capture>>,
}

impl Si {
    pub fn new(
        table: Arc<Table>,
        epochs: Arc<EpochManager>,
        active: Arc<ActiveSet>,
        ssn: bool,
        capture: Option<Arc<Capture>>,
    ) -> Si {
        assert!(table.multi_version());
        Si {
            table,
            epochs,
            active,
            ssn,
            counter: CacheAligned::new(AtomicU64::new(0)),
            capture,
        }
    }

    fn draw_cstamp(&self) -> u64 {
        let c = self.counter.fetch_add(1, Ordering::SeqCst) + 1;
        debug_assert!(c <= u32::MAX as u64, "stamps exceed the ssn word width");
        c
    }

    /// Newest committed version under this transaction's own install,
    /// spinning out concurrent pending installs below it (their stamps are
    /// strictly lower, so the waits cannot cycle).
    fn committed_predecessor(&self, slot: *mut Version) -> *const Version {
        let backoff = crossbeam::utils::Backoff::new();
        let mut cur = unsafe { (*slot).next() };
        while !cur.is_null() {
            let v = unsafe { &*cur };
            match v.status() {
                VersionStatus::Committed => return cur,
                VersionStatus::Pending => {
                    backoff.snooze();
                    continue;
                }
                VersionStatus::Aborted | VersionStatus::NonVisible => cur = v.next(),
            }
        }
        std::ptr::null()
    }

    /// Flips this attempt's installed pending versions to aborted; the
    /// sweeper reclaims them.
    fn abandon_installs(&self, ctx: &mut TxnCtx) {
        for entry in &ctx.write_set {
            if entry.installed {
                let v = unsafe { &*entry.version };
                if v.status() == VersionStatus::Pending {
                    v.set_status(VersionStatus::Aborted);
                }
            }
        }
    }

    fn commit_read_only(&self, ctx: &mut TxnCtx) -> Result<(), AbortReason> {
        if !self.ssn {
            ctx.commit_ts = ctx.begin_ts;
            if let Some(cap) = &self.capture {
                cap.push(ctx.captured(cap.next_pos(), Some((ctx.begin_ts, ctx.begin_ts))));
            }
            self.active.end(ctx.worker);
            ctx.finish_commit();
            return Ok(());
        }
        let cstamp = self.draw_cstamp();
        let mut eta = 0;
        let mut pi = ctx.pi.min(cstamp);
        for entry in &ctx.read_set {
            let v = unsafe { &*observed_version(entry.observed) };
            v.pstamp_fetch_max(cstamp as u32);
            eta = eta.max(v.wts());
            let s = v.sstamp();
            if s != SSTAMP_NONE {
                pi = pi.min(s as u64);
            }
        }
        if ssn_excluded(eta, pi) {
            return Err(AbortReason::SsnExclusion);
        }
        ctx.commit_ts = cstamp;
        if let Some(cap) = &self.capture {
            cap.push(ctx.captured(cap.next_pos(), Some((ctx.begin_ts, cstamp))));
        }
        self.active.end(ctx.worker);
        ctx.finish_commit();
        Ok(())
    }
}

impl Protocol for Si {
    fn begin(&self, ctx: &mut TxnCtx) {
        ctx.begin_attempt();
        ctx.begin_ts = self.counter.load(Ordering::SeqCst);
        self.active.begin(ctx.worker, ctx.begin_ts);
    }

    fn read(&self, ctx: &mut TxnCtx, key: u64, for_update: bool) -> Result<(), AbortReason> {
        if ctx.find_write(key).is_some() {
            return Ok(());
        }
        let Some(v) = self
            .table
            .visible_version(key, ctx.begin_ts, PendingPolicy::Spin)
        else {
            ctx.gc_read_fails += 1;
            return Err(AbortReason::GcReadFail);
        };
        let at = ctx.reserve_read_slot();
        v.copy_payload_into(ctx.read_slice(at));
        if self.ssn {
            let s = v.sstamp();
            if s != SSTAMP_NONE {
                ctx.pi = ctx.pi.min(s as u64);
            }
        }
        ctx.push_read(key, Observed::Version(v as *const Version), at, for_update);
        Ok(())
    }

    fn write(&self, ctx: &mut TxnCtx, key: u64) -> Result<(), AbortReason> {
        ctx.stage_write(key);
        Ok(())
    }

    fn commit(&self, ctx: &mut TxnCtx) -> Result<(), AbortReason> {
        let vstart = Instant::now();
        if ctx.write_set.is_empty() {
            let out = self.commit_read_only(ctx);
            ctx.timers.note_validation(vstart.elapsed());
            return out;
        }

        ctx.write_set.sort_unstable_by_key(|e| e.key);
        let cstamp = self.draw_cstamp();

        for i in 0..ctx.write_set.len() {
            let key = ctx.write_set[i].key;
            let slot = ctx.cache.acquire(&self.table, &self.epochs);
            unsafe {
                (*slot).prepare(
                    cstamp,
                    VersionStatus::Pending,
                    ctx.write_payload(&ctx.write_set[i]),
                    cstamp as u32,
                );
            }
            // First committer wins: any version, pending included, past our
            // snapshot defeats the install.
            if !self.table.install_pending(key, slot, ctx.begin_ts + 1) {
                ctx.cache.release(slot);
                self.abandon_installs(ctx);
                ctx.timers.note_validation(vstart.elapsed());
                return Err(AbortReason::WwConflict);
            }
            ctx.write_set[i].version = slot;
            ctx.write_set[i].installed = true;
            ctx.write_set[i].tag = cstamp;
        }

        if self.ssn {
            // Publish both edge endpoints before computing either bound:
            // the store-then-load pairs guarantee that of two conflicting
            // transactions at least one sees the other.
            for i in 0..ctx.write_set.len() {
                let pred = self.committed_predecessor(ctx.write_set[i].version);
                ctx.write_set[i].pred = pred;
                if let Some(p) = unsafe { pred.as_ref() } {
                    ctx.write_set[i].pred_prior_sstamp = p.sstamp_swap(cstamp as u32);
                }
            }
            for entry in &ctx.read_set {
                // A version this transaction itself overwrites feeds eta
                // through the predecessor re-read instead; folding our own
                // cstamp into it would veto every read-modify-write.
                if ctx.write_set.binary_search_by_key(&entry.key, |e| e.key).is_err() {
                    let v = unsafe { &*observed_version(entry.observed) };
                    v.pstamp_fetch_max(cstamp as u32);
                }
            }

            let mut eta = 0u64;
            for entry in &ctx.write_set {
                if let Some(p) = unsafe { entry.pred.as_ref() } {
                    eta = eta.max(p.pstamp() as u64);
                }
            }
            let mut pi = ctx.pi.min(cstamp);
            for entry in &ctx.read_set {
                let v = unsafe { &*observed_version(entry.observed) };
                eta = eta.max(v.wts());
                let s = v.sstamp();
                if s != SSTAMP_NONE {
                    pi = pi.min(s as u64);
                }
            }
            ctx.eta = eta;
            ctx.pi = pi;

            if ssn_excluded(eta, pi) {
                for entry in &ctx.write_set {
                    if let Some(p) = unsafe { entry.pred.as_ref() } {
                        p.sstamp_restore(cstamp as u32, entry.pred_prior_sstamp);
                    }
                }
                self.abandon_installs(ctx);
                ctx.timers.note_validation(vstart.elapsed());
                return Err(AbortReason::SsnExclusion);
            }
            for entry in &ctx.write_set {
                if let Some(p) = unsafe { entry.pred.as_ref() } {
                    p.sstamp_store(pi as u32);
                }
            }
        }
        ctx.timers.note_validation(vstart.elapsed());

        let wstart = Instant::now();
        let pos = self.capture.as_ref().map(|c| c.next_pos());
        for entry in &ctx.write_set {
            unsafe { &*entry.version }.set_status(VersionStatus::Committed);
        }
        self.table.note_commit_ts(cstamp);
        ctx.commit_ts = cstamp;
        if let (Some(cap), Some(pos)) = (&self.capture, pos) {
            cap.push(ctx.captured(pos, Some((ctx.begin_ts, cstamp))));
        }
        self.active.end(ctx.worker);
        ctx.timers.note_write(wstart.elapsed());
        ctx.finish_commit();
        Ok(())
    }

    fn abort(&self, ctx: &mut TxnCtx) {
        self.abandon_installs(ctx);
        self.active.end(ctx.worker);
        ctx.finish_abort();
    }
}

fn observed_version(observed: Observed) -> *const Version {
    match observed {
        Observed::Version(v) => v,
        _ => unreachable!("snapshot reads observe versions"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::StorageKind;
    use std::time::Duration;

    fn si(cardinality: u64, ssn: bool) -> Si {
        let table = Arc::new(Table::build(
            cardinality,
            16,
            StorageKind::Multi { inline: false },
            false,
        ));
        let epochs = Arc::new(EpochManager::new(2, Duration::from_millis(40)));
        let active = Arc::new(ActiveSet::new(2));
        Si::new(table, epochs, active, ssn, None)
    }

    #[test]
    fn readers_stay_on_their_snapshot() {
        let p = si(8, false);
        let mut t1 = TxnCtx::new(0, 16, 4);
        let mut t2 = TxnCtx::new(1, 16, 4);
        p.begin(&mut t1);
        p.begin(&mut t2);
        p.write(&mut t2, 3).unwrap();
        p.commit(&mut t2).unwrap();
        // t1 began before t2 committed; it must still see the loader value.
        p.read(&mut t1, 3, false).unwrap();
        assert_eq!(t1.observed_writer(&t1.read_set[0]), crate::capture::LOADER_TXN);
        p.commit(&mut t1).unwrap();

        let mut t3 = TxnCtx::new(1, 16, 4);
        p.begin(&mut t3);
        p.read(&mut t3, 3, false).unwrap();
        assert_eq!(t3.observed_writer(&t3.read_set[0]), t2.txn_id);
        p.commit(&mut t3).unwrap();
    }

    #[test]
    fn first_committer_wins_on_concurrent_writes() {
        let p = si(8, false);
        let mut t1 = TxnCtx::new(0, 16, 4);
        let mut t2 = TxnCtx::new(1, 16, 4);
        p.begin(&mut t1);
        p.begin(&mut t2);
        p.write(&mut t1, 5).unwrap();
        p.write(&mut t2, 5).unwrap();
        p.commit(&mut t1).unwrap();
        assert_eq!(p.commit(&mut t2), Err(AbortReason::WwConflict));
        t2.abort_reason = Some(AbortReason::WwConflict);
        p.abort(&mut t2);
        // The loser's version must not be visible.
        let mut t3 = TxnCtx::new(1, 16, 4);
        p.begin(&mut t3);
        p.read(&mut t3, 5, false).unwrap();
        assert_eq!(t3.observed_writer(&t3.read_set[0]), t1.txn_id);
    }

    #[test]
    fn pending_install_blocks_a_later_snapshot_writer() {
        let p = si(8, false);
        let mut t1 = TxnCtx::new(0, 16, 4);
        p.begin(&mut t1);
        p.write(&mut t1, 2).unwrap();
        // Install t1's pending version by hand, then have t2 try the key.
        let slot = t1.cache.acquire(&p.table, &p.epochs);
        unsafe { (*slot).prepare(9, VersionStatus::Pending, &[0u8; 16], 9) };
        assert!(p.table.install_pending(2, slot, t1.begin_ts + 1));
        let mut t2 = TxnCtx::new(1, 16, 4);
        p.begin(&mut t2);
        p.write(&mut t2, 2).unwrap();
        assert_eq!(p.commit(&mut t2), Err(AbortReason::WwConflict));
        t2.abort_reason = Some(AbortReason::WwConflict);
        p.abort(&mut t2);
        unsafe { &*slot }.set_status(VersionStatus::Aborted);
    }

    #[test]
    fn snapshot_allows_write_skew() {
        let p = si(8, false);
        let mut t1 = TxnCtx::new(0, 16, 4);
        let mut t2 = TxnCtx::new(1, 16, 4);
        p.begin(&mut t1);
        p.begin(&mut t2);
        p.read(&mut t1, 0, false).unwrap();
        p.read(&mut t2, 1, false).unwrap();
        p.write(&mut t1, 1).unwrap();
        p.write(&mut t2, 0).unwrap();
        assert!(p.commit(&mut t1).is_ok());
        assert!(p.commit(&mut t2).is_ok(), "plain snapshot admits the skew");
    }

    #[test]
    fn ssn_rejects_write_skew() {
        let p = si(8, true);
        let mut t1 = TxnCtx::new(0, 16, 4);
        let mut t2 = TxnCtx::new(1, 16, 4);
        p.begin(&mut t1);
        p.begin(&mut t2);
        p.read(&mut t1, 0, false).unwrap();
        p.read(&mut t2, 1, false).unwrap();
        p.write(&mut t1, 1).unwrap();
        p.write(&mut t2, 0).unwrap();
        assert!(p.commit(&mut t1).is_ok());
        assert_eq!(p.commit(&mut t2), Err(AbortReason::SsnExclusion));
        t2.abort_reason = Some(AbortReason::SsnExclusion);
        p.abort(&mut t2);
    }

    #[test]
    fn ssn_admits_read_modify_write() {
        let p = si(8, true);
        let mut ctx = TxnCtx::new(0, 16, 4);
        for _ in 0..3 {
            p.begin(&mut ctx);
            p.read(&mut ctx, 4, true).unwrap();
            p.write(&mut ctx, 4).unwrap();
            assert!(p.commit(&mut ctx).is_ok(), "rmw must not self-exclude");
        }
    }

    #[test]
    fn ssn_exclusion_window_rule() {
        // eta 4 with pi 9 leaves the window open; pi <= eta closes it.
        assert!(!ssn_excluded(4, 9));
        assert!(ssn_excluded(4, 4));
        assert!(ssn_excluded(9, 4));
    }

    #[test]
    fn aborted_installs_restore_the_predecessor_sstamp() {
        let p = si(8, true);
        let mut t1 = TxnCtx::new(0, 16, 4);
        let mut t2 = TxnCtx::new(1, 16, 4);
        p.begin(&mut t1);
        p.begin(&mut t2);
        p.read(&mut t1, 0, false).unwrap();
        p.read(&mut t2, 1, false).unwrap();
        p.write(&mut t1, 1).unwrap();
        p.write(&mut t2, 0).unwrap();
        p.commit(&mut t1).unwrap();
        let pred0 = p
            .table
            .visible_version(0, t2.begin_ts, PendingPolicy::Spin)
            .unwrap() as *const Version;
        assert_eq!(p.commit(&mut t2), Err(AbortReason::SsnExclusion));
        t2.abort_reason = Some(AbortReason::SsnExclusion);
        p.abort(&mut t2);
        // t2's tentative sstamp on key 0's predecessor must be gone.
        assert_eq!(unsafe { &*pred0 }.sstamp(), SSTAMP_NONE);
    }

    #[test]
    fn read_only_snapshot_txn_always_commits() {
        let p = si(8, false);
        let mut writer = TxnCtx::new(0, 16, 4);
        let mut reader = TxnCtx::new(1, 16, 4);
        p.begin(&mut reader);
        for _ in 0..5 {
            p.begin(&mut writer);
            p.write(&mut writer, 1).unwrap();
            p.commit(&mut writer).unwrap();
        }
        p.read(&mut reader, 1, false).unwrap();
        assert!(p.commit(&mut reader).is_ok());
        assert_eq!(reader.commit_ts, reader.begin_ts);
    }

    #[test]
    fn commit_stamps_rise_and_reach_the_table() {
        let p = si(8, false);
        let mut ctx = TxnCtx::new(0, 16, 4);
        let mut last = 0;
        for key in 0..4 {
            p.begin(&mut ctx);
            p.write(&mut ctx, key).unwrap();
            p.commit(&mut ctx).unwrap();
            assert!(ctx.commit_ts > last);
            last = ctx.commit_ts;
        }
        assert_eq!(p.table.newest_commit_ts(), last);
    }
}
