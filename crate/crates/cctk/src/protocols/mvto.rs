//! Multi-version timestamp ordering. A transaction runs entirely at one
//! stamp drawn from a per-worker clock (worker id in the low byte, so
//! stamps never collide across workers). Reads take the newest committed
//! version at or below the stamp and advance its read stamp; writes install
//! pending versions that must land above every existing stamp on the chain.
//! A final read validation catches versions that slipped into the read
//! window, pending installs included.

use std::sync::Arc;
use std::time::Instant;

use crate::capture::Capture;
use crate::lifetime::{thomas_write_filter, ActiveSet, Watermark, WriteDisposition};
use crate::storage::{
    EpochManager, PendingPolicy, StorageKind, Table, Version, VersionStatus,
};

use super::{AbortReason, Observed, Protocol, Toggles, TxnCtx};

/// Worker-id bits in the low end of every stamp.
const WORKER_BITS: u32 = 8;

/// Consecutive reclamation-induced read failures a worker tolerates before
/// pinning its stamp against the aggressive collector.
pub const STARVATION_RETRIES: u32 = 8;

pub struct Mvto {
    table: Arc<Table>,
    epochs: Arc<EpochManager>,
    toggles: Toggles,
    active: Arc<ActiveSet>,
    watermark: Arc<Watermark>,
    capture: Option<Arc<Capture>>,
}

impl Mvto {
    pub fn new(
        table: Arc<Table>,
        epochs: Arc<EpochManager>,
        toggles: Toggles,
        active: Arc<ActiveSet>,
        watermark: Arc<Watermark>,
        capture: Option<Arc<Capture>>,
    ) -> Mvto {
        assert!(table.multi_version());
        if toggles.overwrite_inline {
            assert!(
                matches!(table.kind(), StorageKind::Multi { inline: true }),
                "in-place overwrites need inline version slots"
            );
        }
        Mvto {
            table,
            epochs,
            toggles,
            active,
            watermark,
            capture,
        }
    }

    /// A read is stale when its version left the committed state (the
    /// aggressive collector truncated it) or a rival version slipped into
    /// `(wts, begin)`. Own installs sit exactly at `begin_ts` and foreign
    /// stamps never equal it, so the inclusive bound `begin_ts - 1` sees
    /// every rival and no self-conflict.
    fn stale_read(&self, ctx: &TxnCtx, key: u64, v: &Version) -> Option<AbortReason> {
        if v.status() != VersionStatus::Committed {
            return Some(AbortReason::GcReadFail);
        }
        if self.table.newer_in_range(key, v.wts(), ctx.begin_ts - 1) {
            return Some(AbortReason::ReadValidation);
        }
        None
    }

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

    /// Whether this write can be an in-place update of the record's inline
    /// slot: single-version chain, nothing pending, and no reader past our
    /// stamp. The partitioned workloads this toggle targets make that the
    /// steady state; anything else falls back to a normal install.
    fn inline_eligible(&self, key: u64, begin_ts: u64) -> bool {
        let Some(slot) = self.table.inline_slot(key) else {
            return false;
        };
        std::ptr::eq(self.table.record(key).chain_head(), slot)
            && slot.status() == VersionStatus::Committed
            && slot.next().is_null()
            && slot.rts() <= begin_ts
            && slot.wts() < begin_ts
    }
}

impl Protocol for Mvto {
    fn begin(&self, ctx: &mut TxnCtx) {
        debug_assert!(ctx.worker < (1 << WORKER_BITS));
        ctx.begin_attempt();
        let floor = (self.table.newest_commit_ts() >> WORKER_BITS)
            .max(self.watermark.current() >> WORKER_BITS);
        ctx.clock = (ctx.clock + 1).max(floor + 1);
        ctx.begin_ts = (ctx.clock << WORKER_BITS) | ctx.worker as u64;
        self.active.begin(ctx.worker, ctx.begin_ts);
        if ctx.gc_read_fails > STARVATION_RETRIES && !ctx.pinned {
            self.active.pin(ctx.worker, ctx.begin_ts);
            ctx.pinned = true;
        }
    }

    fn read(&self, ctx: &mut TxnCtx, key: u64, for_update: bool) -> Result<(), AbortReason> {
        if ctx.find_write(key).is_some() {
            return Ok(());
        }
        let v = loop {
            let Some(v) = self
                .table
                .visible_version(key, ctx.begin_ts, PendingPolicy::Spin)
            else {
                ctx.gc_read_fails += 1;
                return Err(AbortReason::GcReadFail);
            };
            v.rts_fetch_max(ctx.begin_ts);
            ctx.shared_store_in_read += 1;
            // The rts advance and this re-walk pair with the writer's
            // install-then-recheck; a version sneaking into (wts, begin]
            // is caught by at least one side.
            if self.table.newer_in_range(key, v.wts(), ctx.begin_ts) {
                ctx.extra_reads += 1;
                continue;
            }
            break v;
        };
        let at = ctx.reserve_read_slot();
        v.copy_payload_into(ctx.read_slice(at));
        ctx.push_read(key, Observed::Version(v as *const Version), at, for_update);
        Ok(())
    }

    fn write(&self, ctx: &mut TxnCtx, key: u64) -> Result<(), AbortReason> {
        ctx.stage_write(key);
        Ok(())
    }

    fn commit(&self, ctx: &mut TxnCtx) -> Result<(), AbortReason> {
        let vstart = Instant::now();
        let epoch = self.epochs.global();

        if self.toggles.precheck || self.toggles.early_abort {
            let mut first_stale = None;
            for entry in &ctx.read_set {
                let v = unsafe { &*observed_version(entry.observed) };
                if let Some(reason) = self.stale_read(ctx, entry.key, v) {
                    if reason == AbortReason::GcReadFail {
                        ctx.gc_read_fails += 1;
                    }
                    if self.toggles.early_abort {
                        ctx.timers.note_validation(vstart.elapsed());
                        return Err(reason);
                    }
                    first_stale.get_or_insert(reason);
                }
            }
            if let Some(reason) = first_stale {
                ctx.timers.note_validation(vstart.elapsed());
                return Err(reason);
            }
        }

        ctx.write_set.sort_unstable_by_key(|e| e.key);

        if self.toggles.thomas_write {
            for i in 0..ctx.write_set.len() {
                let key = ctx.write_set[i].key;
                let blind = !ctx.read_set_contains(key);
                if blind
                    && thomas_write_filter(&self.table, key, ctx.begin_ts)
                        == WriteDisposition::SkipAsNonVisible
                {
                    ctx.write_set[i].skipped_nwr = true;
                    ctx.write_set[i].tag = ctx.begin_ts;
                }
            }
        }

        let mut order: Vec<usize> = (0..ctx.write_set.len()).collect();
        if self.toggles.contention_sort {
            order.sort_by_key(|&i| {
                std::cmp::Reverse(self.table.record(ctx.write_set[i].key).contention(epoch))
            });
        }

        for &i in &order {
            if ctx.write_set[i].skipped_nwr {
                continue;
            }
            let key = ctx.write_set[i].key;
            ctx.write_set[i].tag = ctx.begin_ts;
            if self.toggles.overwrite_inline && self.inline_eligible(key, ctx.begin_ts) {
                // Deferred past validation: in-place updates cannot be
                // rolled back the way a pending install can.
                ctx.write_set[i].inline = true;
                continue;
            }
            let slot = ctx.cache.acquire(&self.table, &self.epochs);
            unsafe {
                (*slot).prepare(
                    ctx.begin_ts,
                    VersionStatus::Pending,
                    ctx.write_payload(&ctx.write_set[i]),
                    0,
                );
            }
            if !self.table.install_pending(key, slot, ctx.begin_ts) {
                ctx.cache.release(slot);
                self.table.record(key).contention_bump(epoch);
                self.abandon_installs(ctx);
                ctx.timers.note_validation(vstart.elapsed());
                return Err(AbortReason::WwConflict);
            }
            ctx.write_set[i].version = slot;
            ctx.write_set[i].installed = true;
            if !self.table.predecessor_rts_ok(slot) {
                self.table.record(key).contention_bump(epoch);
                self.abandon_installs(ctx);
                ctx.timers.note_validation(vstart.elapsed());
                return Err(AbortReason::WwConflict);
            }
        }

        for entry in &ctx.read_set {
            let v = unsafe { &*observed_version(entry.observed) };
            if let Some(reason) = self.stale_read(ctx, entry.key, v) {
                if reason == AbortReason::GcReadFail {
                    ctx.gc_read_fails += 1;
                }
                self.abandon_installs(ctx);
                ctx.timers.note_validation(vstart.elapsed());
                return Err(reason);
            }
        }
        ctx.timers.note_validation(vstart.elapsed());

        let wstart = Instant::now();
        let pos = self.capture.as_ref().map(|c| c.next_pos());
        for i in 0..ctx.write_set.len() {
            if ctx.write_set[i].skipped_nwr {
                continue;
            }
            if ctx.write_set[i].inline {
                let key = ctx.write_set[i].key;
                let slot = self.table.inline_slot(key).expect("eligibility checked");
                unsafe {
                    slot.prepare(
                        ctx.begin_ts,
                        VersionStatus::Committed,
                        ctx.write_payload(&ctx.write_set[i]),
                        0,
                    );
                }
            } else {
                unsafe { &*ctx.write_set[i].version }.set_status(VersionStatus::Committed);
            }
        }
        if !ctx.write_set.is_empty() {
            self.table.note_commit_ts(ctx.begin_ts);
        }
        ctx.commit_ts = ctx.begin_ts;
        if let (Some(cap), Some(pos)) = (&self.capture, pos) {
            cap.push(ctx.captured(pos, Some((ctx.begin_ts, ctx.begin_ts))));
        }
        self.active.end(ctx.worker);
        if ctx.pinned {
            self.active.unpin(ctx.worker);
            ctx.pinned = false;
        }
        ctx.timers.note_write(wstart.elapsed());
        ctx.finish_commit();
        Ok(())
    }

    fn abort(&self, ctx: &mut TxnCtx) {
        self.abandon_installs(ctx);
        // The pin, if any, survives aborts; only a commit clears the
        // starvation it guards against.
        self.active.end(ctx.worker);
        ctx.finish_abort();
    }
}

fn observed_version(observed: Observed) -> *const Version {
    match observed {
        Observed::Version(v) => v,
        _ => unreachable!("MVTO reads observe versions"),
    }
}
