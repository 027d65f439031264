//! The two collectors and the non-visible-write filter.

use std::sync::atomic::Ordering;

use crate::storage::{EpochManager, Table, Version, VersionStatus};

use super::VersionCache;

/// Per-sweep accounting. `max_chain_versions` counts surviving committed
/// plus pending versions on the longest chain in the swept partition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub reclaimed: u64,
    pub recycled_aborted: u64,
    pub pinned_kept: u64,
    pub max_chain_versions: usize,
}

/// Reclaims committed versions that no active or future transaction can
/// see: anything superseded by a newer committed version with
/// `wts <= watermark`. The newest committed version of a chain always
/// survives. Worker `worker` sweeps only keys congruent to it modulo
/// `workers`; that partitioning is what makes interior unlinking safe.
pub fn rapid_sweep(
    table: &Table,
    watermark: u64,
    worker: usize,
    workers: usize,
    cache: &mut VersionCache,
    epochs: &EpochManager,
) -> SweepStats {
    let mut stats = SweepStats::default();
    for key in partition(table, worker, workers) {
        let mut last_kept: Option<u64> = None;
        sweep_chain(table, key, cache, epochs, &mut stats, false, |v| {
            let keep = last_kept.is_none_or(|s| s > watermark);
            if keep {
                last_kept = Some(v.wts());
            }
            keep
        });
    }
    stats
}

/// Everything [`rapid_sweep`] reclaims, plus truncation of each chain to its
/// `k` newest committed versions. Versions a pinned (starving) transaction
/// needs are spared even beyond the budget, so survivors need not be
/// contiguous. Victims that were still visible somewhere are flipped
/// `NON_VISIBLE` before unlinking; readers that lose their version abort
/// with a read failure and retry at a fresh timestamp.
pub fn aggressive_sweep(
    table: &Table,
    watermark: u64,
    k: usize,
    pins: &[u64],
    worker: usize,
    workers: usize,
    cache: &mut VersionCache,
    epochs: &EpochManager,
) -> SweepStats {
    assert!(k >= 1, "chain budget must keep at least the newest version");
    debug_assert!(
        pins.iter().all(|&p| p >= watermark),
        "pinned stamps participate in the watermark minimum"
    );
    let mut stats = SweepStats::default();
    let mut served = vec![false; pins.len()];
    for key in partition(table, worker, workers) {
        served.fill(false);
        let mut last_kept: Option<u64> = None;
        let mut kept = 0usize;
        let mut pinned_kept = 0u64;
        sweep_chain(table, key, cache, epochs, &mut stats, true, |v| {
            let wts = v.wts();
            if last_kept.is_some_and(|s| s <= watermark) {
                // Invisible to every active timestamp; pins are always at
                // or above the watermark, so nothing can need it.
                return false;
            }
            let serves_pin = pins
                .iter()
                .zip(served.iter_mut())
                .filter(|(&p, done)| !**done && wts <= p)
                .map(|(_, done)| *done = true)
                .count()
                > 0;
            let keep = kept < k || serves_pin;
            if keep {
                kept += 1;
                last_kept = Some(wts);
                if serves_pin && kept > k {
                    pinned_kept += 1;
                }
            }
            keep
        });
        stats.pinned_kept += pinned_kept;
    }
    stats
}

fn partition(table: &Table, worker: usize, workers: usize) -> impl Iterator<Item = u64> {
    assert!(worker < workers);
    (worker as u64..table.cardinality()).step_by(workers)
}

/// Walks one chain, asking `keep_committed` about every committed version
/// in newest-to-oldest order, and unlinks the losers plus any aborted or
/// non-visible stragglers. The head node is never unlinked (installers CAS
/// the head pointer; sweeps own only interior links), so a reclaimable head
/// waits for the next sweep, by which time it is interior.
fn sweep_chain<F>(
    table: &Table,
    key: u64,
    cache: &mut VersionCache,
    epochs: &EpochManager,
    stats: &mut SweepStats,
    mark_non_visible: bool,
    mut keep_committed: F,
) where
    F: FnMut(&Version) -> bool,
{
    let record = table.record(key);
    let mut surviving = 0usize;
    let mut prev: Option<&Version> = None;
    let mut cur = record.chain_head();
    while !cur.is_null() {
        let v = unsafe { &*cur };
        let next = v.next();
        let status = v.status();
        let keep = match status {
            VersionStatus::Pending => true,
            VersionStatus::Aborted | VersionStatus::NonVisible => false,
            VersionStatus::Committed => keep_committed(v),
        };
        match prev {
            Some(p) if !keep => {
                if mark_non_visible && status == VersionStatus::Committed {
                    v.set_status(VersionStatus::NonVisible);
                }
                p.next_atomic().store(next, Ordering::SeqCst);
                cache.retire(cur, epochs.global());
                if status == VersionStatus::Aborted {
                    stats.recycled_aborted += 1;
                    table.counters().recycled_aborted.fetch_add(1, Ordering::Relaxed);
                } else {
                    stats.reclaimed += 1;
                    table.counters().reclaimed.fetch_add(1, Ordering::Relaxed);
                }
            }
            _ => {
                // Kept, or an unlinkable head.
                if status == VersionStatus::Pending || status == VersionStatus::Committed {
                    surviving += 1;
                }
                prev = Some(v);
            }
        }
        cur = next;
    }
    stats.max_chain_versions = stats.max_chain_versions.max(surviving);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WriteDisposition {
    Install,
    /// The blind write is logically ordered before an already-committed
    /// newer version; commit it with no chain mutation (Thomas write rule).
    SkipAsNonVisible,
}

/// Non-visible-write decision for a blind write committing at `commit_ts`.
/// Callers must only consult this for keys absent from their read set.
pub fn thomas_write_filter(table: &Table, key: u64, commit_ts: u64) -> WriteDisposition {
    match table.newest_committed_wts(key) {
        Some(newest) if newest > commit_ts => WriteDisposition::SkipAsNonVisible,
        _ => WriteDisposition::Install,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::{PendingPolicy, StorageKind};
    use std::time::Duration;

    fn fixture(cardinality: u64) -> (Table, EpochManager) {
        (
            Table::build(cardinality, 8, StorageKind::Multi { inline: false }, false),
            EpochManager::new(1, Duration::from_millis(40)),
        )
    }

    fn push(table: &Table, key: u64, wts: u64, status: VersionStatus) {
        let v = table.alloc_version();
        unsafe {
            (*v).prepare(wts, VersionStatus::Pending, &wts.to_le_bytes(), 0);
        }
        assert!(table.install_pending(key, v, wts), "install wts={wts}");
        unsafe { (*v).set_status(status) };
    }

    fn chain_wts(table: &Table, key: u64) -> Vec<(u64, VersionStatus)> {
        let mut out = Vec::new();
        let mut cur = table.record(key).chain_head();
        while !cur.is_null() {
            let v = unsafe { &*cur };
            out.push((v.wts(), v.status()));
            cur = v.next();
        }
        out
    }

    fn committed_wts(table: &Table, key: u64) -> Vec<u64> {
        chain_wts(table, key)
            .into_iter()
            .filter(|&(_, s)| s == VersionStatus::Committed)
            .map(|(w, _)| w)
            .collect()
    }

    #[test]
    fn rapid_reclaims_superseded_below_watermark() {
        let (table, epochs) = fixture(1);
        // Loader version wts=0 plus 2, 5, 9.
        for wts in [2, 5, 9] {
            push(&table, 0, wts, VersionStatus::Committed);
        }
        let mut cache = VersionCache::new();
        let stats = rapid_sweep(&table, 10, 0, 1, &mut cache, &epochs);
        assert_eq!(stats.reclaimed, 3, "5, 2 and the loader version go");
        assert_eq!(committed_wts(&table, 0), vec![9]);
    }

    #[test]
    fn rapid_keeps_everything_under_a_low_watermark() {
        let (table, epochs) = fixture(1);
        for wts in [2, 5, 9] {
            push(&table, 0, wts, VersionStatus::Committed);
        }
        let mut cache = VersionCache::new();
        // Watermark 4: 5's superseder is 9 (> 4), 2's is 5 (> 4), 0's is 2
        // (<= 4). Only the loader version goes.
        let stats = rapid_sweep(&table, 4, 0, 1, &mut cache, &epochs);
        assert_eq!(stats.reclaimed, 1);
        assert_eq!(committed_wts(&table, 0), vec![9, 5, 2]);
    }

    #[test]
    fn rapid_leaves_single_version_chains_alone() {
        let (table, epochs) = fixture(4);
        let mut cache = VersionCache::new();
        let stats = rapid_sweep(&table, u64::MAX, 0, 1, &mut cache, &epochs);
        assert_eq!(stats, SweepStats { max_chain_versions: 1, ..SweepStats::default() });
    }

    #[test]
    fn rapid_recycles_aborted_versions() {
        let (table, epochs) = fixture(1);
        push(&table, 0, 3, VersionStatus::Aborted);
        push(&table, 0, 7, VersionStatus::Committed);
        let mut cache = VersionCache::new();
        let stats = rapid_sweep(&table, 0, 0, 1, &mut cache, &epochs);
        assert_eq!(stats.recycled_aborted, 1);
        assert_eq!(stats.reclaimed, 0, "watermark 0 reclaims no committed version");
        assert_eq!(committed_wts(&table, 0), vec![7, 0]);
    }

    #[test]
    fn reclaimable_head_survives_until_interior() {
        let (table, epochs) = fixture(1);
        push(&table, 0, 3, VersionStatus::Committed);
        push(&table, 0, 9, VersionStatus::Aborted);
        let mut cache = VersionCache::new();
        let stats = rapid_sweep(&table, 0, 0, 1, &mut cache, &epochs);
        assert_eq!(stats.recycled_aborted, 0, "aborted head is not unlinkable");
        push(&table, 0, 11, VersionStatus::Committed);
        let stats = rapid_sweep(&table, 0, 0, 1, &mut cache, &epochs);
        assert_eq!(stats.recycled_aborted, 1, "now interior, now gone");
    }

    #[test]
    fn sweep_respects_the_partition() {
        let (table, epochs) = fixture(4);
        for key in 0..4 {
            push(&table, key, 5, VersionStatus::Committed);
        }
        let mut cache = VersionCache::new();
        let stats = rapid_sweep(&table, 10, 1, 2, &mut cache, &epochs);
        // Worker 1 of 2 sweeps keys 1 and 3 only; each drops its loader
        // version.
        assert_eq!(stats.reclaimed, 2);
        assert_eq!(committed_wts(&table, 0), vec![5, 0]);
        assert_eq!(committed_wts(&table, 1), vec![5]);
    }

    #[test]
    fn aggressive_truncates_to_budget() {
        let (table, epochs) = fixture(1);
        for wts in 1..=10 {
            push(&table, 0, wts, VersionStatus::Committed);
        }
        let mut cache = VersionCache::new();
        // Watermark 0 so pure truncation is observable: 11 committed
        // versions (loader included), budget 2.
        let stats = aggressive_sweep(&table, 0, 2, &[], 0, 1, &mut cache, &epochs);
        assert_eq!(stats.reclaimed, 9);
        assert_eq!(committed_wts(&table, 0), vec![10, 9]);
    }

    #[test]
    fn aggressive_spares_pinned_visibility() {
        let (table, epochs) = fixture(1);
        for wts in [2, 5, 9, 12] {
            push(&table, 0, wts, VersionStatus::Committed);
        }
        let mut cache = VersionCache::new();
        // Pin ts=6: its visible version is wts=5, outside the K=2 budget.
        let stats = aggressive_sweep(&table, 0, 2, &[6], 0, 1, &mut cache, &epochs);
        assert_eq!(committed_wts(&table, 0), vec![12, 9, 5]);
        assert_eq!(stats.pinned_kept, 1);
    }

    #[test]
    fn aggressive_marks_victims_non_visible_before_unlink() {
        let (table, epochs) = fixture(1);
        for wts in [2, 5, 9] {
            push(&table, 0, wts, VersionStatus::Committed);
        }
        let mut cache = VersionCache::new();
        aggressive_sweep(&table, 0, 1, &[], 0, 1, &mut cache, &epochs);
        // A reader below the surviving version now finds nothing.
        assert!(table.visible_version(0, 8, PendingPolicy::Spin).is_none());
        assert_eq!(
            table.visible_version(0, 9, PendingPolicy::Spin).unwrap().wts(),
            9
        );
    }

    #[test]
    fn thomas_filter_skips_stale_blind_writes() {
        let (table, _) = fixture(1);
        push(&table, 0, 9, VersionStatus::Committed);
        assert_eq!(
            thomas_write_filter(&table, 0, 7),
            WriteDisposition::SkipAsNonVisible
        );
        assert_eq!(thomas_write_filter(&table, 0, 9), WriteDisposition::Install);
        assert_eq!(thomas_write_filter(&table, 0, 12), WriteDisposition::Install);
    }

    proptest::proptest! {
        /// With an unbounded budget and no pins the aggressive sweep must
        /// reclaim exactly what the rapid sweep reclaims.
        #[test]
        fn unbounded_budget_equals_rapid(
            statuses in proptest::collection::vec(proptest::bool::ANY, 1..12),
            watermark in 0u64..20,
        ) {
            let build = || {
                let (table, epochs) = fixture(1);
                for (i, &committed) in statuses.iter().enumerate() {
                    let status = if committed {
                        VersionStatus::Committed
                    } else {
                        VersionStatus::Aborted
                    };
                    push(&table, 0, i as u64 + 1, status);
                }
                (table, epochs)
            };
            let (ta, ea) = build();
            let (tb, eb) = build();
            let mut ca = VersionCache::new();
            let mut cb = VersionCache::new();
            let a = rapid_sweep(&ta, watermark, 0, 1, &mut ca, &ea);
            let b = aggressive_sweep(&tb, watermark, usize::MAX, &[], 0, 1, &mut cb, &eb);
            proptest::prop_assert_eq!(a.reclaimed, b.reclaimed);
            proptest::prop_assert_eq!(a.recycled_aborted, b.recycled_aborted);
            proptest::prop_assert_eq!(chain_wts(&ta, 0), chain_wts(&tb, 0));
        }

        /// Brute-force oracle for the Thomas filter: skip exactly when the
        /// chain holds a committed version newer than the commit stamp.
        #[test]
        fn thomas_filter_matches_brute_force(
            wts_list in proptest::collection::btree_set(1u64..50, 0..8),
            commit_ts in 0u64..60,
        ) {
            let (table, _) = fixture(1);
            for &wts in &wts_list {
                push(&table, 0, wts, VersionStatus::Committed);
            }
            let expect_skip = wts_list.iter().chain(std::iter::once(&0)).any(|&w| w > commit_ts);
            let got = thomas_write_filter(&table, 0, commit_ts);
            proptest::prop_assert_eq!(
                got == WriteDisposition::SkipAsNonVisible,
                expect_skip
            );
        }
    }

    #[test]
    fn steady_state_balance_keeps_fallbacks_flat() {
        let (table, epochs) = fixture(1);
        let mut cache = VersionCache::new();
        cache.prewarm(&table, 8);
        let mut wts = 0u64;
        for round in 0..2000u64 {
            wts += 1;
            let slot = cache.acquire(&table, &epochs);
            unsafe { (*slot).prepare(wts, VersionStatus::Pending, &wts.to_le_bytes(), 0) };
            assert!(table.install_pending(0, slot, wts));
            unsafe { (*slot).set_status(VersionStatus::Committed) };
            table.note_commit_ts(wts);
            rapid_sweep(&table, wts, 0, 1, &mut cache, &epochs);
            epochs.publish(0);
            epochs.try_advance();
            if round == 100 {
                // Warmup done; from here the cache must be self-sustaining.
                assert_eq!(cache.fallback_alloc(), 0);
            }
        }
        assert_eq!(cache.fallback_alloc(), 0, "birth rate == reclaim rate");
    }
}
