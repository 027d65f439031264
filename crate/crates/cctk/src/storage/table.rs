//! The table: fixed cardinality, fixed payload size, one storage layout per run.

use std::cell::UnsafeCell;
use std::sync::atomic::{fence, AtomicU64, Ordering};
use std::sync::Mutex;

use crate::align::CacheAligned;

use super::record::Record;
use super::version::{Version, VersionStatus};
use super::word::{TidWord, TsWord, LOCK_BIT};

/// Storage layout for a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageKind {
    /// One payload slot per record, updated in place under the record word
    /// lock (Silo, TicToc, MOCC, 2PL).
    Single,
    /// Version chains per record (MVTO, SI, ERMIA). With `inline` set, each
    /// record owns one embedded version slot that installs prefer over the
    /// allocator.
    Multi { inline: bool },
}

/// How a visibility query treats a `PENDING` version inside the readable range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PendingPolicy {
    /// Wait for the installer to resolve it. Snapshot protocols need this:
    /// a pending version with `wts <= ts` may commit into the snapshot.
    Spin,
    /// Treat it as invisible. Callers must re-validate afterwards.
    Skip,
}

/// Version-population accounting. `births - reclaimed - recycled_aborted`
/// is the number of versions currently reachable from some chain.
#[derive(Debug, Default)]
pub struct VersionCounters {
    pub births: CacheAligned<AtomicU64>,
    pub reclaimed: CacheAligned<AtomicU64>,
    pub recycled_aborted: CacheAligned<AtomicU64>,
}

impl VersionCounters {
    pub fn live(&self) -> u64 {
        let births = self.births.load(Ordering::Relaxed);
        let gone = self.reclaimed.load(Ordering::Relaxed)
            + self.recycled_aborted.load(Ordering::Relaxed);
        births.saturating_sub(gone)
    }
}

struct VersionPtr(*mut Version);
// Safety: the registry only stores pointers for teardown; Version is Sync.
unsafe impl Send for VersionPtr {}

/// Fixed-size key space with per-key payloads. Keys are `0..cardinality`.
pub struct Table {
    records: Box<[Record]>,
    kind: StorageKind,
    payload_size: usize,
    stride: usize,
    /// Single-version payload arena, indexed by `key * stride`. Empty for
    /// multi-version layouts. Writes happen only under the record's lock.
    sv_arena: UnsafeCell<Box<[u8]>>,
    /// Inline version slots, one per record (only for `Multi { inline: true }`).
    inline: Box<[Version]>,
    /// Every heap-allocated version, for teardown.
    allocations: Mutex<Vec<VersionPtr>>,
    counters: VersionCounters,
    /// Largest committed write timestamp seen; the watermark falls back to
    /// this when no transaction is in flight.
    newest_commit: CacheAligned<AtomicU64>,
    /// Per-record install sequence used by capture runs on single-version
    /// layouts to tag value versions. Empty when capture is off.
    install_seq: Box<[AtomicU64]>,
}

// Safety: the arena is written only under per-record locks, versions follow
// the discipline documented on `Version`, and everything else is atomic.
unsafe impl Send for Table {}
unsafe impl Sync for Table {}

impl Table {
    /// Builds a table with `cardinality` records of `payload_size` bytes, all
    /// zeroed, owned by the loader transaction (id 0). Multi-version layouts
    /// start with one committed version per record at `wts = 0`.
    ///
    /// `capture` preallocates the install-sequence side array single-version
    /// capture runs tag their writes with.
    pub fn build(cardinality: u64, payload_size: usize, kind: StorageKind, capture: bool) -> Table {
        assert!(cardinality > 0, "table must hold at least one record");
        assert!(payload_size >= 4, "payload must be at least 4 bytes");
        let n = usize::try_from(cardinality).expect("cardinality fits in memory");
        let records: Box<[Record]> = (0..n).map(|_| Record::new()).collect();

        // Round payload slots up to cache-line multiples so two records'
        // payloads never share a line.
        let stride = payload_size.div_ceil(crate::align::CACHE_LINE_BYTES)
            * crate::align::CACHE_LINE_BYTES;

        let mut table = Table {
            records,
            kind,
            payload_size,
            stride,
            sv_arena: UnsafeCell::new(Box::default()),
            inline: Box::default(),
            allocations: Mutex::new(Vec::new()),
            counters: VersionCounters::default(),
            newest_commit: CacheAligned::new(AtomicU64::new(0)),
            install_seq: Box::default(),
        };

        match kind {
            StorageKind::Single => {
                table.sv_arena = UnsafeCell::new(vec![0u8; n * stride].into_boxed_slice());
                if capture {
                    table.install_seq = (0..n).map(|_| AtomicU64::new(0)).collect();
                }
            }
            StorageKind::Multi { inline } => {
                let zero = vec![0u8; payload_size];
                if inline {
                    // The loader's initial version lives in the inline slot.
                    let slots: Box<[Version]> = (0..n)
                        .map(|_| Version::new_inline_slot(payload_size))
                        .collect();
                    for (record, slot) in table.records.iter().zip(slots.iter()) {
                        assert!(slot.inline_claim());
                        unsafe { slot.prepare(0, VersionStatus::Committed, &zero, 0) };
                        record
                            .chain_atomic()
                            .store(slot as *const _ as *mut _, Ordering::Relaxed);
                    }
                    table.inline = slots;
                } else {
                    let mut allocs = Vec::with_capacity(n);
                    for record in table.records.iter() {
                        let v = Box::leak(Box::new(Version::new_slot(payload_size)));
                        unsafe { v.prepare(0, VersionStatus::Committed, &zero, 0) };
                        record.chain_atomic().store(v, Ordering::Relaxed);
                        allocs.push(VersionPtr(v));
                    }
                    *table.allocations.lock().unwrap() = allocs;
                }
                table
                    .counters
                    .births
                    .store(cardinality, Ordering::Relaxed);
            }
        }
        table
    }

    pub fn cardinality(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn payload_size(&self) -> usize {
        self.payload_size
    }

    pub fn kind(&self) -> StorageKind {
        self.kind
    }

    pub fn multi_version(&self) -> bool {
        matches!(self.kind, StorageKind::Multi { .. })
    }

    /// Bytes reserved for single-version payload storage.
    pub fn payload_bytes(&self) -> usize {
        unsafe { (&*self.sv_arena.get()).len() }
    }

    pub fn record(&self, key: u64) -> &Record {
        &self.records[usize::try_from(key).expect("key in range")]
    }

    pub fn counters(&self) -> &VersionCounters {
        &self.counters
    }

    pub fn note_commit_ts(&self, ts: u64) {
        self.newest_commit.fetch_max(ts, Ordering::Relaxed);
    }

    pub fn newest_commit_ts(&self) -> u64 {
        self.newest_commit.load(Ordering::Relaxed)
    }

    fn sv_payload_ptr(&self, key: u64) -> *mut u8 {
        debug_assert_eq!(self.kind, StorageKind::Single);
        let arena = self.sv_arena.get();
        unsafe { (*arena).as_mut_ptr().add(key as usize * self.stride) }
    }

    /// Optimistic stable read of a single-version payload against the TID
    /// word: load word, copy, re-load; accept only an unlocked, unchanged
    /// pair. Issues no shared-memory stores; bumps `extra_read` once per
    /// failed iteration.
    pub fn read_consistent(&self, key: u64, out: &mut [u8], extra_read: &mut u64) -> TidWord {
        TidWord::from_raw(self.read_consistent_raw(key, self.record(key).tid_atomic(), out, extra_read))
    }

    /// Same protocol against the TicToc timestamp word.
    pub fn read_consistent_ts(&self, key: u64, out: &mut [u8], extra_read: &mut u64) -> TsWord {
        TsWord::from_raw(self.read_consistent_raw(key, self.record(key).ts_atomic(), out, extra_read))
    }

    fn read_consistent_raw(
        &self,
        key: u64,
        word: &AtomicU64,
        out: &mut [u8],
        extra_read: &mut u64,
    ) -> u64 {
        debug_assert_eq!(out.len(), self.payload_size);
        let src = self.sv_payload_ptr(key);
        let backoff = crossbeam::utils::Backoff::new();
        loop {
            let t1 = word.load(Ordering::Acquire);
            if t1 & LOCK_BIT == 0 {
                unsafe {
                    std::ptr::copy_nonoverlapping(src, out.as_mut_ptr(), self.payload_size);
                }
                fence(Ordering::Acquire);
                let t2 = word.load(Ordering::Acquire);
                if t1 == t2 {
                    return t1;
                }
            }
            *extra_read += 1;
            backoff.snooze();
        }
    }

    /// Copies a single-version payload while the caller holds a lock that
    /// excludes writers (shared or exclusive reader-writer hold).
    pub fn sv_read_locked(&self, key: u64, out: &mut [u8]) {
        debug_assert_eq!(out.len(), self.payload_size);
        unsafe {
            std::ptr::copy_nonoverlapping(self.sv_payload_ptr(key), out.as_mut_ptr(), self.payload_size);
        }
    }

    /// Installs a single-version payload.
    ///
    /// # Safety
    /// The caller must hold the record's write exclusion (word lock bit or
    /// exclusive reader-writer lock); the following unlock/TID store
    /// publishes the bytes.
    pub unsafe fn sv_write_payload(&self, key: u64, src: &[u8]) {
        debug_assert_eq!(src.len(), self.payload_size);
        std::ptr::copy_nonoverlapping(src.as_ptr(), self.sv_payload_ptr(key), self.payload_size);
    }

    /// Next install sequence number for capture-tagged single-version writes.
    pub fn install_seq_bump(&self, key: u64) -> u64 {
        self.install_seq[key as usize].fetch_add(1, Ordering::Relaxed) + 1
    }

    /// The record's inline version slot, if this layout has them.
    pub fn inline_slot(&self, key: u64) -> Option<&Version> {
        self.inline.get(key as usize)
    }

    /// Allocates a fresh heap version slot, registered for teardown.
    pub fn alloc_version(&self) -> *mut Version {
        let v: *mut Version = Box::leak(Box::new(Version::new_slot(self.payload_size)));
        self.allocations.lock().unwrap().push(VersionPtr(v));
        v
    }

    /// Newest committed version with `wts <= ts`, skipping aborted and
    /// non-visible entries and handling pending ones per `policy`. `None`
    /// means every sufficiently old version has been reclaimed.
    pub fn visible_version(&self, key: u64, ts: u64, policy: PendingPolicy) -> Option<&Version> {
        let mut cur = self.record(key).chain_head();
        let backoff = crossbeam::utils::Backoff::new();
        while !cur.is_null() {
            let v = unsafe { &*cur };
            if v.wts() <= ts {
                match v.status() {
                    VersionStatus::Committed => return Some(v),
                    VersionStatus::Pending => match policy {
                        PendingPolicy::Spin => {
                            backoff.snooze();
                            continue; // re-check the same version
                        }
                        PendingPolicy::Skip => {}
                    },
                    VersionStatus::Aborted | VersionStatus::NonVisible => {}
                }
            }
            cur = v.next();
        }
        None
    }

    /// Whether any pending or committed version has `wts` in `(from, to]`.
    /// Used by readers to re-validate that their chosen version is still the
    /// newest in the observable range after they advanced its rts.
    pub fn newer_in_range(&self, key: u64, from: u64, to: u64) -> bool {
        let mut cur = self.record(key).chain_head();
        while !cur.is_null() {
            let v = unsafe { &*cur };
            let wts = v.wts();
            if wts <= from {
                return false;
            }
            if wts <= to
                && matches!(
                    v.status(),
                    VersionStatus::Pending | VersionStatus::Committed
                )
            {
                return true;
            }
            cur = v.next();
        }
        false
    }

    /// Write timestamp of the newest committed version (the blind-write
    /// filter's comparison point). Chains always keep their newest committed
    /// version, so this only returns `None` on a corrupt chain.
    pub fn newest_committed_wts(&self, key: u64) -> Option<u64> {
        let mut cur = self.record(key).chain_head();
        while !cur.is_null() {
            let v = unsafe { &*cur };
            if v.status() == VersionStatus::Committed {
                return Some(v.wts());
            }
            cur = v.next();
        }
        None
    }

    /// Links `version` (already `prepare`d by the caller, status `PENDING`)
    /// at the chain head iff both install rules hold against the current
    /// chain:
    ///
    /// - no pending or committed version has `wts >= conflict_floor`
    ///   (`conflict_floor` is the new wts for timestamp ordering, or
    ///   `begin_ts + 1` for snapshot first-committer-wins), and
    /// - the newest committed version's rts does not exceed the new wts (a
    ///   reader already observed a state this install would contradict).
    ///
    /// Returns false and leaves the chain untouched on conflict. Note the
    /// rts rule is re-checked by committers after linking: a reader may
    /// extend the predecessor's rts between our check and the CAS.
    pub fn install_pending(&self, key: u64, version: *mut Version, conflict_floor: u64) -> bool {
        let record = self.record(key);
        let new = unsafe { &*version };
        debug_assert_eq!(new.status(), VersionStatus::Pending);
        let new_wts = new.wts();
        loop {
            let head = record.chain_head();
            let mut cur = head;
            let mut ok = true;
            while !cur.is_null() {
                let v = unsafe { &*cur };
                match v.status() {
                    VersionStatus::Pending => {
                        if v.wts() >= conflict_floor {
                            ok = false;
                            break;
                        }
                    }
                    VersionStatus::Committed => {
                        if v.wts() >= conflict_floor || v.rts() > new_wts {
                            ok = false;
                        }
                        // Newest committed bounds every deeper rts; stop here.
                        break;
                    }
                    VersionStatus::Aborted | VersionStatus::NonVisible => {}
                }
                cur = v.next();
            }
            if !ok {
                return false;
            }
            new.next_atomic().store(head, Ordering::Relaxed);
            match record.chain_atomic().compare_exchange(
                head,
                version,
                Ordering::SeqCst,
                Ordering::SeqCst,
            ) {
                Ok(_) => {
                    self.counters.births.fetch_add(1, Ordering::Relaxed);
                    return true;
                }
                Err(_) => continue,
            }
        }
    }

    /// Re-checks the rts rule for an already-installed pending version:
    /// the newest committed predecessor must not have been read at a
    /// timestamp past the new wts. Must run after the install CAS; together
    /// the SeqCst pair closes the race with concurrent rts extensions.
    pub fn predecessor_rts_ok(&self, version: *const Version) -> bool {
        let new = unsafe { &*version };
        let new_wts = new.wts();
        let mut cur = new.next();
        while !cur.is_null() {
            let v = unsafe { &*cur };
            if v.status() == VersionStatus::Committed {
                return v.rts() <= new_wts;
            }
            cur = v.next();
        }
        true
    }
}

impl Drop for Table {
    fn drop(&mut self) {
        for VersionPtr(p) in self.allocations.get_mut().unwrap().drain(..) {
            drop(unsafe { Box::from_raw(p) });
        }
    }
}
