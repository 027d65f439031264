//! Multi-version storage: one node of a record's version chain.

use std::cell::UnsafeCell;
use std::ptr;
use std::sync::atomic::{AtomicPtr, AtomicU64, AtomicU8, Ordering};

/// Sstamp value meaning "not overwritten yet".
pub const SSTAMP_NONE: u32 = u32::MAX;

const HOME_HEAP: u8 = 0;
const HOME_INLINE_FREE: u8 = 1;
const HOME_INLINE_BUSY: u8 = 2;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
#[repr(u8)]
pub enum VersionStatus {
    Pending = 0,
    Committed = 1,
    Aborted = 2,
    /// Logically dead: retired by aggressive collection or skipped by the
    /// blind-write filter. Never returned by visibility queries.
    NonVisible = 3,
}

impl VersionStatus {
    fn from_u8(v: u8) -> Self {
        match v {
            0 => VersionStatus::Pending,
            1 => VersionStatus::Committed,
            2 => VersionStatus::Aborted,
            3 => VersionStatus::NonVisible,
            _ => unreachable!("corrupt version status {v}"),
        }
    }
}

/// A single version. Chains are singly linked through `next`, newest first,
/// with strictly decreasing `wts` among non-aborted entries.
///
/// Payload bytes are written only while the version is exclusively owned:
/// before it is linked into a chain, or after reclamation once the epoch
/// quarantine guarantees no reader still holds a pointer. Publication is the
/// chain-head CAS (for the bytes of a `PENDING` install) and the `Release`
/// status store that flips to `COMMITTED`; readers load status with `Acquire`
/// before copying.
pub struct Version {
    wts: AtomicU64,
    rts: AtomicU64,
    /// Packed SSN stamp word: pstamp in the low 32 bits, sstamp in the high
    /// 32 (`SSTAMP_NONE` when not overwritten). One word so both update
    /// latch-free under a single CAS loop.
    ssn: AtomicU64,
    next: AtomicPtr<Version>,
    status: AtomicU8,
    home: AtomicU8,
    payload: UnsafeCell<Box<[u8]>>,
}

// Safety: all fields are atomics except the payload, whose access discipline
// (owner-writes before publication, readers copy after an Acquire status
// load) is documented above and enforced by the engines.
unsafe impl Send for Version {}
unsafe impl Sync for Version {}

impl Version {
    /// A blank slot. Status starts `Aborted` so a slot that leaks into a walk
    /// before initialization is skipped, not read.
    pub fn new_slot(payload_size: usize) -> Self {
        Version {
            wts: AtomicU64::new(0),
            rts: AtomicU64::new(0),
            ssn: AtomicU64::new(pack_ssn(0, SSTAMP_NONE)),
            next: AtomicPtr::new(ptr::null_mut()),
            status: AtomicU8::new(VersionStatus::Aborted as u8),
            home: AtomicU8::new(HOME_HEAP),
            payload: UnsafeCell::new(vec![0u8; payload_size].into_boxed_slice()),
        }
    }

    pub(crate) fn new_inline_slot(payload_size: usize) -> Self {
        let v = Self::new_slot(payload_size);
        v.home.store(HOME_INLINE_FREE, Ordering::Relaxed);
        v
    }

    /// Initializes the slot for (re)use. Caller must exclusively own it.
    ///
    /// # Safety
    /// No other thread may hold a reference to this version: it is either
    /// freshly allocated, claimed from an inline slot, or has passed the
    /// reclamation quarantine.
    pub unsafe fn prepare(&self, wts: u64, status: VersionStatus, payload: &[u8], pstamp: u32) {
        self.wts.store(wts, Ordering::Relaxed);
        self.rts.store(wts, Ordering::Relaxed);
        self.ssn
            .store(pack_ssn(pstamp, SSTAMP_NONE), Ordering::Relaxed);
        self.next.store(ptr::null_mut(), Ordering::Relaxed);
        self.write_payload(payload);
        self.status.store(status as u8, Ordering::Relaxed);
    }

    pub fn wts(&self) -> u64 {
        self.wts.load(Ordering::Relaxed)
    }

    pub fn rts(&self) -> u64 {
        self.rts.load(Ordering::SeqCst)
    }

    /// Extends the read timestamp. `SeqCst` because the install-side
    /// predecessor check relies on a total order between this store and the
    /// chain-head CAS.
    pub fn rts_fetch_max(&self, ts: u64) -> u64 {
        self.rts.fetch_max(ts, Ordering::SeqCst)
    }

    pub fn status(&self) -> VersionStatus {
        VersionStatus::from_u8(self.status.load(Ordering::Acquire))
    }

    pub fn set_status(&self, status: VersionStatus) {
        self.status.store(status as u8, Ordering::Release);
    }

    pub fn next(&self) -> *mut Version {
        self.next.load(Ordering::Acquire)
    }

    pub(crate) fn next_atomic(&self) -> &AtomicPtr<Version> {
        &self.next
    }

    pub fn payload_len(&self) -> usize {
        unsafe { (&*self.payload.get()).len() }
    }

    /// Copies the payload out. Sound for versions observed `COMMITTED` (the
    /// bytes are frozen until reclamation, which the quarantine delays past
    /// any in-flight reader) and for versions the caller owns.
    pub fn copy_payload_into(&self, out: &mut [u8]) {
        let src = unsafe { &*self.payload.get() };
        out.copy_from_slice(src);
    }

    /// First 8 payload bytes as a little-endian word; the capture mode stores
    /// the writer transaction id there.
    pub fn payload_prefix(&self) -> u64 {
        let src = unsafe { &*self.payload.get() };
        let mut b = [0u8; 8];
        b.copy_from_slice(&src[..8]);
        u64::from_le_bytes(b)
    }

    /// # Safety
    /// Caller must exclusively own the version (see [`Self::prepare`]).
    pub unsafe fn write_payload(&self, src: &[u8]) {
        let dst = &mut *self.payload.get();
        debug_assert_eq!(dst.len(), src.len(), "payload size is fixed per table");
        dst.copy_from_slice(src);
    }

    pub fn pstamp(&self) -> u32 {
        (self.ssn.load(Ordering::SeqCst) & 0xFFFF_FFFF) as u32
    }

    pub fn sstamp(&self) -> u32 {
        (self.ssn.load(Ordering::SeqCst) >> 32) as u32
    }

    /// Raises pstamp to at least `stamp`, leaving sstamp untouched.
    pub fn pstamp_fetch_max(&self, stamp: u32) {
        let mut cur = self.ssn.load(Ordering::SeqCst);
        loop {
            let (p, s) = unpack_ssn(cur);
            if p >= stamp {
                return;
            }
            match self.ssn.compare_exchange_weak(
                cur,
                pack_ssn(stamp, s),
                Ordering::SeqCst,
                Ordering::SeqCst,
            ) {
                Ok(_) => return,
                Err(now) => cur = now,
            }
        }
    }

    /// Stamps the overwriter's commit timestamp, preserving pstamp.
    pub fn sstamp_store(&self, stamp: u32) {
        let mut cur = self.ssn.load(Ordering::SeqCst);
        loop {
            let (p, _) = unpack_ssn(cur);
            match self.ssn.compare_exchange_weak(
                cur,
                pack_ssn(p, stamp),
                Ordering::SeqCst,
                Ordering::SeqCst,
            ) {
                Ok(_) => return,
                Err(now) => cur = now,
            }
        }
    }

    pub fn sstamp_clear(&self) {
        self.sstamp_store(SSTAMP_NONE);
    }

    /// Replaces sstamp, returning the previous value. The overwriter posts
    /// its tentative commit stamp through this before deciding, keeping the
    /// prior value so an abort can attempt a restore.
    pub fn sstamp_swap(&self, stamp: u32) -> u32 {
        let mut cur = self.ssn.load(Ordering::SeqCst);
        loop {
            let (p, s) = unpack_ssn(cur);
            match self.ssn.compare_exchange_weak(
                cur,
                pack_ssn(p, stamp),
                Ordering::SeqCst,
                Ordering::SeqCst,
            ) {
                Ok(_) => return s,
                Err(now) => cur = now,
            }
        }
    }

    /// Restores sstamp to `restore` only while it still holds `expect`;
    /// pstamp may move concurrently without failing the restore.
    pub fn sstamp_restore(&self, expect: u32, restore: u32) -> bool {
        let mut cur = self.ssn.load(Ordering::SeqCst);
        loop {
            let (p, s) = unpack_ssn(cur);
            if s != expect {
                return false;
            }
            match self.ssn.compare_exchange_weak(
                cur,
                pack_ssn(p, restore),
                Ordering::SeqCst,
                Ordering::SeqCst,
            ) {
                Ok(_) => return true,
                Err(now) => cur = now,
            }
        }
    }

    pub fn is_inline(&self) -> bool {
        self.home.load(Ordering::Relaxed) != HOME_HEAP
    }

    /// Claims a free inline slot for an install. Only the claimant may
    /// `prepare` it afterwards.
    pub fn inline_claim(&self) -> bool {
        self.home
            .compare_exchange(
                HOME_INLINE_FREE,
                HOME_INLINE_BUSY,
                Ordering::Acquire,
                Ordering::Relaxed,
            )
            .is_ok()
    }

    /// Returns a claimed inline slot to the free state (install failed, or
    /// the slot finished its reclamation quarantine).
    pub fn inline_release(&self) {
        debug_assert!(self.is_inline());
        self.home.store(HOME_INLINE_FREE, Ordering::Release);
    }
}

fn pack_ssn(pstamp: u32, sstamp: u32) -> u64 {
    (sstamp as u64) << 32 | pstamp as u64
}

fn unpack_ssn(word: u64) -> (u32, u32) {
    ((word & 0xFFFF_FFFF) as u32, (word >> 32) as u32)
}
