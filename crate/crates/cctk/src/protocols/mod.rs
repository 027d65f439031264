//! The seven concurrency-control protocols behind one interface.
//!
//! A protocol object is immutable shared configuration (table, epoch
//! manager, toggles, capture sink); all mutable transaction state lives in
//! the caller's [`TxnCtx`]. The contract with the driver:
//!
//! - `begin`, then any sequence of `read`/`write`, then `commit`.
//! - Any `Err` from `read`/`write`/`commit` means the attempt is dead: set
//!   `ctx.abort_reason` and call `abort`, which releases whatever the
//!   attempt still holds (locks, retained locks, pending versions) and
//!   settles accounting. Protocols that fail midway through commit release
//!   commit-internal locks themselves before returning.
//! - A committed attempt is finalized inside `commit` (status, capture).
//!
//! Read-own-writes is uniform: a read of a key in the write set returns the
//! buffered value and appends nothing to the read set.

mod ctx;
mod delay;
mod mocc;
mod mvto;
mod si;
mod silo;
mod tictoc;
mod twopl;

pub use ctx::{LockMode, Observed, PhaseTimers, ReadEntry, TxnCtx, WriteEntry};
pub use delay::{AdaptiveBackoff, DelayEvent, DelayPolicy};
pub use mocc::{Mocc, HOT_THRESHOLD};
pub use mvto::{Mvto, STARVATION_RETRIES};
pub use si::Si;
pub use silo::Silo;
pub use tictoc::TicToc;
pub use twopl::Twopl;

use crate::storage::StorageKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxnStatus {
    InFlight,
    Committed,
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AbortReason {
    ReadValidation,
    WriteLockConflict,
    WwConflict,
    SsnExclusion,
    MvtoReadFail,
    GcReadFail,
    DeadlockAvoidance,
}

impl AbortReason {
    pub const ALL: [AbortReason; 7] = [
        AbortReason::ReadValidation,
        AbortReason::WriteLockConflict,
        AbortReason::WwConflict,
        AbortReason::SsnExclusion,
        AbortReason::MvtoReadFail,
        AbortReason::GcReadFail,
        AbortReason::DeadlockAvoidance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AbortReason::ReadValidation => "read_validation",
            AbortReason::WriteLockConflict => "write_lock_conflict",
            AbortReason::WwConflict => "ww_conflict",
            AbortReason::SsnExclusion => "ssn_exclusion",
            AbortReason::MvtoReadFail => "mvto_read_fail",
            AbortReason::GcReadFail => "gc_read_fail",
            AbortReason::DeadlockAvoidance => "deadlock_avoidance",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProtocolKind {
    Silo,
    TicToc,
    Mocc,
    TwoplWait,
    TwoplNoWait,
    Si,
    Ermia,
    Mvto,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 8] = [
        ProtocolKind::Silo,
        ProtocolKind::TicToc,
        ProtocolKind::Mocc,
        ProtocolKind::TwoplWait,
        ProtocolKind::TwoplNoWait,
        ProtocolKind::Si,
        ProtocolKind::Ermia,
        ProtocolKind::Mvto,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Silo => "silo",
            ProtocolKind::TicToc => "tictoc",
            ProtocolKind::Mocc => "mocc",
            ProtocolKind::TwoplWait => "2pl-wait",
            ProtocolKind::TwoplNoWait => "2pl-nowait",
            ProtocolKind::Si => "si",
            ProtocolKind::Ermia => "ermia",
            ProtocolKind::Mvto => "mvto",
        }
    }

    pub fn parse(s: &str) -> Option<ProtocolKind> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn description(self) -> &'static str {
        match self {
            ProtocolKind::Silo => "epoch OCC: invisible reads, commit-time read validation",
            ProtocolKind::TicToc => "timestamp OCC: per-record (wts, rts), commit_ts derivation",
            ProtocolKind::Mocc => "Silo plus retained pessimistic locks on hot records",
            ProtocolKind::TwoplWait => "two-phase locking, blocking conflicts, sorted access",
            ProtocolKind::TwoplNoWait => "two-phase locking, conflicts abort immediately",
            ProtocolKind::Si => "snapshot isolation over version chains (not serializable)",
            ProtocolKind::Ermia => "snapshot isolation certified by the serial safety net",
            ProtocolKind::Mvto => "multi-version timestamp ordering, distributed clocks",
        }
    }

    pub fn multi_version(self) -> bool {
        matches!(self, ProtocolKind::Si | ProtocolKind::Ermia | ProtocolKind::Mvto)
    }

    pub fn storage_kind(self, toggles: Toggles) -> StorageKind {
        if self.multi_version() {
            StorageKind::Multi {
                inline: toggles.overwrite_inline,
            }
        } else {
            StorageKind::Single
        }
    }

    /// Whether generated templates must be key-sorted and de-duplicated
    /// (the deadlock-freedom precondition for blocking lock acquisition).
    pub fn wants_sorted_templates(self) -> bool {
        self == ProtocolKind::TwoplWait
    }
}

/// Optimization switches. Each applies to the protocols noted; the rest
/// ignore it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Toggles {
    /// Silo: try-lock the write set, abort on conflict.
    pub no_wait: bool,
    /// TicToc: abort before write locking when a read is provably dead.
    pub preemptive_abort: bool,
    /// TicToc: on lock conflict, release all write locks, wait a fixed
    /// duration, retry validation instead of aborting.
    pub no_wait_tt: bool,
    /// TicToc: per-record ring of (old wts, overwrite ts) pairs consulted
    /// when a read's wts moved.
    pub timestamp_history: bool,
    /// MVTO: re-verify read visibility before installing.
    pub precheck: bool,
    /// MVTO: stop at the first stale read during the precheck.
    pub early_abort: bool,
    /// MVTO: install writes in descending recent-conflict order.
    pub contention_sort: bool,
    /// MVTO: elide blind writes already superseded (non-visible writes).
    pub thomas_write: bool,
    /// MVTO: update the record-inline version slot in place; requires a
    /// partitioned workload.
    pub overwrite_inline: bool,
}

impl Toggles {
    pub const NAMES: [&'static str; 9] = [
        "nowait",
        "preempt",
        "nowait-tt",
        "history",
        "precheck",
        "early-abort",
        "contention-sort",
        "nwr",
        "inline",
    ];

    fn flags(&self) -> [bool; 9] {
        [
            self.no_wait,
            self.preemptive_abort,
            self.no_wait_tt,
            self.timestamp_history,
            self.precheck,
            self.early_abort,
            self.contention_sort,
            self.thomas_write,
            self.overwrite_inline,
        ]
    }

    pub fn set(&mut self, name: &str, value: bool) -> bool {
        let slot = match name {
            "nowait" => &mut self.no_wait,
            "preempt" => &mut self.preemptive_abort,
            "nowait-tt" => &mut self.no_wait_tt,
            "history" => &mut self.timestamp_history,
            "precheck" => &mut self.precheck,
            "early-abort" => &mut self.early_abort,
            "contention-sort" => &mut self.contention_sort,
            "nwr" => &mut self.thomas_write,
            "inline" => &mut self.overwrite_inline,
            _ => return false,
        };
        *slot = value;
        true
    }

    /// Compact label for result rows: `none` or `+name` per active toggle.
    pub fn label(&self) -> String {
        let mut out = String::new();
        for (name, on) in Self::NAMES.iter().zip(self.flags()) {
            if on {
                out.push('+');
                out.push_str(name);
            }
        }
        if out.is_empty() {
            out.push_str("none");
        }
        out
    }
}

/// The uniform transaction interface.
pub trait Protocol: Send + Sync + 'static {
    fn begin(&self, ctx: &mut TxnCtx);
    fn read(&self, ctx: &mut TxnCtx, key: u64, for_update: bool) -> Result<(), AbortReason>;
    fn write(&self, ctx: &mut TxnCtx, key: u64) -> Result<(), AbortReason>;
    fn commit(&self, ctx: &mut TxnCtx) -> Result<(), AbortReason>;
    fn abort(&self, ctx: &mut TxnCtx);
}
