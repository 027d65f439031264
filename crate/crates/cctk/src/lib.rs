//! An in-memory transactional key-value engine built for studying concurrency
//! control under a single roof.
//!
//! Seven protocols share one storage layer, one workload generator and one
//! measurement harness, so that a difference between two runs is a difference
//! between protocols (or their optimizations), not between codebases:
//!
//! - `silo`: optimistic, epoch-based group commit ordering
//! - `tictoc`: optimistic, data-driven timestamp computation
//! - `mocc`: optimistic with pessimistic locks on hot records
//! - `mvto`: multi-version timestamp ordering with pending-version install
//! - `si`: snapshot isolation over a centralized commit counter
//! - `ermia`: snapshot isolation made serializable with commit-time SSN
//! - `twopl_wait` / `twopl_nowait`: strict two-phase locking
//!
//! The same knobs the protocols are usually compared on are first-class here:
//! invisible reads, wait/no-wait conflict handling, read-phase extension,
//! adaptive backoff, version-slot reuse, rapid and aggressive garbage
//! collection of version chains.
//!
//! Layout follows the data flow: [`storage`] owns records, version chains and
//! epochs; [`protocols`] implements the commit rules on top of it; [`lifetime`]
//! decides when versions die; [`workload`] produces deterministic operation
//! streams; [`harness`] runs them on worker threads and aggregates metrics;
//! [`oracle`] replays captured histories offline and checks serializability.

pub mod align;
pub mod capture;
pub mod harness;
pub mod lifetime;
pub mod oracle;
pub mod protocols;
pub mod storage;
pub mod workload;

pub use align::CacheAligned;
