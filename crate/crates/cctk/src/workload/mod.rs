//! YCSB-style transaction generation.
//!
//! Each worker owns one [`WorkloadGenerator`]: a Zipfian key sampler, a
//! seeded rng stream, and a single transaction template that is refilled in
//! place for every transaction, so steady-state generation allocates
//! nothing. Workloads are described by [`WorkloadConfig`], validated up
//! front rather than at draw time.

mod zipf;

pub use zipf::ZipfSampler;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Standard YCSB mixes, or `Custom` to take `read_ratio` as given.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 50% reads.
    A,
    /// 95% reads.
    B,
    /// Read-only.
    C,
    #[default]
    Custom,
}

impl Preset {
    pub fn read_ratio(self, custom: u8) -> u8 {
        match self {
            Preset::A => 50,
            Preset::B => 95,
            Preset::C => 100,
            Preset::Custom => custom,
        }
    }
}

/// The seven workload knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Zipfian theta in `[0, 1)`; 0 is uniform.
    pub skew: f64,
    /// Record payload bytes (at least 4).
    pub payload_size: usize,
    /// Operations per transaction.
    pub txn_size: usize,
    /// Number of records; keys are `0..cardinality`.
    pub cardinality: u64,
    /// Percent of operations that are reads, 0..=100. Overridden by a
    /// non-custom preset.
    pub read_ratio: u8,
    /// Issue writes as read-modify-write instead of blind writes.
    pub rmw: bool,
    /// Worker thread count.
    pub threads: usize,
    pub ycsb_preset: Preset,
    /// Give each worker a private contiguous key block (worker `w` owns
    /// `[w * cardinality/threads, (w+1) * cardinality/threads)`), with the
    /// skew applied inside the block. In-place overwrite modes require this.
    pub partitioned: bool,
}

impl Default for WorkloadConfig {
    fn default() -> WorkloadConfig {
        WorkloadConfig {
            skew: 0.0,
            payload_size: 8,
            txn_size: 10,
            cardinality: 100_000,
            read_ratio: 50,
            rmw: false,
            threads: 1,
            ycsb_preset: Preset::Custom,
            partitioned: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("skew must lie in [0, 1), got {0}")]
    Skew(String),
    #[error("payload_size must be at least 4 bytes, got {0}")]
    PayloadSize(usize),
    #[error("txn_size must be at least 1, got {0}")]
    TxnSize(usize),
    #[error("cardinality must be at least 1, got {0}")]
    Cardinality(u64),
    #[error("read_ratio must be at most 100, got {0}")]
    ReadRatio(u8),
    #[error("threads must be at least 1, got {0}")]
    Threads(usize),
    #[error("partitioned runs need at least one key per worker: cardinality {cardinality} < threads {threads}")]
    PartitionTooSmall { cardinality: u64, threads: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConfigWarning {
    /// Transactions larger than the key space necessarily repeat keys.
    TxnLargerThanKeySpace { txn_size: usize, cardinality: u64 },
    /// The key space does not divide evenly among workers; the trailing
    /// remainder keys are never generated.
    PartitionRemainder { unused: u64 },
}

impl std::fmt::Display for ConfigWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigWarning::TxnLargerThanKeySpace { txn_size, cardinality } => write!(
                f,
                "txn_size {txn_size} exceeds cardinality {cardinality}; keys will repeat within transactions"
            ),
            ConfigWarning::PartitionRemainder { unused } => write!(
                f,
                "cardinality is not a multiple of threads; the top {unused} keys are never accessed"
            ),
        }
    }
}

impl WorkloadConfig {
    /// Read percentage after preset substitution.
    pub fn effective_read_ratio(&self) -> u8 {
        self.ycsb_preset.read_ratio(self.read_ratio)
    }

    /// Checks every field; collects all violations instead of stopping at
    /// the first. `Ok` carries non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<ConfigWarning>, Vec<ConfigError>> {
        let mut errors = Vec::new();
        if !(self.skew >= 0.0 && self.skew < 1.0) {
            errors.push(ConfigError::Skew(format!("{}", self.skew)));
        }
        if self.payload_size < 4 {
            errors.push(ConfigError::PayloadSize(self.payload_size));
        }
        if self.txn_size < 1 {
            errors.push(ConfigError::TxnSize(self.txn_size));
        }
        if self.cardinality < 1 {
            errors.push(ConfigError::Cardinality(self.cardinality));
        }
        if self.read_ratio > 100 {
            errors.push(ConfigError::ReadRatio(self.read_ratio));
        }
        if self.threads < 1 {
            errors.push(ConfigError::Threads(self.threads));
        }
        if self.partitioned && self.threads >= 1 && self.cardinality < self.threads as u64 {
            errors.push(ConfigError::PartitionTooSmall {
                cardinality: self.cardinality,
                threads: self.threads,
            });
        }
        if !errors.is_empty() {
            return Err(errors);
        }
        let mut warnings = Vec::new();
        if self.txn_size as u64 > self.cardinality {
            warnings.push(ConfigWarning::TxnLargerThanKeySpace {
                txn_size: self.txn_size,
                cardinality: self.cardinality,
            });
        }
        if self.partitioned && self.cardinality % self.threads as u64 != 0 {
            warnings.push(ConfigWarning::PartitionRemainder {
                unused: self.cardinality % self.threads as u64,
            });
        }
        Ok(warnings)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Read,
    Write,
    /// Read the key, then write a value derived from it.
    Rmw,
}

impl OpKind {
    pub fn writes(self) -> bool {
        matches!(self, OpKind::Write | OpKind::Rmw)
    }

    pub fn reads(self) -> bool {
        matches!(self, OpKind::Read | OpKind::Rmw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Op {
    pub kind: OpKind,
    pub key: u64,
}

/// One transaction's operation list. Reused across transactions; also
/// retried as-is after an abort, so the conflict that caused the abort is
/// replayed rather than dodged.
#[derive(Clone, Debug, Default)]
pub struct TxnTemplate {
    pub ops: Vec<Op>,
}

impl TxnTemplate {
    pub fn reads(&self) -> impl Iterator<Item = &Op> {
        self.ops.iter().filter(|op| op.kind.reads())
    }

    pub fn writes(&self) -> impl Iterator<Item = &Op> {
        self.ops.iter().filter(|op| op.kind.writes())
    }
}

/// Per-worker transaction source: draws keys from the Zipfian sampler and
/// op kinds from the read ratio, refilling one owned template.
pub struct WorkloadGenerator {
    zipf: ZipfSampler,
    rng: ChaCha20Rng,
    template: TxnTemplate,
    txn_size: usize,
    read_ratio: u8,
    rmw: bool,
    /// Sort ops by key and merge duplicates; lock-ordered protocols
    /// (2PL-Wait) require it to stay deadlock-free.
    sort_keys: bool,
    /// First key of this worker's block (0 unless partitioned).
    base: u64,
}

impl WorkloadGenerator {
    /// Worker `worker`'s generator. Streams are decorrelated by offsetting
    /// the seed with the worker index, so a fixed `(seed, worker)` pair
    /// yields a byte-identical op stream on every run.
    pub fn new(config: &WorkloadConfig, seed: u64, worker: usize, sort_keys: bool) -> WorkloadGenerator {
        debug_assert!(config.validate().is_ok());
        let (span, base) = if config.partitioned {
            assert!(worker < config.threads);
            let block = config.cardinality / config.threads as u64;
            (block, block * worker as u64)
        } else {
            (config.cardinality, 0)
        };
        WorkloadGenerator {
            zipf: ZipfSampler::new(span, config.skew),
            rng: ChaCha20Rng::seed_from_u64(seed.wrapping_add(worker as u64)),
            template: TxnTemplate {
                ops: Vec::with_capacity(config.txn_size),
            },
            txn_size: config.txn_size,
            read_ratio: config.effective_read_ratio(),
            rmw: config.rmw,
            sort_keys,
            base,
        }
    }

    pub fn sampler(&self) -> &ZipfSampler {
        &self.zipf
    }

    /// Fills and returns the next transaction. The returned template stays
    /// valid until the next call; no allocation happens after the first
    /// transaction at a given size.
    pub fn next_txn(&mut self) -> &TxnTemplate {
        self.template.ops.clear();
        for _ in 0..self.txn_size {
            let key = self.base + self.zipf.next_key(&mut self.rng);
            let kind = if self.rng.gen_range(0..100u8) < self.read_ratio {
                OpKind::Read
            } else if self.rmw {
                OpKind::Rmw
            } else {
                OpKind::Write
            };
            self.template.ops.push(Op { kind, key });
        }
        if self.sort_keys {
            self.template.ops.sort_unstable_by_key(|op| op.key);
            self.template.ops.dedup_by(|later, kept| {
                if later.key == kept.key {
                    kept.kind = merge_kinds(kept.kind, later.kind);
                    true
                } else {
                    false
                }
            });
        }
        &self.template
    }

    /// The template most recently produced by [`next_txn`](Self::next_txn),
    /// for retrying an aborted transaction.
    pub fn current(&self) -> &TxnTemplate {
        &self.template
    }
}

/// Collapses two ops on the same key into one that preserves both the read
/// and the write intent.
fn merge_kinds(a: OpKind, b: OpKind) -> OpKind {
    match (a.reads() || b.reads(), a.writes() || b.writes()) {
        (true, true) => OpKind::Rmw,
        (false, true) => OpKind::Write,
        _ => OpKind::Read,
    }
}
