//! Timed multi-threaded experiments: pinned workers drive a protocol with
//! retry-on-abort over generated transactions, a ticker thread advances the
//! epoch, and per-worker counters aggregate into one [`Metrics`] per run.
//!
//! Workers share nothing but the storage structures and a global commit
//! counter; every mutable hot-path quantity lives in the worker's own
//! [`TxnCtx`] and is folded in after the thread joins. Pinning maps worker
//! `i` to logical core `i` and is best-effort: a failed or impossible pin
//! (more workers than cores) is recorded in the output, never fatal. The
//! table itself is plain heap memory; no NUMA placement policy is applied.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use crate::align::CacheAligned;
use crate::capture::{write_history, Capture};
use crate::lifetime::{
    aggressive_sweep, rapid_sweep, watermark_compute, ActiveSet, Watermark,
};
use crate::protocols::{
    AbortReason, DelayEvent, DelayPolicy, Mocc, Mvto, PhaseTimers, Protocol, ProtocolKind, Si,
    Silo, TicToc, Toggles, Twopl, TxnCtx,
};
use crate::storage::{EpochManager, Table};
use crate::workload::{OpKind, TxnTemplate, WorkloadConfig, WorkloadGenerator};

/// History capture is refused above this `threads * cardinality` product;
/// bigger plans produce more log than the offline checker is meant to eat.
pub const CAPTURE_KEYSPACE_CAP: u64 = 10_000;

/// A capturing run stops once this many transactions have committed, so the
/// history file stays bounded even under a generous duration.
pub const CAPTURE_COMMIT_CAP: u64 = 100_000;

#[derive(Clone, Copy, Debug)]
pub struct LongTxn {
    pub worker: usize,
    /// Extra read-phase time injected into every transaction this worker
    /// runs.
    pub delay: Duration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcMode {
    /// Reclaim everything below the watermark, keeping one committed
    /// version per record.
    Rapid,
    /// Keep at most `k` committed versions per record, overridden by pins.
    Aggressive { k: usize },
}

/// Everything one experiment cell needs. `new` fills the conventional
/// defaults (3 s runs, 0.5 s warmup, 5 repeats, 40 ms epochs).
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub workload: WorkloadConfig,
    pub protocol: ProtocolKind,
    pub toggles: Toggles,
    pub seed: u64,
    pub duration: Duration,
    /// Ramp-up excluded from metrics.
    pub warmup: Duration,
    pub repeats: usize,
    pub epoch_interval: Duration,
    /// Per-worker version-chain sweep cadence; multi-version storage only.
    pub gc_interval: Duration,
    pub gc: GcMode,
    pub delay: DelayPolicy,
    pub long_txn: Option<LongTxn>,
    /// Record committed transactions for the offline checker. Guarded by
    /// [`CAPTURE_KEYSPACE_CAP`] and [`CAPTURE_COMMIT_CAP`].
    pub capture: bool,
    /// Stop the run once this many transactions committed, before the
    /// duration elapses. Makes single-threaded runs exactly reproducible.
    pub commit_target: Option<u64>,
}

impl RunPlan {
    pub fn new(workload: WorkloadConfig, protocol: ProtocolKind) -> RunPlan {
        RunPlan {
            workload,
            protocol,
            toggles: Toggles::default(),
            seed: 1,
            duration: Duration::from_secs(3),
            warmup: Duration::from_millis(500),
            repeats: 5,
            epoch_interval: Duration::from_millis(40),
            gc_interval: Duration::from_millis(10),
            gc: GcMode::Rapid,
            delay: DelayPolicy::None,
            long_txn: None,
            capture: false,
            commit_target: None,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let mut problems: Vec<String> = Vec::new();
        if let Err(errors) = self.workload.validate() {
            problems.extend(errors.iter().map(|e| e.to_string()));
        }
        if self.repeats == 0 {
            problems.push("repeats must be at least 1".into());
        }
        if self.duration.is_zero() {
            problems.push("duration must be positive".into());
        }
        if let GcMode::Aggressive { k } = self.gc {
            if k == 0 {
                problems.push("aggressive gc must keep at least 1 version (k >= 1)".into());
            }
        }
        if let Some(lt) = self.long_txn {
            if lt.worker >= self.workload.threads {
                problems.push(format!(
                    "long_txn worker {} does not exist ({} threads)",
                    lt.worker, self.workload.threads
                ));
            }
        }
        if self.toggles.overwrite_inline && !self.workload.partitioned {
            problems.push(
                "in-place overwrites write version slots other workers may be reading; \
                 they require a partitioned workload"
                    .into(),
            );
        }
        if self.capture {
            let footprint = self.workload.threads as u64 * self.workload.cardinality;
            if footprint > CAPTURE_KEYSPACE_CAP {
                problems.push(format!(
                    "history capture allows threads * cardinality up to {CAPTURE_KEYSPACE_CAP}, \
                     got {footprint}"
                ));
            }
            if self.workload.payload_size < 8 {
                problems.push(format!(
                    "history capture attributes writers through an 8-byte payload prefix; \
                     payload_size {} is too small",
                    self.workload.payload_size
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(RunError::Config(problems))
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid plan: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("run failed: {0}")]
    Worker(String),
}

/// Accumulated per-phase nanoseconds, in the shape the CSV wants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhaseNs {
    pub read: u64,
    pub validation: u64,
    pub write: u64,
    pub gc: u64,
    pub abort_retry: u64,
    pub backoff: u64,
}

impl PhaseNs {
    fn of(t: &PhaseTimers) -> PhaseNs {
        PhaseNs {
            read: t.read_ns,
            validation: t.validation_ns,
            write: t.write_ns,
            gc: t.gc_ns,
            abort_retry: t.abort_retry_ns,
            backoff: t.backoff_ns,
        }
    }

    fn since(self, base: PhaseNs) -> PhaseNs {
        PhaseNs {
            read: self.read - base.read,
            validation: self.validation - base.validation,
            write: self.write - base.write,
            gc: self.gc - base.gc,
            abort_retry: self.abort_retry - base.abort_retry,
            backoff: self.backoff - base.backoff,
        }
    }

    fn add(&mut self, other: PhaseNs) {
        self.read += other.read;
        self.validation += other.validation;
        self.write += other.write;
        self.gc += other.gc;
        self.abort_retry += other.abort_retry;
        self.backoff += other.backoff;
    }

    pub fn total(self) -> u64 {
        self.read + self.validation + self.write + self.gc + self.abort_retry + self.backoff
    }
}

/// One worker's contribution, kept per lane so long-transaction effects
/// stay attributable.
#[derive(Clone, Copy, Debug, Default)]
pub struct LaneStats {
    pub commits: u64,
    pub aborts: u64,
    pub attempts: u64,
    /// Wall time from first attempt to commit, summed over committed
    /// transactions (retries and backoff included).
    pub txn_latency_ns: u64,
    pub pinned: bool,
}

impl LaneStats {
    pub fn mean_latency(&self) -> Duration {
        if self.commits == 0 {
            Duration::ZERO
        } else {
            Duration::from_nanos(self.txn_latency_ns / self.commits)
        }
    }
}

/// One repeat's totals across all workers.
#[derive(Clone, Debug, Default)]
pub struct Metrics {
    pub commits: u64,
    pub aborts: u64,
    pub attempts: u64,
    /// Indexed parallel to [`AbortReason::ALL`].
    pub aborts_by_reason: [u64; AbortReason::ALL.len()],
    pub phase: PhaseNs,
    pub extra_reads: u64,
    pub shared_store_in_read: u64,
    /// Largest live-version gauge any worker observed at a sweep.
    pub live_versions_max: u64,
    /// Longest surviving chain (committed plus pending versions) any
    /// sweep left behind.
    pub max_chain_versions: usize,
    /// Measured wall time of the metered window (the longest lane).
    pub duration: Duration,
    /// Every worker ran on its own core.
    pub pinned: bool,
    pub lanes: Vec<LaneStats>,
}

impl Metrics {
    pub fn throughput(&self) -> f64 {
        let secs = self.duration.as_secs_f64();
        if secs == 0.0 {
            0.0
        } else {
            self.commits as f64 / secs
        }
    }

    pub fn abort_ratio(&self) -> f64 {
        let total = self.commits + self.aborts;
        if total == 0 {
            0.0
        } else {
            self.aborts as f64 / total as f64
        }
    }

    pub fn aborts_for(&self, reason: AbortReason) -> u64 {
        self.aborts_by_reason[reason_slot(reason)]
    }

    pub fn abort_breakdown(&self) -> impl Iterator<Item = (&'static str, u64)> + '_ {
        AbortReason::ALL
            .into_iter()
            .zip(self.aborts_by_reason)
            .map(|(r, n)| (r.name(), n))
    }
}

fn reason_slot(reason: AbortReason) -> usize {
    AbortReason::ALL
        .iter()
        .position(|&r| r == reason)
        .expect("reason is in ALL")
}

/// All repeats of one cell.
#[derive(Clone, Debug, Default)]
pub struct ExperimentResult {
    pub samples: Vec<Metrics>,
    /// One rendered history per repeat when capture was on.
    pub histories: Vec<String>,
}

impl ExperimentResult {
    pub fn mean_throughput(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(Metrics::throughput).sum::<f64>() / self.samples.len() as f64
    }

    pub fn min_throughput(&self) -> f64 {
        self.samples.iter().map(Metrics::throughput).fold(f64::INFINITY, f64::min)
    }

    pub fn max_throughput(&self) -> f64 {
        self.samples.iter().map(Metrics::throughput).fold(0.0, f64::max)
    }
}

/// Normalized phase shares for the breakdown figure. Shares sum to 1 within
/// 1e-9, except when every timer was zero: then `no_data` is set and the
/// shares are all zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LatencyBreakdown {
    pub read: f64,
    pub validation: f64,
    pub write: f64,
    pub gc: f64,
    pub abort_retry: f64,
    pub backoff: f64,
    pub no_data: bool,
}

pub fn latency_breakdown(phase: PhaseNs) -> LatencyBreakdown {
    let total = phase.total();
    if total == 0 {
        return LatencyBreakdown { no_data: true, ..LatencyBreakdown::default() };
    }
    let share = |ns: u64| ns as f64 / total as f64;
    LatencyBreakdown {
        read: share(phase.read),
        validation: share(phase.validation),
        write: share(phase.write),
        gc: share(phase.gc),
        abort_retry: share(phase.abort_retry),
        backoff: share(phase.backoff),
        no_data: false,
    }
}

pub fn run_experiment(plan: &RunPlan) -> Result<ExperimentResult, RunError> {
    plan.validate()?;
    let mut result = ExperimentResult::default();
    for _ in 0..plan.repeats {
        let (metrics, history) = run_once(plan)?;
        result.samples.push(metrics);
        result.histories.extend(history);
    }
    Ok(result)
}

struct Shared {
    plan: RunPlan,
    commit_cap: u64,
    table: Arc<Table>,
    epochs: Arc<EpochManager>,
    active: Arc<ActiveSet>,
    watermark: Arc<Watermark>,
    protocol: Arc<dyn Protocol>,
    start: Barrier,
    stop: AtomicBool,
    commits: CacheAligned<AtomicU64>,
}

fn build_protocol(
    plan: &RunPlan,
    table: &Arc<Table>,
    epochs: &Arc<EpochManager>,
    active: &Arc<ActiveSet>,
    watermark: &Arc<Watermark>,
    capture: Option<Arc<Capture>>,
) -> Arc<dyn Protocol> {
    let t = Arc::clone(table);
    let e = Arc::clone(epochs);
    match plan.protocol {
        ProtocolKind::Silo => Arc::new(Silo::new(t, e, plan.toggles, capture)),
        ProtocolKind::TicToc => {
            Arc::new(TicToc::new(t, plan.toggles, plan.delay.no_wait_tt(), capture))
        }
        ProtocolKind::Mocc => Arc::new(Mocc::new(t, e, capture)),
        ProtocolKind::TwoplWait => Arc::new(Twopl::new(t, false, capture)),
        ProtocolKind::TwoplNoWait => Arc::new(Twopl::new(t, true, capture)),
        ProtocolKind::Si => Arc::new(Si::new(t, e, Arc::clone(active), false, capture)),
        ProtocolKind::Ermia => Arc::new(Si::new(t, e, Arc::clone(active), true, capture)),
        ProtocolKind::Mvto => Arc::new(Mvto::new(
            t,
            e,
            plan.toggles,
            Arc::clone(active),
            Arc::clone(watermark),
            capture,
        )),
    }
}

fn run_once(plan: &RunPlan) -> Result<(Metrics, Option<String>), RunError> {
    let w = &plan.workload;
    let threads = w.threads;
    let table = Arc::new(Table::build(
        w.cardinality,
        w.payload_size,
        plan.protocol.storage_kind(plan.toggles),
        plan.capture,
    ));
    let epochs = Arc::new(EpochManager::new(threads, plan.epoch_interval));
    let active = Arc::new(ActiveSet::new(threads));
    let watermark = Arc::new(Watermark::default());
    let capture = plan.capture.then(|| Arc::new(Capture::new(threads)));
    let protocol = build_protocol(plan, &table, &epochs, &active, &watermark, capture.clone());
    let commit_cap = plan
        .commit_target
        .unwrap_or(u64::MAX)
        .min(if plan.capture { CAPTURE_COMMIT_CAP } else { u64::MAX });

    let shared = Arc::new(Shared {
        plan: plan.clone(),
        commit_cap,
        table,
        epochs,
        active,
        watermark,
        protocol,
        start: Barrier::new(threads),
        stop: AtomicBool::new(false),
        commits: CacheAligned::new(AtomicU64::new(0)),
    });

    let ticker = {
        let sh = Arc::clone(&shared);
        thread::Builder::new()
            .name("epoch-ticker".into())
            .spawn(move || {
                let tick = Duration::from_micros(200).min(sh.epochs.interval());
                let mut next = Instant::now() + sh.epochs.interval();
                while !sh.stop.load(Ordering::Relaxed) {
                    if Instant::now() >= next && sh.epochs.try_advance().is_some() {
                        next = Instant::now() + sh.epochs.interval();
                    }
                    thread::sleep(tick);
                }
            })
            .expect("spawn epoch ticker")
    };

    let handles: Vec<_> = (0..threads)
        .map(|i| {
            let sh = Arc::clone(&shared);
            thread::Builder::new()
                .name(format!("worker-{i}"))
                .spawn(move || worker_loop(&sh, i))
                .expect("spawn worker")
        })
        .collect();

    let mut reports = Vec::with_capacity(threads);
    let mut panic_msg: Option<String> = None;
    for handle in handles {
        match handle.join() {
            Ok(report) => reports.push(report),
            Err(payload) => {
                shared.stop.store(true, Ordering::Relaxed);
                panic_msg.get_or_insert(panic_text(payload));
            }
        }
    }
    shared.stop.store(true, Ordering::Relaxed);
    let _ = ticker.join();
    if let Some(msg) = panic_msg {
        return Err(RunError::Worker(msg));
    }

    let mut metrics = Metrics { pinned: true, ..Metrics::default() };
    for report in &reports {
        let lane = report.lane;
        assert_eq!(
            lane.commits + lane.aborts,
            lane.attempts,
            "worker accounting must balance"
        );
        metrics.commits += lane.commits;
        metrics.aborts += lane.aborts;
        metrics.attempts += lane.attempts;
        for (slot, n) in report.by_reason.iter().enumerate() {
            metrics.aborts_by_reason[slot] += n;
        }
        metrics.phase.add(report.phase);
        metrics.extra_reads += report.extra_reads;
        metrics.shared_store_in_read += report.shared_store_in_read;
        metrics.live_versions_max = metrics.live_versions_max.max(report.live_max);
        metrics.max_chain_versions = metrics.max_chain_versions.max(report.chain_max);
        metrics.duration = metrics.duration.max(report.duration);
        metrics.pinned &= lane.pinned;
        metrics.lanes.push(lane);
    }

    let history = capture.map(|cap| {
        let mut buf = Vec::new();
        write_history(&cap.drain_sorted(), &mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("history lines are ascii")
    });
    Ok((metrics, history))
}

struct WorkerReport {
    lane: LaneStats,
    by_reason: [u64; AbortReason::ALL.len()],
    phase: PhaseNs,
    extra_reads: u64,
    shared_store_in_read: u64,
    live_max: u64,
    chain_max: usize,
    duration: Duration,
}

fn worker_loop(shared: &Shared, w: usize) -> WorkerReport {
    let plan = &shared.plan;
    let threads = plan.workload.threads;
    let multi_version = shared.table.multi_version();
    let pinned = w < cores() && pin_to_core(w);

    let mut ctx = TxnCtx::new(w, plan.workload.payload_size, plan.workload.txn_size);
    if multi_version {
        ctx.cache.prewarm(&shared.table, 64 + 2 * plan.workload.txn_size);
    }
    let mut generator = WorkloadGenerator::new(
        &plan.workload,
        plan.seed,
        w,
        plan.protocol.wants_sorted_templates(),
    );
    let mut delay = plan.delay.clone();
    let long_delay = plan
        .long_txn
        .filter(|lt| lt.worker == w)
        .map_or(Duration::ZERO, |lt| lt.delay);
    let mut template = TxnTemplate::default();
    let mut pins: Vec<u64> = Vec::new();

    let mut lane = LaneStats { pinned, ..LaneStats::default() };
    let mut by_reason = [0u64; AbortReason::ALL.len()];
    let mut live_max = 0u64;
    let mut chain_max = 0usize;
    let mut base = PhaseNs::default();
    let mut base_extra = (0u64, 0u64);

    shared.start.wait();
    let t0 = Instant::now();
    let warmup_end = t0 + plan.warmup;
    let deadline = warmup_end + plan.duration;
    let mut measuring = plan.warmup.is_zero();
    let mut measure_start = t0;
    let mut last_gc = t0;

    loop {
        let now = Instant::now();
        if !measuring && now >= warmup_end {
            measuring = true;
            measure_start = now;
            lane = LaneStats { pinned, ..LaneStats::default() };
            by_reason = [0; AbortReason::ALL.len()];
            live_max = 0;
            chain_max = 0;
            base = PhaseNs::of(&ctx.timers);
            base_extra = (ctx.extra_reads, ctx.shared_store_in_read);
        }
        if now >= deadline
            || shared.stop.load(Ordering::Relaxed)
            || shared.commits.load(Ordering::Relaxed) >= shared.commit_cap
        {
            break;
        }

        shared.epochs.publish(w);

        if multi_version && now.duration_since(last_gc) >= plan.gc_interval {
            last_gc = now;
            let gc_start = Instant::now();
            let wm = watermark_compute(&shared.active, &shared.table, &shared.watermark);
            let stats = match plan.gc {
                GcMode::Rapid => {
                    rapid_sweep(&shared.table, wm, w, threads, &mut ctx.cache, &shared.epochs)
                }
                GcMode::Aggressive { k } => {
                    shared.active.pinned_stamps(&mut pins);
                    aggressive_sweep(
                        &shared.table,
                        wm,
                        k,
                        &pins,
                        w,
                        threads,
                        &mut ctx.cache,
                        &shared.epochs,
                    )
                }
            };
            ctx.timers.note_gc(gc_start.elapsed());
            live_max = live_max.max(shared.table.counters().live());
            chain_max = chain_max.max(stats.max_chain_versions);
        }

        template.clone_from(generator.next_txn());
        let txn_start = Instant::now();
        loop {
            lane.attempts += 1;
            shared.protocol.begin(&mut ctx);
            let mut extension = delay.next(DelayEvent::ReadPhaseEnd);
            extension += long_delay;
            match run_attempt(&*shared.protocol, &mut ctx, &template, extension) {
                Ok(()) => {
                    lane.commits += 1;
                    lane.txn_latency_ns += txn_start.elapsed().as_nanos() as u64;
                    delay.observe(true);
                    shared.commits.fetch_add(1, Ordering::Relaxed);
                    break;
                }
                Err(reason) => {
                    ctx.abort_reason = Some(reason);
                    shared.protocol.abort(&mut ctx);
                    lane.aborts += 1;
                    by_reason[reason_slot(reason)] += 1;
                    delay.observe(false);
                    let wait = delay.next(DelayEvent::AbortRetry);
                    if !wait.is_zero() {
                        let b = Instant::now();
                        thread::sleep(wait);
                        ctx.timers.note_backoff(b.elapsed());
                    }
                    if Instant::now() >= deadline || shared.stop.load(Ordering::Relaxed) {
                        break;
                    }
                }
            }
        }
    }

    if ctx.pinned {
        shared.active.unpin(w);
        ctx.pinned = false;
    }

    WorkerReport {
        lane,
        by_reason,
        phase: PhaseNs::of(&ctx.timers).since(base),
        extra_reads: ctx.extra_reads - base_extra.0,
        shared_store_in_read: ctx.shared_store_in_read - base_extra.1,
        live_max,
        chain_max,
        duration: measure_start.elapsed(),
    }
}

/// Protocols time their own validation and write phases inside `commit`;
/// the execution phase (reads, local writes, any injected extension) is
/// timed here, once per attempt.
fn run_attempt(
    protocol: &dyn Protocol,
    ctx: &mut TxnCtx,
    template: &TxnTemplate,
    read_extension: Duration,
) -> Result<(), AbortReason> {
    let read_start = Instant::now();
    let executed = execute_ops(protocol, ctx, template);
    if executed.is_ok() && !read_extension.is_zero() {
        thread::sleep(read_extension);
    }
    ctx.timers.note_read(read_start.elapsed());
    executed?;
    protocol.commit(ctx)
}

fn execute_ops(
    protocol: &dyn Protocol,
    ctx: &mut TxnCtx,
    template: &TxnTemplate,
) -> Result<(), AbortReason> {
    for op in &template.ops {
        match op.kind {
            OpKind::Read => protocol.read(ctx, op.key, false)?,
            OpKind::Write => protocol.write(ctx, op.key)?,
            OpKind::Rmw => {
                protocol.read(ctx, op.key, true)?;
                protocol.write(ctx, op.key)?;
            }
        }
    }
    Ok(())
}

fn panic_text(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".into()
    }
}

fn cores() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

#[cfg(target_os = "linux")]
fn pin_to_core(core: usize) -> bool {
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_ZERO(&mut set);
        libc::CPU_SET(core, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) == 0
    }
}

#[cfg(not(target_os = "linux"))]
fn pin_to_core(_core: usize) -> bool {
    false
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CounterLayout {
    /// Every thread hammers one shared counter.
    Shared,
    /// Each thread owns a padded counter; no cross-thread traffic.
    PerThread,
}

#[derive(Clone, Debug)]
pub struct FetchAddRun {
    pub layout: CounterLayout,
    pub per_thread: Vec<u64>,
    pub duration: Duration,
}

impl FetchAddRun {
    pub fn total(&self) -> u64 {
        self.per_thread.iter().sum()
    }

    pub fn throughput(&self) -> f64 {
        let secs = self.duration.as_secs_f64();
        if secs == 0.0 {
            0.0
        } else {
            self.total() as f64 / secs
        }
    }
}

/// Atomic-increment microbenchmark. Threads batch 1024 increments between
/// deadline checks so the clock read stays off the hot path.
pub fn fetch_add_bench(threads: usize, duration: Duration, layout: CounterLayout) -> FetchAddRun {
    assert!(threads >= 1);
    let slots: Arc<Vec<CacheAligned<AtomicU64>>> = Arc::new(
        (0..match layout {
            CounterLayout::Shared => 1,
            CounterLayout::PerThread => threads,
        })
            .map(|_| CacheAligned::new(AtomicU64::new(0)))
            .collect(),
    );
    let barrier = Arc::new(Barrier::new(threads));
    let available = cores();

    let handles: Vec<_> = (0..threads)
        .map(|i| {
            let slots = Arc::clone(&slots);
            let barrier = Arc::clone(&barrier);
            thread::spawn(move || {
                if i < available {
                    pin_to_core(i);
                }
                let slot = match layout {
                    CounterLayout::Shared => &slots[0],
                    CounterLayout::PerThread => &slots[i],
                };
                barrier.wait();
                let start = Instant::now();
                let deadline = start + duration;
                let mut local = 0u64;
                loop {
                    for _ in 0..1024 {
                        slot.fetch_add(1, Ordering::Relaxed);
                    }
                    local += 1024;
                    if Instant::now() >= deadline {
                        break;
                    }
                }
                (local, start.elapsed())
            })
        })
        .collect();

    let mut per_thread = vec![0u64; threads];
    let mut measured = Duration::ZERO;
    for (i, handle) in handles.into_iter().enumerate() {
        let (count, elapsed) = handle.join().expect("fetch_add thread");
        per_thread[i] = count;
        measured = measured.max(elapsed);
    }
    let total: u64 = per_thread.iter().sum();
    let installed: u64 = slots.iter().map(|s| s.load(Ordering::Relaxed)).sum();
    assert_eq!(total, installed, "every increment lands");
    FetchAddRun { layout, per_thread, duration: measured }
}
