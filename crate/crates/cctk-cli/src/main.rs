//! `cctk`: run concurrency-control experiments, sweep parameter grids,
//! check captured histories, and microbenchmark counter layouts.
//!
//! Exit codes: 0 ok, 1 configuration error, 2 oracle violation, 3 run
//! failure. The `CCTK_SEED` environment variable overrides the rng seed of
//! any run or sweep.

mod report;
mod spec;

use anyhow::{anyhow, bail, Context, Result};
use cctk::harness::{fetch_add_bench, run_experiment, CounterLayout, RunError};
use cctk::oracle::{check_serializable, check_snapshot_reads, dsg_build, parse_history, Verdict};
use cctk::protocols::{ProtocolKind, Toggles};
use cctk::workload::Preset;
use clap::{Args, Parser, Subcommand};
use report::{cell_rows, failed_row, render_csv, render_json, Row};
use spec::{expand, parse_raw, DelaySpec, GcSpec, LongTxnSpec, OutFormat, Spec};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;
use std::{env, fs};

const OK: u8 = 0;
const CONFIG: u8 = 1;
const VIOLATION: u8 = 2;
const FAILURE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "cctk", version, about = "Concurrency control experiments over one engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Execute one experiment cell and emit its result rows
    Run(RunArgs),
    /// Expand sweep axes and execute every cell sequentially
    Sweep(SweepArgs),
    /// Verify a captured history file (serializability, snapshot reads)
    OracleCheck(OracleArgs),
    /// Atomic counter contention microbenchmark
    BenchFetchAdd(FetchAddArgs),
    /// List protocols and optimization toggles
    ListProtocols,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON spec file; flags below override its fields
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Write the captured history here (implies --capture true)
    #[arg(long)]
    history_out: Option<PathBuf>,
    /// Print the fully-resolved spec instead of running
    #[arg(long)]
    print_spec: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// JSON spec file with sweep axes
    #[arg(long)]
    spec: PathBuf,
    /// Print the fully-resolved spec instead of running
    #[arg(long)]
    print_spec: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// History file produced by a capture run
    history: PathBuf,
}

#[derive(Args, Debug)]
struct FetchAddArgs {
    /// Worker count (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 200)]
    duration_ms: u64,
    /// `shared` or `per-thread`
    #[arg(long, default_value = "shared")]
    layout: String,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Protocol name (see list-protocols)
    #[arg(long)]
    protocol: Option<String>,
    /// Comma-separated toggle names; `none` clears the set
    #[arg(long)]
    toggles: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    skew: Option<f64>,
    #[arg(long)]
    cardinality: Option<u64>,
    #[arg(long)]
    payload_size: Option<usize>,
    #[arg(long)]
    txn_size: Option<usize>,
    #[arg(long)]
    read_ratio: Option<u8>,
    #[arg(long)]
    rmw: Option<bool>,
    /// YCSB preset: a, b, c or custom
    #[arg(long)]
    ycsb: Option<String>,
    #[arg(long)]
    partitioned: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration_ms: Option<u64>,
    #[arg(long)]
    warmup_ms: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    epoch_ms: Option<u64>,
    #[arg(long)]
    gc_interval_ms: Option<u64>,
    /// `rapid` or `aggressive:K`
    #[arg(long)]
    gc: Option<String>,
    /// Fixed read-phase extension in microseconds
    #[arg(long)]
    read_extension_us: Option<u64>,
    /// Adaptive abort backoff as `MIN_US:MAX_US:FACTOR`
    #[arg(long)]
    backoff: Option<String>,
    /// TicToc NoWaitTT retry wait in microseconds
    #[arg(long)]
    nowait_tt_us: Option<u64>,
    /// Long transaction as `WORKER:DELAY_MS`
    #[arg(long)]
    long_txn: Option<String>,
    #[arg(long)]
    capture: Option<bool>,
    #[arg(long)]
    commit_target: Option<u64>,
    /// Write rows to this file instead of stdout
    #[arg(long)]
    output: Option<String>,
    /// Row format: csv or json
    #[arg(long)]
    format: Option<String>,
}

impl Overrides {
    fn apply(&self, spec: &mut Spec) -> Result<()> {
        if let Some(p) = &self.protocol {
            spec.protocol = p.clone();
        }
        if let Some(t) = &self.toggles {
            spec.toggles = if t == "none" {
                Vec::new()
            } else {
                t.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            };
        }
        if let Some(v) = self.threads {
            spec.workload.threads = v;
        }
        if let Some(v) = self.skew {
            spec.workload.skew = v;
        }
        if let Some(v) = self.cardinality {
            spec.workload.cardinality = v;
        }
        if let Some(v) = self.payload_size {
            spec.workload.payload_size = v;
        }
        if let Some(v) = self.txn_size {
            spec.workload.txn_size = v;
        }
        if let Some(v) = self.read_ratio {
            spec.workload.read_ratio = v;
        }
        if let Some(v) = self.rmw {
            spec.workload.rmw = v;
        }
        if let Some(name) = &self.ycsb {
            spec.workload.ycsb_preset = match name.as_str() {
                "a" => Preset::A,
                "b" => Preset::B,
                "c" => Preset::C,
                "custom" => Preset::Custom,
                other => bail!("unknown YCSB preset `{other}`; supported: a, b, c, custom"),
            };
        }
        if let Some(v) = self.partitioned {
            spec.workload.partitioned = v;
        }
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        if let Some(v) = self.duration_ms {
            spec.duration_ms = v;
        }
        if let Some(v) = self.warmup_ms {
            spec.warmup_ms = v;
        }
        if let Some(v) = self.repeats {
            spec.repeats = v;
        }
        if let Some(v) = self.epoch_ms {
            spec.epoch_ms = v;
        }
        if let Some(v) = self.gc_interval_ms {
            spec.gc_interval_ms = v;
        }
        if let Some(g) = &self.gc {
            spec.gc = parse_gc(g)?;
        }
        let delays = [
            self.read_extension_us.is_some(),
            self.backoff.is_some(),
            self.nowait_tt_us.is_some(),
        ];
        if delays.iter().filter(|&&d| d).count() > 1 {
            bail!("--read-extension-us, --backoff and --nowait-tt-us are mutually exclusive");
        }
        if let Some(us) = self.read_extension_us {
            spec.delay = DelaySpec::ReadPhaseExtension { micros: us };
        }
        if let Some(b) = &self.backoff {
            spec.delay = parse_backoff(b)?;
        }
        if let Some(us) = self.nowait_tt_us {
            spec.delay = DelaySpec::NoWaitTt { micros: us };
        }
        if let Some(lt) = &self.long_txn {
            spec.long_txn = Some(parse_long_txn(lt)?);
        }
        if let Some(v) = self.capture {
            spec.capture = v;
        }
        if let Some(v) = self.commit_target {
            spec.commit_target = Some(v);
        }
        if let Some(path) = &self.output {
            spec.output.path = Some(path.clone());
        }
        if let Some(f) = &self.format {
            spec.output.format = OutFormat::parse(f)?;
        }
        Ok(())
    }
}

fn parse_gc(s: &str) -> Result<GcSpec> {
    if s == "rapid" {
        return Ok(GcSpec::Rapid);
    }
    if let Some(k) = s.strip_prefix("aggressive:") {
        let k: usize = k
            .parse()
            .map_err(|_| anyhow!("aggressive gc needs a numeric budget, got `{k}`"))?;
        return Ok(GcSpec::Aggressive { k });
    }
    bail!("unknown gc mode `{s}`; expected `rapid` or `aggressive:K`");
}

fn parse_backoff(s: &str) -> Result<DelaySpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let [min, max, factor] = parts.as_slice() else {
        bail!("--backoff expects MIN_US:MAX_US:FACTOR, got `{s}`");
    };
    Ok(DelaySpec::AdaptiveBackoff {
        min_micros: min.parse().context("backoff MIN_US")?,
        max_micros: max.parse().context("backoff MAX_US")?,
        factor: factor.parse().context("backoff FACTOR")?,
    })
}

fn parse_long_txn(s: &str) -> Result<LongTxnSpec> {
    let (worker, delay) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("--long-txn expects WORKER:DELAY_MS, got `{s}`"))?;
    Ok(LongTxnSpec {
        worker: worker.parse().context("long-txn WORKER")?,
        delay_ms: delay.parse().context("long-txn DELAY_MS")?,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { CONFIG } else { OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(CONFIG)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::OracleCheck(args) => cmd_oracle_check(&args.history),
        Cmd::BenchFetchAdd(args) => cmd_fetch_add(&args),
        Cmd::ListProtocols => cmd_list_protocols(),
    }
}

fn load_spec(path: Option<&Path>) -> Result<Spec> {
    match path {
        None => Ok(Spec::default()),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_raw(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

/// `CCTK_SEED` overrides the seed outright, including any seed sweep axis.
fn apply_seed_env(spec: &mut Spec) -> Result<()> {
    let Ok(raw) = env::var("CCTK_SEED") else {
        return Ok(());
    };
    let seed: u64 = raw
        .trim()
        .parse()
        .map_err(|_| anyhow!("CCTK_SEED must be an unsigned integer, got `{raw}`"))?;
    spec.seed = seed;
    if spec.sweep.iter().any(|a| a.param == "seed") {
        eprintln!("CCTK_SEED={seed} overrides the seed sweep axis");
        spec.sweep.retain(|a| a.param != "seed");
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<u8> {
    let mut spec = load_spec(args.spec.as_deref())?;
    args.overrides.apply(&mut spec)?;
    if args.history_out.is_some() {
        spec.capture = true;
    }
    apply_seed_env(&mut spec)?;
    let spec = spec.resolved()?;
    if !spec.sweep.is_empty() {
        bail!("spec has sweep axes; use `cctk sweep`");
    }
    if args.print_spec {
        println!("{}", spec.emit());
        return Ok(OK);
    }
    let plan = spec.plan()?;
    match run_experiment(&plan) {
        Ok(result) => {
            write_rows(&spec, &cell_rows(&spec, &result.samples))?;
            if let Some(path) = &args.history_out {
                write_histories(path, &result.histories)?;
            }
            Ok(OK)
        }
        Err(err @ RunError::Config(_)) => Err(err.into()),
        Err(err @ RunError::Worker(_)) => {
            eprintln!("{err}");
            write_rows(&spec, &[failed_row(&spec)])?;
            Ok(FAILURE)
        }
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<u8> {
    let mut spec = load_spec(Some(&args.spec))?;
    args.overrides.apply(&mut spec)?;
    apply_seed_env(&mut spec)?;
    let spec = spec.resolved()?;
    if args.print_spec {
        println!("{}", spec.emit());
        return Ok(OK);
    }
    let cells = expand(&spec)?;
    eprintln!("sweep: {} cells, {} repeats each", cells.len(), spec.repeats);
    let mut rows: Vec<Row> = Vec::new();
    let mut failed = 0usize;
    for (i, cell) in cells.iter().enumerate() {
        let outcome = cell
            .plan()
            .map_err(|e| e.to_string())
            .and_then(|plan| run_experiment(&plan).map_err(|e| e.to_string()));
        match outcome {
            Ok(result) => rows.extend(cell_rows(cell, &result.samples)),
            Err(msg) => {
                eprintln!(
                    "cell {}/{} ({}, {} threads) failed: {msg}",
                    i + 1,
                    cells.len(),
                    cell.protocol,
                    cell.workload.threads
                );
                rows.push(failed_row(cell));
                failed += 1;
            }
        }
    }
    write_rows(&spec, &rows)?;
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", cells.len());
        Ok(FAILURE)
    } else {
        Ok(OK)
    }
}

fn write_rows(spec: &Spec, rows: &[Row]) -> Result<()> {
    let text = match spec.output.format {
        OutFormat::Csv => render_csv(rows),
        OutFormat::Json => render_json(rows),
    };
    match &spec.output.path {
        None => print!("{text}"),
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {path}"))?;
            eprintln!("wrote {} rows to {path}", rows.len());
        }
    }
    Ok(())
}

fn write_histories(path: &Path, histories: &[String]) -> Result<()> {
    if histories.len() == 1 {
        fs::write(path, &histories[0])
            .with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote history to {}", path.display());
        return Ok(());
    }
    for (i, history) in histories.iter().enumerate() {
        let numbered = PathBuf::from(format!("{}.{i}", path.display()));
        fs::write(&numbered, history)
            .with_context(|| format!("writing {}", numbered.display()))?;
        eprintln!("wrote repeat {i} history to {}", numbered.display());
    }
    Ok(())
}

fn cmd_oracle_check(path: &Path) -> Result<u8> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let history = parse_history(&text)
        .map_err(|e| anyhow!("{}: malformed history: {e}", path.display()))?;
    let dsg = match dsg_build(&history) {
        Ok(dsg) => dsg,
        Err(e) => {
            println!("violation: {e}");
            return Ok(VIOLATION);
        }
    };
    match check_serializable(&dsg) {
        Verdict::Cycle(witness) => {
            println!(
                "violation: dependency cycle among {} committed transactions",
                history.len()
            );
            for edge in &witness {
                println!("  {edge}");
            }
            return Ok(VIOLATION);
        }
        Verdict::Acyclic => {}
    }
    let snapshot_note = if history.fully_stamped() {
        let violations = check_snapshot_reads(&history).map_err(|e| anyhow!("{e}"))?;
        if !violations.is_empty() {
            println!("violation: {} stale snapshot reads", violations.len());
            for v in violations.iter().take(10) {
                println!("  {v}");
            }
            return Ok(VIOLATION);
        }
        "snapshot reads consistent"
    } else {
        "timestamps absent, snapshot check skipped"
    };
    println!(
        "acyclic: {} txns, {} nodes, {} edges; {snapshot_note}",
        history.len(),
        dsg.nodes().len(),
        dsg.edges().len()
    );
    Ok(OK)
}

fn cmd_fetch_add(args: &FetchAddArgs) -> Result<u8> {
    let threads = args
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        bail!("--threads must be at least 1");
    }
    let layout = match args.layout.as_str() {
        "shared" => CounterLayout::Shared,
        "per-thread" => CounterLayout::PerThread,
        other => bail!("unknown layout `{other}`; expected `shared` or `per-thread`"),
    };
    let run = fetch_add_bench(threads, Duration::from_millis(args.duration_ms), layout);
    println!(
        "layout={} threads={} ops={} duration_s={} throughput_ops_s={}",
        args.layout,
        threads,
        run.total(),
        run.duration.as_secs_f64(),
        run.throughput()
    );
    Ok(OK)
}

fn cmd_list_protocols() -> Result<u8> {
    for kind in ProtocolKind::ALL {
        let tag = if kind.multi_version() { "  [multi-version]" } else { "" };
        println!("{:<12} {}{tag}", kind.name(), kind.description());
    }
    println!();
    println!("toggles: {}", Toggles::NAMES.join(", "));
    Ok(OK)
}
