//! Experiment specifications: the JSON document (or its flag equivalents)
//! that names one cell or a small grid of cells to run.
//!
//! A spec is parsed strictly: unknown keys are errors, with a nearest-name
//! suggestion instead of silent absorption. [`Spec::resolved`] normalizes
//! the document (preset substitution, axis vetting) so that a resolved spec
//! serialized by [`Spec::emit`] parses back to exactly itself.

use anyhow::{anyhow, bail, Result};
use cctk::harness::{GcMode, LongTxn, RunPlan};
use cctk::protocols::{AdaptiveBackoff, DelayPolicy, ProtocolKind, Toggles};
use cctk::workload::WorkloadConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::time::Duration;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Spec {
    pub protocol: String,
    /// Active optimization toggles by name (see `cctk list-protocols`).
    pub toggles: Vec<String>,
    pub workload: WorkloadConfig,
    pub seed: u64,
    pub duration_ms: u64,
    pub warmup_ms: u64,
    pub repeats: usize,
    pub epoch_ms: u64,
    pub gc_interval_ms: u64,
    pub gc: GcSpec,
    pub delay: DelaySpec,
    pub long_txn: Option<LongTxnSpec>,
    pub capture: bool,
    pub commit_target: Option<u64>,
    /// Up to two swept parameters; the cross product is run cell by cell,
    /// first axis outermost.
    pub sweep: Vec<SweepAxis>,
    pub output: OutputSpec,
}

impl Default for Spec {
    fn default() -> Spec {
        Spec {
            protocol: "silo".into(),
            toggles: Vec::new(),
            workload: WorkloadConfig::default(),
            seed: 1,
            duration_ms: 3000,
            warmup_ms: 500,
            repeats: 5,
            epoch_ms: 40,
            gc_interval_ms: 10,
            gc: GcSpec::Rapid,
            delay: DelaySpec::None,
            long_txn: None,
            capture: false,
            commit_target: None,
            sweep: Vec::new(),
            output: OutputSpec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GcSpec {
    Rapid,
    Aggressive { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelaySpec {
    None,
    ReadPhaseExtension { micros: u64 },
    AdaptiveBackoff { min_micros: u64, max_micros: u64, factor: u32 },
    NoWaitTt { micros: u64 },
}

impl DelaySpec {
    pub fn policy(self) -> Result<DelayPolicy> {
        Ok(match self {
            DelaySpec::None => DelayPolicy::None,
            DelaySpec::ReadPhaseExtension { micros } => {
                DelayPolicy::ReadPhaseExtension(Duration::from_micros(micros))
            }
            DelaySpec::AdaptiveBackoff { min_micros, max_micros, factor } => {
                if factor < 2 {
                    bail!("adaptive backoff factor must be at least 2, got {factor}");
                }
                if min_micros > max_micros {
                    bail!(
                        "adaptive backoff min ({min_micros} us) exceeds max ({max_micros} us)"
                    );
                }
                DelayPolicy::AdaptiveBackoff(AdaptiveBackoff::new(
                    Duration::from_micros(min_micros),
                    Duration::from_micros(max_micros),
                    factor,
                ))
            }
            DelaySpec::NoWaitTt { micros } => {
                DelayPolicy::FixedNoWaitTt(Duration::from_micros(micros))
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongTxnSpec {
    pub worker: usize,
    pub delay_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: String,
    pub values: Vec<Value>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutFormat {
    #[default]
    Csv,
    Json,
}

impl OutFormat {
    pub fn parse(s: &str) -> Result<OutFormat> {
        match s {
            "csv" => Ok(OutFormat::Csv),
            "json" => Ok(OutFormat::Json),
            other => bail!("unknown output format `{other}`; supported: csv, json"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub format: OutFormat,
    /// Rows go to stdout when absent.
    pub path: Option<String>,
}

/// Every key a spec document may contain, for typo suggestions.
const KNOWN_KEYS: [&str; 27] = [
    "protocol",
    "toggles",
    "workload",
    "seed",
    "duration_ms",
    "warmup_ms",
    "repeats",
    "epoch_ms",
    "gc_interval_ms",
    "gc",
    "delay",
    "long_txn",
    "capture",
    "commit_target",
    "sweep",
    "output",
    "skew",
    "payload_size",
    "txn_size",
    "cardinality",
    "read_ratio",
    "rmw",
    "threads",
    "ycsb_preset",
    "partitioned",
    "param",
    "values",
];

/// Parameters a sweep axis may vary.
pub const SWEEPABLE: [&str; 17] = [
    "protocol",
    "toggles",
    "threads",
    "skew",
    "cardinality",
    "payload_size",
    "txn_size",
    "read_ratio",
    "rmw",
    "partitioned",
    "seed",
    "duration_ms",
    "warmup_ms",
    "repeats",
    "epoch_ms",
    "gc_interval_ms",
    "commit_target",
];

pub fn supported_protocols() -> String {
    let names: Vec<&str> = ProtocolKind::ALL.iter().map(|k| k.name()).collect();
    names.join(", ")
}

fn nearest(unknown: &str, candidates: &[&'static str]) -> Option<&'static str> {
    candidates
        .iter()
        .map(|&c| (strsim::levenshtein(unknown, c), c))
        .min()
        .filter(|&(d, _)| d <= 2)
        .map(|(_, c)| c)
}

fn suggest_unknown_key(message: &str) -> String {
    let Some(rest) = message.split("unknown field `").nth(1) else {
        return message.to_string();
    };
    let Some(field) = rest.split('`').next() else {
        return message.to_string();
    };
    match nearest(field, &KNOWN_KEYS) {
        Some(hint) => format!("{message}; did you mean `{hint}`?"),
        None => message.to_string(),
    }
}

/// Parses a spec document without resolving it, so flag overrides can still
/// be layered on top.
pub fn parse_raw(text: &str) -> Result<Spec> {
    serde_json::from_str(text).map_err(|e| anyhow!("{}", suggest_unknown_key(&e.to_string())))
}

impl Spec {
    /// Normalizes and vets the document: the protocol and every toggle must
    /// be recognized, presets substitute their read ratio, and sweep axes
    /// (at most two) must name sweepable parameters with type-correct
    /// values.
    pub fn resolved(mut self) -> Result<Spec> {
        if ProtocolKind::parse(&self.protocol).is_none() {
            bail!(
                "unknown protocol `{}`; supported: {}",
                self.protocol,
                supported_protocols()
            );
        }
        let mut probe = Toggles::default();
        for name in &self.toggles {
            if !probe.set(name, true) {
                bail!(
                    "unknown toggle `{}`; supported: {}",
                    name,
                    Toggles::NAMES.join(", ")
                );
            }
        }
        self.workload.read_ratio = self.workload.effective_read_ratio();
        if self.sweep.len() > 2 {
            bail!("at most 2 sweep axes are supported, got {}", self.sweep.len());
        }
        for axis in &self.sweep {
            if axis.values.is_empty() {
                bail!("sweep axis `{}` has no values", axis.param);
            }
            let mut scratch = self.clone();
            scratch.sweep.clear();
            for value in &axis.values {
                apply(&mut scratch, &axis.param, value)?;
            }
        }
        Ok(self)
    }

    /// The fully-defaulted document; parsing and resolving this text yields an
    /// equal spec.
    pub fn emit(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn plan(&self) -> Result<RunPlan> {
        let kind = ProtocolKind::parse(&self.protocol)
            .ok_or_else(|| anyhow!("unknown protocol `{}`", self.protocol))?;
        let mut toggles = Toggles::default();
        for name in &self.toggles {
            if !toggles.set(name, true) {
                bail!("unknown toggle `{name}`");
            }
        }
        let mut plan = RunPlan::new(self.workload.clone(), kind);
        plan.toggles = toggles;
        plan.seed = self.seed;
        plan.duration = Duration::from_millis(self.duration_ms);
        plan.warmup = Duration::from_millis(self.warmup_ms);
        plan.repeats = self.repeats;
        plan.epoch_interval = Duration::from_millis(self.epoch_ms);
        plan.gc_interval = Duration::from_millis(self.gc_interval_ms);
        plan.gc = match self.gc {
            GcSpec::Rapid => GcMode::Rapid,
            GcSpec::Aggressive { k } => GcMode::Aggressive { k },
        };
        plan.delay = self.delay.policy()?;
        plan.long_txn = self.long_txn.map(|lt| LongTxn {
            worker: lt.worker,
            delay: Duration::from_millis(lt.delay_ms),
        });
        plan.capture = self.capture;
        plan.commit_target = self.commit_target;
        Ok(plan)
    }
}

fn want_u64(param: &str, value: &Value) -> Result<u64> {
    value
        .as_u64()
        .ok_or_else(|| anyhow!("sweep `{param}` needs unsigned integers, got {value}"))
}

fn want_usize(param: &str, value: &Value) -> Result<usize> {
    usize::try_from(want_u64(param, value)?)
        .map_err(|_| anyhow!("sweep `{param}` value {value} is out of range"))
}

fn want_bool(param: &str, value: &Value) -> Result<bool> {
    value
        .as_bool()
        .ok_or_else(|| anyhow!("sweep `{param}` needs booleans, got {value}"))
}

/// Sets one swept parameter on a cell spec.
pub fn apply(spec: &mut Spec, param: &str, value: &Value) -> Result<()> {
    match param {
        "protocol" => {
            let name = value
                .as_str()
                .ok_or_else(|| anyhow!("sweep `protocol` needs strings, got {value}"))?;
            if ProtocolKind::parse(name).is_none() {
                bail!("unknown protocol `{name}`; supported: {}", supported_protocols());
            }
            spec.protocol = name.to_string();
        }
        "toggles" => {
            let list = value
                .as_array()
                .ok_or_else(|| anyhow!("sweep `toggles` needs arrays of toggle names"))?;
            let mut names = Vec::with_capacity(list.len());
            let mut probe = Toggles::default();
            for v in list {
                let name = v
                    .as_str()
                    .ok_or_else(|| anyhow!("toggle names are strings, got {v}"))?;
                if !probe.set(name, true) {
                    bail!("unknown toggle `{name}`; supported: {}", Toggles::NAMES.join(", "));
                }
                names.push(name.to_string());
            }
            spec.toggles = names;
        }
        "threads" => spec.workload.threads = want_usize(param, value)?,
        "skew" => {
            spec.workload.skew = value
                .as_f64()
                .ok_or_else(|| anyhow!("sweep `skew` needs numbers, got {value}"))?;
        }
        "cardinality" => spec.workload.cardinality = want_u64(param, value)?,
        "payload_size" => spec.workload.payload_size = want_usize(param, value)?,
        "txn_size" => spec.workload.txn_size = want_usize(param, value)?,
        "read_ratio" => {
            let v = want_u64(param, value)?;
            spec.workload.read_ratio =
                u8::try_from(v).map_err(|_| anyhow!("read_ratio {v} does not fit in 0..=100"))?;
        }
        "rmw" => spec.workload.rmw = want_bool(param, value)?,
        "partitioned" => spec.workload.partitioned = want_bool(param, value)?,
        "seed" => spec.seed = want_u64(param, value)?,
        "duration_ms" => spec.duration_ms = want_u64(param, value)?,
        "warmup_ms" => spec.warmup_ms = want_u64(param, value)?,
        "repeats" => spec.repeats = want_usize(param, value)?,
        "epoch_ms" => spec.epoch_ms = want_u64(param, value)?,
        "gc_interval_ms" => spec.gc_interval_ms = want_u64(param, value)?,
        "commit_target" => spec.commit_target = Some(want_u64(param, value)?),
        other => {
            let hint = nearest(other, &SWEEPABLE)
                .map(|s| format!("; did you mean `{s}`?"))
                .unwrap_or_default();
            bail!(
                "`{other}` is not sweepable{hint} (sweepable: {})",
                SWEEPABLE.join(", ")
            );
        }
    }
    Ok(())
}

/// The cross product of the sweep axes, first axis outermost. A spec with
/// no axes expands to itself.
pub fn expand(spec: &Spec) -> Result<Vec<Spec>> {
    let mut base = spec.clone();
    base.sweep.clear();
    let mut cells = vec![base];
    for axis in &spec.sweep {
        let mut next = Vec::with_capacity(cells.len() * axis.values.len());
        for cell in &cells {
            for value in &axis.values {
                let mut c = cell.clone();
                apply(&mut c, &axis.param, value)?;
                next.push(c);
            }
        }
        cells = next;
    }
    Ok(cells)
}
