//! Benchmark harness: experiment runners over the broker and the synthetic
//! server, with paired-seed trial design and oracle-checked statistics.
//!
//! Every experiment resolves to a [`SummaryStats`] document: per-arm
//! proportions with confidence intervals, test statistics, effect sizes,
//! targets reported against measured values, and hard asserts whose failure
//! makes the run exit non-zero. Reports carry the config hash and seed so a
//! rerun is verifiably the same experiment.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::broker::{Downstream, DownstreamReply, SendFuture};
use crate::config::{AppConfig, DEFAULT_HS256_KEY, DEFAULT_ISSUER, DEFAULT_KID};
use crate::identity::{claims_payload, mint_hs256};
use crate::seed::derive_seed;
use crate::synth::SynthState;

pub mod h1;
pub mod h2;
pub mod h3h4;
pub mod report;
pub mod serf_policy;

/// Fixed wall-clock epoch for simulated-clock experiments.
pub const SIM_EPOCH_MS: u64 = 1_700_000_000_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("arm {arm} unreachable: {reason}")]
    ArmUnreachable { arm: String, reason: String },
    #[error("paired-seed integrity violated: {0}")]
    Pairing(String),
    #[error("report io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    H1,
    H2,
    H3,
    H4,
    SerfPolicy,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        ExperimentId::H1,
        ExperimentId::H2,
        ExperimentId::H3,
        ExperimentId::H4,
        ExperimentId::SerfPolicy,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentId::H1 => "h1",
            ExperimentId::H2 => "h2",
            ExperimentId::H3 => "h3",
            ExperimentId::H4 => "h4",
            ExperimentId::SerfPolicy => "serf_policy",
        }
    }

    /// Trials per arm when the config does not pin a count.
    pub fn default_trials(&self) -> u32 {
        match self {
            ExperimentId::H1 => 100,
            ExperimentId::H2 => 1000,
            ExperimentId::H3 | ExperimentId::H4 => 500,
            ExperimentId::SerfPolicy => 200,
        }
    }

    /// Minimum trials enforced under `strict`: 500 for latency
    /// experiments, 200 for error recovery.
    pub fn strict_minimum(&self) -> Option<u32> {
        match self {
            ExperimentId::H1 => None,
            ExperimentId::H2 | ExperimentId::H3 | ExperimentId::H4 => Some(500),
            ExperimentId::SerfPolicy => Some(200),
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "h1" => Ok(ExperimentId::H1),
            "h2" => Ok(ExperimentId::H2),
            "h3" => Ok(ExperimentId::H3),
            "h4" => Ok(ExperimentId::H4),
            "serf_policy" => Ok(ExperimentId::SerfPolicy),
            other => Err(format!(
                "unknown experiment {other:?}; expected h1, h2, h3, h4, or serf_policy"
            )),
        }
    }
}

/// Trials per arm for one run: explicit config wins, then the experiment
/// default; `strict` enforces the minimum counts.
pub fn resolve_trials(cfg: &AppConfig, id: ExperimentId) -> Result<u32, HarnessError> {
    let trials = cfg.bench.trials.unwrap_or_else(|| id.default_trials());
    if cfg.bench.strict {
        if let Some(min) = id.strict_minimum() {
            if trials < min {
                return Err(HarnessError::Config(format!(
                    "strict mode requires at least {min} trials for {id}, got {trials}"
                )));
            }
        }
    }
    Ok(trials)
}

/// One trial in one arm. `completed == false` requires the failing tool
/// index; the remaining flags default to the experiment's uninteresting
/// value and are only set by the experiments that measure them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub arm: String,
    pub trial: u32,
    pub completed: bool,
    pub end_to_end_ms: f64,
    pub per_tool_ms: Vec<f64>,
    pub failed_at: Option<usize>,
    pub leakage: bool,
    pub recovered: bool,
    pub recovered_by_cascade: bool,
    pub transport_error: Option<String>,
}

impl TrialRecord {
    pub fn new(arm: &str, trial: u32) -> Self {
        Self {
            arm: arm.to_string(),
            trial,
            completed: true,
            end_to_end_ms: 0.0,
            per_tool_ms: Vec::new(),
            failed_at: None,
            leakage: false,
            recovered: false,
            recovered_by_cascade: false,
            transport_error: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.completed && self.failed_at.is_none() && self.transport_error.is_none() {
            return Err(format!(
                "arm {} trial {}: failed without a failing tool index",
                self.arm, self.trial
            ));
        }
        Ok(())
    }
}

/// One arm's headline numbers. `measure` names what `count` counts
/// (leakage, completion, recovery, ok), so reports are self-describing.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub arm: String,
    pub trials: u32,
    pub measure: &'static str,
    pub count: u64,
    pub proportion: f64,
    pub ci95: (f64, f64),
    pub mean_ms: Option<f64>,
    pub median_ms: Option<f64>,
}

impl ArmSummary {
    fn to_json(&self) -> Value {
        json!({
            "arm": self.arm,
            "trials": self.trials,
            "measure": self.measure,
            "count": self.count,
            "proportion": finite_or_null(self.proportion),
            "ci95": [finite_or_null(self.ci95.0), finite_or_null(self.ci95.1)],
            "mean_ms": self.mean_ms.map(finite_or_null),
            "median_ms": self.median_ms.map(finite_or_null),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectSize {
    pub name: &'static str,
    pub value: f64,
    pub ci95: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub name: String,
    pub test: &'static str,
    pub statistic: f64,
    pub p_value: f64,
    pub effect: Option<EffectSize>,
}

impl Comparison {
    fn to_json(&self) -> Value {
        json!({
            "name": self.name,
            "test": self.test,
            "statistic": finite_or_null(self.statistic),
            "p_value": finite_or_null(self.p_value),
            "effect": self.effect.as_ref().map(|e| json!({
                "name": e.name,
                "value": finite_or_null(e.value),
                "ci95": e.ci95.map(|(lo, hi)| json!([finite_or_null(lo), finite_or_null(hi)])),
            })),
        })
    }
}

/// A reported-not-asserted target: the measured value stands next to the
/// goal, and `met` records the comparison without failing the run.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub name: String,
    pub target: f64,
    pub measured: Option<f64>,
    pub met: Option<bool>,
}

impl Target {
    fn to_json(&self) -> Value {
        json!({
            "name": self.name,
            "target": finite_or_null(self.target),
            "measured": self.measured.map(finite_or_null),
            "met": self.met,
        })
    }
}

/// An invariant the experiment must uphold; any failure makes the whole
/// run fail (exit 2 from the CLI).
#[derive(Debug, Clone, PartialEq)]
pub struct HardAssert {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl HardAssert {
    pub fn check(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail: detail.into(),
        }
    }

    fn to_json(&self) -> Value {
        json!({ "name": self.name, "pass": self.pass, "detail": self.detail })
    }
}

/// Complete experiment outcome; serializes to the machine report.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub config_hash: String,
    pub trials_per_arm: u32,
    pub arms: Vec<ArmSummary>,
    pub comparisons: Vec<Comparison>,
    /// Experiment-specific metrics, insertion-ordered.
    pub metrics: Map<String, Value>,
    pub targets: Vec<Target>,
    pub hard_asserts: Vec<HardAssert>,
}

impl SummaryStats {
    pub fn new(experiment: ExperimentId, seed: u64, config_hash: String, trials: u32) -> Self {
        Self {
            experiment,
            seed,
            config_hash,
            trials_per_arm: trials,
            arms: Vec::new(),
            comparisons: Vec::new(),
            metrics: Map::new(),
            targets: Vec::new(),
            hard_asserts: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.hard_asserts.iter().all(|a| a.pass)
    }

    pub fn failed_asserts(&self) -> Vec<&HardAssert> {
        self.hard_asserts.iter().filter(|a| !a.pass).collect()
    }

    /// Machine report document. Field order is fixed, content is a pure
    /// function of (config, seed) for simulated experiments, so serialized
    /// bytes are rerun-stable.
    pub fn to_json(&self) -> Value {
        json!({
            "experiment": self.experiment.as_str(),
            "seed": self.seed,
            "config_hash": self.config_hash,
            "trials_per_arm": self.trials_per_arm,
            "arms": self.arms.iter().map(ArmSummary::to_json).collect::<Vec<_>>(),
            "comparisons": self.comparisons.iter().map(Comparison::to_json).collect::<Vec<_>>(),
            "metrics": Value::Object(self.metrics.clone()),
            "targets": self.targets.iter().map(Target::to_json).collect::<Vec<_>>(),
            "hard_asserts": self.hard_asserts.iter().map(HardAssert::to_json).collect::<Vec<_>>(),
        })
    }
}

/// JSON has no NaN/inf; degenerate ratios serialize as null rather than
/// silently becoming another number.
fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

/// Runs one experiment against the given effective config.
pub fn run_experiment(cfg: &AppConfig, id: ExperimentId) -> Result<SummaryStats, HarnessError> {
    cfg.validate()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let trials = resolve_trials(cfg, id)?;
    match id {
        ExperimentId::H1 => h1::run(cfg, trials),
        ExperimentId::H2 => h2::run(cfg, trials),
        ExperimentId::H3 | ExperimentId::H4 => h3h4::run(cfg, id, trials),
        ExperimentId::SerfPolicy => serf_policy::run(cfg, trials),
    }
}

/// Downstream adapter that hands request bytes straight to an in-process
/// synthetic server. No transport, no sleeps: experiments that need time
/// model it explicitly.
pub struct InProcessDownstream {
    state: Arc<SynthState>,
}

impl InProcessDownstream {
    pub fn new(state: Arc<SynthState>) -> Self {
        Self { state }
    }
}

impl Downstream for InProcessDownstream {
    fn send(&self, body: Vec<u8>, headers: Vec<(String, String)>) -> SendFuture<'_> {
        Box::pin(async move {
            let client_id = headers
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case("x-client-id"))
                .map(|(_, v)| v.as_str())
                .unwrap_or("anonymous");
            let reply = self.state.handle_rpc(&body, client_id);
            Ok(DownstreamReply {
                status: reply.http_status,
                retry_after_s: reply.retry_after_s,
                body: reply.body(),
            })
        })
    }
}

/// Bearer token for brokered arms, minted with the default trust-store key.
pub fn bench_authorization(user_id: &str, tenant: &str, roles: &[&str], now_ms: u64) -> String {
    let exp = now_ms / 1000 + 3600;
    let payload = claims_payload(DEFAULT_ISSUER, user_id, tenant, roles, &["tools:call"], exp);
    format!("Bearer {}", mint_hs256(DEFAULT_HS256_KEY, DEFAULT_KID, &payload))
}

/// Per-trial sub-seed so trial i is identical no matter how trials are
/// scheduled.
pub fn sub_seed(master: u64, label: &str, index: u64) -> u64 {
    let bytes = derive_seed(master, label, index);
    u64::from_le_bytes(bytes[..8].try_into().expect("seed has 32 bytes"))
}

/// Single-threaded runtime for experiment runners; trials are sequential
/// by design so reports never depend on scheduling.
pub(crate) fn runtime() -> Result<tokio::runtime::Runtime, HarnessError> {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| HarnessError::Internal(format!("runtime: {e}")))
}

/// Mean and median of a latency sample; None when empty.
pub(crate) fn sample_stats(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (Some(mean), Some(crate::stats::median(xs)))
}

/// Proportion CI, degenerate-safe for n = 0.
pub(crate) fn proportion_ci(successes: u64, n: u64) -> (f64, (f64, f64)) {
    if n == 0 {
        return (0.0, (0.0, 0.0));
    }
    let p = successes as f64 / n as f64;
    let ci = crate::stats::prop_ci95(successes, n).unwrap_or((p, p));
    (p, ci)
}
