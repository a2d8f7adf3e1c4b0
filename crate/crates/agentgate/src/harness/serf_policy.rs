//! Error-recovery experiment: a deterministic agent built on the recovery
//! decision engine drives one tool against two servers that differ only in
//! error style. The "plain" arm returns generic strings (always escalated
//! under the fail-safe mapping); the "serf" arm returns structured errors
//! the agent can act on: retry with backoff, switch to an alternate
//! resource from a fixed table, or escalate.
//!
//! Episode i constructs both arms' servers from the same derived seed, so
//! the first call of episode i sees the identical latency draw and failure
//! roll in both arms; recovery behavior after that point is the arm's own.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::{json, Map, Value};

use crate::clock::ManualClock;
use crate::config::{AppConfig, SynthConfig, DEFAULT_PROTOCOL_VERSION};
use crate::protocol::{CallToolResult, RpcRequest, METHOD_INITIALIZE, METHOD_TOOLS_CALL};
use crate::serf::{decide_tool_error, parse_serf, RecoveryOutcome, ToolError};
use crate::stats::{chi2_2x2, odds_ratio};
use crate::synth::{ErrorStyle, SynthState};

use super::{
    proportion_ci, sample_stats, sub_seed, ArmSummary, Comparison, EffectSize, ExperimentId,
    HardAssert, HarnessError, SummaryStats, TrialRecord, SIM_EPOCH_MS,
};

const DRIVEN_TOOL: &str = "FetchResources";
const INITIAL_PROJECT: &str = "proj-1";
/// Alternate resources tried in order when the server suggests switching.
const PROJECT_ALTERNATES: [&str; 2] = ["proj-alt-1", "proj-alt-2"];

/// Failure mix injected into the driven tool: 70% of the mass is
/// recoverable in principle (retryable or switchable), 30% escalates by
/// design.
fn failure_mix() -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("RESOURCE_EXHAUSTED".to_string(), 0.25),
        ("UPSTREAM_FAILURE".to_string(), 0.25),
        ("RESOURCE_NOT_FOUND".to_string(), 0.20),
        ("INVALID_INPUT".to_string(), 0.10),
        ("PERMISSION_DENIED".to_string(), 0.10),
        ("INTERNAL_ERROR".to_string(), 0.10),
    ])
}

fn episode_synth_config(cfg: &AppConfig, episode_seed: u64) -> SynthConfig {
    let mut synth = cfg.synth.clone();
    synth.seed = episode_seed;
    let tool = synth
        .tools
        .get_mut(DRIVEN_TOOL)
        .expect("validated: driven tool configured");
    tool.failure_rate = cfg.bench.failure_rate;
    tool.failure_mix = failure_mix();
    // Retries must re-execute, not replay a cached success.
    tool.cache_ttl_ms = 0;
    synth
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EpisodeEnd {
    Succeeded,
    Escalated,
}

#[derive(Debug)]
struct Episode {
    end: EpisodeEnd,
    errors_seen: u32,
    steps: u32,
    duration_ms: f64,
    first_call_failed: bool,
    categories: Vec<&'static str>,
}

fn run_episode(
    cfg: &AppConfig,
    style: ErrorStyle,
    episode_seed: u64,
) -> Result<Episode, HarnessError> {
    let clock = Arc::new(ManualClock::new(SIM_EPOCH_MS));
    let state = SynthState::new(episode_synth_config(cfg, episode_seed), clock.clone(), style)
        .map_err(HarnessError::Config)?;

    let init = RpcRequest::new(
        "ep-init",
        METHOD_INITIALIZE,
        json!({ "protocolVersion": DEFAULT_PROTOCOL_VERSION }),
    );
    let reply = state.handle_rpc(&init.to_canonical_bytes(), "serf-agent");
    if reply.error().is_some() {
        return Err(HarnessError::ArmUnreachable {
            arm: format!("{style:?}"),
            reason: "initialize rejected".into(),
        });
    }

    let mut args = json!({
        "project_id": INITIAL_PROJECT,
        "user_email": "alice@acme.example",
    });
    let mut attempts = 0u32;
    let mut errors_seen = 0u32;
    let mut duration_ms = 0.0f64;
    let mut first_call_failed = false;
    let mut categories = Vec::new();
    let mut alternates = PROJECT_ALTERNATES.iter();

    for step in 1..=cfg.bench.max_steps {
        let call = RpcRequest::new(
            format!("ep-{step}").as_str(),
            METHOD_TOOLS_CALL,
            json!({ "name": DRIVEN_TOOL, "arguments": args }),
        );
        let reply = state.handle_rpc(&call.to_canonical_bytes(), "serf-agent");
        duration_ms += reply.sleep_ms;
        let Some(result_value) = reply.result() else {
            return Err(HarnessError::Internal(format!(
                "protocol error mid-episode: {:?}",
                reply.error()
            )));
        };
        let result: CallToolResult = serde_json::from_value(result_value.clone())
            .map_err(|e| HarnessError::Internal(format!("malformed tool result: {e}")))?;

        if !result.is_error {
            return Ok(Episode {
                end: EpisodeEnd::Succeeded,
                errors_seen,
                steps: step,
                duration_ms,
                first_call_failed,
                categories,
            });
        }
        errors_seen += 1;
        if step == 1 {
            first_call_failed = true;
        }
        let error = parse_serf(&result);
        if let ToolError::Serf(serf) = &error {
            categories.push(serf.category.as_str());
        }
        match decide_tool_error(&error, attempts, cfg.bench.max_retries) {
            RecoveryOutcome::RetryAfter { delay_ms } => {
                clock.advance(delay_ms);
                duration_ms += delay_ms as f64;
                attempts += 1;
            }
            RecoveryOutcome::InvokeWithAlternate { field } => {
                let Some(next) = alternates.next() else {
                    // Fixed table exhausted: nothing left to switch to.
                    break;
                };
                args[field.as_str()] = json!(next);
                attempts += 1;
            }
            RecoveryOutcome::PresentToUser { .. } | RecoveryOutcome::Escalate { .. } => break,
        }
    }
    Ok(Episode {
        end: EpisodeEnd::Escalated,
        errors_seen,
        steps: cfg.bench.max_steps.min(errors_seen.max(1)),
        duration_ms,
        first_call_failed,
        categories,
    })
}

struct ArmResult {
    records: Vec<TrialRecord>,
    durations: Vec<f64>,
    error_episodes: u64,
    recovered: u64,
    first_failures: Vec<bool>,
    categories: BTreeMap<&'static str, u64>,
    total_steps: u64,
}

fn run_arm(cfg: &AppConfig, arm: &str, style: ErrorStyle, trials: u32) -> Result<ArmResult, HarnessError> {
    let mut records = Vec::with_capacity(trials as usize);
    let mut durations = Vec::with_capacity(trials as usize);
    let mut error_episodes = 0u64;
    let mut recovered = 0u64;
    let mut first_failures = Vec::with_capacity(trials as usize);
    let mut categories: BTreeMap<&'static str, u64> = BTreeMap::new();
    let mut total_steps = 0u64;
    for i in 0..trials {
        let episode = run_episode(cfg, style, sub_seed(cfg.bench.seed, "serf-episode", i as u64))?;
        let mut rec = TrialRecord::new(arm, i);
        rec.completed = episode.end == EpisodeEnd::Succeeded;
        rec.end_to_end_ms = episode.duration_ms;
        if !rec.completed {
            rec.failed_at = Some(0);
        }
        rec.recovered = rec.completed && episode.errors_seen > 0;
        rec.validate().map_err(HarnessError::Internal)?;
        if episode.errors_seen > 0 {
            error_episodes += 1;
            if rec.recovered {
                recovered += 1;
            }
        }
        for c in &episode.categories {
            *categories.entry(c).or_insert(0) += 1;
        }
        total_steps += episode.steps as u64;
        first_failures.push(episode.first_call_failed);
        durations.push(episode.duration_ms);
        records.push(rec);
    }
    Ok(ArmResult {
        records,
        durations,
        error_episodes,
        recovered,
        first_failures,
        categories,
        total_steps,
    })
}

pub fn run(cfg: &AppConfig, trials: u32) -> Result<SummaryStats, HarnessError> {
    let plain = run_arm(cfg, "plain", ErrorStyle::Plain, trials)?;
    let serf = run_arm(cfg, "serf", ErrorStyle::Serf, trials)?;

    let mut stats = SummaryStats::new(
        ExperimentId::SerfPolicy,
        cfg.bench.seed,
        cfg.hash(),
        trials,
    );

    for (name, arm) in [("plain", &plain), ("serf", &serf)] {
        let (p, ci) = proportion_ci(arm.recovered, arm.error_episodes);
        let (mean, median) = sample_stats(&arm.durations);
        stats.arms.push(ArmSummary {
            arm: name.to_string(),
            trials: arm.error_episodes as u32,
            measure: "recovery",
            count: arm.recovered,
            proportion: p,
            ci95: ci,
            mean_ms: mean,
            median_ms: median,
        });
    }

    let completion = |arm: &ArmResult| arm.records.iter().filter(|r| r.completed).count() as u64;
    stats.metrics.insert("episodes_per_arm".into(), json!(trials));
    stats.metrics.insert(
        "error_episodes".into(),
        json!({ "plain": plain.error_episodes, "serf": serf.error_episodes }),
    );
    stats.metrics.insert(
        "episodes_completed".into(),
        json!({ "plain": completion(&plain), "serf": completion(&serf) }),
    );
    stats.metrics.insert(
        "mean_steps_per_episode".into(),
        json!({
            "plain": if trials > 0 { Some(plain.total_steps as f64 / trials as f64) } else { None },
            "serf": if trials > 0 { Some(serf.total_steps as f64 / trials as f64) } else { None },
        }),
    );
    let categories: Map<String, Value> = serf
        .categories
        .iter()
        .map(|(k, v)| (k.to_string(), json!(v)))
        .collect();
    stats
        .metrics
        .insert("serf_error_categories".into(), Value::Object(categories));
    stats.metrics.insert(
        "failure_rate_injected".into(),
        json!(cfg.bench.failure_rate),
    );

    if trials == 0 {
        return Ok(stats);
    }

    let table = [
        [
            serf.recovered as f64,
            (serf.error_episodes - serf.recovered) as f64,
        ],
        [
            plain.recovered as f64,
            (plain.error_episodes - plain.recovered) as f64,
        ],
    ];
    if let Ok(chi2) = chi2_2x2(table) {
        let effect = odds_ratio(table).ok().map(|or| EffectSize {
            name: "odds_ratio",
            value: or.or,
            ci95: Some((or.ci_lo, or.ci_hi)),
        });
        stats.comparisons.push(Comparison {
            name: "recovery serf vs plain (error episodes)".into(),
            test: "chi2_2x2",
            statistic: chi2.statistic,
            p_value: chi2.p,
            effect,
        });
    }

    stats.hard_asserts.push(HardAssert::check(
        "paired_failure_injection_identical",
        plain.first_failures == serf.first_failures,
        "episode i fails its first call in both arms or in neither",
    ));
    stats.hard_asserts.push(HardAssert::check(
        "plain_arm_never_recovers",
        plain.recovered == 0,
        format!(
            "plain arm recovered {} of {} error episodes",
            plain.recovered, plain.error_episodes
        ),
    ));
    stats.hard_asserts.push(HardAssert::check(
        "serf_recovery_exceeds_plain",
        serf.recovered > plain.recovered,
        format!(
            "serf recovered {} of {}, plain {} of {}",
            serf.recovered, serf.error_episodes, plain.recovered, plain.error_episodes
        ),
    ));
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structured_errors_enable_recovery_and_plain_never_does() {
        let cfg = AppConfig::default();
        let stats = run(&cfg, 60).unwrap();
        assert!(stats.passed(), "failed asserts: {:?}", stats.failed_asserts());
        let plain = &stats.arms[0];
        let serf = &stats.arms[1];
        assert_eq!(plain.count, 0);
        assert!(serf.count > 0);
        assert!(serf.proportion > 0.5, "most injected errors are recoverable");
        assert_eq!(plain.trials, serf.trials, "paired injection");
    }

    #[test]
    fn reports_are_rerun_identical() {
        let cfg = AppConfig::default();
        let a = run(&cfg, 25).unwrap().to_json();
        let b = run(&cfg, 25).unwrap().to_json();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
    }

    #[test]
    fn alternate_table_is_finite() {
        // A not-found loop must exhaust the fixed table and escalate, not
        // spin forever: max_steps bounds every episode regardless.
        let mut cfg = AppConfig::default();
        cfg.bench.failure_rate = 1.0;
        let stats = run(&cfg, 20).unwrap();
        let serf = &stats.arms[1];
        assert_eq!(serf.count, 0, "with 100% failure nothing ever succeeds");
        assert!(stats
            .hard_asserts
            .iter()
            .any(|a| a.name == "serf_recovery_exceeds_plain" && !a.pass));
    }
}
