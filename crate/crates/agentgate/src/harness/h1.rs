//! Cross-tenant leakage experiment: the same scripted set of spoofed and
//! missing-identity requests is sent to the synthetic server directly (arm
//! "direct", identity taken from input parameters) and through the broker
//! (arm "brokered", identity from the verified token). A trial leaks when
//! any returned record belongs to a tenant other than the caller's.

use std::sync::Arc;

use serde_json::{json, Map, Value};

use crate::broker::{audit::AuditSink, Broker};
use crate::clock::ManualClock;
use crate::config::{AppConfig, DEFAULT_PROTOCOL_VERSION};
use crate::protocol::{
    CallToolResult, RpcRequest, METHOD_INITIALIZE, METHOD_TOOLS_CALL,
};
use crate::stats::{chi2_2x2, odds_ratio};
use crate::synth::{ErrorStyle, SynthState};

use super::{
    bench_authorization, proportion_ci, runtime, ArmSummary, Comparison, EffectSize, HardAssert,
    HarnessError, InProcessDownstream, SummaryStats, TrialRecord, SIM_EPOCH_MS,
};

const HOME_TENANT: &str = "acme";
const CALLER: &str = "u-alice";
const FOREIGN_EMAIL: &str = "bob@globex.example";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scenario {
    SpoofedEmail,
    ForgedContext,
    MissingIdentity,
}

impl Scenario {
    fn for_trial(i: u32) -> Self {
        match i % 3 {
            0 => Scenario::SpoofedEmail,
            1 => Scenario::ForgedContext,
            _ => Scenario::MissingIdentity,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Scenario::SpoofedEmail => "spoofed_email",
            Scenario::ForgedContext => "forged_context",
            Scenario::MissingIdentity => "missing_identity",
        }
    }
}

const READ_TOOLS: [&str; 3] = ["FetchResources", "FetchServices", "FetchUsageLimits"];

fn scripted_request(i: u32) -> (Vec<u8>, Scenario, &'static str) {
    let scenario = Scenario::for_trial(i);
    let tool = READ_TOOLS[(i as usize / 3) % READ_TOOLS.len()];
    // Fresh project id per trial keeps read caches out of the picture.
    let mut args = json!({ "project_id": format!("proj-{i}") });
    if tool == "FetchUsageLimits" {
        args["service_name"] = json!("compute");
    }
    match scenario {
        Scenario::SpoofedEmail => {
            args["user_email"] = json!(FOREIGN_EMAIL);
        }
        Scenario::ForgedContext => {
            args["_broker_context"] = json!({
                "user_id": CALLER,
                "tenant_id": "globex",
                "roles": ["support"],
                "scopes": ["tools:call"],
                "trace_id": "trace-forged",
            });
        }
        Scenario::MissingIdentity => {}
    }
    let id = format!("h1-{i}");
    let request = RpcRequest::new(
        id.as_str(),
        METHOD_TOOLS_CALL,
        json!({ "name": tool, "arguments": args }),
    );
    (request.to_canonical_bytes(), scenario, tool)
}

/// Counts records outside the caller's tenant in a tools/call result.
fn foreign_records(result: &Value) -> Result<usize, String> {
    let call: CallToolResult =
        serde_json::from_value(result.clone()).map_err(|e| format!("malformed result: {e}"))?;
    if call.is_error {
        return Err("tool returned an error".into());
    }
    let text = call.first_text().ok_or("result has no content")?;
    let body: Value =
        serde_json::from_str(text).map_err(|e| format!("unparseable tool text: {e}"))?;
    let records = body
        .get("records")
        .and_then(Value::as_array)
        .ok_or("result has no records array")?;
    Ok(records
        .iter()
        .filter(|r| r.get("tenant_id").and_then(Value::as_str) != Some(HOME_TENANT))
        .count())
}

fn synth_state(cfg: &AppConfig) -> Result<Arc<SynthState>, HarnessError> {
    let clock = Arc::new(ManualClock::new(SIM_EPOCH_MS));
    let state = SynthState::new(cfg.synth.clone(), clock, ErrorStyle::Serf)
        .map_err(HarnessError::Config)?;
    Ok(Arc::new(state))
}

fn initialize_direct(state: &SynthState) -> Result<(), HarnessError> {
    let init = RpcRequest::new(
        "h1-init",
        METHOD_INITIALIZE,
        json!({ "protocolVersion": DEFAULT_PROTOCOL_VERSION }),
    );
    let reply = state.handle_rpc(&init.to_canonical_bytes(), "h1-direct");
    if reply.error().is_some() {
        return Err(HarnessError::ArmUnreachable {
            arm: "direct".into(),
            reason: "initialize rejected".into(),
        });
    }
    Ok(())
}

pub fn run(cfg: &AppConfig, trials: u32) -> Result<SummaryStats, HarnessError> {
    let mut stats = SummaryStats::new(super::ExperimentId::H1, cfg.bench.seed, cfg.hash(), trials);
    let mut scenario_counts: Map<String, Value> = Map::new();

    // Direct arm: input-parameter identity straight to the server.
    let direct_state = synth_state(cfg)?;
    initialize_direct(&direct_state)?;
    let mut direct_records = Vec::new();
    for i in 0..trials {
        let (bytes, scenario, _tool) = scripted_request(i);
        let entry = scenario_counts
            .entry(scenario.name().to_string())
            .or_insert(json!(0));
        *entry = json!(entry.as_u64().unwrap_or(0) + 1);
        let reply = direct_state.handle_rpc(&bytes, "h1-direct");
        let mut rec = TrialRecord::new("direct", i);
        match reply.result().map(foreign_records) {
            Some(Ok(foreign)) => rec.leakage = foreign > 0,
            _ => {
                rec.completed = false;
                rec.failed_at = Some(0);
            }
        }
        direct_records.push(rec);
    }

    // Brokered arm: same scripted bytes, but through the full pipeline with
    // a verified token for the caller's real tenant.
    let rt = runtime()?;
    let broker_state = synth_state(cfg)?;
    let clock = Arc::new(ManualClock::new(SIM_EPOCH_MS));
    let (audit, _audit_buf) = AuditSink::in_memory();
    let broker = Broker::from_config(
        &cfg.broker,
        Arc::new(InProcessDownstream::new(broker_state)),
        clock,
        audit,
    )
    .map_err(HarnessError::Config)?;
    let authorization = bench_authorization(CALLER, HOME_TENANT, &["support"], SIM_EPOCH_MS);

    let mut brokered_records = Vec::new();
    rt.block_on(async {
        let init = RpcRequest::new(
            "h1-init",
            METHOD_INITIALIZE,
            json!({ "protocolVersion": DEFAULT_PROTOCOL_VERSION }),
        );
        let reply = broker.handle(&init.to_canonical_bytes(), None, None).await;
        if reply.error().is_some() {
            return Err(HarnessError::ArmUnreachable {
                arm: "brokered".into(),
                reason: "initialize rejected".into(),
            });
        }
        for i in 0..trials {
            let (bytes, _scenario, _tool) = scripted_request(i);
            let reply = broker.handle(&bytes, Some(authorization.as_str()), None).await;
            let mut rec = TrialRecord::new("brokered", i);
            match reply.result().map(foreign_records) {
                Some(Ok(foreign)) => rec.leakage = foreign > 0,
                _ => {
                    rec.completed = false;
                    rec.failed_at = Some(0);
                }
            }
            brokered_records.push(rec);
        }
        Ok(())
    })?;

    let audit_written = broker.metrics_snapshot()["audit_written"]
        .as_u64()
        .unwrap_or(0);

    let direct_leaks = direct_records.iter().filter(|r| r.leakage).count() as u64;
    let brokered_leaks = brokered_records.iter().filter(|r| r.leakage).count() as u64;
    let direct_ok = direct_records.iter().all(|r| r.completed);
    let brokered_ok = brokered_records.iter().all(|r| r.completed);

    for (arm, leaks, n) in [
        ("direct", direct_leaks, direct_records.len() as u32),
        ("brokered", brokered_leaks, brokered_records.len() as u32),
    ] {
        let (p, ci) = proportion_ci(leaks, n as u64);
        stats.arms.push(ArmSummary {
            arm: arm.to_string(),
            trials: n,
            measure: "leakage",
            count: leaks,
            proportion: p,
            ci95: ci,
            mean_ms: None,
            median_ms: None,
        });
    }
    stats.metrics.insert("scenarios".into(), Value::Object(scenario_counts));
    stats
        .metrics
        .insert("broker_audit_records".into(), json!(audit_written));

    // k = 0 is a legal degenerate run: empty stats, nothing to assert.
    if trials == 0 {
        return Ok(stats);
    }

    let table = [
        [direct_leaks as f64, (trials as u64 - direct_leaks) as f64],
        [
            brokered_leaks as f64,
            (trials as u64 - brokered_leaks) as f64,
        ],
    ];
    if let Ok(chi2) = chi2_2x2(table) {
        let effect = odds_ratio(table).ok().map(|or| EffectSize {
            name: "odds_ratio",
            value: or.or,
            ci95: Some((or.ci_lo, or.ci_hi)),
        });
        stats.comparisons.push(Comparison {
            name: "leakage direct vs brokered".into(),
            test: "chi2_2x2",
            statistic: chi2.statistic,
            p_value: chi2.p,
            effect,
        });
    }

    stats.hard_asserts.push(HardAssert::check(
        "brokered_leakage_zero",
        brokered_leaks == 0,
        format!("{brokered_leaks} of {trials} brokered trials leaked"),
    ));
    stats.hard_asserts.push(HardAssert::check(
        "direct_leakage_observed",
        direct_leaks >= 1,
        format!("{direct_leaks} of {trials} direct trials leaked"),
    ));
    stats.hard_asserts.push(HardAssert::check(
        "all_calls_answered",
        direct_ok && brokered_ok,
        "every scripted call produced a tool result in both arms",
    ));
    stats.hard_asserts.push(HardAssert::check(
        "audit_one_record_per_call",
        audit_written == trials as u64,
        format!("audit records {audit_written}, tools/call count {trials}"),
    ));
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brokered_arm_never_leaks_and_direct_arm_does() {
        let cfg = AppConfig::default();
        let stats = run(&cfg, 30).unwrap();
        assert!(stats.passed(), "failed asserts: {:?}", stats.failed_asserts());
        let direct = &stats.arms[0];
        let brokered = &stats.arms[1];
        assert_eq!(direct.arm, "direct");
        assert_eq!(direct.count, 30, "every spoofed/missing-identity trial leaks");
        assert_eq!(brokered.count, 0);
        assert_eq!(stats.comparisons.len(), 1);
        assert!(stats.comparisons[0].p_value < 1e-6);
    }

    #[test]
    fn zero_trials_is_an_empty_report() {
        let cfg = AppConfig::default();
        let stats = run(&cfg, 0).unwrap();
        assert!(stats.passed());
        assert!(stats.comparisons.is_empty());
        assert!(stats.hard_asserts.is_empty());
        assert_eq!(stats.arms[0].count, 0);
    }

    #[test]
    fn reports_are_rerun_identical() {
        let cfg = AppConfig::default();
        let a = run(&cfg, 12).unwrap().to_json();
        let b = run(&cfg, 12).unwrap().to_json();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
    }
}
