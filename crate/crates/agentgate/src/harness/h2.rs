//! Overhead experiment: per-call latency of the brokered path versus a
//! direct client-to-server call, as paired differences.
//!
//! Two transports share one report shape. "live" runs real loopback HTTP
//! through both stacks and measures wall-clock time, so its numbers vary
//! run to run. "modeled" verifies the same call pair in process and prices
//! the transport hops from fixed samplers on a derived seed, so its report
//! is byte-reproducible.

use std::sync::Arc;
use std::time::Instant;

use serde_json::json;

use crate::broker::{http as broker_http, Broker, HttpDownstream};
use crate::broker::audit::AuditSink;
use crate::clock::{ManualClock, SystemClock};
use crate::config::{AppConfig, BrokerConfig, H2Transport, SynthConfig, DEFAULT_PROTOCOL_VERSION};
use crate::protocol::{CallToolResult, RpcRequest, RpcResponse, METHOD_INITIALIZE, METHOD_TOOLS_CALL};
use crate::seed;
use crate::stats::{cohens_d, welch_t, Z_95};
use crate::synth::latency::LatencySampler;
use crate::synth::{http as synth_http, ErrorStyle, SynthState};

use super::{
    bench_authorization, proportion_ci, runtime, sample_stats, ArmSummary, Comparison, EffectSize,
    ExperimentId, HardAssert, HarnessError, InProcessDownstream, SummaryStats, Target, TrialRecord,
    SIM_EPOCH_MS,
};

const PROBE_TOOL: &str = "FetchResources";
const WARMUP_PAIRS: u32 = 20;
/// Modeled per-hop HTTP cost (client to server, one direction counted once
/// per request/response exchange).
const HOP_MEAN_MS: f64 = 0.4;
const HOP_SD_MS: f64 = 0.08;
/// Modeled broker pipeline cost (validation, policy, audit bookkeeping).
const PIPELINE_MEAN_MS: f64 = 0.9;
const PIPELINE_SD_MS: f64 = 0.15;

/// Probe tool tuned so every call costs the same base latency and nothing
/// is served from cache or injected as a failure.
fn probe_synth_config(cfg: &AppConfig) -> SynthConfig {
    let mut synth = cfg.synth.clone();
    let tool = synth
        .tools
        .get_mut(PROBE_TOOL)
        .expect("validated: probe tool configured");
    tool.latency_mean_ms = cfg.bench.h2_latency_mean_ms;
    tool.latency_stddev_ms = 0.0;
    tool.failure_rate = 0.0;
    tool.cache_ttl_ms = 0;
    synth
}

fn init_request() -> Vec<u8> {
    RpcRequest::new(
        "h2-init",
        METHOD_INITIALIZE,
        json!({ "protocolVersion": DEFAULT_PROTOCOL_VERSION }),
    )
    .to_canonical_bytes()
}

fn call_request(arm: &str, i: u32) -> Vec<u8> {
    RpcRequest::new(
        format!("h2-{arm}-{i}").as_str(),
        METHOD_TOOLS_CALL,
        json!({
            "name": PROBE_TOOL,
            "arguments": { "project_id": "proj-h2", "user_email": "alice@acme.example" },
        }),
    )
    .to_canonical_bytes()
}

/// A call either yields a latency, fails at the transport, or returns a
/// tool-level error; the three are never conflated in the report.
enum CallOutcome {
    Ok(f64),
    Transport(String),
    Tool(String),
}

fn check_rpc_ok(bytes: &[u8], expect_tool_result: bool) -> Result<(), String> {
    let resp = RpcResponse::from_bytes(bytes).ok_or("unparseable rpc response")?;
    let value = match resp.payload {
        Ok(v) => v,
        Err(e) => return Err(format!("rpc error {}: {}", e.code, e.message)),
    };
    if !expect_tool_result {
        return Ok(());
    }
    let result: CallToolResult =
        serde_json::from_value(value).map_err(|e| format!("malformed tool result: {e}"))?;
    if result.is_error {
        return Err(result.first_text().unwrap_or_default().to_string());
    }
    Ok(())
}

async fn timed_call(
    client: &reqwest::Client,
    url: &str,
    body: Vec<u8>,
    auth: Option<&str>,
    expect_tool_result: bool,
) -> CallOutcome {
    let start = Instant::now();
    let mut req = client
        .post(url)
        .header("content-type", "application/json")
        .body(body);
    if let Some(a) = auth {
        req = req.header("authorization", a);
    }
    let resp = match req.send().await {
        Ok(r) => r,
        Err(e) => return CallOutcome::Transport(e.to_string()),
    };
    let bytes = match resp.bytes().await {
        Ok(b) => b,
        Err(e) => return CallOutcome::Transport(e.to_string()),
    };
    let elapsed_ms = start.elapsed().as_secs_f64() * 1000.0;
    match check_rpc_ok(&bytes, expect_tool_result) {
        Ok(()) => CallOutcome::Ok(elapsed_ms),
        Err(m) => CallOutcome::Tool(m),
    }
}

#[derive(Default)]
struct ArmTally {
    records: Vec<TrialRecord>,
    latencies: Vec<f64>,
    transport_failures: u64,
    tool_errors: u64,
}

impl ArmTally {
    fn record(&mut self, arm: &str, i: u32, outcome: &CallOutcome) -> Option<f64> {
        let mut rec = TrialRecord::new(arm, i);
        let measured = match outcome {
            CallOutcome::Ok(ms) => {
                rec.end_to_end_ms = *ms;
                self.latencies.push(*ms);
                Some(*ms)
            }
            CallOutcome::Transport(msg) => {
                rec.completed = false;
                rec.transport_error = Some(msg.clone());
                self.transport_failures += 1;
                None
            }
            CallOutcome::Tool(_) => {
                rec.completed = false;
                rec.failed_at = Some(0);
                self.tool_errors += 1;
                None
            }
        };
        self.records.push(rec);
        measured
    }
}

struct PairedRun {
    direct: ArmTally,
    brokered: ArmTally,
    diffs: Vec<f64>,
}

fn run_live(cfg: &AppConfig, trials: u32) -> Result<PairedRun, HarnessError> {
    let rt = runtime()?;
    rt.block_on(async {
        // Each arm gets its own server: the broker handshakes with its
        // downstream at startup, which would consume the direct arm's
        // initialize if they shared one.
        let mut synth_servers = Vec::new();
        for _ in 0..2 {
            let synth = SynthState::new(
                probe_synth_config(cfg),
                Arc::new(SystemClock),
                ErrorStyle::Serf,
            )
            .map_err(HarnessError::Config)?;
            synth_servers.push(synth_http::serve(Arc::new(synth), "127.0.0.1:0").await?);
        }
        let direct_url = format!("http://{}/rpc", synth_servers[0].addr);
        let downstream_url = format!("http://{}/rpc", synth_servers[1].addr);

        let broker_cfg = BrokerConfig {
            downstream: downstream_url.clone(),
            ..cfg.broker.clone()
        };
        let downstream =
            HttpDownstream::new(&downstream_url).map_err(HarnessError::Config)?;
        let broker = Broker::from_config(
            &broker_cfg,
            Arc::new(downstream),
            Arc::new(SystemClock),
            AuditSink::in_memory().0,
        )
        .map_err(HarnessError::Config)?;
        let broker_server = broker_http::serve(Arc::new(broker), "127.0.0.1:0").await?;

        let client = reqwest::Client::new();
        let brokered_url = format!("http://{}/rpc", broker_server.addr);
        let now_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_err(|e| HarnessError::Internal(e.to_string()))?
            .as_millis() as u64;
        let auth = bench_authorization("u-alice", "acme", &["support"], now_ms);

        for (url, a, arm) in [
            (&direct_url, None, "direct"),
            (&brokered_url, None, "brokered"),
        ] {
            match timed_call(&client, url, init_request(), a, false).await {
                CallOutcome::Ok(_) => {}
                CallOutcome::Transport(m) | CallOutcome::Tool(m) => {
                    return Err(HarnessError::ArmUnreachable {
                        arm: arm.into(),
                        reason: m,
                    })
                }
            }
        }

        for i in 0..WARMUP_PAIRS {
            let _ = timed_call(&client, &direct_url, call_request("warm-d", i), None, true).await;
            let _ =
                timed_call(&client, &brokered_url, call_request("warm-b", i), Some(&auth), true)
                    .await;
        }

        let mut run = PairedRun {
            direct: ArmTally::default(),
            brokered: ArmTally::default(),
            diffs: Vec::with_capacity(trials as usize),
        };
        for i in 0..trials {
            // Alternate call order by parity so ordering effects cancel
            // across the pair set.
            let (d, b) = if i % 2 == 0 {
                let d =
                    timed_call(&client, &direct_url, call_request("direct", i), None, true).await;
                let b = timed_call(
                    &client,
                    &brokered_url,
                    call_request("brokered", i),
                    Some(&auth),
                    true,
                )
                .await;
                (d, b)
            } else {
                let b = timed_call(
                    &client,
                    &brokered_url,
                    call_request("brokered", i),
                    Some(&auth),
                    true,
                )
                .await;
                let d =
                    timed_call(&client, &direct_url, call_request("direct", i), None, true).await;
                (d, b)
            };
            let dm = run.direct.record("direct", i, &d);
            let bm = run.brokered.record("brokered", i, &b);
            if let (Some(dm), Some(bm)) = (dm, bm) {
                run.diffs.push(bm - dm);
            }
        }

        broker_server.shutdown().await;
        for server in synth_servers {
            server.shutdown().await;
        }
        Ok(run)
    })
}

fn run_modeled(cfg: &AppConfig, trials: u32) -> Result<PairedRun, HarnessError> {
    let direct_state = SynthState::new(
        probe_synth_config(cfg),
        Arc::new(ManualClock::new(SIM_EPOCH_MS)),
        ErrorStyle::Serf,
    )
    .map_err(HarnessError::Config)?;
    let broker_state = Arc::new(
        SynthState::new(
            probe_synth_config(cfg),
            Arc::new(ManualClock::new(SIM_EPOCH_MS)),
            ErrorStyle::Serf,
        )
        .map_err(HarnessError::Config)?,
    );
    let broker = Broker::from_config(
        &cfg.broker,
        Arc::new(InProcessDownstream::new(broker_state)),
        Arc::new(ManualClock::new(SIM_EPOCH_MS)),
        AuditSink::in_memory().0,
    )
    .map_err(HarnessError::Config)?;
    let auth = bench_authorization("u-alice", "acme", &["support"], SIM_EPOCH_MS);

    let init = direct_state.handle_rpc(&init_request(), "h2-bench");
    if init.error().is_some() {
        return Err(HarnessError::ArmUnreachable {
            arm: "direct".into(),
            reason: "initialize rejected".into(),
        });
    }

    let rt = runtime()?;
    rt.block_on(async {
        let reply = broker.handle(&init_request(), None, None).await;
        if reply.error().is_some() {
            return Err(HarnessError::ArmUnreachable {
                arm: "brokered".into(),
                reason: "initialize rejected".into(),
            });
        }

        let hop = LatencySampler::new(HOP_MEAN_MS, HOP_SD_MS);
        let pipeline = LatencySampler::new(PIPELINE_MEAN_MS, PIPELINE_SD_MS);
        let mut rng = seed::stream(cfg.bench.seed, "h2-model", 0);

        let mut run = PairedRun {
            direct: ArmTally::default(),
            brokered: ArmTally::default(),
            diffs: Vec::with_capacity(trials as usize),
        };
        for i in 0..trials {
            // Fixed draw order keeps the realization a pure function of
            // (seed, trial): direct hop, two brokered hops, pipeline.
            let hop_d = hop.sample(&mut rng);
            let hop_b1 = hop.sample(&mut rng);
            let hop_b2 = hop.sample(&mut rng);
            let pipe = pipeline.sample(&mut rng);

            let d_reply = direct_state.handle_rpc(&call_request("direct", i), "h2-bench");
            let d = match d_reply.result() {
                Some(v) if serde_json::from_value::<CallToolResult>(v.clone())
                    .map(|r| !r.is_error)
                    .unwrap_or(false) =>
                {
                    CallOutcome::Ok(cfg.bench.h2_latency_mean_ms + hop_d)
                }
                _ => CallOutcome::Tool("probe call failed".into()),
            };
            let b_reply = broker
                .handle(&call_request("brokered", i), Some(&auth), None)
                .await;
            let b = match b_reply.result() {
                Some(v) if serde_json::from_value::<CallToolResult>(v.clone())
                    .map(|r| !r.is_error)
                    .unwrap_or(false) =>
                {
                    CallOutcome::Ok(cfg.bench.h2_latency_mean_ms + hop_b1 + hop_b2 + pipe)
                }
                _ => CallOutcome::Tool("probe call failed".into()),
            };
            let dm = run.direct.record("direct", i, &d);
            let bm = run.brokered.record("brokered", i, &b);
            if let (Some(dm), Some(bm)) = (dm, bm) {
                run.diffs.push(bm - dm);
            }
        }
        Ok(run)
    })
}

/// Distribution-free 95% CI for the median: order statistics at ranks
/// n/2 ± z·√n/2 of the sorted sample.
fn median_ci(sorted: &[f64]) -> Option<(f64, f64)> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    let half = n as f64 / 2.0;
    let spread = Z_95 * (n as f64).sqrt() / 2.0;
    let lo = ((half - spread).floor().max(0.0)) as usize;
    let hi = (((half + spread).ceil() as usize).max(1) - 1).min(n - 1);
    Some((sorted[lo], sorted[hi]))
}

pub fn run(cfg: &AppConfig, trials: u32) -> Result<SummaryStats, HarnessError> {
    let transport = cfg.bench.h2_transport;
    let run_data = match transport {
        H2Transport::Live => run_live(cfg, trials)?,
        H2Transport::Modeled => run_modeled(cfg, trials)?,
    };
    let PairedRun {
        direct,
        brokered,
        mut diffs,
    } = run_data;

    for rec in direct.records.iter().chain(brokered.records.iter()) {
        rec.validate().map_err(HarnessError::Internal)?;
    }

    let mut stats = SummaryStats::new(ExperimentId::H2, cfg.bench.seed, cfg.hash(), trials);
    for (name, arm) in [("direct", &direct), ("brokered", &brokered)] {
        let ok = arm.latencies.len() as u64;
        let (p, ci) = proportion_ci(ok, trials as u64);
        let (mean, median) = sample_stats(&arm.latencies);
        stats.arms.push(ArmSummary {
            arm: name.to_string(),
            trials,
            measure: "measured_ok",
            count: ok,
            proportion: p,
            ci95: ci,
            mean_ms: mean,
            median_ms: median,
        });
    }

    diffs.sort_by(|a, b| a.partial_cmp(b).expect("finite latencies"));
    let n = diffs.len();
    let (mean_d, median_d) = sample_stats(&diffs);
    let sd_d = if n > 1 {
        let m = mean_d.unwrap_or(0.0);
        Some((diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt())
    } else {
        None
    };
    let cv = match (sd_d, mean_d) {
        (Some(s), Some(m)) if m.abs() > f64::EPSILON => Some(s / m.abs()),
        _ => None,
    };
    let ci = median_ci(&diffs);

    stats
        .metrics
        .insert("transport".into(), json!(transport_name(transport)));
    stats.metrics.insert("warmup_pairs".into(), json!(if transport == H2Transport::Live { WARMUP_PAIRS } else { 0 }));
    stats.metrics.insert("measured_pairs".into(), json!(n));
    stats.metrics.insert(
        "transport_failures".into(),
        json!({ "direct": direct.transport_failures, "brokered": brokered.transport_failures }),
    );
    stats.metrics.insert(
        "tool_errors".into(),
        json!({ "direct": direct.tool_errors, "brokered": brokered.tool_errors }),
    );
    stats.metrics.insert(
        "overhead_ms".into(),
        json!({
            "mean": mean_d,
            "median": median_d,
            "stddev": sd_d,
            "cv": cv,
            "median_ci95": ci.map(|(lo, hi)| json!([lo, hi])),
        }),
    );
    if transport == H2Transport::Modeled {
        stats.metrics.insert(
            "model".into(),
            json!({
                "base_latency_ms": cfg.bench.h2_latency_mean_ms,
                "hop_mean_ms": HOP_MEAN_MS,
                "hop_stddev_ms": HOP_SD_MS,
                "pipeline_mean_ms": PIPELINE_MEAN_MS,
                "pipeline_stddev_ms": PIPELINE_SD_MS,
            }),
        );
    }

    stats.targets.push(Target {
        name: "median_overhead_ms".into(),
        target: cfg.bench.h2_overhead_target_ms,
        measured: median_d,
        met: median_d.map(|m| m < cfg.bench.h2_overhead_target_ms),
    });
    stats.targets.push(Target {
        name: "overhead_cv_fallback".into(),
        target: 0.5,
        measured: cv,
        met: cv.map(|c| c < 0.5),
    });

    if direct.latencies.len() > 1 && brokered.latencies.len() > 1 {
        if let Ok(t) = welch_t(&direct.latencies, &brokered.latencies) {
            let effect = cohens_d(&direct.latencies, &brokered.latencies)
                .ok()
                .map(|d| EffectSize {
                    name: "cohens_d",
                    value: d,
                    ci95: None,
                });
            stats.comparisons.push(Comparison {
                name: "latency brokered vs direct".into(),
                test: "welch_t",
                statistic: t.t,
                p_value: t.p,
                effect,
            });
        }
    }

    if trials > 0 {
        stats.hard_asserts.push(HardAssert::check(
            "measured_pairs_nonzero",
            n > 0,
            format!("{n} of {trials} pairs measured"),
        ));
        stats.hard_asserts.push(HardAssert::check(
            "no_tool_errors",
            direct.tool_errors == 0 && brokered.tool_errors == 0,
            "probe tool is configured to never fail",
        ));
    }
    Ok(stats)
}

fn transport_name(t: H2Transport) -> &'static str {
    match t {
        H2Transport::Live => "live",
        H2Transport::Modeled => "modeled",
    }
}
