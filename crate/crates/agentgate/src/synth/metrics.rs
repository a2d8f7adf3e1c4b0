//! Request metrics: per-tool latency percentiles, success rate, cache hit
//! rate, and overall request throughput.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde_json::{json, Map, Value};

#[derive(Default)]
struct ToolStats {
    latencies_ms: Vec<f64>,
    ok: u64,
    tool_errors: u64,
    cache_hits: u64,
    cache_misses: u64,
}

pub struct Metrics {
    started_ms: u64,
    requests_total: AtomicU64,
    per_tool: Mutex<BTreeMap<String, ToolStats>>,
}

impl Metrics {
    pub fn new(started_ms: u64) -> Self {
        Self {
            started_ms,
            requests_total: AtomicU64::new(0),
            per_tool: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn observe_request(&self) {
        self.requests_total.fetch_add(1, Ordering::Relaxed);
    }

    pub fn observe_call(&self, tool: &str, latency_ms: f64, is_error: bool, cache_hit: bool) {
        let mut per_tool = self.per_tool.lock().unwrap();
        let stats = per_tool.entry(tool.to_string()).or_default();
        stats.latencies_ms.push(latency_ms);
        if is_error {
            stats.tool_errors += 1;
        } else {
            stats.ok += 1;
        }
        if cache_hit {
            stats.cache_hits += 1;
        } else {
            stats.cache_misses += 1;
        }
    }

    pub fn requests_total(&self) -> u64 {
        self.requests_total.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self, now_ms: u64) -> Value {
        let per_tool = self.per_tool.lock().unwrap();
        let mut tools = Map::new();
        for (name, stats) in per_tool.iter() {
            let mut sorted = stats.latencies_ms.clone();
            sorted.sort_by(f64::total_cmp);
            let calls = stats.ok + stats.tool_errors;
            let lookups = stats.cache_hits + stats.cache_misses;
            tools.insert(
                name.clone(),
                json!({
                    "calls": calls,
                    "p50_ms": percentile(&sorted, 0.50),
                    "p95_ms": percentile(&sorted, 0.95),
                    "p99_ms": percentile(&sorted, 0.99),
                    "success_rate": if calls > 0 { stats.ok as f64 / calls as f64 } else { 0.0 },
                    "cache_hit_rate": if lookups > 0 {
                        stats.cache_hits as f64 / lookups as f64
                    } else {
                        0.0
                    },
                }),
            );
        }
        let total = self.requests_total();
        let uptime_ms = now_ms.saturating_sub(self.started_ms).max(1);
        json!({
            "uptime_ms": uptime_ms,
            "requests_total": total,
            "requests_per_sec": total as f64 * 1000.0 / uptime_ms as f64,
            "per_tool": Value::Object(tools),
        })
    }
}

/// Nearest-rank percentile over an ascending sample; 0 for empty input.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_reports_percentiles_and_rates() {
        let m = Metrics::new(0);
        for i in 1..=100 {
            m.observe_request();
            m.observe_call("FetchResources", i as f64, i > 90, false);
        }
        m.observe_call("FetchResources", 1.0, false, true);
        let snap = m.snapshot(10_000);
        let tool = &snap["per_tool"]["FetchResources"];
        assert_eq!(tool["p50_ms"], 50.0);
        assert_eq!(tool["p99_ms"], 99.0);
        assert_eq!(tool["calls"], 101);
        let hit_rate = tool["cache_hit_rate"].as_f64().unwrap();
        assert!((hit_rate - 1.0 / 101.0).abs() < 1e-12);
        assert_eq!(snap["requests_total"], 100);
        assert_eq!(snap["requests_per_sec"], 10.0);
    }

    #[test]
    fn empty_snapshot_is_well_formed() {
        let m = Metrics::new(5);
        let snap = m.snapshot(5);
        assert_eq!(snap["requests_total"], 0);
        assert!(snap["per_tool"].as_object().unwrap().is_empty());
    }
}
