//! Application configuration: one TOML document with broker, synth, and
//! bench sections. Every field has a default, so an empty document is a
//! complete working configuration. Dumping the effective config and loading
//! it back is stable, which keeps the config hash in reports meaningful.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::identity::{TrustedKeyConfig, DEFAULT_CLOCK_SKEW_S};
use crate::protocol::SideEffects;

pub const DEFAULT_PROTOCOL_VERSION: &str = "2025-06-18";

/// Symmetric key used by the default trust store entry and by the harness
/// when minting tokens. Desk-scale fixture, not a secret.
pub const DEFAULT_HS256_KEY: &[u8] = b"agentgate-bench-hs256-secret-key";
pub const DEFAULT_ISSUER: &str = "https://auth.bench.test";
pub const DEFAULT_KID: &str = "bench-1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config field {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("environment override {var}: {reason}")]
    Env { var: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub log_level: LogLevel,
    pub broker: BrokerConfig,
    pub synth: SynthConfig,
    pub bench: BenchConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    Error,
    Warn,
    #[default]
    Info,
    Debug,
    Trace,
}

impl LogLevel {
    pub fn as_filter(&self) -> &'static str {
        match self {
            LogLevel::Error => "error",
            LogLevel::Warn => "warn",
            LogLevel::Info => "info",
            LogLevel::Debug => "debug",
            LogLevel::Trace => "trace",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrokerConfig {
    pub listen: String,
    /// Downstream /rpc endpoint the broker forwards to.
    pub downstream: String,
    pub default_timeout_ms: u64,
    pub max_response_bytes: usize,
    pub audit_path: String,
    /// Field names deleted from every record during sanitization.
    pub redact_fields: Vec<String>,
    /// Static headers attached to downstream requests (credential stand-in).
    pub credential_headers: BTreeMap<String, String>,
    pub per_tool_timeout_ms: BTreeMap<String, u64>,
    pub circuit: CircuitConfig,
    pub acl: BTreeMap<String, AclEntryConfig>,
    pub trust: TrustConfig,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        let mut acl = BTreeMap::new();
        for tool in ["FetchResources", "FetchServices", "FetchUsageLimits"] {
            acl.insert(
                tool.to_string(),
                AclEntryConfig {
                    allowed_roles: vec!["support".into(), "admin".into()],
                    requires_user_confirmation: false,
                },
            );
        }
        acl.insert(
            "CreateLimitRequest".to_string(),
            AclEntryConfig {
                allowed_roles: vec!["support".into()],
                requires_user_confirmation: true,
            },
        );
        Self {
            listen: "127.0.0.1:7411".into(),
            downstream: "http://127.0.0.1:7412/rpc".into(),
            default_timeout_ms: 30_000,
            max_response_bytes: 1_048_576,
            audit_path: "audit.ndjson".into(),
            redact_fields: vec!["internal_cost".into()],
            credential_headers: BTreeMap::new(),
            per_tool_timeout_ms: BTreeMap::new(),
            circuit: CircuitConfig::default(),
            acl,
            trust: TrustConfig::default(),
        }
    }
}

impl BrokerConfig {
    pub fn timeout_for(&self, tool: &str) -> u64 {
        self.per_tool_timeout_ms
            .get(tool)
            .copied()
            .unwrap_or(self.default_timeout_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitConfig {
    pub failure_threshold: u32,
    pub open_duration_ms: u64,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        Self {
            failure_threshold: 5,
            open_duration_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AclEntryConfig {
    pub allowed_roles: Vec<String>,
    pub requires_user_confirmation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustConfig {
    pub clock_skew_s: u64,
    pub keys: Vec<TrustedKeyConfig>,
}

impl Default for TrustConfig {
    fn default() -> Self {
        use base64::engine::general_purpose::STANDARD;
        use base64::Engine;
        Self {
            clock_skew_s: DEFAULT_CLOCK_SKEW_S,
            keys: vec![TrustedKeyConfig {
                iss: DEFAULT_ISSUER.into(),
                kid: DEFAULT_KID.into(),
                alg: "HS256".into(),
                key_base64: STANDARD.encode(DEFAULT_HS256_KEY),
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub listen: String,
    pub seed: u64,
    pub protocol_version: String,
    pub experimental_tasks: bool,
    pub task_ttl_ms: u64,
    pub idempotency_ttl_ms: u64,
    /// Poll rate limiting: bucket capacity in tokens; refill is fixed at one
    /// token per second.
    pub poll_bucket_capacity: f64,
    /// Directory mapping user email to tenant, used by the direct-mode
    /// identity workaround.
    pub users: BTreeMap<String, String>,
    pub tools: BTreeMap<String, ToolSimConfig>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7412".into(),
            seed: 42,
            protocol_version: DEFAULT_PROTOCOL_VERSION.into(),
            experimental_tasks: true,
            task_ttl_ms: 15 * 60 * 1000,
            idempotency_ttl_ms: 24 * 60 * 60 * 1000,
            poll_bucket_capacity: 1.0,
            users: BTreeMap::from([
                ("alice@acme.example".to_string(), "acme".to_string()),
                ("bob@globex.example".to_string(), "globex".to_string()),
            ]),
            tools: default_tools(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolSimConfig {
    pub description: String,
    pub side_effects: SideEffects,
    pub idempotent: bool,
    pub latency_mean_ms: f64,
    pub latency_stddev_ms: f64,
    /// Probability a call fails with an injected structured error.
    pub failure_rate: f64,
    /// Category weights for injected failures; must sum to 1 when
    /// failure_rate > 0. Keys are wire-format category names.
    pub failure_mix: BTreeMap<String, f64>,
    /// Response cache TTL per (tenant, args); 0 disables caching.
    pub cache_ttl_ms: u64,
    pub params: Vec<ParamSpec>,
    pub tenant_data: BTreeMap<String, Vec<Map<String, Value>>>,
}

impl Default for ToolSimConfig {
    fn default() -> Self {
        Self {
            description: String::new(),
            side_effects: SideEffects::ReadOnly,
            idempotent: true,
            latency_mean_ms: 200.0,
            latency_stddev_ms: 0.0,
            failure_rate: 0.0,
            failure_mix: BTreeMap::new(),
            cache_ttl_ms: 0,
            params: Vec::new(),
            tenant_data: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    pub kind: String,
    #[serde(default)]
    pub required: bool,
}

impl ParamSpec {
    fn new(name: &str, kind: &str, required: bool) -> Self {
        Self {
            name: name.into(),
            kind: kind.into(),
            required,
        }
    }
}

fn record(fields: &[(&str, Value)]) -> Map<String, Value> {
    fields
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

fn default_tools() -> BTreeMap<String, ToolSimConfig> {
    use serde_json::json;
    let mut tools = BTreeMap::new();
    tools.insert(
        "FetchResources".to_string(),
        ToolSimConfig {
            description: "Lists active resources for a project".into(),
            side_effects: SideEffects::ReadOnly,
            idempotent: true,
            latency_mean_ms: 200.0,
            latency_stddev_ms: 50.0,
            cache_ttl_ms: 5 * 60 * 1000,
            params: vec![
                ParamSpec::new("project_id", "string", true),
                ParamSpec::new("resource_type", "string", false),
                ParamSpec::new("user_email", "string", false),
            ],
            tenant_data: BTreeMap::from([
                (
                    "acme".to_string(),
                    vec![
                        record(&[
                            ("id", json!("res-a1")),
                            ("name", json!("vm-alpha")),
                            ("tenant_id", json!("acme")),
                            ("internal_cost", json!(12.5)),
                        ]),
                        record(&[
                            ("id", json!("res-a2")),
                            ("name", json!("db-alpha")),
                            ("tenant_id", json!("acme")),
                            ("internal_cost", json!(31.0)),
                        ]),
                    ],
                ),
                (
                    "globex".to_string(),
                    vec![
                        record(&[
                            ("id", json!("res-g1")),
                            ("name", json!("vm-gamma")),
                            ("tenant_id", json!("globex")),
                            ("internal_cost", json!(8.75)),
                        ]),
                        record(&[
                            ("id", json!("res-g2")),
                            ("name", json!("cache-gamma")),
                            ("tenant_id", json!("globex")),
                            ("internal_cost", json!(4.2)),
                        ]),
                    ],
                ),
            ]),
            ..ToolSimConfig::default()
        },
    );
    tools.insert(
        "FetchServices".to_string(),
        ToolSimConfig {
            description: "Lists enabled services for a project".into(),
            side_effects: SideEffects::ReadOnly,
            idempotent: true,
            latency_mean_ms: 150.0,
            latency_stddev_ms: 40.0,
            cache_ttl_ms: 5 * 60 * 1000,
            params: vec![
                ParamSpec::new("project_id", "string", true),
                ParamSpec::new("user_email", "string", false),
            ],
            tenant_data: BTreeMap::from([
                (
                    "acme".to_string(),
                    vec![record(&[
                        ("service", json!("compute")),
                        ("status", json!("enabled")),
                        ("tenant_id", json!("acme")),
                    ])],
                ),
                (
                    "globex".to_string(),
                    vec![record(&[
                        ("service", json!("storage")),
                        ("status", json!("enabled")),
                        ("tenant_id", json!("globex")),
                    ])],
                ),
            ]),
            ..ToolSimConfig::default()
        },
    );
    tools.insert(
        "FetchUsageLimits".to_string(),
        ToolSimConfig {
            description: "Returns current usage limits and consumption".into(),
            side_effects: SideEffects::ReadOnly,
            idempotent: true,
            latency_mean_ms: 300.0,
            latency_stddev_ms: 75.0,
            cache_ttl_ms: 30 * 1000,
            params: vec![
                ParamSpec::new("project_id", "string", true),
                ParamSpec::new("service_name", "string", true),
                ParamSpec::new("user_email", "string", false),
            ],
            tenant_data: BTreeMap::from([
                (
                    "acme".to_string(),
                    vec![record(&[
                        ("service", json!("compute")),
                        ("limit", json!(100)),
                        ("used", json!(37)),
                        ("tenant_id", json!("acme")),
                    ])],
                ),
                (
                    "globex".to_string(),
                    vec![record(&[
                        ("service", json!("compute")),
                        ("limit", json!(250)),
                        ("used", json!(242)),
                        ("tenant_id", json!("globex")),
                    ])],
                ),
            ]),
            ..ToolSimConfig::default()
        },
    );
    tools.insert(
        "CreateLimitRequest".to_string(),
        ToolSimConfig {
            description: "Files a limit increase request".into(),
            side_effects: SideEffects::Write,
            idempotent: false,
            latency_mean_ms: 400.0,
            latency_stddev_ms: 100.0,
            cache_ttl_ms: 0,
            params: vec![
                ParamSpec::new("project_id", "string", true),
                ParamSpec::new("service_name", "string", true),
                ParamSpec::new("new_limit", "number", true),
                ParamSpec::new("justification", "string", false),
                ParamSpec::new("user_email", "string", false),
            ],
            tenant_data: BTreeMap::new(),
            ..ToolSimConfig::default()
        },
    );
    tools
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum H2Transport {
    /// Real loopback HTTP; latencies are wall-clock measurements.
    #[default]
    Live,
    /// Deterministic in-process model; reports are byte-reproducible.
    Modeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    /// Trials per arm; absent means the experiment's own default
    /// (h1: 100, h2: 1000, h3/h4: 500, serf_policy: 200).
    pub trials: Option<u32>,
    pub out_dir: String,
    /// Enforce minimum trial counts (500 latency, 200 error recovery).
    pub strict: bool,
    pub workers: u32,
    /// Tool chain driven by the latency experiments, in call order.
    pub chain: Vec<String>,
    /// Turn budget; absent means 1.15 x sum of chain means.
    pub budget_ms: Option<f64>,
    pub reserve_frac: f64,
    /// Heterogeneous latency profile for h3/h4, aligned with `chain`.
    pub latency_means_ms: Vec<f64>,
    pub latency_stddevs_ms: Vec<f64>,
    /// Observations recorded per tool before measured trials begin.
    pub warmup_observations: u32,
    /// Failure injection rate for the serf_policy experiment.
    pub failure_rate: f64,
    pub max_retries: u32,
    /// Hard cap on recovery steps per episode.
    pub max_steps: u32,
    pub h2_transport: H2Transport,
    /// Synthetic latency used by h2 arms (zero variance).
    pub h2_latency_mean_ms: f64,
    pub h2_overhead_target_ms: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            trials: None,
            out_dir: "reports".into(),
            strict: false,
            workers: 1,
            chain: vec![
                "FetchResources".into(),
                "FetchServices".into(),
                "FetchUsageLimits".into(),
                "CreateLimitRequest".into(),
            ],
            budget_ms: None,
            reserve_frac: 0.10,
            latency_means_ms: vec![200.0, 2000.0, 2000.0, 2000.0],
            latency_stddevs_ms: vec![50.0, 600.0, 600.0, 800.0],
            warmup_observations: 100,
            failure_rate: 0.20,
            max_retries: crate::serf::DEFAULT_MAX_RETRIES,
            max_steps: 8,
            h2_transport: H2Transport::Live,
            h2_latency_mean_ms: 5.0,
            h2_overhead_target_ms: 15.0,
        }
    }
}

impl BenchConfig {
    /// Budget under the tuning rule when not pinned explicitly.
    pub fn effective_budget_ms(&self) -> f64 {
        self.budget_ms
            .unwrap_or_else(|| 1.15 * self.latency_means_ms.iter().sum::<f64>())
    }
}

impl AppConfig {
    pub fn load(path: &str) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_string(),
            source,
        })?;
        Self::load_str(&text)
    }

    pub fn load_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Effective config with all defaults materialized.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the effective config, recorded in reports.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml_string().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Applies AGENTGATE_* environment overrides for the documented scalar
    /// keys. Unknown AGENTGATE_ variables are rejected so typos surface.
    pub fn apply_env_overrides<I>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        fn parse<T: std::str::FromStr>(var: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e| ConfigError::Env {
                var: var.to_string(),
                reason: format!("cannot parse {value:?}: {e}"),
            })
        }
        for (var, value) in vars {
            match var.as_str() {
                "AGENTGATE_LOG_LEVEL" => {
                    self.log_level = serde_json::from_value(Value::String(value.clone()))
                        .map_err(|_| ConfigError::Env {
                            var,
                            reason: format!("unknown log level {value:?}"),
                        })?;
                }
                "AGENTGATE_BROKER_LISTEN" => self.broker.listen = value,
                "AGENTGATE_BROKER_DOWNSTREAM" => self.broker.downstream = value,
                "AGENTGATE_SYNTH_LISTEN" => self.synth.listen = value,
                "AGENTGATE_SYNTH_SEED" => self.synth.seed = parse(&var, &value)?,
                "AGENTGATE_BENCH_SEED" => self.bench.seed = parse(&var, &value)?,
                "AGENTGATE_BENCH_TRIALS" => self.bench.trials = Some(parse(&var, &value)?),
                "AGENTGATE_BENCH_OUT" => self.bench.out_dir = value,
                "AGENTGATE_BENCH_STRICT" => self.bench.strict = parse(&var, &value)?,
                other if other.starts_with("AGENTGATE_") => {
                    return Err(ConfigError::Env {
                        var,
                        reason: "not an overridable key".into(),
                    });
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.broker.listen.parse::<std::net::SocketAddr>().map_err(|e| {
            invalid("broker.listen", format!("not a socket address: {e}"))
        })?;
        self.synth.listen.parse::<std::net::SocketAddr>().map_err(|e| {
            invalid("synth.listen", format!("not a socket address: {e}"))
        })?;
        if !self.broker.downstream.starts_with("http://")
            && !self.broker.downstream.starts_with("https://")
        {
            return Err(invalid("broker.downstream", "must be an http(s) URL"));
        }
        if self.broker.max_response_bytes == 0 {
            return Err(invalid("broker.max_response_bytes", "must be positive"));
        }
        if self.broker.default_timeout_ms == 0 {
            return Err(invalid("broker.default_timeout_ms", "must be positive"));
        }
        for (tool, ms) in &self.broker.per_tool_timeout_ms {
            if *ms == 0 {
                return Err(invalid(
                    &format!("broker.per_tool_timeout_ms.{tool}"),
                    "must be positive",
                ));
            }
        }
        if self.broker.circuit.failure_threshold == 0 {
            return Err(invalid("broker.circuit.failure_threshold", "must be positive"));
        }
        for (name, entry) in &self.broker.acl {
            if entry.allowed_roles.is_empty() {
                return Err(invalid(
                    &format!("broker.acl.{name}.allowed_roles"),
                    "must not be empty (unknown tools are denied by omission)",
                ));
            }
        }
        crate::identity::TrustStore::from_entries(
            &self.broker.trust.keys,
            self.broker.trust.clock_skew_s,
        )
        .map_err(|reason| invalid("broker.trust.keys", reason))?;
        if self.synth.poll_bucket_capacity < 1.0 {
            return Err(invalid(
                "synth.poll_bucket_capacity",
                "must hold at least one token",
            ));
        }
        for (name, tool) in &self.synth.tools {
            let field = |f: &str| format!("synth.tools.{name}.{f}");
            if tool.latency_mean_ms <= 0.0 {
                return Err(invalid(&field("latency_mean_ms"), "must be positive"));
            }
            if tool.cache_ttl_ms > 0 && tool.side_effects == SideEffects::Write {
                return Err(invalid(&field("cache_ttl_ms"), "write tools are never cached"));
            }
            if tool.latency_stddev_ms < 0.0 {
                return Err(invalid(&field("latency_stddev_ms"), "must be non-negative"));
            }
            if !(0.0..=1.0).contains(&tool.failure_rate) {
                return Err(invalid(&field("failure_rate"), "must be in [0, 1]"));
            }
            if tool.failure_rate > 0.0 {
                let sum: f64 = tool.failure_mix.values().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(invalid(
                        &field("failure_mix"),
                        format!("weights sum to {sum}, expected 1"),
                    ));
                }
                for key in tool.failure_mix.keys() {
                    if serde_json::from_value::<crate::serf::SerfCategory>(Value::String(
                        key.clone(),
                    ))
                    .is_err()
                    {
                        return Err(invalid(
                            &field("failure_mix"),
                            format!("unknown error category {key:?}"),
                        ));
                    }
                }
            }
            for spec in &tool.params {
                if !["string", "number", "boolean", "object", "array"].contains(&spec.kind.as_str())
                {
                    return Err(invalid(
                        &field("params"),
                        format!("unknown type tag {:?} for {}", spec.kind, spec.name),
                    ));
                }
            }
            for (tenant, records) in &tool.tenant_data {
                for rec in records {
                    if rec.values().any(contains_null) {
                        return Err(invalid(
                            &field(&format!("tenant_data.{tenant}")),
                            "records must not contain null values",
                        ));
                    }
                }
            }
        }
        if self.bench.chain.is_empty() {
            return Err(invalid("bench.chain", "must list at least one tool"));
        }
        for side in ["latency_means_ms", "latency_stddevs_ms"] {
            let len = if side == "latency_means_ms" {
                self.bench.latency_means_ms.len()
            } else {
                self.bench.latency_stddevs_ms.len()
            };
            if len != self.bench.chain.len() {
                return Err(invalid(
                    &format!("bench.{side}"),
                    format!("length {len} does not match chain length {}", self.bench.chain.len()),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.bench.reserve_frac) {
            return Err(invalid("bench.reserve_frac", "must be in [0, 1)"));
        }
        if let Some(b) = self.bench.budget_ms {
            if b <= 0.0 {
                return Err(invalid("bench.budget_ms", "must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.bench.failure_rate) {
            return Err(invalid("bench.failure_rate", "must be in [0, 1]"));
        }
        if self.bench.workers == 0 {
            return Err(invalid("bench.workers", "must be positive"));
        }
        // Brokered experiments call these tools through both layers, so the
        // chain must resolve in the ACL and the synth tool table.
        for tool in &self.bench.chain {
            if !self.synth.tools.contains_key(tool) {
                return Err(invalid(
                    "bench.chain",
                    format!("tool {tool:?} missing from synth.tools"),
                ));
            }
            if !self.broker.acl.contains_key(tool) {
                return Err(invalid(
                    "bench.chain",
                    format!("tool {tool:?} missing from broker.acl"),
                ));
            }
        }
        Ok(())
    }
}

fn contains_null(v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::Array(items) => items.iter().any(contains_null),
        Value::Object(map) => map.values().any(contains_null),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = AppConfig::default();
        cfg.validate().expect("default config is valid");
        assert_eq!(cfg.synth.tools.len(), 4);
        assert!(cfg.broker.acl.contains_key("CreateLimitRequest"));
    }

    #[test]
    fn empty_document_is_default() {
        let cfg = AppConfig::load_str("").unwrap();
        assert_eq!(cfg, AppConfig::default());
    }

    #[test]
    fn dump_load_round_trip_is_stable() {
        let cfg = AppConfig::default();
        let dumped = cfg.to_toml_string();
        let reloaded = AppConfig::load_str(&dumped).unwrap();
        assert_eq!(reloaded, cfg);
        assert_eq!(reloaded.to_toml_string(), dumped);
    }

    #[test]
    fn hash_tracks_content() {
        let a = AppConfig::default();
        let mut b = AppConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.bench.seed = 43;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = AppConfig::load_str("frobnicate = 1").unwrap_err();
        assert!(err.to_string().contains("frobnicate"), "{err}");
    }

    #[test]
    fn env_overrides_apply() {
        let mut cfg = AppConfig::default();
        cfg.apply_env_overrides([
            ("AGENTGATE_BENCH_SEED".to_string(), "99".to_string()),
            ("AGENTGATE_BENCH_TRIALS".to_string(), "10".to_string()),
            ("AGENTGATE_LOG_LEVEL".to_string(), "debug".to_string()),
            ("HOME".to_string(), "/tmp".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.bench.seed, 99);
        assert_eq!(cfg.bench.trials, Some(10));
        assert_eq!(cfg.log_level, LogLevel::Debug);
    }

    #[test]
    fn env_override_errors_name_the_variable() {
        let mut cfg = AppConfig::default();
        let err = cfg
            .apply_env_overrides([("AGENTGATE_BENCH_SEED".to_string(), "soon".to_string())])
            .unwrap_err();
        assert!(err.to_string().contains("AGENTGATE_BENCH_SEED"), "{err}");
        let err = cfg
            .apply_env_overrides([("AGENTGATE_TYPO".to_string(), "1".to_string())])
            .unwrap_err();
        assert!(err.to_string().contains("AGENTGATE_TYPO"), "{err}");
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = AppConfig::default();
        cfg.broker.max_response_bytes = 0;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("broker.max_response_bytes"), "{err}");

        let mut cfg = AppConfig::default();
        cfg.synth.tools.get_mut("FetchResources").unwrap().failure_rate = 0.5;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("failure_mix"), "{err}");

        let mut cfg = AppConfig::default();
        cfg.bench.latency_means_ms.pop();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("latency_means_ms"), "{err}");

        let mut cfg = AppConfig::default();
        cfg.bench.chain.push("NoSuchTool".into());
        cfg.bench.latency_means_ms.push(1.0);
        cfg.bench.latency_stddevs_ms.push(0.0);
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("NoSuchTool"), "{err}");
    }

    #[test]
    fn failure_mix_categories_must_parse() {
        let mut cfg = AppConfig::default();
        let tool = cfg.synth.tools.get_mut("FetchResources").unwrap();
        tool.failure_rate = 0.2;
        tool.failure_mix = BTreeMap::from([("NOT_A_CATEGORY".to_string(), 1.0)]);
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("NOT_A_CATEGORY"), "{err}");

        let tool = cfg.synth.tools.get_mut("FetchResources").unwrap();
        tool.failure_mix = BTreeMap::from([("RESOURCE_EXHAUSTED".to_string(), 1.0)]);
        cfg.validate().expect("valid mix accepted");
    }

    #[test]
    fn budget_rule_matches_profile() {
        let cfg = BenchConfig::default();
        let total: f64 = cfg.latency_means_ms.iter().sum();
        assert_eq!(cfg.effective_budget_ms(), 1.15 * total);
        let pinned = BenchConfig {
            budget_ms: Some(5000.0),
            ..BenchConfig::default()
        };
        assert_eq!(pinned.effective_budget_ms(), 5000.0);
    }
}
