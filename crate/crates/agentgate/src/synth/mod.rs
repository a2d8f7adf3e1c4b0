//! Synthetic tool server: a deterministic fake downstream with log-normal
//! latency injection, weighted failure injection, an async task lifecycle,
//! idempotency replay, response caches, and poll rate limiting.
//!
//! The core is transport-free: [`SynthState::handle_rpc`] maps request bytes
//! to a [`Reply`] carrying the response plus the latency the transport
//! should impose. The HTTP layer sleeps that latency; in-process callers may
//! treat it as modeled time. All randomness comes from one seeded stream, so
//! identical (config, seed, request script) runs are byte-identical.

pub mod http;
pub mod idempotency;
pub mod latency;
pub mod limiter;
pub mod metrics;
pub mod tasks;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Map, Value};

use crate::clock::Clock;
use crate::config::{SynthConfig, ToolSimConfig};
use crate::protocol::{
    dispatch, is_task_augmented, parse_request, validate_params, validate_tools, CallToolResult,
    Capabilities, Handler, InputSchema, RpcError, RpcId, RpcRequest, RpcResponse, SessionState,
    SideEffects, ToolDescriptor, CODE_APP_RATE_LIMITED, CODE_APP_TASK_UNKNOWN,
    CODE_APP_VERSION_MISMATCH, CODE_METHOD_NOT_FOUND,
};
use crate::seed;
use crate::serf::{SerfCategory, SerfError, SuggestedAction};
use idempotency::IdempotencyStore;
use latency::LatencySampler;
use limiter::PollLimiter;
use metrics::Metrics;
use tasks::{PollOutcome, TaskStore};

/// Parameters that belong to the protocol layers, not to tool semantics;
/// excluded from cache keys and side-effect records.
const RESERVED_PARAMS: [&str; 4] = [
    "_broker_context",
    "task_augment",
    "idempotency_key",
    "user_confirmed",
];

/// How injected failures are surfaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorStyle {
    /// Machine-readable structured errors.
    Serf,
    /// Generic error strings with no recovery metadata.
    Plain,
}

/// Outcome of one inbound request, transport-agnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub http_status: u16,
    pub retry_after_s: Option<u64>,
    /// Simulated work time to impose before sending the response.
    pub sleep_ms: f64,
    /// Absent for notifications.
    pub response: Option<RpcResponse>,
}

impl Reply {
    fn rpc(response: RpcResponse) -> Self {
        Self {
            http_status: 200,
            retry_after_s: None,
            sleep_ms: 0.0,
            response: Some(response),
        }
    }

    fn with_sleep(mut self, ms: f64) -> Self {
        self.sleep_ms = ms;
        self
    }

    /// Response body bytes in canonical serialization (empty for
    /// notifications).
    pub fn body(&self) -> Vec<u8> {
        self.response
            .as_ref()
            .map(|r| r.to_canonical_bytes())
            .unwrap_or_default()
    }

    /// The result value of a successful RPC reply, if any.
    pub fn result(&self) -> Option<&Value> {
        self.response.as_ref().and_then(|r| r.payload.as_ref().ok())
    }

    pub fn error(&self) -> Option<&RpcError> {
        self.response.as_ref().and_then(|r| r.payload.as_ref().err())
    }
}

fn respond(id: Option<RpcId>, outcome: Result<Value, RpcError>) -> Reply {
    match id {
        // Notifications are acted on but never answered.
        None => Reply {
            http_status: 204,
            retry_after_s: None,
            sleep_ms: 0.0,
            response: None,
        },
        Some(id) => Reply::rpc(match outcome {
            Ok(value) => RpcResponse::success(Some(id), value),
            Err(error) => RpcResponse::failure(Some(id), error),
        }),
    }
}

/// Tenant visibility resolved for one call. `All` is the deliberately
/// unsafe fallback of input-parameter identity: with no identity signal the
/// server has nothing to filter by.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Scope {
    Tenant(String),
    All,
    Empty,
}

impl Scope {
    fn key(&self) -> String {
        match self {
            Scope::Tenant(t) => format!("t:{t}"),
            Scope::All => "all".to_string(),
            Scope::Empty => "none".to_string(),
        }
    }
}

/// One recorded write side effect, for idempotency assertions.
#[derive(Debug, Clone, PartialEq)]
pub struct WriteRecord {
    pub tool: String,
    pub scope: String,
    pub args: String,
    pub at_ms: u64,
}

struct CacheEntry {
    result: CallToolResult,
    stored_at: u64,
}

pub struct SynthState {
    config: SynthConfig,
    clock: Arc<dyn Clock>,
    error_style: ErrorStyle,
    session: Mutex<SessionState>,
    rng: Mutex<ChaCha20Rng>,
    samplers: HashMap<String, LatencySampler>,
    descriptors: Vec<ToolDescriptor>,
    tasks: TaskStore,
    idempotency: IdempotencyStore,
    limiter: PollLimiter,
    cache: Mutex<HashMap<(String, String, String), CacheEntry>>,
    metrics: Metrics,
    writes: Mutex<Vec<WriteRecord>>,
    sweeper_alive: AtomicBool,
}

impl SynthState {
    pub fn new(
        config: SynthConfig,
        clock: Arc<dyn Clock>,
        error_style: ErrorStyle,
    ) -> Result<Self, String> {
        let mut descriptors = Vec::new();
        let mut samplers = HashMap::new();
        for (name, tool) in &config.tools {
            if tool.latency_mean_ms <= 0.0 {
                return Err(format!("tool {name}: latency mean must be positive"));
            }
            let mut schema = InputSchema::object();
            for p in &tool.params {
                let description = format!("{} value", p.name.replace('_', " "));
                schema = schema.with_property(&p.name, &p.kind, &description, p.required);
            }
            let descriptor = ToolDescriptor {
                name: name.clone(),
                description: tool.description.clone(),
                input_schema: schema,
                side_effects: tool.side_effects,
                idempotent: tool.idempotent,
            };
            descriptor.validate()?;
            samplers.insert(
                name.clone(),
                LatencySampler::new(tool.latency_mean_ms, tool.latency_stddev_ms),
            );
            descriptors.push(descriptor);
        }
        validate_tools(&descriptors)?;
        let now = clock.now_ms();
        let rng = seed::stream(config.seed, "synth", 0);
        let idempotency = IdempotencyStore::new(config.idempotency_ttl_ms);
        let limiter = PollLimiter::new(config.poll_bucket_capacity);
        Ok(Self {
            config,
            clock,
            error_style,
            session: Mutex::new(SessionState::default()),
            rng: Mutex::new(rng),
            samplers,
            descriptors,
            tasks: TaskStore::new(),
            idempotency,
            limiter,
            cache: Mutex::new(HashMap::new()),
            metrics: Metrics::new(now),
            writes: Mutex::new(Vec::new()),
            sweeper_alive: AtomicBool::new(false),
        })
    }

    pub fn descriptors(&self) -> &[ToolDescriptor] {
        &self.descriptors
    }

    pub fn writes(&self) -> Vec<WriteRecord> {
        self.writes.lock().unwrap().clone()
    }

    pub fn metrics_snapshot(&self) -> Value {
        self.metrics.snapshot(self.clock.now_ms())
    }

    pub fn set_sweeper_alive(&self, alive: bool) {
        self.sweeper_alive.store(alive, Ordering::SeqCst);
    }

    /// Readiness: tool configs loaded and the sweeper running.
    pub fn ready(&self) -> bool {
        !self.descriptors.is_empty() && self.sweeper_alive.load(Ordering::SeqCst)
    }

    /// Expires idle tasks and drops stale idempotency entries.
    pub fn sweep(&self) -> usize {
        let now = self.clock.now_ms();
        self.idempotency.purge_stale(now);
        self.tasks.sweep(now)
    }

    /// Full request path: parse, dispatch, execute. `client_id` scopes the
    /// poll rate limiter (the transport takes it from X-Client-Id).
    pub fn handle_rpc(&self, raw: &[u8], client_id: &str) -> Reply {
        self.metrics.observe_request();
        let request = match parse_request(raw) {
            Ok(r) => r,
            Err(rejection) => return Reply::rpc(rejection.into_response()),
        };
        let session = *self.session.lock().unwrap();
        let handler = match dispatch(&request, &session) {
            Ok(h) => h,
            Err(error) => return respond(request.id.clone(), Err(error)),
        };
        match handler {
            Handler::Initialize => self.handle_initialize(&request),
            Handler::Ping => respond(request.id.clone(), Ok(json!({}))),
            Handler::ToolsList => respond(
                request.id.clone(),
                Ok(json!({ "tools": self.descriptors })),
            ),
            Handler::ToolsCall => self.handle_tools_call(&request),
            Handler::TasksGet => self.handle_tasks_get(&request, client_id),
            Handler::TasksCancel => self.handle_tasks_cancel(&request),
        }
    }

    fn handle_initialize(&self, request: &RpcRequest) -> Reply {
        let id = request.id.clone();
        let mut session = self.session.lock().unwrap();
        if session.initialized {
            return respond(id, Err(RpcError::invalid_request("session already initialized")));
        }
        let Some(version) = request
            .params_object()
            .and_then(|p| p.get("protocolVersion"))
            .and_then(Value::as_str)
        else {
            return respond(id, Err(RpcError::invalid_params(&["protocolVersion".into()])));
        };
        if version != self.config.protocol_version {
            // Refuse rather than silently downgrade; session stays closed.
            return respond(
                id,
                Err(RpcError::new(
                    CODE_APP_VERSION_MISMATCH,
                    format!(
                        "unsupported protocol version {version:?}; this server speaks {:?}",
                        self.config.protocol_version
                    ),
                )),
            );
        }
        session.initialized = true;
        session.tasks_enabled = self.config.experimental_tasks;
        let capabilities = Capabilities {
            protocol_version: self.config.protocol_version.clone(),
            experimental_tasks: self.config.experimental_tasks,
        };
        respond(id, Ok(serde_json::to_value(capabilities).expect("capabilities serialize")))
    }

    fn handle_tools_call(&self, request: &RpcRequest) -> Reply {
        let id = request.id.clone();
        let Some(name) = request.tool_name() else {
            return respond(id, Err(RpcError::invalid_params(&["name".into()])));
        };
        let name = name.to_string();
        let Some(tool_cfg) = self.config.tools.get(&name) else {
            return respond(
                id,
                Err(RpcError::new(CODE_METHOD_NOT_FOUND, format!("unknown tool: {name}"))),
            );
        };
        let descriptor = self
            .descriptors
            .iter()
            .find(|d| d.name == name)
            .expect("descriptor exists for configured tool");
        if let Err(error) = validate_params(request, descriptor) {
            return respond(id, Err(error));
        }
        let args = request.arguments();
        let now = self.clock.now_ms();
        let scope = self.resolve_scope(&args);
        let idem_key = if descriptor.side_effects == SideEffects::Write {
            request
                .params_object()
                .and_then(|p| p.get("idempotency_key"))
                .and_then(Value::as_str)
                .map(str::to_string)
        } else {
            None
        };

        // Replays return the stored result without re-executing: no latency
        // sample, no failure roll, no new side effect.
        if let Some(key) = &idem_key {
            if let Some(stored) = self.idempotency.get(key, now) {
                self.metrics.observe_call(&name, 0.0, false, false);
                return respond(id, Ok(stored));
            }
        }

        if is_task_augmented(request) {
            // Accept immediately; the sampled latency becomes the planned
            // background duration instead of a response delay.
            let (latency_ms, result) = self.execute_tool(&name, tool_cfg, &scope, &args, now);
            let task_id = format!("task-{:016x}", self.rng.lock().unwrap().gen::<u64>());
            self.tasks.create(
                &task_id,
                now,
                self.config.task_ttl_ms,
                latency_ms.round() as u64,
                result,
            );
            let accept = json!({ "task_id": task_id, "status": "working" });
            if let Some(key) = &idem_key {
                self.idempotency.put(key, accept.clone(), now);
            }
            self.metrics.observe_call(&name, 0.0, false, false);
            return respond(id, Ok(accept));
        }

        let cache_key = (name.clone(), scope.key(), canonical_args(&args));
        if tool_cfg.cache_ttl_ms > 0 {
            if let Some(hit) = self.cache_get(&cache_key, tool_cfg.cache_ttl_ms, now) {
                self.metrics.observe_call(&name, 0.0, hit.is_error, true);
                let value = serde_json::to_value(&hit).expect("result serializes");
                return respond(id, Ok(value));
            }
        }

        let (latency_ms, result) = self.execute_tool(&name, tool_cfg, &scope, &args, now);
        if tool_cfg.cache_ttl_ms > 0 && !result.is_error {
            self.cache.lock().unwrap().insert(
                cache_key,
                CacheEntry {
                    result: result.clone(),
                    stored_at: now,
                },
            );
        }
        if let Some(key) = &idem_key {
            // Failed writes do not consume the key; a retry re-executes.
            if !result.is_error {
                self.idempotency.put(
                    key,
                    serde_json::to_value(&result).expect("result serializes"),
                    now,
                );
            }
        }
        self.metrics
            .observe_call(&name, latency_ms, result.is_error, false);
        let value = serde_json::to_value(&result).expect("result serializes");
        respond(id, Ok(value)).with_sleep(latency_ms)
    }

    /// Samples latency, rolls failure injection, and produces the result.
    /// Draw order per call is fixed: latency, failure roll, then either the
    /// failure category or the write ticket.
    fn execute_tool(
        &self,
        name: &str,
        tool_cfg: &ToolSimConfig,
        scope: &Scope,
        args: &Map<String, Value>,
        now: u64,
    ) -> (f64, CallToolResult) {
        let sampler = &self.samplers[name];
        let mut rng = self.rng.lock().unwrap();
        let latency_ms = sampler.sample(&mut *rng);
        let roll: f64 = rng.gen();
        if roll < tool_cfg.failure_rate {
            let category = pick_category(&tool_cfg.failure_mix, rng.gen());
            drop(rng);
            let result = match self.error_style {
                ErrorStyle::Serf => self.build_serf_error(category, name).into_tool_result(),
                ErrorStyle::Plain => {
                    CallToolResult::error_text(format!("Error: {name} request failed"))
                }
            };
            return (latency_ms, result);
        }
        if tool_cfg.side_effects == SideEffects::Write {
            let ticket = format!("lim-{:08x}", rng.gen::<u32>());
            drop(rng);
            self.writes.lock().unwrap().push(WriteRecord {
                tool: name.to_string(),
                scope: scope.key(),
                args: canonical_args(args),
                at_ms: now,
            });
            let body = json!({ "status": "accepted", "ticket": ticket });
            return (latency_ms, CallToolResult::ok_text(canonical(&body)));
        }
        drop(rng);
        let records = self.records_for(tool_cfg, scope);
        let body = json!({ "records": records });
        (latency_ms, CallToolResult::ok_text(canonical(&body)))
    }

    /// Identity resolution for direct callers. Trust order: broker context,
    /// then the user_email input parameter, then nothing. The nothing case
    /// returns every tenant's records, which is exactly the vulnerability
    /// the broker exists to close.
    fn resolve_scope(&self, args: &Map<String, Value>) -> Scope {
        if let Some(ctx) = args.get("_broker_context").and_then(Value::as_object) {
            if let Some(tenant) = ctx.get("tenant_id").and_then(Value::as_str) {
                if !tenant.is_empty() {
                    return Scope::Tenant(tenant.to_string());
                }
            }
            return Scope::Empty;
        }
        if let Some(email) = args.get("user_email").and_then(Value::as_str) {
            return match self.config.users.get(email) {
                Some(tenant) => Scope::Tenant(tenant.clone()),
                None => Scope::Empty,
            };
        }
        Scope::All
    }

    fn records_for(&self, tool_cfg: &ToolSimConfig, scope: &Scope) -> Vec<Value> {
        match scope {
            Scope::Tenant(t) => tool_cfg
                .tenant_data
                .get(t)
                .map(|records| records.iter().cloned().map(Value::Object).collect())
                .unwrap_or_default(),
            Scope::All => tool_cfg
                .tenant_data
                .values()
                .flatten()
                .cloned()
                .map(Value::Object)
                .collect(),
            Scope::Empty => Vec::new(),
        }
    }

    fn build_serf_error(&self, category: SerfCategory, tool: &str) -> SerfError {
        let error = match category {
            SerfCategory::ResourceExhausted => {
                SerfError::new(category, true).with_retry_after(1000)
            }
            SerfCategory::UpstreamFailure => SerfError::new(category, true),
            SerfCategory::ResourceNotFound => SerfError::new(category, false)
                .with_action(SuggestedAction::switch_resource("project_id")),
            SerfCategory::InvalidInput => SerfError::new(category, false).with_action(
                SuggestedAction::escalate_to_user("The request parameters are invalid"),
            ),
            SerfCategory::PermissionDenied => SerfError::new(category, false).with_action(
                SuggestedAction::escalate_to_user("Access to this resource was denied"),
            ),
            SerfCategory::InternalError => SerfError::new(category, false),
        };
        error.with_context("tool", json!(tool))
    }

    fn cache_get(
        &self,
        key: &(String, String, String),
        ttl_ms: u64,
        now: u64,
    ) -> Option<CallToolResult> {
        let mut cache = self.cache.lock().unwrap();
        match cache.get(key) {
            Some(entry) if now.saturating_sub(entry.stored_at) <= ttl_ms => {
                Some(entry.result.clone())
            }
            Some(_) => {
                cache.remove(key);
                None
            }
            None => None,
        }
    }

    fn handle_tasks_get(&self, request: &RpcRequest, client_id: &str) -> Reply {
        let id = request.id.clone();
        let now = self.clock.now_ms();
        if !self.limiter.try_acquire(client_id, now) {
            let error = RpcError::new(CODE_APP_RATE_LIMITED, "poll rate exceeded; retry after 1s");
            let mut reply = respond(id, Err(error));
            reply.http_status = 429;
            reply.retry_after_s = Some(1);
            return reply;
        }
        let Some(task_id) = request
            .params_object()
            .and_then(|p| p.get("task_id"))
            .and_then(Value::as_str)
        else {
            return respond(id, Err(RpcError::invalid_params(&["task_id".into()])));
        };
        match self.tasks.poll(task_id, now) {
            PollOutcome::Gone { was_expired } => respond(id, Err(task_gone(task_id, was_expired))),
            PollOutcome::Status { status, result } => {
                let mut body = json!({ "task_id": task_id, "status": status.as_str() });
                if let Some(result) = result {
                    body["result"] = serde_json::to_value(&result).expect("result serializes");
                }
                respond(id, Ok(body))
            }
        }
    }

    fn handle_tasks_cancel(&self, request: &RpcRequest) -> Reply {
        let id = request.id.clone();
        let now = self.clock.now_ms();
        let Some(task_id) = request
            .params_object()
            .and_then(|p| p.get("task_id"))
            .and_then(Value::as_str)
        else {
            return respond(id, Err(RpcError::invalid_params(&["task_id".into()])));
        };
        match self.tasks.cancel(task_id, now) {
            PollOutcome::Gone { was_expired } => respond(id, Err(task_gone(task_id, was_expired))),
            PollOutcome::Status { status, .. } => respond(
                id,
                Ok(json!({ "task_id": task_id, "status": status.as_str() })),
            ),
        }
    }
}

fn task_gone(task_id: &str, was_expired: bool) -> RpcError {
    RpcError::new(CODE_APP_TASK_UNKNOWN, "task expired or unknown").with_data(json!({
        "task_id": task_id,
        "status": if was_expired { "expired" } else { "unknown" },
    }))
}

/// Weighted pick over categories in key order; weights were validated to
/// sum to 1.
fn pick_category(mix: &BTreeMap<String, f64>, roll: f64) -> SerfCategory {
    let mut acc = 0.0;
    let mut last = SerfCategory::InternalError;
    for (name, weight) in mix {
        let category: SerfCategory =
            serde_json::from_value(Value::String(name.clone())).expect("validated category");
        acc += weight;
        last = category;
        if roll < acc {
            return category;
        }
    }
    last
}

/// Canonical representation of tool arguments: reserved protocol parameters
/// stripped, keys sorted.
fn canonical_args(args: &Map<String, Value>) -> String {
    let filtered: BTreeMap<&String, &Value> = args
        .iter()
        .filter(|(k, _)| !RESERVED_PARAMS.contains(&k.as_str()))
        .collect();
    serde_json::to_string(&filtered).expect("arguments serialize")
}

fn canonical(value: &Value) -> String {
    serde_json::to_string(value).expect("value serializes")
}
