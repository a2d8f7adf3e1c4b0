//! Tool-call broker. Every tools/call passes six stages in order: token
//! extraction, claim validation, ACL resolution, context injection +
//! forwarding, response sanitization, audit emission. A stage failure
//! short-circuits the rest but still audits; nothing is ever forwarded
//! after a failed stage.

pub mod audit;
pub mod circuit;
pub mod http;
pub mod sanitize;

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::{json, Map, Value};

use crate::clock::Clock;
use crate::config::{BrokerConfig, DEFAULT_PROTOCOL_VERSION};
use crate::identity::{self, IdentityClaims, TrustStore};
use crate::protocol::{
    self, parse_request, CallToolResult, Capabilities, Handler, RpcError, RpcRequest, RpcResponse,
    SessionState, CODE_APP_OVERSIZE, CODE_APP_TIMEOUT, CODE_APP_VERSION_MISMATCH,
    CODE_INTERNAL_ERROR, CODE_INVALID_REQUEST, METHOD_INITIALIZE, METHOD_TOOLS_CALL,
};
use crate::serf::{SerfCategory, SerfError};

use audit::{AuditRecord, AuditSink, AuditStatus};
use circuit::{CircuitBreaker, CircuitView};
use sanitize::{redacted_result, sanitize_result, SanitizePolicy};

/// Reserved parameter key carrying verified caller identity downstream.
pub const CONTEXT_KEY: &str = "_broker_context";
pub const MSG_BAD_TOKEN: &str = "Invalid or expired token";
pub const MSG_NO_PERMISSION: &str = "Insufficient permissions";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AclEntry {
    pub allowed_roles: BTreeSet<String>,
    pub requires_user_confirmation: bool,
}

impl AclEntry {
    /// Grants access iff the caller holds at least one allowed role.
    pub fn allows(&self, roles: &BTreeSet<String>) -> bool {
        roles.iter().any(|r| self.allowed_roles.contains(r))
    }
}

/// Tool -> entry map; tools without an entry are denied.
#[derive(Debug, Clone, Default)]
pub struct AclRegistry {
    entries: BTreeMap<String, AclEntry>,
}

impl AclRegistry {
    pub fn new(entries: BTreeMap<String, AclEntry>) -> Self {
        Self { entries }
    }

    pub fn get(&self, tool: &str) -> Option<&AclEntry> {
        self.entries.get(tool)
    }

    pub fn tools(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Verified caller identity injected under `_broker_context`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrokerContext {
    pub user_id: String,
    pub tenant_id: String,
    pub roles: BTreeSet<String>,
    pub scopes: BTreeSet<String>,
    pub trace_id: String,
}

impl BrokerContext {
    pub fn from_claims(claims: &IdentityClaims, trace_id: &str) -> Self {
        Self {
            user_id: claims.user_id.clone(),
            tenant_id: claims.tenant_id.clone(),
            roles: claims.roles.clone(),
            scopes: claims.scopes.clone(),
            trace_id: trace_id.to_string(),
        }
    }

    pub fn to_value(&self) -> Value {
        json!({
            "user_id": self.user_id,
            "tenant_id": self.tenant_id,
            "roles": self.roles.iter().collect::<Vec<_>>(),
            "scopes": self.scopes.iter().collect::<Vec<_>>(),
            "trace_id": self.trace_id,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BrokerLimits {
    pub default_timeout_ms: u64,
    pub per_tool_timeout_ms: BTreeMap<String, u64>,
    pub max_response_bytes: usize,
    pub circuit_failure_threshold: u32,
    pub circuit_open_duration_ms: u64,
}

impl BrokerLimits {
    pub fn timeout_for(&self, tool: &str) -> u64 {
        self.per_tool_timeout_ms
            .get(tool)
            .copied()
            .unwrap_or(self.default_timeout_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Connect(String),
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Timeout => write!(f, "timed out"),
            TransportError::Connect(detail) => write!(f, "{detail}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DownstreamReply {
    pub status: u16,
    pub retry_after_s: Option<u64>,
    pub body: Vec<u8>,
}

pub type SendFuture<'a> =
    Pin<Box<dyn Future<Output = Result<DownstreamReply, TransportError>> + Send + 'a>>;

/// Transport to the downstream tool server. The broker owns the deadline;
/// implementations only move bytes.
pub trait Downstream: Send + Sync {
    fn send(&self, body: Vec<u8>, headers: Vec<(String, String)>) -> SendFuture<'_>;
}

pub struct HttpDownstream {
    client: reqwest::Client,
    url: String,
}

impl HttpDownstream {
    pub fn new(url: &str) -> Result<Self, String> {
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| format!("http client: {e}"))?;
        Ok(Self {
            client,
            url: url.to_string(),
        })
    }
}

impl Downstream for HttpDownstream {
    fn send(&self, body: Vec<u8>, headers: Vec<(String, String)>) -> SendFuture<'_> {
        let mut req = self
            .client
            .post(&self.url)
            .header("content-type", "application/json");
        for (k, v) in &headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let req = req.body(body);
        Box::pin(async move {
            let resp = req.send().await.map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Connect(e.to_string())
                }
            })?;
            let status = resp.status().as_u16();
            let retry_after_s = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|s| s.parse().ok());
            let body = resp
                .bytes()
                .await
                .map_err(|e| TransportError::Connect(e.to_string()))?
                .to_vec();
            Ok(DownstreamReply {
                status,
                retry_after_s,
                body,
            })
        })
    }
}

/// Outcome of one inbound HTTP frame.
#[derive(Debug)]
pub struct BrokerReply {
    pub http_status: u16,
    pub retry_after_s: Option<u64>,
    pub response: Option<RpcResponse>,
}

impl BrokerReply {
    fn rpc(response: RpcResponse) -> Self {
        Self {
            http_status: 200,
            retry_after_s: None,
            response: Some(response),
        }
    }

    fn no_content() -> Self {
        Self {
            http_status: 204,
            retry_after_s: None,
            response: None,
        }
    }

    pub fn body(&self) -> Option<Vec<u8>> {
        self.response.as_ref().map(RpcResponse::to_canonical_bytes)
    }

    pub fn result(&self) -> Option<&Value> {
        self.response.as_ref()?.payload.as_ref().ok()
    }

    pub fn error(&self) -> Option<&RpcError> {
        self.response.as_ref()?.payload.as_ref().err()
    }
}

/// Per-tool latency accounting: full handle() span and the downstream leg,
/// so proxy overhead = handle - downstream.
#[derive(Default)]
struct ToolMetrics {
    statuses: BTreeMap<&'static str, u64>,
    handle_ms: Vec<f64>,
    downstream_ms: Vec<f64>,
}

#[derive(Default)]
pub struct BrokerMetrics {
    requests_total: AtomicU64,
    per_tool: Mutex<BTreeMap<String, ToolMetrics>>,
}

impl BrokerMetrics {
    fn observe_request(&self) {
        self.requests_total.fetch_add(1, Ordering::SeqCst);
    }

    fn observe_call(
        &self,
        tool: &str,
        status: AuditStatus,
        handle_ms: f64,
        downstream_ms: Option<f64>,
    ) {
        let mut per_tool = self.per_tool.lock().unwrap();
        let entry = per_tool.entry(tool.to_string()).or_default();
        *entry.statuses.entry(status.as_str()).or_insert(0) += 1;
        entry.handle_ms.push(handle_ms);
        if let Some(ms) = downstream_ms {
            entry.downstream_ms.push(ms);
        }
    }

    fn snapshot(&self) -> Value {
        fn percentile(sorted: &[f64], p: f64) -> f64 {
            if sorted.is_empty() {
                return 0.0;
            }
            let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
            sorted[rank.clamp(1, sorted.len()) - 1]
        }
        fn mean(xs: &[f64]) -> f64 {
            if xs.is_empty() {
                0.0
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        }
        let per_tool = self.per_tool.lock().unwrap();
        let tools: Map<String, Value> = per_tool
            .iter()
            .map(|(tool, m)| {
                let mut handle = m.handle_ms.clone();
                handle.sort_by(f64::total_cmp);
                let handle_mean = mean(&m.handle_ms);
                let downstream_mean = mean(&m.downstream_ms);
                let stats = json!({
                    "calls": m.handle_ms.len(),
                    "statuses": m.statuses,
                    "handle_ms": {
                        "mean": handle_mean,
                        "p50": percentile(&handle, 50.0),
                        "p95": percentile(&handle, 95.0),
                        "p99": percentile(&handle, 99.0),
                    },
                    "downstream_ms": { "mean": downstream_mean },
                    "overhead_ms": { "mean": handle_mean - downstream_mean },
                });
                (tool.clone(), stats)
            })
            .collect();
        json!({
            "requests_total": self.requests_total.load(Ordering::SeqCst),
            "tools": tools,
        })
    }
}

pub struct Broker {
    acl: AclRegistry,
    trust: TrustStore,
    limits: BrokerLimits,
    policy: SanitizePolicy,
    circuit: CircuitBreaker,
    audit: AuditSink,
    downstream: Arc<dyn Downstream>,
    credential_headers: BTreeMap<String, String>,
    clock: Arc<dyn Clock>,
    session: Mutex<SessionState>,
    downstream_caps: Mutex<Option<Capabilities>>,
    trace_counter: AtomicU64,
    metrics: BrokerMetrics,
}

impl Broker {
    pub fn from_config(
        config: &BrokerConfig,
        downstream: Arc<dyn Downstream>,
        clock: Arc<dyn Clock>,
        audit: AuditSink,
    ) -> Result<Self, String> {
        let trust = TrustStore::from_entries(&config.trust.keys, config.trust.clock_skew_s)?;
        let entries = config
            .acl
            .iter()
            .map(|(tool, entry)| {
                (
                    tool.clone(),
                    AclEntry {
                        allowed_roles: entry.allowed_roles.iter().cloned().collect(),
                        requires_user_confirmation: entry.requires_user_confirmation,
                    },
                )
            })
            .collect();
        let limits = BrokerLimits {
            default_timeout_ms: config.default_timeout_ms,
            per_tool_timeout_ms: config.per_tool_timeout_ms.clone(),
            max_response_bytes: config.max_response_bytes,
            circuit_failure_threshold: config.circuit.failure_threshold,
            circuit_open_duration_ms: config.circuit.open_duration_ms,
        };
        Ok(Self {
            acl: AclRegistry::new(entries),
            trust,
            policy: SanitizePolicy::new(config.redact_fields.clone()),
            circuit: CircuitBreaker::new(
                limits.circuit_failure_threshold,
                limits.circuit_open_duration_ms,
            ),
            limits,
            audit,
            downstream,
            credential_headers: config.credential_headers.clone(),
            clock,
            session: Mutex::new(SessionState::default()),
            downstream_caps: Mutex::new(None),
            trace_counter: AtomicU64::new(0),
            metrics: BrokerMetrics::default(),
        })
    }

    /// Performs the downstream initialize handshake once; later calls reuse
    /// the stored capabilities.
    pub async fn connect(&self) -> Result<Capabilities, String> {
        if let Some(caps) = self.downstream_caps.lock().unwrap().clone() {
            return Ok(caps);
        }
        let init = RpcRequest::new(
            "broker-init",
            METHOD_INITIALIZE,
            json!({ "protocolVersion": DEFAULT_PROTOCOL_VERSION, "capabilities": {} }),
        );
        let mut headers = self.base_headers("trace-handshake");
        headers.push(("x-client-id".into(), "broker".into()));
        let sent = self.downstream.send(init.to_canonical_bytes(), headers);
        let reply = tokio::time::timeout(
            Duration::from_millis(self.limits.default_timeout_ms),
            sent,
        )
        .await
        .map_err(|_| "handshake timed out".to_string())?
        .map_err(|e| format!("handshake transport error: {e}"))?;
        let resp =
            RpcResponse::from_bytes(&reply.body).ok_or("handshake response malformed")?;
        let value = resp
            .payload
            .map_err(|e| format!("handshake rejected: {} {}", e.code, e.message))?;
        let caps: Capabilities =
            serde_json::from_value(value).map_err(|_| "handshake capabilities malformed")?;
        *self.downstream_caps.lock().unwrap() = Some(caps.clone());
        Ok(caps)
    }

    /// True once the downstream handshake has succeeded.
    pub fn ready(&self) -> bool {
        self.downstream_caps.lock().unwrap().is_some()
    }

    pub fn metrics_snapshot(&self) -> Value {
        let mut snapshot = self.metrics.snapshot();
        snapshot["audit_written"] = json!(self.audit.written());
        snapshot["audit_write_failures"] = json!(self.audit.write_failures());
        snapshot
    }

    /// Claim validations performed so far; one per authenticated request.
    pub fn validation_count(&self) -> u64 {
        self.trust.validation_count()
    }

    pub async fn handle(
        &self,
        raw: &[u8],
        authorization: Option<&str>,
        trace_header: Option<&str>,
    ) -> BrokerReply {
        self.metrics.observe_request();
        let request = match parse_request(raw) {
            Ok(r) => r,
            Err(rejection) => return BrokerReply::rpc(rejection.into_response()),
        };
        let started = Instant::now();

        let dispatched = {
            let session = self.session.lock().unwrap();
            protocol::dispatch(&request, &session)
        };
        let handler = match dispatched {
            Ok(h) => h,
            Err(e) => {
                if request.method == METHOD_TOOLS_CALL {
                    let initialized = self.session.lock().unwrap().initialized;
                    let status = if initialized {
                        AuditStatus::RejectedAcl
                    } else {
                        AuditStatus::RejectedAuth
                    };
                    self.conclude(&request, None, status, started, None);
                }
                return self.respond(&request, Err(e));
            }
        };

        match handler {
            Handler::Initialize => return self.handle_initialize(&request).await,
            Handler::Ping => return self.respond(&request, Ok(json!({}))),
            _ => {}
        }

        // Stages 1-2: extract the bearer token and validate claims. Every
        // post-handshake method requires a verified caller.
        let claims = match self.authenticate(authorization) {
            Ok(c) => c,
            Err(()) => {
                if handler == Handler::ToolsCall {
                    self.conclude(&request, None, AuditStatus::RejectedAuth, started, None);
                }
                return self.respond(
                    &request,
                    Err(RpcError::new(CODE_INVALID_REQUEST, MSG_BAD_TOKEN)),
                );
            }
        };
        let trace_id = self.resolve_trace(trace_header);

        match handler {
            Handler::ToolsCall => {
                self.handle_tools_call(&request, &claims, &trace_id, started)
                    .await
            }
            _ => self.forward_passthrough(&request, &claims, &trace_id).await,
        }
    }

    async fn handle_initialize(&self, request: &RpcRequest) -> BrokerReply {
        if self.session.lock().unwrap().initialized {
            return self.respond(
                request,
                Err(RpcError::invalid_request("session already initialized")),
            );
        }
        let caps = match self.connect().await {
            Ok(c) => c,
            Err(e) => {
                return self.respond(
                    request,
                    Err(RpcError::new(
                        CODE_INTERNAL_ERROR,
                        format!("downstream unavailable: {e}"),
                    )),
                )
            }
        };
        let requested = request
            .params_object()
            .and_then(|p| p.get("protocolVersion"))
            .and_then(Value::as_str);
        let Some(requested) = requested else {
            return self.respond(
                request,
                Err(RpcError::invalid_params(&["protocolVersion".into()])),
            );
        };
        if requested != caps.protocol_version {
            return self.respond(
                request,
                Err(RpcError::new(
                    CODE_APP_VERSION_MISMATCH,
                    format!("unsupported protocol version: {requested}"),
                )
                .with_data(json!({ "supported": [caps.protocol_version] }))),
            );
        }
        {
            let mut session = self.session.lock().unwrap();
            session.initialized = true;
            session.tasks_enabled = caps.experimental_tasks;
        }
        self.respond(
            request,
            Ok(serde_json::to_value(&caps).expect("capabilities serialize")),
        )
    }

    /// Stages 3-6 for tools/call. Every exit passes through conclude()
    /// exactly once, so audit records match inbound calls one-to-one.
    async fn handle_tools_call(
        &self,
        request: &RpcRequest,
        claims: &IdentityClaims,
        trace_id: &str,
        started: Instant,
    ) -> BrokerReply {
        let claims_ref = Some(claims);
        let Some(tool) = request.tool_name().map(str::to_string) else {
            self.conclude(request, claims_ref, AuditStatus::RejectedAcl, started, None);
            return self.respond(request, Err(RpcError::invalid_params(&["name".into()])));
        };

        // Stage 3: the caller must hold a role the ACL allows; unknown
        // tools are denied outright.
        let denied = match self.acl.get(&tool) {
            None => Some(None),
            Some(entry) if !entry.allows(&claims.roles) => Some(None),
            Some(entry)
                if entry.requires_user_confirmation
                    && request
                        .arguments()
                        .get("user_confirmed")
                        .and_then(Value::as_bool)
                        != Some(true) =>
            {
                Some(Some(json!({ "field": "user_confirmed" })))
            }
            Some(_) => None,
        };
        if let Some(data) = denied {
            self.conclude(request, claims_ref, AuditStatus::RejectedAcl, started, None);
            let mut error = RpcError::new(CODE_INVALID_REQUEST, MSG_NO_PERMISSION);
            if let Some(data) = data {
                error = error.with_data(data);
            }
            return self.respond(request, Err(error));
        }

        // Fail fast while the breaker is open: answer with a retryable
        // upstream-failure error without contacting the server.
        if self.circuit.check(&tool, self.clock.now_ms()) == CircuitView::Open {
            let err = SerfError::new(SerfCategory::UpstreamFailure, true)
                .with_retry_after(self.limits.circuit_open_duration_ms)
                .with_context("tool", json!(tool))
                .with_context("reason", json!("circuit_open"));
            self.conclude(request, claims_ref, AuditStatus::ToolError, started, None);
            let result = serde_json::to_value(err.into_tool_result()).expect("result serializes");
            return self.respond(request, Ok(result));
        }

        // Stage 4: strip any client-supplied context, inject verified
        // claims, forward under the per-tool deadline.
        let mut params = request.params_object().cloned().unwrap_or_default();
        let mut args = request.arguments();
        args.remove(CONTEXT_KEY);
        args.insert(
            CONTEXT_KEY.into(),
            BrokerContext::from_claims(claims, trace_id).to_value(),
        );
        params.insert("arguments".into(), Value::Object(args));
        let forwarded = RpcRequest {
            id: request.id.clone(),
            method: request.method.clone(),
            params: Some(Value::Object(params)),
        };

        let timeout_ms = self.limits.timeout_for(&tool);
        let downstream_started = Instant::now();
        let outcome = self
            .send_downstream(forwarded.to_canonical_bytes(), claims, trace_id, timeout_ms)
            .await;
        let downstream_ms = Some(downstream_started.elapsed().as_secs_f64() * 1e3);

        let reply = match outcome {
            Err(TransportError::Timeout) => {
                self.circuit.record_failure(&tool, self.clock.now_ms());
                self.conclude(request, claims_ref, AuditStatus::Timeout, started, downstream_ms);
                return self.respond(
                    request,
                    Err(RpcError::new(
                        CODE_APP_TIMEOUT,
                        format!("{tool} exceeded {timeout_ms}ms deadline"),
                    )),
                );
            }
            Err(err) => {
                self.circuit.record_failure(&tool, self.clock.now_ms());
                self.conclude(request, claims_ref, AuditStatus::ToolError, started, downstream_ms);
                return self.respond(
                    request,
                    Err(RpcError::new(
                        CODE_INTERNAL_ERROR,
                        format!("downstream transport error: {err}"),
                    )),
                );
            }
            Ok(reply) => reply,
        };

        // Stage 5: size cap first, then tenant scrub; both fail closed.
        if reply.body.len() > self.limits.max_response_bytes {
            self.circuit.record_success(&tool);
            self.conclude(request, claims_ref, AuditStatus::Oversize, started, downstream_ms);
            return self.respond(
                request,
                Err(RpcError::new(
                    CODE_APP_OVERSIZE,
                    format!(
                        "response exceeds {} bytes",
                        self.limits.max_response_bytes
                    ),
                )),
            );
        }
        self.circuit.record_success(&tool);

        let Some(downstream_resp) = RpcResponse::from_bytes(&reply.body) else {
            self.conclude(request, claims_ref, AuditStatus::ToolError, started, downstream_ms);
            return self.respond(
                request,
                Err(RpcError::new(
                    CODE_INTERNAL_ERROR,
                    "downstream returned a malformed response",
                )),
            );
        };

        let (payload, status) = match downstream_resp.payload {
            Err(err) => (Err(err), AuditStatus::ToolError),
            Ok(value) => {
                if value.get("task_id").is_some() && value.get("content").is_none() {
                    // Task-accept envelope: no tool content to scrub.
                    (Ok(value), AuditStatus::Ok)
                } else {
                    match serde_json::from_value::<CallToolResult>(value) {
                        Err(_) => (Ok(redacted_value()), AuditStatus::ToolError),
                        Ok(result) => {
                            match sanitize_result(&result, &claims.tenant_id, &self.policy) {
                                Err(_) => (Ok(redacted_value()), AuditStatus::ToolError),
                                Ok(clean) => {
                                    let status = if clean.is_error {
                                        AuditStatus::ToolError
                                    } else {
                                        AuditStatus::Ok
                                    };
                                    let value = serde_json::to_value(&clean)
                                        .expect("result serializes");
                                    (Ok(value), status)
                                }
                            }
                        }
                    }
                }
            }
        };
        self.conclude(request, claims_ref, status, started, downstream_ms);
        self.respond(request, payload)
    }

    /// tools/list and tasks/*: authenticated passthrough. Downstream HTTP
    /// status and Retry-After survive so poll pacing reaches the client.
    async fn forward_passthrough(
        &self,
        request: &RpcRequest,
        claims: &IdentityClaims,
        trace_id: &str,
    ) -> BrokerReply {
        let timeout_ms = self.limits.default_timeout_ms;
        let outcome = self
            .send_downstream(request.to_canonical_bytes(), claims, trace_id, timeout_ms)
            .await;
        match outcome {
            Err(TransportError::Timeout) => self.respond(
                request,
                Err(RpcError::new(
                    CODE_APP_TIMEOUT,
                    format!("{} exceeded {timeout_ms}ms deadline", request.method),
                )),
            ),
            Err(err) => self.respond(
                request,
                Err(RpcError::new(
                    CODE_INTERNAL_ERROR,
                    format!("downstream transport error: {err}"),
                )),
            ),
            Ok(reply) => {
                if request.id.is_none() {
                    return BrokerReply::no_content();
                }
                match RpcResponse::from_bytes(&reply.body) {
                    Some(resp) => BrokerReply {
                        http_status: reply.status,
                        retry_after_s: reply.retry_after_s,
                        response: Some(RpcResponse {
                            id: request.id.clone(),
                            payload: resp.payload,
                        }),
                    },
                    None => self.respond(
                        request,
                        Err(RpcError::new(
                            CODE_INTERNAL_ERROR,
                            "downstream returned a malformed response",
                        )),
                    ),
                }
            }
        }
    }

    fn authenticate(&self, authorization: Option<&str>) -> Result<IdentityClaims, ()> {
        let header = authorization.ok_or(())?;
        let token = identity::extract_token(header).ok_or(())?;
        let now_s = self.clock.now_ms() / 1000;
        identity::validate_and_extract(token, &self.trust, now_s).map_err(|_| ())
    }

    async fn send_downstream(
        &self,
        body: Vec<u8>,
        claims: &IdentityClaims,
        trace_id: &str,
        timeout_ms: u64,
    ) -> Result<DownstreamReply, TransportError> {
        let mut headers = self.base_headers(trace_id);
        headers.push(("x-client-id".into(), claims.user_id.clone()));
        let sent = self.downstream.send(body, headers);
        match tokio::time::timeout(Duration::from_millis(timeout_ms), sent).await {
            Ok(result) => result,
            Err(_) => Err(TransportError::Timeout),
        }
    }

    /// Credential vault reduced to static headers attached downstream.
    fn base_headers(&self, trace_id: &str) -> Vec<(String, String)> {
        let mut headers: Vec<(String, String)> = self
            .credential_headers
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        headers.push(("x-trace-id".into(), trace_id.to_string()));
        headers
    }

    fn resolve_trace(&self, trace_header: Option<&str>) -> String {
        match trace_header.filter(|t| !t.is_empty()) {
            Some(t) => t.to_string(),
            None => format!(
                "trace-{:08x}",
                self.trace_counter.fetch_add(1, Ordering::SeqCst) + 1
            ),
        }
    }

    /// Stage 6 plus metrics; the single exit point for tools/call.
    fn conclude(
        &self,
        request: &RpcRequest,
        claims: Option<&IdentityClaims>,
        status: AuditStatus,
        started: Instant,
        downstream_ms: Option<f64>,
    ) {
        let handle_ms = started.elapsed().as_secs_f64() * 1e3;
        let tool = request.tool_name().unwrap_or("unknown");
        self.metrics.observe_call(tool, status, handle_ms, downstream_ms);
        self.audit.emit(&AuditRecord {
            request_id: request
                .id
                .as_ref()
                .map(ToString::to_string)
                .unwrap_or_else(|| "none".into()),
            user_id: claims
                .map(|c| c.user_id.clone())
                .unwrap_or_else(|| "unknown".into()),
            tenant_id: claims
                .map(|c| c.tenant_id.clone())
                .unwrap_or_else(|| "unknown".into()),
            tool_name: tool.to_string(),
            status,
            latency_ms: handle_ms,
            timestamp: self.clock.now_ms(),
            input_summary: input_summary(request),
        });
    }

    fn respond(&self, request: &RpcRequest, payload: Result<Value, RpcError>) -> BrokerReply {
        match &request.id {
            None => BrokerReply::no_content(),
            Some(id) => BrokerReply::rpc(RpcResponse {
                id: Some(id.clone()),
                payload,
            }),
        }
    }
}

fn redacted_value() -> Value {
    serde_json::to_value(redacted_result()).expect("result serializes")
}

/// Sorted top-level argument names, minus the reserved context key;
/// argument values never reach the audit log.
fn input_summary(request: &RpcRequest) -> Vec<String> {
    let mut keys: Vec<String> = request
        .arguments()
        .keys()
        .filter(|k| k.as_str() != CONTEXT_KEY)
        .cloned()
        .collect();
    keys.sort();
    keys
}
