//! JSON-RPC 2.0 envelope model and codec for the tool-gateway method set
//! (initialize, ping, tools/list, tools/call, tasks/get, tasks/cancel).
//!
//! Canonical serialization: UTF-8, no insignificant whitespace, object keys
//! in insertion order. Golden tests depend on this byte stability.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub const METHOD_INITIALIZE: &str = "initialize";
pub const METHOD_PING: &str = "ping";
pub const METHOD_TOOLS_LIST: &str = "tools/list";
pub const METHOD_TOOLS_CALL: &str = "tools/call";
pub const METHOD_TASKS_GET: &str = "tasks/get";
pub const METHOD_TASKS_CANCEL: &str = "tasks/cancel";

/// JSON-RPC reserved protocol codes.
pub const CODE_PARSE_ERROR: i64 = -32700;
pub const CODE_INVALID_REQUEST: i64 = -32600;
pub const CODE_METHOD_NOT_FOUND: i64 = -32601;
pub const CODE_INVALID_PARAMS: i64 = -32602;
pub const CODE_INTERNAL_ERROR: i64 = -32603;

/// Application codes, outside the reserved range [-32768, -32000].
pub const CODE_APP_TIMEOUT: i64 = 1001;
pub const CODE_APP_OVERSIZE: i64 = 1002;
pub const CODE_APP_RATE_LIMITED: i64 = 1003;
pub const CODE_APP_VERSION_MISMATCH: i64 = 1010;
pub const CODE_APP_TASK_UNKNOWN: i64 = 1011;

/// Request identifier: string or integer, never null.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RpcId {
    Num(i64),
    Str(String),
}

impl std::fmt::Display for RpcId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RpcId::Num(n) => write!(f, "{n}"),
            RpcId::Str(s) => write!(f, "{s}"),
        }
    }
}

impl RpcId {
    fn to_value(&self) -> Value {
        match self {
            RpcId::Num(n) => json!(n),
            RpcId::Str(s) => json!(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpcRequest {
    /// Absent only for notifications (tasks/cancel).
    pub id: Option<RpcId>,
    pub method: String,
    pub params: Option<Value>,
}

impl RpcRequest {
    pub fn new(id: impl Into<RpcId>, method: &str, params: Value) -> Self {
        Self {
            id: Some(id.into()),
            method: method.to_string(),
            params: Some(params),
        }
    }

    /// Canonical value: fields in fixed order, params key order preserved.
    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("jsonrpc".into(), json!("2.0"));
        if let Some(id) = &self.id {
            m.insert("id".into(), id.to_value());
        }
        m.insert("method".into(), json!(self.method));
        if let Some(p) = &self.params {
            m.insert("params".into(), p.clone());
        }
        Value::Object(m)
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_value()).expect("serializable value")
    }

    pub fn params_object(&self) -> Option<&Map<String, Value>> {
        self.params.as_ref().and_then(Value::as_object)
    }

    /// Tool name for tools/call requests.
    pub fn tool_name(&self) -> Option<&str> {
        self.params_object()?.get("name")?.as_str()
    }

    /// Arguments object of a tools/call; absent arguments read as empty.
    pub fn arguments(&self) -> Map<String, Value> {
        self.params_object()
            .and_then(|p| p.get("arguments"))
            .and_then(Value::as_object)
            .cloned()
            .unwrap_or_default()
    }
}

impl From<i64> for RpcId {
    fn from(n: i64) -> Self {
        RpcId::Num(n)
    }
}

impl From<&str> for RpcId {
    fn from(s: &str) -> Self {
        RpcId::Str(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
}

impl RpcError {
    pub fn new(code: i64, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            data: None,
        }
    }

    pub fn with_data(mut self, data: Value) -> Self {
        self.data = Some(data);
        self
    }

    pub fn parse_error() -> Self {
        Self::new(CODE_PARSE_ERROR, "Parse error")
    }

    pub fn invalid_request(detail: &str) -> Self {
        Self::new(CODE_INVALID_REQUEST, format!("Invalid Request: {detail}"))
    }

    pub fn method_not_found(method: &str) -> Self {
        Self::new(CODE_METHOD_NOT_FOUND, format!("Method not found: {method}"))
    }

    pub fn invalid_params(fields: &[String]) -> Self {
        Self::new(
            CODE_INVALID_PARAMS,
            format!("Invalid params: {}", fields.join(", ")),
        )
        .with_data(json!({ "fields": fields }))
    }

    fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("code".into(), json!(self.code));
        m.insert("message".into(), json!(self.message));
        if let Some(d) = &self.data {
            m.insert("data".into(), d.clone());
        }
        Value::Object(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpcResponse {
    /// None serializes as null (unknown id, parse errors).
    pub id: Option<RpcId>,
    pub payload: Result<Value, RpcError>,
}

impl RpcResponse {
    pub fn success(id: Option<RpcId>, result: Value) -> Self {
        Self {
            id,
            payload: Ok(result),
        }
    }

    pub fn failure(id: Option<RpcId>, error: RpcError) -> Self {
        Self {
            id,
            payload: Err(error),
        }
    }

    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("jsonrpc".into(), json!("2.0"));
        m.insert(
            "id".into(),
            self.id.as_ref().map(RpcId::to_value).unwrap_or(Value::Null),
        );
        match &self.payload {
            Ok(result) => m.insert("result".into(), result.clone()),
            Err(error) => m.insert("error".into(), error.to_value()),
        };
        Value::Object(m)
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_value()).expect("serializable value")
    }

    /// Parses a response envelope leniently (used by clients of downstream
    /// servers); malformed envelopes come back as None.
    pub fn from_bytes(raw: &[u8]) -> Option<Self> {
        let v: Value = serde_json::from_slice(raw).ok()?;
        let obj = v.as_object()?;
        if obj.get("jsonrpc")?.as_str()? != "2.0" {
            return None;
        }
        let id = match obj.get("id") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(RpcId::Str(s.clone())),
            Some(Value::Number(n)) => Some(RpcId::Num(n.as_i64()?)),
            _ => return None,
        };
        if let Some(err) = obj.get("error") {
            let error: RpcError = serde_json::from_value(err.clone()).ok()?;
            return Some(Self::failure(id, error));
        }
        let result = obj.get("result")?.clone();
        Some(Self::success(id, result))
    }
}

/// A rejected inbound envelope: the error plus the id to echo when it was
/// itself parseable (null otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct RequestRejection {
    pub error: RpcError,
    pub id: Option<RpcId>,
}

impl RequestRejection {
    fn without_id(error: RpcError) -> Self {
        Self { error, id: None }
    }

    pub fn into_response(self) -> RpcResponse {
        RpcResponse::failure(self.id, self.error)
    }
}

/// Parses one inbound envelope. Malformed JSON is -32700 with null id;
/// structural violations (wrong version, null id, batch arrays, missing id
/// on non-notification methods) are -32600, echoing the id when the id
/// itself was valid.
// Rejections are the cold path; boxing them buys nothing.
#[allow(clippy::result_large_err)]
pub fn parse_request(raw: &[u8]) -> Result<RpcRequest, RequestRejection> {
    let v: Value = serde_json::from_slice(raw)
        .map_err(|_| RequestRejection::without_id(RpcError::parse_error()))?;
    if v.is_array() {
        return Err(RequestRejection::without_id(RpcError::invalid_request(
            "batch requests are not supported",
        )));
    }
    let obj = v.as_object().ok_or_else(|| {
        RequestRejection::without_id(RpcError::invalid_request("request must be a JSON object"))
    })?;

    let id = match obj.get("id") {
        None => None,
        Some(Value::Null) => {
            return Err(RequestRejection::without_id(RpcError::invalid_request(
                "id must not be null",
            )))
        }
        Some(Value::String(s)) => Some(RpcId::Str(s.clone())),
        Some(Value::Number(n)) => match n.as_i64() {
            Some(i) => Some(RpcId::Num(i)),
            None => {
                return Err(RequestRejection::without_id(RpcError::invalid_request(
                    "id must be a string or integer",
                )))
            }
        },
        Some(_) => {
            return Err(RequestRejection::without_id(RpcError::invalid_request(
                "id must be a string or integer",
            )))
        }
    };

    let reject = |error: RpcError| RequestRejection {
        error,
        id: id.clone(),
    };

    match obj.get("jsonrpc").and_then(Value::as_str) {
        Some("2.0") => {}
        _ => return Err(reject(RpcError::invalid_request("jsonrpc must be \"2.0\""))),
    }
    let method = match obj.get("method").and_then(Value::as_str) {
        Some(m) => m.to_string(),
        None => return Err(reject(RpcError::invalid_request("method must be a string"))),
    };
    let params = match obj.get("params") {
        None => None,
        Some(p @ (Value::Object(_) | Value::Array(_))) => Some(p.clone()),
        Some(_) => {
            return Err(reject(RpcError::invalid_request(
                "params must be an object or array",
            )))
        }
    };
    if id.is_none() && method != METHOD_TASKS_CANCEL {
        return Err(reject(RpcError::invalid_request(
            "id is required for this method",
        )));
    }

    Ok(RpcRequest { id, method, params })
}

/// Per-connection handshake state.
#[derive(Debug, Clone, Copy, Default)]
pub struct SessionState {
    pub initialized: bool,
    pub tasks_enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Handler {
    Initialize,
    Ping,
    ToolsList,
    ToolsCall,
    TasksGet,
    TasksCancel,
}

/// True when a tools/call asks for asynchronous task execution.
pub fn is_task_augmented(request: &RpcRequest) -> bool {
    request
        .params_object()
        .and_then(|p| p.get("task_augment"))
        .and_then(Value::as_bool)
        == Some(true)
}

/// Routes a request to its handler. Before the handshake completes, every
/// method except ping and initialize is rejected with -32600. Task-augmented
/// calls never reach a handler unless the capability was advertised.
pub fn dispatch(request: &RpcRequest, session: &SessionState) -> Result<Handler, RpcError> {
    if !session.initialized
        && request.method != METHOD_PING
        && request.method != METHOD_INITIALIZE
    {
        return Err(RpcError::invalid_request("server not initialized"));
    }
    let handler = match request.method.as_str() {
        METHOD_INITIALIZE => Handler::Initialize,
        METHOD_PING => Handler::Ping,
        METHOD_TOOLS_LIST => Handler::ToolsList,
        METHOD_TOOLS_CALL => Handler::ToolsCall,
        METHOD_TASKS_GET => Handler::TasksGet,
        METHOD_TASKS_CANCEL => Handler::TasksCancel,
        _ => return Err(RpcError::method_not_found(&request.method)),
    };
    if handler == Handler::ToolsCall && is_task_augmented(request) && !session.tasks_enabled {
        return Err(RpcError::invalid_request(
            "task augmentation is not supported by this server",
        ));
    }
    Ok(handler)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideEffects {
    ReadOnly,
    Write,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSchema {
    #[serde(rename = "type")]
    pub kind: String,
    /// Property name -> schema fragment ({"type": ..., "description": ...}).
    pub properties: Map<String, Value>,
    pub required: Vec<String>,
}

impl InputSchema {
    pub fn object() -> Self {
        Self {
            kind: "object".into(),
            properties: Map::new(),
            required: Vec::new(),
        }
    }

    pub fn with_property(mut self, name: &str, ty: &str, description: &str, required: bool) -> Self {
        self.properties.insert(
            name.into(),
            json!({ "type": ty, "description": description }),
        );
        if required {
            self.required.push(name.into());
        }
        self
    }

    fn declared_type(&self, name: &str) -> Option<&str> {
        self.properties.get(name)?.get("type")?.as_str()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    #[serde(rename = "inputSchema")]
    pub input_schema: InputSchema,
    pub side_effects: SideEffects,
    pub idempotent: bool,
}

impl ToolDescriptor {
    pub fn validate(&self) -> Result<(), String> {
        if self.name.is_empty() {
            return Err("tool name must be non-empty".into());
        }
        for req in &self.input_schema.required {
            if !self.input_schema.properties.contains_key(req) {
                return Err(format!(
                    "tool {}: required field {req} missing from properties",
                    self.name
                ));
            }
        }
        Ok(())
    }
}

/// Validates one server's tool list: per-tool invariants plus name
/// uniqueness.
pub fn validate_tools(tools: &[ToolDescriptor]) -> Result<(), String> {
    let mut seen = std::collections::HashSet::new();
    for tool in tools {
        tool.validate()?;
        if !seen.insert(tool.name.as_str()) {
            return Err(format!("duplicate tool name: {}", tool.name));
        }
    }
    Ok(())
}

fn type_matches(tag: &str, value: &Value) -> bool {
    match tag {
        "string" => value.is_string(),
        "number" => value.is_number(),
        "boolean" => value.is_boolean(),
        "object" => value.is_object(),
        "array" => value.is_array(),
        // Unknown tags degrade to presence-only checks.
        _ => true,
    }
}

/// Checks a tools/call request against the tool's schema: every required
/// field present with the declared primitive type. Offending field names are
/// reported in error data.
pub fn validate_params(request: &RpcRequest, tool: &ToolDescriptor) -> Result<(), RpcError> {
    let args = request.arguments();
    let mut offending = Vec::new();
    for name in &tool.input_schema.required {
        match args.get(name) {
            None => offending.push(name.clone()),
            Some(v) => {
                if let Some(tag) = tool.input_schema.declared_type(name) {
                    if !type_matches(tag, v) {
                        offending.push(name.clone());
                    }
                }
            }
        }
    }
    if offending.is_empty() {
        Ok(())
    } else {
        Err(RpcError::invalid_params(&offending))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentItem {
    #[serde(rename = "type")]
    pub kind: String,
    pub text: String,
}

impl ContentItem {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            kind: "text".into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallToolResult {
    pub content: Vec<ContentItem>,
    #[serde(rename = "isError")]
    pub is_error: bool,
}

impl CallToolResult {
    pub fn ok_text(text: impl Into<String>) -> Self {
        Self {
            content: vec![ContentItem::text(text)],
            is_error: false,
        }
    }

    /// Error results always carry at least one content item.
    pub fn error_text(text: impl Into<String>) -> Self {
        Self {
            content: vec![ContentItem::text(text)],
            is_error: true,
        }
    }

    pub fn first_text(&self) -> Option<&str> {
        self.content.first().map(|c| c.text.as_str())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.is_error && self.content.is_empty() {
            return Err("error results must carry content".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    #[serde(rename = "protocolVersion")]
    pub protocol_version: String,
    pub experimental_tasks: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse_ok(raw: &str) -> RpcRequest {
        parse_request(raw.as_bytes()).expect("valid request")
    }

    fn parse_err(raw: &str) -> RequestRejection {
        parse_request(raw.as_bytes()).expect_err("invalid request")
    }

    #[test]
    fn parses_valid_tools_call() {
        let req = parse_ok(
            r#"{"jsonrpc":"2.0","id":7,"method":"tools/call","params":{"name":"FetchUsageLimits","arguments":{"project_id":"p1","service_name":"s1"}}}"#,
        );
        assert_eq!(req.method, "tools/call");
        assert_eq!(req.id, Some(RpcId::Num(7)));
        assert_eq!(req.tool_name(), Some("FetchUsageLimits"));
        assert_eq!(req.arguments().get("project_id"), Some(&json!("p1")));
    }

    #[test]
    fn truncated_json_is_parse_error_with_null_id() {
        let rej = parse_err(r#"{"jsonrpc":"2."#);
        assert_eq!(rej.error.code, CODE_PARSE_ERROR);
        assert_eq!(rej.id, None);
        assert_eq!(
            rej.into_response().to_value()["id"],
            Value::Null,
            "parse errors respond with null id"
        );
    }

    #[test]
    fn wrong_version_is_invalid_request_echoing_id() {
        let rej = parse_err(r#"{"jsonrpc":"1.0","id":1,"method":"ping"}"#);
        assert_eq!(rej.error.code, CODE_INVALID_REQUEST);
        assert_eq!(rej.id, Some(RpcId::Num(1)));
    }

    #[test]
    fn batch_arrays_are_rejected() {
        let rej = parse_err(r#"[{"jsonrpc":"2.0","id":1,"method":"ping"}]"#);
        assert_eq!(rej.error.code, CODE_INVALID_REQUEST);
        assert_eq!(rej.id, None);
    }

    #[test]
    fn null_id_is_rejected() {
        let rej = parse_err(r#"{"jsonrpc":"2.0","id":null,"method":"ping"}"#);
        assert_eq!(rej.error.code, CODE_INVALID_REQUEST);
    }

    #[test]
    fn fractional_id_is_rejected() {
        let rej = parse_err(r#"{"jsonrpc":"2.0","id":1.5,"method":"ping"}"#);
        assert_eq!(rej.error.code, CODE_INVALID_REQUEST);
    }

    #[test]
    fn string_ids_are_accepted() {
        let req = parse_ok(r#"{"jsonrpc":"2.0","id":"req-1","method":"ping"}"#);
        assert_eq!(req.id, Some(RpcId::Str("req-1".into())));
    }

    #[test]
    fn notifications_only_for_cancellation() {
        let rej = parse_err(r#"{"jsonrpc":"2.0","method":"tools/call"}"#);
        assert_eq!(rej.error.code, CODE_INVALID_REQUEST);
        let req = parse_ok(r#"{"jsonrpc":"2.0","method":"tasks/cancel","params":{"task_id":"t"}}"#);
        assert_eq!(req.id, None);
    }

    #[test]
    fn scalar_params_rejected() {
        let rej = parse_err(r#"{"jsonrpc":"2.0","id":1,"method":"ping","params":5}"#);
        assert_eq!(rej.error.code, CODE_INVALID_REQUEST);
        assert_eq!(rej.id, Some(RpcId::Num(1)));
    }

    #[test]
    fn nonstring_method_rejected() {
        let rej = parse_err(r#"{"jsonrpc":"2.0","id":3,"method":12}"#);
        assert_eq!(rej.error.code, CODE_INVALID_REQUEST);
        assert_eq!(rej.id, Some(RpcId::Num(3)));
    }

    #[test]
    fn canonical_form_reorders_shuffled_keys() {
        let shuffled =
            r#"{"method":"ping","params":{"z":1,"a":2},"jsonrpc":"2.0","id":"x"}"#;
        let canonical =
            r#"{"jsonrpc":"2.0","id":"x","method":"ping","params":{"z":1,"a":2}}"#;
        let req = parse_ok(shuffled);
        assert_eq!(req.to_canonical_bytes(), canonical.as_bytes());
    }

    #[test]
    fn error_response_serialization_shape() {
        let resp = RpcResponse::failure(Some(RpcId::Num(4)), RpcError::method_not_found("x/y"));
        let v = resp.to_value();
        assert_eq!(v["jsonrpc"], json!("2.0"));
        assert_eq!(v["id"], json!(4));
        assert_eq!(v["error"]["code"], json!(CODE_METHOD_NOT_FOUND));
        assert!(v.get("result").is_none());
    }

    #[test]
    fn response_round_trip() {
        let resp = RpcResponse::success(Some(RpcId::Str("a".into())), json!({"ok": true}));
        let bytes = resp.to_canonical_bytes();
        let back = RpcResponse::from_bytes(&bytes).unwrap();
        assert_eq!(back, resp);
        assert_eq!(back.to_canonical_bytes(), bytes);
    }

    fn usage_limits_tool() -> ToolDescriptor {
        ToolDescriptor {
            name: "FetchUsageLimits".into(),
            description: "Returns current usage limits and consumption".into(),
            input_schema: InputSchema::object()
                .with_property("project_id", "string", "Project identifier", true)
                .with_property("service_name", "string", "Service identifier", true),
            side_effects: SideEffects::ReadOnly,
            idempotent: true,
        }
    }

    fn call_request(args: Value) -> RpcRequest {
        RpcRequest::new(
            1,
            METHOD_TOOLS_CALL,
            json!({"name": "FetchUsageLimits", "arguments": args}),
        )
    }

    #[test]
    fn validate_params_accepts_complete_arguments() {
        let tool = usage_limits_tool();
        let req = call_request(json!({"project_id": "p", "service_name": "s"}));
        assert!(validate_params(&req, &tool).is_ok());
    }

    #[test]
    fn validate_params_names_missing_field() {
        let tool = usage_limits_tool();
        let req = call_request(json!({"project_id": "p"}));
        let err = validate_params(&req, &tool).unwrap_err();
        assert_eq!(err.code, CODE_INVALID_PARAMS);
        let data = err.data.unwrap();
        assert_eq!(data["fields"], json!(["service_name"]));
    }

    #[test]
    fn validate_params_rejects_type_mismatch() {
        let tool = usage_limits_tool();
        let req = call_request(json!({"project_id": 42, "service_name": "s"}));
        let err = validate_params(&req, &tool).unwrap_err();
        assert_eq!(err.code, CODE_INVALID_PARAMS);
        assert_eq!(err.data.unwrap()["fields"], json!(["project_id"]));
    }

    #[test]
    fn dispatch_gates_uninitialized_sessions() {
        let session = SessionState::default();
        let list = RpcRequest::new(1, METHOD_TOOLS_LIST, json!({}));
        let err = dispatch(&list, &session).unwrap_err();
        assert_eq!(err.code, CODE_INVALID_REQUEST);

        let ping = RpcRequest::new(2, METHOD_PING, json!({}));
        assert_eq!(dispatch(&ping, &session).unwrap(), Handler::Ping);
        let init = RpcRequest::new(3, METHOD_INITIALIZE, json!({}));
        assert_eq!(dispatch(&init, &session).unwrap(), Handler::Initialize);

        // Unknown methods are still swept with -32600 before the handshake.
        let unknown = RpcRequest::new(4, "tools/frobnicate", json!({}));
        assert_eq!(
            dispatch(&unknown, &session).unwrap_err().code,
            CODE_INVALID_REQUEST
        );
    }

    #[test]
    fn dispatch_unknown_method_after_init() {
        let session = SessionState {
            initialized: true,
            tasks_enabled: true,
        };
        let unknown = RpcRequest::new(4, "tools/frobnicate", json!({}));
        assert_eq!(
            dispatch(&unknown, &session).unwrap_err().code,
            CODE_METHOD_NOT_FOUND
        );
    }

    #[test]
    fn dispatch_blocks_task_augment_without_capability() {
        let session = SessionState {
            initialized: true,
            tasks_enabled: false,
        };
        let req = RpcRequest::new(
            1,
            METHOD_TOOLS_CALL,
            json!({"name": "t", "arguments": {}, "task_augment": true}),
        );
        assert_eq!(
            dispatch(&req, &session).unwrap_err().code,
            CODE_INVALID_REQUEST
        );
        let enabled = SessionState {
            initialized: true,
            tasks_enabled: true,
        };
        assert_eq!(dispatch(&req, &enabled).unwrap(), Handler::ToolsCall);
        // Non-boolean flags are not augmentation.
        let odd = RpcRequest::new(
            2,
            METHOD_TOOLS_CALL,
            json!({"name": "t", "arguments": {}, "task_augment": "yes"}),
        );
        assert_eq!(dispatch(&odd, &session).unwrap(), Handler::ToolsCall);
    }

    #[test]
    fn tool_list_validation() {
        let mut tools = vec![usage_limits_tool(), usage_limits_tool()];
        assert!(validate_tools(&tools).unwrap_err().contains("duplicate"));
        tools.pop();
        assert!(validate_tools(&tools).is_ok());

        let mut bad = usage_limits_tool();
        bad.input_schema.required.push("nonexistent".into());
        assert!(bad.validate().unwrap_err().contains("nonexistent"));
        let mut unnamed = usage_limits_tool();
        unnamed.name.clear();
        assert!(unnamed.validate().is_err());
    }

    #[test]
    fn error_results_carry_content() {
        let r = CallToolResult::error_text("boom");
        assert!(r.validate().is_ok());
        assert!(r.is_error);
        let empty = CallToolResult {
            content: vec![],
            is_error: true,
        };
        assert!(empty.validate().is_err());
    }

    // Generator for arbitrary JSON params: bounded depth, insertion-order
    // maps, finite numbers only.
    fn json_leaf() -> impl Strategy<Value = Value> {
        prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::from),
            any::<i64>().prop_map(Value::from),
            prop::num::f64::NORMAL.prop_map(Value::from),
            "[a-zA-Z0-9 _-]{0,12}".prop_map(Value::from),
        ]
    }

    fn json_value() -> impl Strategy<Value = Value> {
        json_leaf().prop_recursive(3, 24, 6, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..5).prop_map(Value::Array),
                prop::collection::vec(("[a-z]{1,8}", inner), 0..5).prop_map(|kvs| {
                    let mut m = Map::new();
                    for (k, v) in kvs {
                        m.insert(k, v);
                    }
                    Value::Object(m)
                }),
            ]
        })
    }

    fn rpc_id() -> impl Strategy<Value = RpcId> {
        prop_oneof![
            any::<i64>().prop_map(RpcId::Num),
            "[a-zA-Z0-9-]{1,12}".prop_map(RpcId::Str),
        ]
    }

    fn envelope() -> impl Strategy<Value = RpcRequest> {
        (
            prop::option::of(rpc_id()),
            prop::sample::select(vec![
                METHOD_INITIALIZE,
                METHOD_PING,
                METHOD_TOOLS_LIST,
                METHOD_TOOLS_CALL,
                METHOD_TASKS_GET,
                "custom/op",
            ]),
            prop::option::of(json_value().prop_map(|v| json!({ "payload": v }))),
        )
            .prop_map(|(id, method, params)| RpcRequest {
                method: if id.is_none() {
                    METHOD_TASKS_CANCEL.to_string()
                } else {
                    method.to_string()
                },
                id,
                params,
            })
    }

    proptest! {
        // Round trip: canonical bytes parse back to the same request, and
        // re-serialization is byte-identical (codec stability).
        #[test]
        fn codec_round_trip(req in envelope()) {
            let bytes = req.to_canonical_bytes();
            let parsed = parse_request(&bytes).expect("canonical form parses");
            prop_assert_eq!(&parsed, &req);
            prop_assert_eq!(parsed.to_canonical_bytes(), bytes);
        }

        // Error responses echo parseable ids for structurally invalid
        // envelopes (wrong version here).
        #[test]
        fn invalid_version_echoes_id(id in rpc_id()) {
            let raw = serde_json::to_vec(&json!({
                "jsonrpc": "1.0",
                "id": id.to_value(),
                "method": "ping",
            })).unwrap();
            let rej = parse_request(&raw).unwrap_err();
            prop_assert_eq!(rej.error.code, CODE_INVALID_REQUEST);
            prop_assert_eq!(rej.id, Some(id));
        }
    }
}
