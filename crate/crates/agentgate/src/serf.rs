//! Structured tool-error schema and the deterministic recovery engine.
//!
//! Tool errors arrive as a `serf` object embedded in the first text content
//! item of an error CallToolResult. Anything that fails to parse degrades to
//! a plain free-text error, which the engine treats as unrecoverable
//! (fail-safe: escalate).

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::protocol::CallToolResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SerfCategory {
    #[serde(rename = "INVALID_INPUT")]
    InvalidInput,
    #[serde(rename = "RESOURCE_NOT_FOUND")]
    ResourceNotFound,
    #[serde(rename = "RESOURCE_EXHAUSTED")]
    ResourceExhausted,
    #[serde(rename = "PERMISSION_DENIED")]
    PermissionDenied,
    #[serde(rename = "UPSTREAM_FAILURE")]
    UpstreamFailure,
    #[serde(rename = "INTERNAL_ERROR")]
    InternalError,
}

pub const ALL_CATEGORIES: [SerfCategory; 6] = [
    SerfCategory::InvalidInput,
    SerfCategory::ResourceNotFound,
    SerfCategory::ResourceExhausted,
    SerfCategory::PermissionDenied,
    SerfCategory::UpstreamFailure,
    SerfCategory::InternalError,
];

impl SerfCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            SerfCategory::InvalidInput => "INVALID_INPUT",
            SerfCategory::ResourceNotFound => "RESOURCE_NOT_FOUND",
            SerfCategory::ResourceExhausted => "RESOURCE_EXHAUSTED",
            SerfCategory::PermissionDenied => "PERMISSION_DENIED",
            SerfCategory::UpstreamFailure => "UPSTREAM_FAILURE",
            SerfCategory::InternalError => "INTERNAL_ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action")]
pub enum SuggestedAction {
    #[serde(rename = "SWITCH_RESOURCE")]
    SwitchResource { params: SwitchParams },
    #[serde(rename = "ESCALATE_TO_USER")]
    EscalateToUser { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchParams {
    pub field: String,
}

impl SuggestedAction {
    pub fn switch_resource(field: &str) -> Self {
        SuggestedAction::SwitchResource {
            params: SwitchParams {
                field: field.to_string(),
            },
        }
    }

    pub fn escalate_to_user(message: &str) -> Self {
        SuggestedAction::EscalateToUser {
            message: message.to_string(),
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            SuggestedAction::SwitchResource { params } if params.field.is_empty() => {
                Err("SWITCH_RESOURCE requires a non-empty field".into())
            }
            SuggestedAction::EscalateToUser { message } if message.is_empty() => {
                Err("ESCALATE_TO_USER requires a non-empty message".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerfError {
    pub category: SerfCategory,
    pub retryable: bool,
    // Serialized as an explicit null when absent, matching the wire schema.
    #[serde(default)]
    pub retry_after_ms: Option<u64>,
    #[serde(default)]
    pub suggested_actions: Vec<SuggestedAction>,
    #[serde(default)]
    pub context: Map<String, Value>,
}

impl SerfError {
    pub fn new(category: SerfCategory, retryable: bool) -> Self {
        Self {
            category,
            retryable,
            retry_after_ms: None,
            suggested_actions: Vec::new(),
            context: Map::new(),
        }
    }

    pub fn with_retry_after(mut self, ms: u64) -> Self {
        self.retry_after_ms = Some(ms);
        self
    }

    pub fn with_action(mut self, action: SuggestedAction) -> Self {
        self.suggested_actions.push(action);
        self
    }

    pub fn with_context(mut self, key: &str, value: Value) -> Self {
        self.context.insert(key.to_string(), value);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.retryable && self.retry_after_ms.is_some() {
            return Err("retry_after_ms must be absent when not retryable".into());
        }
        if self.category == SerfCategory::InternalError && self.retryable {
            return Err("INTERNAL_ERROR is never retryable".into());
        }
        for action in &self.suggested_actions {
            action.validate()?;
        }
        Ok(())
    }

    /// Wraps this error as a tool result carrying the wire shape
    /// {"serf": {...}} in the first content item.
    pub fn into_tool_result(self) -> CallToolResult {
        let payload = serde_json::json!({ "serf": self });
        CallToolResult::error_text(payload.to_string())
    }
}

/// A tool error as seen by the recovery engine: structured, or free text
/// from a legacy server.
#[derive(Debug, Clone, PartialEq)]
pub enum ToolError {
    Serf(SerfError),
    Plain(String),
}

/// Extracts the structured error from an error result. Missing, malformed,
/// or invariant-violating payloads degrade to Plain so legacy servers keep
/// working.
pub fn parse_serf(result: &CallToolResult) -> ToolError {
    debug_assert!(result.is_error, "parse_serf expects an error result");
    let text = result.first_text().unwrap_or_default();
    let plain = || ToolError::Plain(text.to_string());
    let Ok(value) = serde_json::from_str::<Value>(text) else {
        return plain();
    };
    let Some(serf_value) = value.get("serf") else {
        return plain();
    };
    let Ok(serf) = serde_json::from_value::<SerfError>(serf_value.clone()) else {
        return plain();
    };
    if serf.validate().is_err() {
        return plain();
    }
    ToolError::Serf(serf)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RecoveryOutcome {
    RetryAfter {
        delay_ms: u64,
    },
    InvokeWithAlternate {
        field: String,
    },
    PresentToUser {
        message: String,
        context: Map<String, Value>,
    },
    Escalate {
        reason: String,
        context: Map<String, Value>,
    },
}

pub const NO_RECOVERY_PATH: &str = "No recovery path available";
pub const INTERNAL_ESCALATION: &str = "Internal error, do not retry";

/// Default retry limit per recovery episode.
pub const DEFAULT_MAX_RETRIES: u32 = 3;

const BACKOFF_BASE_MS: u64 = 1000;
const BACKOFF_CAP_MS: u64 = 30000;

/// Exponential backoff for retryable errors that do not name a delay:
/// 1000 ms doubling per attempt, capped at 30000 ms.
pub fn backoff_ms(attempts: u32) -> u64 {
    BACKOFF_BASE_MS
        .saturating_mul(1u64 << attempts.min(10))
        .min(BACKOFF_CAP_MS)
}

/// The recovery decision procedure. Total and pure: every structured error
/// maps to exactly one outcome.
///
/// Order of evaluation: internal errors escalate immediately; retryable
/// errors with attempts left retry (after the server's delay or backoff);
/// otherwise the first actionable suggestion wins; an exhausted list
/// escalates.
pub fn decide(error: &SerfError, attempts: u32, k: u32) -> RecoveryOutcome {
    if error.category == SerfCategory::InternalError {
        return RecoveryOutcome::Escalate {
            reason: INTERNAL_ESCALATION.to_string(),
            context: error.context.clone(),
        };
    }
    if error.retryable && attempts < k {
        return RecoveryOutcome::RetryAfter {
            delay_ms: error.retry_after_ms.unwrap_or_else(|| backoff_ms(attempts)),
        };
    }
    match error.suggested_actions.first() {
        Some(SuggestedAction::SwitchResource { params }) => {
            RecoveryOutcome::InvokeWithAlternate {
                field: params.field.clone(),
            }
        }
        Some(SuggestedAction::EscalateToUser { message }) => RecoveryOutcome::PresentToUser {
            message: message.clone(),
            context: error.context.clone(),
        },
        None => RecoveryOutcome::Escalate {
            reason: NO_RECOVERY_PATH.to_string(),
            context: error.context.clone(),
        },
    }
}

/// Decision wrapper for the two-tier error model: plain errors are
/// unrecoverable and escalate (fail-safe).
pub fn decide_tool_error(error: &ToolError, attempts: u32, k: u32) -> RecoveryOutcome {
    match error {
        ToolError::Serf(serf) => decide(serf, attempts, k),
        ToolError::Plain(text) => {
            let mut context = Map::new();
            context.insert("message".to_string(), Value::String(text.clone()));
            RecoveryOutcome::Escalate {
                reason: "Unstructured tool error".to_string(),
                context,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Reformulate,
    VerifyParameters,
    SwitchOrEscalate,
    Escalate,
    RetryBackoff,
    NoRetry,
}

/// Static category -> default handling strategy table.
pub fn default_strategy(category: SerfCategory) -> Strategy {
    match category {
        SerfCategory::InvalidInput => Strategy::Reformulate,
        SerfCategory::ResourceNotFound => Strategy::VerifyParameters,
        SerfCategory::ResourceExhausted => Strategy::SwitchOrEscalate,
        SerfCategory::PermissionDenied => Strategy::Escalate,
        SerfCategory::UpstreamFailure => Strategy::RetryBackoff,
        SerfCategory::InternalError => Strategy::NoRetry,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    // Named import outranks the globs: `.prop_map` must resolve to the
    // proptest trait, not shadow against the recovery Strategy enum.
    use proptest::strategy::Strategy;
    use serde_json::json;

    fn exhausted_error() -> SerfError {
        SerfError::new(SerfCategory::ResourceExhausted, false)
            .with_action(SuggestedAction::switch_resource("project_id"))
            .with_action(SuggestedAction::escalate_to_user(
                "Quota exhausted; manual intervention required",
            ))
            .with_context("limit", json!(100))
    }

    #[test]
    fn parses_structured_error_payload() {
        let result = exhausted_error().into_tool_result();
        match parse_serf(&result) {
            ToolError::Serf(serf) => {
                assert_eq!(serf.category, SerfCategory::ResourceExhausted);
                assert!(!serf.retryable);
                assert_eq!(serf.retry_after_ms, None);
                assert_eq!(serf.suggested_actions.len(), 2);
                assert_eq!(serf.context["limit"], json!(100));
            }
            other => panic!("expected structured error, got {other:?}"),
        }
    }

    #[test]
    fn wire_shape_matches_schema() {
        let text = exhausted_error().into_tool_result().first_text().unwrap().to_string();
        let v: Value = serde_json::from_str(&text).unwrap();
        let serf = &v["serf"];
        assert_eq!(serf["category"], json!("RESOURCE_EXHAUSTED"));
        assert_eq!(serf["retryable"], json!(false));
        assert_eq!(serf["retry_after_ms"], Value::Null);
        assert_eq!(serf["suggested_actions"][0]["action"], json!("SWITCH_RESOURCE"));
        assert_eq!(serf["suggested_actions"][0]["params"]["field"], json!("project_id"));
        assert_eq!(serf["suggested_actions"][1]["action"], json!("ESCALATE_TO_USER"));
    }

    #[test]
    fn free_text_degrades_to_plain() {
        let result = CallToolResult::error_text("Internal server error");
        assert_eq!(
            parse_serf(&result),
            ToolError::Plain("Internal server error".into())
        );
    }

    #[test]
    fn unknown_category_degrades_to_plain() {
        let text = r#"{"serf":{"category":"WEIRD","retryable":false}}"#;
        let result = CallToolResult::error_text(text);
        assert!(matches!(parse_serf(&result), ToolError::Plain(_)));
    }

    #[test]
    fn invariant_violations_degrade_to_plain() {
        // retry_after_ms on a non-retryable error violates the schema.
        let text = r#"{"serf":{"category":"INVALID_INPUT","retryable":false,"retry_after_ms":5}}"#;
        assert!(matches!(
            parse_serf(&CallToolResult::error_text(text)),
            ToolError::Plain(_)
        ));
        let internal_retryable =
            r#"{"serf":{"category":"INTERNAL_ERROR","retryable":true}}"#;
        assert!(matches!(
            parse_serf(&CallToolResult::error_text(internal_retryable)),
            ToolError::Plain(_)
        ));
    }

    #[test]
    fn internal_error_escalates_immediately() {
        let err = SerfError::new(SerfCategory::InternalError, false)
            .with_context("trace", json!("abc"));
        for attempts in 0..5 {
            match decide(&err, attempts, 3) {
                RecoveryOutcome::Escalate { reason, context } => {
                    assert_eq!(reason, INTERNAL_ESCALATION);
                    assert_eq!(context["trace"], json!("abc"));
                }
                other => panic!("expected escalation, got {other:?}"),
            }
        }
    }

    #[test]
    fn retryable_respects_server_delay_and_limit() {
        let err = SerfError::new(SerfCategory::UpstreamFailure, true).with_retry_after(1000);
        assert_eq!(
            decide(&err, 0, 3),
            RecoveryOutcome::RetryAfter { delay_ms: 1000 }
        );
        // Attempts exhausted: falls through to (empty) actions, escalates.
        assert_eq!(
            decide(&err, 3, 3),
            RecoveryOutcome::Escalate {
                reason: NO_RECOVERY_PATH.into(),
                context: Map::new()
            }
        );
    }

    #[test]
    fn backoff_doubles_and_caps() {
        assert_eq!(backoff_ms(0), 1000);
        assert_eq!(backoff_ms(1), 2000);
        assert_eq!(backoff_ms(2), 4000);
        assert_eq!(backoff_ms(4), 16000);
        assert_eq!(backoff_ms(5), 30000);
        assert_eq!(backoff_ms(63), 30000);
        let err = SerfError::new(SerfCategory::UpstreamFailure, true);
        assert_eq!(decide(&err, 2, 5), RecoveryOutcome::RetryAfter { delay_ms: 4000 });
    }

    #[test]
    fn first_actionable_suggestion_wins() {
        let err = exhausted_error();
        assert_eq!(
            decide(&err, 0, 3),
            RecoveryOutcome::InvokeWithAlternate {
                field: "project_id".into()
            }
        );
        let mut reversed = err.clone();
        reversed.suggested_actions.reverse();
        match decide(&reversed, 0, 3) {
            RecoveryOutcome::PresentToUser { message, .. } => {
                assert!(message.contains("Quota exhausted"))
            }
            other => panic!("expected user present, got {other:?}"),
        }
    }

    #[test]
    fn empty_actions_escalate_with_fixed_reason() {
        let err = SerfError::new(SerfCategory::PermissionDenied, false);
        assert_eq!(
            decide(&err, 0, 3),
            RecoveryOutcome::Escalate {
                reason: NO_RECOVERY_PATH.into(),
                context: Map::new()
            }
        );
    }

    #[test]
    fn plain_errors_escalate_fail_safe() {
        let err = ToolError::Plain("Internal server error".into());
        match decide_tool_error(&err, 0, 3) {
            RecoveryOutcome::Escalate { context, .. } => {
                assert_eq!(context["message"], json!("Internal server error"))
            }
            other => panic!("expected escalation, got {other:?}"),
        }
    }

    #[test]
    fn retry_bound_over_episode() {
        // Simulated episode: the call keeps failing with a retryable error;
        // RetryAfter must be produced at most k times.
        let err = SerfError::new(SerfCategory::UpstreamFailure, true);
        let k = 3;
        let mut attempts = 0;
        let mut retries = 0;
        while let RecoveryOutcome::RetryAfter { .. } = decide(&err, attempts, k) {
            retries += 1;
            attempts += 1;
            assert!(retries <= k, "retry bound exceeded");
        }
        assert_eq!(retries, k);
    }

    #[test]
    fn strategy_table() {
        use super::Strategy as S;
        assert_eq!(default_strategy(SerfCategory::InvalidInput), S::Reformulate);
        assert_eq!(
            default_strategy(SerfCategory::ResourceNotFound),
            S::VerifyParameters
        );
        assert_eq!(
            default_strategy(SerfCategory::ResourceExhausted),
            S::SwitchOrEscalate
        );
        assert_eq!(default_strategy(SerfCategory::PermissionDenied), S::Escalate);
        assert_eq!(default_strategy(SerfCategory::UpstreamFailure), S::RetryBackoff);
        assert_eq!(default_strategy(SerfCategory::InternalError), S::NoRetry);
    }

    fn category() -> impl proptest::strategy::Strategy<Value = SerfCategory> {
        prop::sample::select(ALL_CATEGORIES.to_vec())
    }

    fn action() -> impl proptest::strategy::Strategy<Value = SuggestedAction> {
        prop_oneof![
            "[a-z_]{1,12}".prop_map(|f| SuggestedAction::switch_resource(&f)),
            "[a-zA-Z ]{1,24}".prop_map(|m| SuggestedAction::escalate_to_user(&m)),
        ]
    }

    fn serf_error() -> impl proptest::strategy::Strategy<Value = SerfError> {
        (
            category(),
            any::<bool>(),
            prop::option::of(0u64..120_000),
            prop::collection::vec(action(), 0..4),
        )
            .prop_map(|(category, retryable, retry_after, actions)| {
                // Respect schema invariants while covering the space.
                let retryable = retryable && category != SerfCategory::InternalError;
                let mut err = SerfError::new(category, retryable);
                if retryable {
                    err.retry_after_ms = retry_after;
                }
                err.suggested_actions = actions;
                err
            })
    }

    proptest! {
        // Totality: every valid error yields exactly one outcome, and the
        // engine is a pure function of its inputs.
        #[test]
        fn decide_is_total_and_deterministic(err in serf_error(), attempts in 0u32..6, k in 0u32..6) {
            prop_assert!(err.validate().is_ok());
            let first = decide(&err, attempts, k);
            let second = decide(&err, attempts, k);
            prop_assert_eq!(first, second);
        }

        // Ordering: permuting actions after the first never changes the
        // outcome when retry does not apply.
        #[test]
        fn first_action_decides(err in serf_error(), attempts in 0u32..6, k in 0u32..6) {
            prop_assume!(!err.suggested_actions.is_empty());
            let mut permuted = err.clone();
            permuted.suggested_actions[1..].reverse();
            prop_assert_eq!(decide(&err, attempts, k), decide(&permuted, attempts, k));
        }

        // Serde round trip for the wire schema.
        #[test]
        fn serf_round_trip(err in serf_error()) {
            let result = err.clone().into_tool_result();
            prop_assert_eq!(parse_serf(&result), ToolError::Serf(err));
        }
    }
}
