//! Response sanitization: strips records belonging to other tenants,
//! deletes redacted fields, and fails closed on anything it cannot fully
//! inspect (non-JSON text content, structures deeper than the bound).

use serde_json::{Map, Value};

use crate::protocol::{CallToolResult, ContentItem};

pub const MAX_DEPTH: usize = 16;

pub const REDACTION_NOTICE: &str = "[redacted: response could not be sanitized]";

#[derive(Debug, Clone, PartialEq)]
pub struct SanitizePolicy {
    pub redact_fields: Vec<String>,
    pub max_depth: usize,
}

impl Default for SanitizePolicy {
    fn default() -> Self {
        Self {
            redact_fields: Vec::new(),
            max_depth: MAX_DEPTH,
        }
    }
}

impl SanitizePolicy {
    pub fn new(redact_fields: Vec<String>) -> Self {
        Self {
            redact_fields,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SanitizeError {
    /// Payload nesting exceeded the inspection bound.
    TooDeep,
    /// A text content item was not valid JSON, so it cannot be scanned.
    Unparseable,
}

/// Sanitizes every content item of a tool result for the calling tenant.
/// On failure the caller must replace the response (see
/// [`redacted_result`]); nothing partially-sanitized is ever returned.
pub fn sanitize_result(
    result: &CallToolResult,
    tenant_id: &str,
    policy: &SanitizePolicy,
) -> Result<CallToolResult, SanitizeError> {
    let mut content = Vec::with_capacity(result.content.len());
    for item in &result.content {
        let parsed: Value =
            serde_json::from_str(&item.text).map_err(|_| SanitizeError::Unparseable)?;
        let clean = sanitize_value(&parsed, tenant_id, policy, 0)?;
        content.push(ContentItem::text(
            serde_json::to_string(&clean).expect("sanitized value serializes"),
        ));
    }
    Ok(CallToolResult {
        content,
        is_error: result.is_error,
    })
}

/// Fail-closed replacement used when sanitize_result errors.
pub fn redacted_result() -> CallToolResult {
    CallToolResult::error_text(REDACTION_NOTICE)
}

fn sanitize_value(
    value: &Value,
    tenant_id: &str,
    policy: &SanitizePolicy,
    depth: usize,
) -> Result<Value, SanitizeError> {
    if depth > policy.max_depth {
        return Err(SanitizeError::TooDeep);
    }
    match value {
        Value::Object(map) => {
            let mut clean = Map::new();
            for (key, field) in map {
                if policy.redact_fields.iter().any(|r| r == key) {
                    continue;
                }
                clean.insert(
                    key.clone(),
                    sanitize_value(field, tenant_id, policy, depth + 1)?,
                );
            }
            Ok(Value::Object(clean))
        }
        Value::Array(items) => {
            let mut clean = Vec::new();
            for item in items {
                if belongs_to_other_tenant(item, tenant_id) {
                    continue;
                }
                clean.push(sanitize_value(item, tenant_id, policy, depth + 1)?);
            }
            Ok(Value::Array(clean))
        }
        other => Ok(other.clone()),
    }
}

/// An array element is stripped when it carries a tenant_id field that is
/// not exactly the caller's tenant; a malformed (non-string) tenant_id
/// counts as foreign.
fn belongs_to_other_tenant(item: &Value, tenant_id: &str) -> bool {
    match item {
        Value::Object(map) => match map.get("tenant_id") {
            None => false,
            Some(Value::String(t)) => t != tenant_id,
            Some(_) => true,
        },
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn ok_result(body: &Value) -> CallToolResult {
        CallToolResult::ok_text(serde_json::to_string(body).unwrap())
    }

    fn sanitized_body(result: &CallToolResult) -> Value {
        serde_json::from_str(result.content[0].text.as_str()).unwrap()
    }

    #[test]
    fn strips_foreign_tenant_records() {
        let body = json!({"records": [
            {"id": 1, "tenant_id": "A"},
            {"id": 2, "tenant_id": "B"},
            {"id": 3, "tenant_id": "A"},
        ]});
        let clean = sanitize_result(&ok_result(&body), "A", &SanitizePolicy::default()).unwrap();
        let records = sanitized_body(&clean)["records"].as_array().unwrap().clone();
        assert_eq!(records.len(), 2);
        assert!(records.iter().all(|r| r["tenant_id"] == "A"));
    }

    #[test]
    fn empty_content_passes_through() {
        let result = CallToolResult {
            content: vec![],
            is_error: false,
        };
        let clean = sanitize_result(&result, "A", &SanitizePolicy::default()).unwrap();
        assert!(clean.content.is_empty());
    }

    #[test]
    fn redaction_list_removes_fields_recursively() {
        let body = json!({"records": [
            {"id": 1, "tenant_id": "A", "internal_cost": 12.5,
             "nested": {"internal_cost": 1, "keep": true}},
        ]});
        let policy = SanitizePolicy::new(vec!["internal_cost".into()]);
        let clean = sanitize_result(&ok_result(&body), "A", &policy).unwrap();
        let text = clean.content[0].text.as_str();
        assert!(!text.contains("internal_cost"));
        assert!(text.contains("keep"));
        assert_eq!(sanitized_body(&clean)["records"][0]["id"], 1);
    }

    #[test]
    fn malformed_tenant_field_is_stripped() {
        let body = json!({"records": [
            {"id": 1, "tenant_id": 42},
            {"id": 2, "tenant_id": "A"},
            {"id": 3},
        ]});
        let clean = sanitize_result(&ok_result(&body), "A", &SanitizePolicy::default()).unwrap();
        let records = sanitized_body(&clean)["records"].as_array().unwrap().clone();
        assert_eq!(records.len(), 2, "numeric tenant_id fails closed");
    }

    #[test]
    fn nested_arrays_are_scanned() {
        let body = json!({"groups": [
            {"tenant_id": "A", "members": [
                {"id": "x", "tenant_id": "B"},
                {"id": "y", "tenant_id": "A"},
            ]},
        ]});
        let clean = sanitize_result(&ok_result(&body), "A", &SanitizePolicy::default()).unwrap();
        let members = sanitized_body(&clean)["groups"][0]["members"]
            .as_array()
            .unwrap()
            .clone();
        assert_eq!(members.len(), 1);
        assert_eq!(members[0]["id"], "y");
    }

    #[test]
    fn depth_overflow_fails_closed() {
        let mut body = json!({"leaf": true});
        for _ in 0..20 {
            body = json!({ "next": body });
        }
        let err = sanitize_result(&ok_result(&body), "A", &SanitizePolicy::default()).unwrap_err();
        assert_eq!(err, SanitizeError::TooDeep);
    }

    #[test]
    fn depth_at_bound_is_inspected() {
        let mut body = json!(1);
        for _ in 0..MAX_DEPTH {
            body = json!({ "next": body });
        }
        sanitize_result(&ok_result(&body), "A", &SanitizePolicy::default())
            .expect("exactly at the bound is fine");
    }

    #[test]
    fn non_json_text_fails_closed() {
        let result = CallToolResult::ok_text("plain prose, not JSON");
        let err = sanitize_result(&result, "A", &SanitizePolicy::default()).unwrap_err();
        assert_eq!(err, SanitizeError::Unparseable);
        let replacement = redacted_result();
        assert!(replacement.is_error);
        assert_eq!(replacement.first_text(), Some(REDACTION_NOTICE));
    }

    // Random multi-tenant payloads: after sanitize, no object reachable from
    // the payload carries a foreign tenant_id.
    fn arb_record() -> impl Strategy<Value = Value> {
        (
            prop::sample::select(vec!["A", "B", "C"]),
            any::<u32>(),
            prop::bool::ANY,
        )
            .prop_map(|(tenant, id, flag)| {
                json!({"tenant_id": tenant, "id": id, "flag": flag})
            })
    }

    fn arb_payload() -> impl Strategy<Value = Value> {
        prop::collection::vec(arb_record(), 0..8).prop_flat_map(|records| {
            prop::collection::vec(arb_record(), 0..4).prop_map(move |nested| {
                json!({"records": records, "extra": {"inner": nested}})
            })
        })
    }

    fn assert_no_foreign(value: &Value, tenant: &str) {
        match value {
            Value::Object(map) => {
                if let Some(t) = map.get("tenant_id") {
                    assert_eq!(t, &json!(tenant));
                }
                map.values().for_each(|v| assert_no_foreign(v, tenant));
            }
            Value::Array(items) => items.iter().for_each(|v| assert_no_foreign(v, tenant)),
            _ => {}
        }
    }

    proptest! {
        #[test]
        fn sanitized_payloads_have_no_foreign_records(payload in arb_payload()) {
            let clean =
                sanitize_result(&ok_result(&payload), "A", &SanitizePolicy::default()).unwrap();
            let body: Value = serde_json::from_str(clean.content[0].text.as_str()).unwrap();
            assert_no_foreign(&body, "A");
        }
    }
}
