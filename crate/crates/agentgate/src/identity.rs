//! Bearer-token extraction and claim validation.
//!
//! Tokens are compact JWS (header.payload.signature, base64url without
//! padding). Verification is pluggable per algorithm tag; HMAC-SHA-256 is
//! built in. Signature checks run before any payload field is interpreted,
//! so a tampered payload always reads as bad_signature, never as a
//! different rejection, when the key is selected by key id.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::Sha256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdentityClaims {
    pub user_id: String,
    pub tenant_id: String,
    pub roles: BTreeSet<String>,
    pub scopes: BTreeSet<String>,
    pub exp: u64,
    pub iss: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectionReason {
    BadSignature,
    Expired,
    UnknownIssuer,
    Malformed,
    MissingClaim,
}

impl RejectionReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectionReason::BadSignature => "bad_signature",
            RejectionReason::Expired => "expired",
            RejectionReason::UnknownIssuer => "unknown_issuer",
            RejectionReason::Malformed => "malformed",
            RejectionReason::MissingClaim => "missing_claim",
        }
    }
}

impl std::fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Verifies a detached signature over the JWS signing input.
pub trait Verifier: Send + Sync {
    fn algorithm(&self) -> &'static str;
    fn verify(&self, signing_input: &[u8], signature: &[u8]) -> bool;
}

pub struct HmacSha256Verifier {
    key: Vec<u8>,
}

impl HmacSha256Verifier {
    pub fn new(key: impl Into<Vec<u8>>) -> Self {
        Self { key: key.into() }
    }
}

impl Verifier for HmacSha256Verifier {
    fn algorithm(&self) -> &'static str {
        "HS256"
    }

    fn verify(&self, signing_input: &[u8], signature: &[u8]) -> bool {
        let mut mac = Hmac::<Sha256>::new_from_slice(&self.key).expect("hmac accepts any key size");
        mac.update(signing_input);
        mac.verify_slice(signature).is_ok()
    }
}

struct KeyEntry {
    key_id: String,
    verifier: Box<dyn Verifier>,
}

/// Trust store entry as it appears in configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrustedKeyConfig {
    pub iss: String,
    pub kid: String,
    pub alg: String,
    pub key_base64: String,
}

/// Immutable set of trusted issuers and their verification keys. Swapped
/// atomically (behind an Arc) on reload; never mutated in place.
pub struct TrustStore {
    issuers: HashMap<String, Vec<KeyEntry>>,
    clock_skew_s: u64,
    validations: AtomicU64,
}

pub const DEFAULT_CLOCK_SKEW_S: u64 = 30;

impl TrustStore {
    pub fn new(clock_skew_s: u64) -> Self {
        Self {
            issuers: HashMap::new(),
            clock_skew_s,
            validations: AtomicU64::new(0),
        }
    }

    /// Builds a store from configuration; unknown algorithm tags are a
    /// load-time error.
    pub fn from_entries(
        entries: &[TrustedKeyConfig],
        clock_skew_s: u64,
    ) -> Result<Self, String> {
        let mut store = Self::new(clock_skew_s);
        for entry in entries {
            let key = URL_SAFE_NO_PAD
                .decode(&entry.key_base64)
                .or_else(|_| base64::engine::general_purpose::STANDARD.decode(&entry.key_base64))
                .map_err(|_| format!("key {} is not valid base64", entry.kid))?;
            match entry.alg.as_str() {
                "HS256" => {
                    store.add_verifier(&entry.iss, &entry.kid, Box::new(HmacSha256Verifier::new(key)))
                }
                other => return Err(format!("unknown signature algorithm tag: {other}")),
            }
        }
        Ok(store)
    }

    pub fn add_hs256(&mut self, iss: &str, kid: &str, key: &[u8]) {
        self.add_verifier(iss, kid, Box::new(HmacSha256Verifier::new(key)));
    }

    pub fn add_verifier(&mut self, iss: &str, kid: &str, verifier: Box<dyn Verifier>) {
        self.issuers.entry(iss.to_string()).or_default().push(KeyEntry {
            key_id: kid.to_string(),
            verifier,
        });
    }

    pub fn clock_skew_s(&self) -> u64 {
        self.clock_skew_s
    }

    /// Number of validate_and_extract invocations; lets integration tests
    /// assert one fresh validation per request (no claim caching).
    pub fn validation_count(&self) -> u64 {
        self.validations.load(Ordering::SeqCst)
    }

    fn issuer_of_kid(&self, kid: &str, alg: &str) -> Vec<(&str, &KeyEntry)> {
        let mut found = Vec::new();
        for (iss, keys) in &self.issuers {
            for key in keys {
                if key.key_id == kid && key.verifier.algorithm() == alg {
                    found.push((iss.as_str(), key));
                }
            }
        }
        found
    }
}

/// Pulls the bearer token out of an Authorization header; anything that is
/// not exactly the Bearer scheme reads as absent.
pub fn extract_token(authorization_header: &str) -> Option<&str> {
    let rest = authorization_header.strip_prefix("Bearer ")?;
    if rest.is_empty() {
        None
    } else {
        Some(rest)
    }
}

fn decode_segment(seg: &str) -> Result<Vec<u8>, RejectionReason> {
    URL_SAFE_NO_PAD
        .decode(seg)
        .map_err(|_| RejectionReason::Malformed)
}

fn parse_json(bytes: &[u8]) -> Result<Value, RejectionReason> {
    serde_json::from_slice(bytes).map_err(|_| RejectionReason::Malformed)
}

fn required_string(payload: &Value, primary: &str, fallback: Option<&str>) -> Option<String> {
    let direct = payload.get(primary).and_then(Value::as_str);
    let value = match (direct, fallback) {
        (Some(v), _) => Some(v),
        (None, Some(fb)) => payload.get(fb).and_then(Value::as_str),
        (None, None) => None,
    }?;
    if value.is_empty() {
        None
    } else {
        Some(value.to_string())
    }
}

fn string_set(payload: &Value, key: &str) -> BTreeSet<String> {
    payload
        .get(key)
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .filter_map(Value::as_str)
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

/// Validates a compact JWS and extracts the identity claims.
///
/// Key selection: by header kid when present (across all issuers, with
/// issuer/claim binding checked after verification), else all keys of the
/// issuer named in the payload. Expiry honors the configured skew: a token
/// is live while exp + skew > now.
pub fn validate_and_extract(
    token: &str,
    trust: &TrustStore,
    now: u64,
) -> Result<IdentityClaims, RejectionReason> {
    trust.validations.fetch_add(1, Ordering::SeqCst);

    let mut segments = token.split('.');
    let (h, p, s) = match (segments.next(), segments.next(), segments.next(), segments.next()) {
        (Some(h), Some(p), Some(s), None) => (h, p, s),
        _ => return Err(RejectionReason::Malformed),
    };

    let header = parse_json(&decode_segment(h)?)?;
    let alg = header
        .get("alg")
        .and_then(Value::as_str)
        .ok_or(RejectionReason::Malformed)?;
    let kid = header.get("kid").and_then(Value::as_str);
    let signature = decode_segment(s)?;
    let signing_input = format!("{h}.{p}");

    // Resolve candidate keys, verifying before any payload interpretation
    // when the kid names the key directly.
    let verified_issuer: String = if let Some(kid) = kid {
        let candidates = trust.issuer_of_kid(kid, alg);
        let hit = candidates
            .iter()
            .find(|(_, key)| key.verifier.verify(signing_input.as_bytes(), &signature));
        match hit {
            Some((iss, _)) => iss.to_string(),
            None => return Err(RejectionReason::BadSignature),
        }
    } else {
        let payload = parse_json(&decode_segment(p)?)?;
        let iss = payload
            .get("iss")
            .and_then(Value::as_str)
            .ok_or(RejectionReason::MissingClaim)?;
        let keys = trust
            .issuers
            .get(iss)
            .ok_or(RejectionReason::UnknownIssuer)?;
        let ok = keys
            .iter()
            .filter(|key| key.verifier.algorithm() == alg)
            .any(|key| key.verifier.verify(signing_input.as_bytes(), &signature));
        if !ok {
            return Err(RejectionReason::BadSignature);
        }
        iss.to_string()
    };

    let payload = parse_json(&decode_segment(p)?)?;
    if !payload.is_object() {
        return Err(RejectionReason::Malformed);
    }

    let iss = payload
        .get("iss")
        .and_then(Value::as_str)
        .ok_or(RejectionReason::MissingClaim)?;
    if !trust.issuers.contains_key(iss) || iss != verified_issuer {
        return Err(RejectionReason::UnknownIssuer);
    }

    let exp = payload
        .get("exp")
        .and_then(Value::as_u64)
        .ok_or(RejectionReason::MissingClaim)?;
    if exp + trust.clock_skew_s <= now {
        return Err(RejectionReason::Expired);
    }

    let user_id =
        required_string(&payload, "user_id", Some("sub")).ok_or(RejectionReason::MissingClaim)?;
    let tenant_id =
        required_string(&payload, "tenant_id", None).ok_or(RejectionReason::MissingClaim)?;

    Ok(IdentityClaims {
        user_id,
        tenant_id,
        roles: string_set(&payload, "roles"),
        scopes: string_set(&payload, "scopes"),
        exp,
        iss: iss.to_string(),
    })
}

/// Signs a claims payload as HS256 compact JWS. Used by tests and the
/// benchmark harness to mint tokens against in-process trust stores.
pub fn mint_hs256(key: &[u8], kid: &str, payload: &Value) -> String {
    let header = json!({ "alg": "HS256", "typ": "JWT", "kid": kid });
    let h = URL_SAFE_NO_PAD.encode(serde_json::to_vec(&header).expect("header serializes"));
    let p = URL_SAFE_NO_PAD.encode(serde_json::to_vec(payload).expect("payload serializes"));
    let signing_input = format!("{h}.{p}");
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key size");
    mac.update(signing_input.as_bytes());
    let s = URL_SAFE_NO_PAD.encode(mac.finalize().into_bytes());
    format!("{signing_input}.{s}")
}

/// Standard claims payload for minting.
pub fn claims_payload(
    iss: &str,
    user_id: &str,
    tenant_id: &str,
    roles: &[&str],
    scopes: &[&str],
    exp: u64,
) -> Value {
    json!({
        "iss": iss,
        "user_id": user_id,
        "tenant_id": tenant_id,
        "roles": roles,
        "scopes": scopes,
        "exp": exp,
    })
}
