//! Per-client token bucket for task polling: fixed refill of one token per
//! second, configurable capacity (default 1). A denied poll maps to HTTP
//! 429 with Retry-After: 1 at the transport layer.

use std::collections::HashMap;
use std::sync::Mutex;

struct Bucket {
    tokens: f64,
    last_refill_ms: u64,
}

pub struct PollLimiter {
    capacity: f64,
    buckets: Mutex<HashMap<String, Bucket>>,
}

impl PollLimiter {
    pub fn new(capacity: f64) -> Self {
        assert!(capacity >= 1.0, "bucket must hold at least one token");
        Self {
            capacity,
            buckets: Mutex::new(HashMap::new()),
        }
    }

    /// Takes one token for the client if available. New clients start with
    /// a full bucket; the bucket never exceeds capacity.
    pub fn try_acquire(&self, client_id: &str, now_ms: u64) -> bool {
        let mut buckets = self.buckets.lock().unwrap();
        let bucket = buckets.entry(client_id.to_string()).or_insert(Bucket {
            tokens: self.capacity,
            last_refill_ms: now_ms,
        });
        let elapsed_s = now_ms.saturating_sub(bucket.last_refill_ms) as f64 / 1000.0;
        bucket.tokens = (bucket.tokens + elapsed_s).min(self.capacity);
        bucket.last_refill_ms = now_ms;
        if bucket.tokens >= 1.0 {
            bucket.tokens -= 1.0;
            true
        } else {
            false
        }
    }
}
