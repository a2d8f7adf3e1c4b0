//! Per-tool circuit breaker: open after N consecutive transport-level
//! failures, fail fast while open, half-open probe after the cooldown.
//! Tool-level errors (isError results) never trip it; only timeouts and
//! transport failures do.

use std::collections::HashMap;
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CircuitView {
    Closed,
    Open,
}

#[derive(Debug, Clone, Copy)]
enum State {
    Closed { consecutive_failures: u32 },
    Open { since_ms: u64 },
    HalfOpen,
}

pub struct CircuitBreaker {
    failure_threshold: u32,
    open_duration_ms: u64,
    tools: Mutex<HashMap<String, State>>,
}

impl CircuitBreaker {
    pub fn new(failure_threshold: u32, open_duration_ms: u64) -> Self {
        assert!(failure_threshold > 0, "threshold must be positive");
        Self {
            failure_threshold,
            open_duration_ms,
            tools: Mutex::new(HashMap::new()),
        }
    }

    /// Whether a call may proceed. An open circuit past its cooldown moves
    /// to half-open and admits the caller as the probe.
    pub fn check(&self, tool: &str, now_ms: u64) -> CircuitView {
        let mut tools = self.tools.lock().unwrap();
        let state = tools
            .entry(tool.to_string())
            .or_insert(State::Closed {
                consecutive_failures: 0,
            });
        match *state {
            State::Closed { .. } | State::HalfOpen => CircuitView::Closed,
            State::Open { since_ms } => {
                if now_ms.saturating_sub(since_ms) >= self.open_duration_ms {
                    *state = State::HalfOpen;
                    CircuitView::Closed
                } else {
                    CircuitView::Open
                }
            }
        }
    }

    pub fn record_success(&self, tool: &str) {
        let mut tools = self.tools.lock().unwrap();
        tools.insert(
            tool.to_string(),
            State::Closed {
                consecutive_failures: 0,
            },
        );
    }

    pub fn record_failure(&self, tool: &str, now_ms: u64) {
        let mut tools = self.tools.lock().unwrap();
        let state = tools
            .entry(tool.to_string())
            .or_insert(State::Closed {
                consecutive_failures: 0,
            });
        *state = match *state {
            State::Closed {
                consecutive_failures,
            } => {
                let failures = consecutive_failures + 1;
                if failures >= self.failure_threshold {
                    State::Open { since_ms: now_ms }
                } else {
                    State::Closed {
                        consecutive_failures: failures,
                    }
                }
            }
            // A failed probe reopens for a fresh cooldown.
            State::HalfOpen => State::Open { since_ms: now_ms },
            open @ State::Open { .. } => open,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_breaker_is_closed() {
        let cb = CircuitBreaker::new(5, 1000);
        assert_eq!(cb.check("FetchUsageLimits", 0), CircuitView::Closed);
    }

    #[test]
    fn opens_after_threshold_consecutive_failures() {
        let cb = CircuitBreaker::new(5, 1000);
        for i in 0..4 {
            cb.record_failure("t", i);
            assert_eq!(cb.check("t", i), CircuitView::Closed, "failure {i}");
        }
        cb.record_failure("t", 4);
        assert_eq!(cb.check("t", 5), CircuitView::Open, "sixth call short-circuits");
    }

    #[test]
    fn success_resets_the_streak() {
        let cb = CircuitBreaker::new(3, 1000);
        cb.record_failure("t", 0);
        cb.record_failure("t", 1);
        cb.record_success("t");
        cb.record_failure("t", 2);
        cb.record_failure("t", 3);
        assert_eq!(cb.check("t", 4), CircuitView::Closed);
    }

    #[test]
    fn half_open_probe_success_closes() {
        let cb = CircuitBreaker::new(1, 1000);
        cb.record_failure("t", 0);
        assert_eq!(cb.check("t", 999), CircuitView::Open);
        // Cooldown elapsed: the next check admits a probe.
        assert_eq!(cb.check("t", 1000), CircuitView::Closed);
        cb.record_success("t");
        assert_eq!(cb.check("t", 1001), CircuitView::Closed);
    }

    #[test]
    fn half_open_probe_failure_reopens() {
        let cb = CircuitBreaker::new(1, 1000);
        cb.record_failure("t", 0);
        assert_eq!(cb.check("t", 1000), CircuitView::Closed);
        cb.record_failure("t", 1000);
        assert_eq!(cb.check("t", 1500), CircuitView::Open);
        assert_eq!(cb.check("t", 2000), CircuitView::Closed);
    }

    #[test]
    fn tools_are_independent() {
        let cb = CircuitBreaker::new(1, 1000);
        cb.record_failure("a", 0);
        assert_eq!(cb.check("a", 1), CircuitView::Open);
        assert_eq!(cb.check("b", 1), CircuitView::Closed);
    }
}
