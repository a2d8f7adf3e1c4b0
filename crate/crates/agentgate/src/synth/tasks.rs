//! Asynchronous task lifecycle: immediate accept, client polling, terminal
//! statuses, and idle TTL expiry.
//!
//! Completion is computed lazily at poll time from the task's planned
//! duration, so behavior is a pure function of (create time, poll times) and
//! tests can drive the clock by hand. The periodic sweeper only accelerates
//! resource release; it never changes observable poll outcomes.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::Serialize;

use crate::protocol::CallToolResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Working,
    Succeeded,
    Failed,
    Cancelled,
    Expired,
}

impl TaskStatus {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, TaskStatus::Working)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskStatus::Working => "working",
            TaskStatus::Succeeded => "succeeded",
            TaskStatus::Failed => "failed",
            TaskStatus::Cancelled => "cancelled",
            TaskStatus::Expired => "expired",
        }
    }
}

#[derive(Debug, Clone)]
struct TaskRecord {
    status: TaskStatus,
    /// Outcome revealed when the planned duration elapses; dropped on
    /// expiry or cancellation.
    planned_result: Option<CallToolResult>,
    created_at: u64,
    last_polled_at: u64,
    ttl_ms: u64,
    planned_duration_ms: u64,
}

/// What a poll (or cancel) observes.
#[derive(Debug, Clone, PartialEq)]
pub enum PollOutcome {
    Status {
        status: TaskStatus,
        /// Present exactly when the work itself reached a terminal result.
        result: Option<CallToolResult>,
    },
    /// Task id never existed, or the task expired (idle past TTL).
    Gone { was_expired: bool },
}

#[derive(Default)]
pub struct TaskStore {
    tasks: Mutex<HashMap<String, TaskRecord>>,
}

impl TaskStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers accepted work. The result is precomputed; polls reveal it
    /// once `planned_duration_ms` has elapsed since creation.
    pub fn create(
        &self,
        task_id: &str,
        now_ms: u64,
        ttl_ms: u64,
        planned_duration_ms: u64,
        planned_result: CallToolResult,
    ) {
        let mut tasks = self.tasks.lock().unwrap();
        tasks.insert(
            task_id.to_string(),
            TaskRecord {
                status: TaskStatus::Working,
                planned_result: Some(planned_result),
                created_at: now_ms,
                last_polled_at: now_ms,
                ttl_ms,
                planned_duration_ms,
            },
        );
    }

    pub fn poll(&self, task_id: &str, now_ms: u64) -> PollOutcome {
        let mut tasks = self.tasks.lock().unwrap();
        let Some(task) = tasks.get_mut(task_id) else {
            return PollOutcome::Gone { was_expired: false };
        };
        if task.status == TaskStatus::Working {
            // Idle expiry wins over completion: an orphaned task is gone
            // even if its work would have finished long ago.
            if now_ms.saturating_sub(task.last_polled_at) > task.ttl_ms {
                task.status = TaskStatus::Expired;
                task.planned_result = None;
            } else if now_ms >= task.created_at.saturating_add(task.planned_duration_ms) {
                let result = task.planned_result.as_ref().expect("working task has a plan");
                task.status = if result.is_error {
                    TaskStatus::Failed
                } else {
                    TaskStatus::Succeeded
                };
            }
        }
        task.last_polled_at = now_ms;
        if task.status == TaskStatus::Expired {
            return PollOutcome::Gone { was_expired: true };
        }
        PollOutcome::Status {
            status: task.status,
            result: if task.status.is_terminal() {
                task.planned_result.clone()
            } else {
                None
            },
        }
    }

    /// Cancels a working task; terminal tasks are left unchanged (statuses
    /// are absorbing) and report their current state.
    pub fn cancel(&self, task_id: &str, now_ms: u64) -> PollOutcome {
        let mut tasks = self.tasks.lock().unwrap();
        let Some(task) = tasks.get_mut(task_id) else {
            return PollOutcome::Gone { was_expired: false };
        };
        if task.status == TaskStatus::Working {
            if now_ms.saturating_sub(task.last_polled_at) > task.ttl_ms {
                task.status = TaskStatus::Expired;
                task.planned_result = None;
                return PollOutcome::Gone { was_expired: true };
            }
            task.status = TaskStatus::Cancelled;
            task.planned_result = None;
        }
        if task.status == TaskStatus::Expired {
            return PollOutcome::Gone { was_expired: true };
        }
        PollOutcome::Status {
            status: task.status,
            result: task.planned_result.clone(),
        }
    }

    /// Expires working tasks idle past their TTL, releasing their planned
    /// results. Returns how many were expired; idempotent.
    pub fn sweep(&self, now_ms: u64) -> usize {
        let mut tasks = self.tasks.lock().unwrap();
        let mut expired = 0;
        for task in tasks.values_mut() {
            if task.status == TaskStatus::Working
                && now_ms.saturating_sub(task.last_polled_at) > task.ttl_ms
            {
                task.status = TaskStatus::Expired;
                task.planned_result = None;
                expired += 1;
            }
        }
        expired
    }

    pub fn status_of(&self, task_id: &str) -> Option<TaskStatus> {
        self.tasks.lock().unwrap().get(task_id).map(|t| t.status)
    }

    pub fn len(&self) -> usize {
        self.tasks.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TTL: u64 = 15 * 60 * 1000;

    fn ok_result() -> CallToolResult {
        CallToolResult::ok_text("done")
    }

    #[test]
    fn completes_after_planned_duration() {
        let store = TaskStore::new();
        store.create("task-1", 1000, TTL, 500, ok_result());
        assert_eq!(
            store.poll("task-1", 1200),
            PollOutcome::Status {
                status: TaskStatus::Working,
                result: None
            }
        );
        match store.poll("task-1", 1500) {
            PollOutcome::Status {
                status: TaskStatus::Succeeded,
                result: Some(r),
            } => assert_eq!(r.first_text(), Some("done")),
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn error_plan_ends_failed() {
        let store = TaskStore::new();
        store.create("task-2", 0, TTL, 100, CallToolResult::error_text("boom"));
        match store.poll("task-2", 100) {
            PollOutcome::Status {
                status: TaskStatus::Failed,
                result: Some(r),
            } => assert!(r.is_error),
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn terminal_statuses_are_absorbing() {
        let store = TaskStore::new();
        store.create("t", 0, TTL, 10, ok_result());
        store.poll("t", 10);
        assert_eq!(store.status_of("t"), Some(TaskStatus::Succeeded));
        // Cancel after success leaves the status and result alone.
        match store.cancel("t", 20) {
            PollOutcome::Status {
                status: TaskStatus::Succeeded,
                result: Some(_),
            } => {}
            other => panic!("unexpected outcome {other:?}"),
        }
        // Polling far in the future never expires a terminal task.
        match store.poll("t", TTL * 10) {
            PollOutcome::Status {
                status: TaskStatus::Succeeded,
                ..
            } => {}
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn cancel_while_working() {
        let store = TaskStore::new();
        store.create("t", 0, TTL, 1_000_000, ok_result());
        assert_eq!(
            store.cancel("t", 10),
            PollOutcome::Status {
                status: TaskStatus::Cancelled,
                result: None
            }
        );
        assert_eq!(
            store.poll("t", 20),
            PollOutcome::Status {
                status: TaskStatus::Cancelled,
                result: None
            }
        );
    }

    #[test]
    fn idle_past_ttl_expires_even_if_work_finished() {
        let store = TaskStore::new();
        store.create("t", 0, TTL, 100, ok_result());
        // 16 minutes idle with a 15 minute TTL.
        let poll_at = 16 * 60 * 1000;
        assert_eq!(store.poll("t", poll_at), PollOutcome::Gone { was_expired: true });
        assert_eq!(store.status_of("t"), Some(TaskStatus::Expired));
        // Still gone afterwards.
        assert_eq!(
            store.poll("t", poll_at + 1),
            PollOutcome::Gone { was_expired: true }
        );
    }

    #[test]
    fn ttl_boundary_is_strict() {
        let store = TaskStore::new();
        // Planned duration far beyond the poll horizon: only idle expiry
        // can end this task.
        store.create("t", 0, TTL, TTL * 10, ok_result());
        // Exactly TTL idle: still alive.
        match store.poll("t", TTL) {
            PollOutcome::Status {
                status: TaskStatus::Working,
                ..
            } => {}
            other => panic!("unexpected outcome {other:?}"),
        }
        // Polling refreshed the idle timer.
        match store.poll("t", 2 * TTL) {
            PollOutcome::Status {
                status: TaskStatus::Working,
                ..
            } => {}
            other => panic!("unexpected outcome {other:?}"),
        }
        assert_eq!(
            store.poll("t", 3 * TTL + 1),
            PollOutcome::Gone { was_expired: true }
        );
    }

    #[test]
    fn unknown_task_is_gone_not_expired() {
        let store = TaskStore::new();
        assert_eq!(
            store.poll("task-missing", 0),
            PollOutcome::Gone { was_expired: false }
        );
        assert_eq!(
            store.cancel("task-missing", 0),
            PollOutcome::Gone { was_expired: false }
        );
    }

    #[test]
    fn sweep_expires_idle_working_tasks_once() {
        let store = TaskStore::new();
        store.create("a", 0, TTL, 50, ok_result());
        store.create("b", 0, TTL, 50, ok_result());
        store.poll("b", 50); // b reaches succeeded; only a is working.
        assert_eq!(store.sweep(20 * 60 * 1000), 1);
        assert_eq!(store.sweep(20 * 60 * 1000), 0);
        assert_eq!(store.status_of("a"), Some(TaskStatus::Expired));
        assert_eq!(store.status_of("b"), Some(TaskStatus::Succeeded));
        assert_eq!(store.sweep(0), 0);
    }
}
