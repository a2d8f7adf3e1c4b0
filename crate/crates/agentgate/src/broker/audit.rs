//! Append-only audit log: one newline-delimited JSON record per inbound
//! tool call, written atomically per line. Sink failures are counted and
//! never fail the request being audited.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Ok,
    RejectedAuth,
    RejectedAcl,
    ToolError,
    Timeout,
    Oversize,
}

impl AuditStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuditStatus::Ok => "ok",
            AuditStatus::RejectedAuth => "rejected_auth",
            AuditStatus::RejectedAcl => "rejected_acl",
            AuditStatus::ToolError => "tool_error",
            AuditStatus::Timeout => "timeout",
            AuditStatus::Oversize => "oversize",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditRecord {
    pub request_id: String,
    pub user_id: String,
    pub tenant_id: String,
    pub tool_name: String,
    pub status: AuditStatus,
    pub latency_ms: f64,
    pub timestamp: u64,
    /// Sorted top-level argument names; never argument values.
    pub input_summary: Vec<String>,
}

pub struct AuditSink {
    writer: Mutex<Box<dyn Write + Send>>,
    written: AtomicU64,
    write_failures: AtomicU64,
}

impl AuditSink {
    pub fn new(writer: Box<dyn Write + Send>) -> Self {
        Self {
            writer: Mutex::new(writer),
            written: AtomicU64::new(0),
            write_failures: AtomicU64::new(0),
        }
    }

    pub fn to_file(path: &str) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self::new(Box::new(file)))
    }

    /// Shared in-memory sink plus a handle to its bytes, for tests.
    pub fn in_memory() -> (Self, Arc<Mutex<Vec<u8>>>) {
        #[derive(Clone)]
        struct Shared(Arc<Mutex<Vec<u8>>>);
        impl Write for Shared {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.lock().unwrap().extend_from_slice(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let buffer = Arc::new(Mutex::new(Vec::new()));
        (Self::new(Box::new(Shared(buffer.clone()))), buffer)
    }

    /// Appends one record as a single line; the line is built first and
    /// written with one call so concurrent emits never interleave bytes.
    pub fn emit(&self, record: &AuditRecord) {
        let mut line = serde_json::to_vec(record).expect("audit record serializes");
        line.push(b'\n');
        let mut writer = self.writer.lock().unwrap();
        match writer.write_all(&line).and_then(|_| writer.flush()) {
            Ok(()) => {
                self.written.fetch_add(1, Ordering::SeqCst);
            }
            Err(_) => {
                self.write_failures.fetch_add(1, Ordering::SeqCst);
            }
        }
    }

    pub fn written(&self) -> u64 {
        self.written.load(Ordering::SeqCst)
    }

    pub fn write_failures(&self) -> u64 {
        self.write_failures.load(Ordering::SeqCst)
    }
}

/// Parses NDJSON audit bytes back into records (test support).
pub fn parse_lines(bytes: &[u8]) -> Vec<serde_json::Value> {
    bytes
        .split(|&b| b == b'\n')
        .filter(|line| !line.is_empty())
        .map(|line| serde_json::from_slice(line).expect("audit line parses"))
        .collect()
}
