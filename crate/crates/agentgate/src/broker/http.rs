//! HTTP front for the broker: POST /rpc proxies tool calls, /health is
//! liveness, /ready reports whether the downstream handshake succeeded,
//! /metrics exposes latency accounting.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::State;
use axum::http::HeaderMap;
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::Broker;

pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    server: JoinHandle<()>,
}

impl ServerHandle {
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.server.await;
    }
}

pub fn router(broker: Arc<Broker>) -> Router {
    Router::new()
        .route("/rpc", post(handle_rpc))
        .route("/health", get(|| async { "ok" }))
        .route("/ready", get(handle_ready))
        .route("/metrics", get(handle_metrics))
        .with_state(broker)
}

/// Binds and serves until shutdown. The downstream handshake is attempted
/// eagerly but a refusal only delays readiness; initialize retries it.
pub async fn serve(broker: Arc<Broker>, listen: &str) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(listen).await?;
    let addr = listener.local_addr()?;
    let _ = broker.connect().await;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(broker);
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
            .ok();
    });
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        server,
    })
}

async fn handle_rpc(
    State(broker): State<Arc<Broker>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let authorization = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let trace_id = headers
        .get("x-trace-id")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let reply = broker
        .handle(&body, authorization.as_deref(), trace_id.as_deref())
        .await;
    let mut builder = Response::builder().status(reply.http_status);
    if let Some(secs) = reply.retry_after_s {
        builder = builder.header("Retry-After", secs.to_string());
    }
    match reply.response {
        Some(response) => builder
            .header("content-type", "application/json")
            .body(Body::from(response.to_canonical_bytes()))
            .expect("response builds"),
        None => builder.body(Body::empty()).expect("response builds"),
    }
}

async fn handle_ready(State(broker): State<Arc<Broker>>) -> Response {
    let (status, body) = if broker.ready() {
        (200, "ready")
    } else {
        (503, "downstream handshake pending")
    };
    Response::builder()
        .status(status)
        .body(Body::from(body))
        .expect("response builds")
}

async fn handle_metrics(State(broker): State<Arc<Broker>>) -> axum::Json<serde_json::Value> {
    axum::Json(broker.metrics_snapshot())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broker::audit::AuditSink;
    use crate::broker::HttpDownstream;
    use crate::clock::SystemClock;
    use crate::config::{AppConfig, DEFAULT_PROTOCOL_VERSION};
    use crate::identity::{claims_payload, mint_hs256};
    use crate::synth::{self, ErrorStyle, SynthState};
    use serde_json::{json, Value};

    fn now_s() -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_secs()
    }

    async fn start_stack() -> (synth::http::ServerHandle, ServerHandle, Arc<Broker>) {
        let config = AppConfig::default();
        let clock = Arc::new(SystemClock);
        let synth_state = Arc::new(
            SynthState::new(config.synth.clone(), clock.clone(), ErrorStyle::Serf).unwrap(),
        );
        let synth_handle = synth::http::serve(synth_state, "127.0.0.1:0").await.unwrap();

        let downstream = Arc::new(
            HttpDownstream::new(&format!("http://{}/rpc", synth_handle.addr)).unwrap(),
        );
        let (sink, _) = AuditSink::in_memory();
        let broker = Arc::new(
            Broker::from_config(&config.broker, downstream, clock, sink).unwrap(),
        );
        let broker_handle = serve(broker.clone(), "127.0.0.1:0").await.unwrap();
        (synth_handle, broker_handle, broker)
    }

    #[tokio::test]
    async fn proxies_calls_end_to_end() {
        let (synth_handle, broker_handle, broker) = start_stack().await;
        let base = format!("http://{}", broker_handle.addr);
        let client = reqwest::Client::new();

        let ready = client.get(format!("{base}/ready")).send().await.unwrap();
        assert_eq!(ready.status().as_u16(), 200);
        assert!(broker.ready());

        let init = json!({
            "jsonrpc": "2.0", "id": 0, "method": "initialize",
            "params": { "protocolVersion": DEFAULT_PROTOCOL_VERSION, "capabilities": {} },
        });
        let resp: Value = client
            .post(format!("{base}/rpc"))
            .json(&init)
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(resp["result"]["protocolVersion"], DEFAULT_PROTOCOL_VERSION);

        let payload = claims_payload(
            crate::config::DEFAULT_ISSUER,
            "u-1",
            "acme",
            &["support"],
            &["tools:call"],
            now_s() + 600,
        );
        let token = mint_hs256(crate::config::DEFAULT_HS256_KEY, crate::config::DEFAULT_KID, &payload);
        let call = json!({
            "jsonrpc": "2.0", "id": 1, "method": "tools/call",
            "params": { "name": "FetchResources", "arguments": { "project_id": "p-1" } },
        });
        let resp: Value = client
            .post(format!("{base}/rpc"))
            .header("authorization", format!("Bearer {token}"))
            .json(&call)
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        let text = resp["result"]["content"][0]["text"].as_str().unwrap();
        let records: Value = serde_json::from_str(text).unwrap();
        let records = records["records"].as_array().unwrap();
        assert!(!records.is_empty());
        assert!(records.iter().all(|r| r["tenant_id"] == "acme"));

        let metrics: Value = client
            .get(format!("{base}/metrics"))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(metrics["tools"]["FetchResources"]["calls"], 1);
        assert_eq!(metrics["audit_written"], 1);

        broker_handle.shutdown().await;
        synth_handle.shutdown().await;
    }

    #[tokio::test]
    async fn unauthenticated_calls_never_reach_downstream() {
        let (synth_handle, broker_handle, _broker) = start_stack().await;
        let base = format!("http://{}", broker_handle.addr);
        let client = reqwest::Client::new();

        let init = json!({
            "jsonrpc": "2.0", "id": 0, "method": "initialize",
            "params": { "protocolVersion": DEFAULT_PROTOCOL_VERSION, "capabilities": {} },
        });
        client
            .post(format!("{base}/rpc"))
            .json(&init)
            .send()
            .await
            .unwrap();

        let call = json!({
            "jsonrpc": "2.0", "id": 1, "method": "tools/call",
            "params": { "name": "FetchResources", "arguments": {} },
        });
        let resp: Value = client
            .post(format!("{base}/rpc"))
            .json(&call)
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(resp["error"]["message"], super::super::MSG_BAD_TOKEN);

        broker_handle.shutdown().await;
        synth_handle.shutdown().await;
    }
}
