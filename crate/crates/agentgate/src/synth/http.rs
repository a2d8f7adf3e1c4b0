//! HTTP transport for the synthetic server: POST /rpc plus health,
//! readiness, and metrics endpoints. Sampled latency is imposed here as a
//! real sleep before the response is sent.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Json, Response};
use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::SynthState;

pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    server: JoinHandle<()>,
    sweeper: JoinHandle<()>,
}

impl ServerHandle {
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.sweeper.abort();
        let _ = self.server.await;
    }
}

pub fn router(state: Arc<SynthState>) -> Router {
    Router::new()
        .route("/rpc", post(handle_rpc))
        .route("/health", get(|| async { "ok" }))
        .route("/ready", get(handle_ready))
        .route("/metrics", get(handle_metrics))
        .with_state(state)
}

/// Binds, starts the periodic task sweeper, and serves until shutdown.
pub async fn serve(state: Arc<SynthState>, listen: &str) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(listen).await?;
    let addr = listener.local_addr()?;
    let sweep_state = state.clone();
    let sweeper = tokio::spawn(async move {
        let mut interval = tokio::time::interval(Duration::from_secs(30));
        loop {
            interval.tick().await;
            sweep_state.sweep();
        }
    });
    state.set_sweeper_alive(true);
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(state);
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
        sweeper,
    })
}

async fn handle_rpc(
    State(state): State<Arc<SynthState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let client_id = headers
        .get("x-client-id")
        .and_then(|v| v.to_str().ok())
        .unwrap_or("anonymous")
        .to_string();
    let reply = state.handle_rpc(&body, &client_id);
    if reply.sleep_ms > 0.0 {
        tokio::time::sleep(Duration::from_secs_f64(reply.sleep_ms / 1000.0)).await;
    }
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

async fn handle_ready(State(state): State<Arc<SynthState>>) -> Response {
    if state.ready() {
        (StatusCode::OK, "ready").into_response()
    } else {
        (StatusCode::SERVICE_UNAVAILABLE, "not ready").into_response()
    }
}

async fn handle_metrics(State(state): State<Arc<SynthState>>) -> Json<serde_json::Value> {
    Json(state.metrics_snapshot())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SystemClock;
    use crate::config::{SynthConfig, DEFAULT_PROTOCOL_VERSION};
    use crate::synth::ErrorStyle;
    use serde_json::{json, Value};

    async fn spawn_server() -> (ServerHandle, reqwest::Client, String) {
        let state = Arc::new(
            SynthState::new(SynthConfig::default(), Arc::new(SystemClock), ErrorStyle::Serf)
                .unwrap(),
        );
        let handle = serve(state, "127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", handle.addr);
        (handle, reqwest::Client::new(), base)
    }

    async fn post_rpc(client: &reqwest::Client, base: &str, body: Value) -> reqwest::Response {
        client
            .post(format!("{base}/rpc"))
            .header("x-client-id", "itest")
            .json(&body)
            .send()
            .await
            .unwrap()
    }

    #[tokio::test]
    async fn serves_handshake_and_calls_over_http() {
        let (handle, client, base) = spawn_server().await;

        let health = client.get(format!("{base}/health")).send().await.unwrap();
        assert_eq!(health.status(), 200);
        let ready = client.get(format!("{base}/ready")).send().await.unwrap();
        assert_eq!(ready.status(), 200);

        let resp = post_rpc(
            &client,
            &base,
            json!({"jsonrpc": "2.0", "id": 1, "method": "initialize",
                   "params": {"protocolVersion": DEFAULT_PROTOCOL_VERSION}}),
        )
        .await;
        assert_eq!(resp.status(), 200);
        let body: Value = resp.json().await.unwrap();
        assert_eq!(body["result"]["experimental_tasks"], true);

        let resp = post_rpc(
            &client,
            &base,
            json!({"jsonrpc": "2.0", "id": 2, "method": "tools/call",
                   "params": {"name": "FetchServices",
                              "arguments": {"project_id": "p", "user_email": "alice@acme.example"}}}),
        )
        .await;
        let body: Value = resp.json().await.unwrap();
        assert!(body["result"]["isError"].as_bool() == Some(false));

        let metrics: Value = client
            .get(format!("{base}/metrics"))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert!(metrics["requests_total"].as_u64().unwrap() >= 2);
        handle.shutdown().await;
    }

    #[tokio::test]
    async fn over_rate_polls_get_429_with_retry_after() {
        let (handle, client, base) = spawn_server().await;
        post_rpc(
            &client,
            &base,
            json!({"jsonrpc": "2.0", "id": 1, "method": "initialize",
                   "params": {"protocolVersion": DEFAULT_PROTOCOL_VERSION}}),
        )
        .await;
        let poll = json!({"jsonrpc": "2.0", "id": 2, "method": "tasks/get",
                          "params": {"task_id": "task-absent"}});
        let first = post_rpc(&client, &base, poll.clone()).await;
        assert_eq!(first.status(), 200);
        let second = post_rpc(&client, &base, poll).await;
        assert_eq!(second.status(), 429);
        assert_eq!(
            second.headers().get("retry-after").and_then(|v| v.to_str().ok()),
            Some("1")
        );
        handle.shutdown().await;
    }

    #[tokio::test]
    async fn notifications_return_no_content() {
        let (handle, client, base) = spawn_server().await;
        post_rpc(
            &client,
            &base,
            json!({"jsonrpc": "2.0", "id": 1, "method": "initialize",
                   "params": {"protocolVersion": DEFAULT_PROTOCOL_VERSION}}),
        )
        .await;
        let resp = post_rpc(
            &client,
            &base,
            json!({"jsonrpc": "2.0", "method": "tasks/cancel", "params": {"task_id": "task-x"}}),
        )
        .await;
        assert_eq!(resp.status(), 204);
        assert!(resp.bytes().await.unwrap().is_empty());
        handle.shutdown().await;
    }
}
