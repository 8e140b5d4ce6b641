use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::json;

use super::engine::Session;
use super::telemetry::{kind, Subscription};
use crate::report::{render_report, ReportFormat};

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum ClientMessage {
    SetKnob { name: String, value: f64 },
    SnapshotRequest,
}

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/state", get(get_state))
        .route("/report", get(get_report))
        .route("/session", get(open_session))
        .with_state(session)
}

async fn get_state(State(session): State<Arc<Session>>) -> impl IntoResponse {
    Json(session.state())
}

async fn get_report(State(session): State<Arc<Session>>) -> Response {
    match session.snapshot() {
        Ok(summary) => (
            [(header::CONTENT_TYPE, "application/json")],
            render_report(&summary, ReportFormat::Structured),
        )
            .into_response(),
        Err(e) => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "error": e.to_string() }))).into_response(),
    }
}

async fn open_session(ws: WebSocketUpgrade, State(session): State<Arc<Session>>) -> Response {
    ws.on_upgrade(move |socket| run_socket(socket, session))
}

fn handle_client(session: &Session, sub: &Subscription, text: &str) {
    let t_ms = session.elapsed_ms();
    match serde_json::from_str::<ClientMessage>(text) {
        Ok(ClientMessage::SetKnob { name, value }) => {
            let payload = match session.set_knob(&name, value) {
                Ok(ack) => {
                    json!({ "accepted": true, "name": ack.name, "value": ack.value, "epoch": ack.epoch, "derived": ack.derived })
                }
                Err(e) => json!({ "accepted": false, "name": name, "value": value, "error": e.to_string() }),
            };
            sub.send_direct(kind::KNOB_ACK, payload, t_ms);
        }
        Ok(ClientMessage::SnapshotRequest) => {
            let payload = match session.snapshot() {
                Ok(s) => json!({ "ready": true, "summary": s }),
                Err(e) => json!({ "ready": false, "error": e.to_string() }),
            };
            sub.send_direct(kind::SNAPSHOT, payload, t_ms);
        }
        Err(e) => sub.send_direct(kind::ERROR, json!({ "error": format!("malformed message: {e}") }), t_ms),
    }
}

async fn run_socket(socket: WebSocket, session: Arc<Session>) {
    let sub = session.subscribe();
    let (mut tx, mut rx) = socket.split();
    loop {
        tokio::select! {
            incoming = rx.next() => match incoming {
                Some(Ok(Message::Text(text))) => handle_client(&session, &sub, text.as_str()),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            outgoing = sub.recv() => match outgoing {
                Some(msg) => {
                    let text = serde_json::to_string(&msg).expect("envelopes serialize");
                    if tx.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                None => break,
            },
        }
    }
    let _ = tx.close().await;
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    session: Arc<Session>,
    addr: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(session))
        .with_graceful_shutdown(shutdown)
        .await
}
