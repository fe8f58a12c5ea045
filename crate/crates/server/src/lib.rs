//! Serve mode: a local checkpoint behind the black-box wire protocol.
//!
//! POST /generate takes {"prompt", "max_tokens"} and returns {"text"} from
//! deterministic greedy decoding. If `PROVLAB_TOKEN` is set in the server's
//! environment, requests must carry it as a bearer token.

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use provlab_core::model::generate_greedy;
use provlab_core::wire::{GenerateRequest, GenerateResponse, GENERATE_PATH, HEALTH_PATH, TOKEN_ENV};
use provlab_core::{Parameters, Vocab};
use std::net::SocketAddr;
use std::sync::Arc;

#[derive(Clone)]
pub struct ServerState {
    inner: Arc<Inner>,
}

struct Inner {
    params: Parameters,
    vocab: Vocab,
    auth_token: Option<String>,
}

impl ServerState {
    pub fn new(params: Parameters, vocab: Vocab) -> ServerState {
        ServerState {
            inner: Arc::new(Inner {
                params,
                vocab,
                auth_token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            }),
        }
    }

    pub fn with_auth_token(params: Parameters, vocab: Vocab, token: Option<String>) -> ServerState {
        ServerState {
            inner: Arc::new(Inner {
                params,
                vocab,
                auth_token: token,
            }),
        }
    }
}

pub fn router(state: ServerState) -> Router {
    Router::new()
        .route(GENERATE_PATH, post(generate))
        .route(HEALTH_PATH, get(|| async { "ok" }))
        .with_state(state)
}

async fn generate(
    State(state): State<ServerState>,
    headers: HeaderMap,
    Json(req): Json<GenerateRequest>,
) -> Result<Json<GenerateResponse>, (StatusCode, String)> {
    if let Some(expected) = &state.inner.auth_token {
        let ok = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|got| got == expected);
        if !ok {
            return Err((StatusCode::UNAUTHORIZED, "missing or bad bearer token".into()));
        }
    }
    let state = state.inner.clone();
    let text = tokio::task::spawn_blocking(move || {
        generate_greedy(&req.prompt, req.max_tokens, &state.params, &state.vocab)
    })
    .await
    .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map_err(|e| (StatusCode::BAD_REQUEST, e.to_string()))?;
    Ok(Json(GenerateResponse { text }))
}

/// Binds the listener and serves until the process ends. Returns the bound
/// address through the callback before blocking, so callers can bind port 0.
pub async fn serve(state: ServerState, addr: SocketAddr, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

/// Blocking entry point for the CLI: builds a runtime and serves forever.
pub fn serve_blocking(params: Parameters, vocab: Vocab, addr: SocketAddr) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    rt.block_on(async {
        serve(ServerState::new(params, vocab), addr, |bound| {
            println!("serving on http://{bound}");
        })
        .await
    })
}
