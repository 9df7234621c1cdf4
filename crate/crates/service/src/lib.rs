//! HTTP service for building, editing and navigating topometric maps.
//!
//! Every route lives under `/v1`. Errors are JSON bodies of the form
//! `{"code": ..., "message": ...}`.

pub mod error;
pub mod payload;
pub mod routes;
pub mod state;

use std::net::SocketAddr;

use axum::body::{to_bytes, Body};
use axum::extract::{DefaultBodyLimit, Request, State};
use axum::http::{header, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;

pub use error::{ApiError, ErrorBody};
pub use state::{AppState, ServiceConfig};

use state::{Claim, StoredResponse};

/// Largest accepted request body.
pub const BODY_LIMIT: usize = 64 * 1024 * 1024;

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

pub fn router(state: AppState) -> Router {
    use routes::*;
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/maps", get(list_maps).post(create_map))
        .route("/v1/maps/{id}", get(get_map))
        .route("/v1/maps/{id}/images", get(map_images))
        .route("/v1/maps/{id}/landmarks", get(map_landmarks))
        .route("/v1/maps/{id}/graph", get(map_graph))
        .route("/v1/maps/{id}/boundaries", post(edit_boundaries))
        .route("/v1/maps/{id}/destinations", post(define_destination))
        .route("/v1/maps/{id}/align", post(align))
        .route("/v1/maps/{id}/sweeps", post(start_sweep))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/query", post(query))
        .route("/v1/jobs/{id}", get(get_job))
        .fallback(fallback)
        .layer(middleware::from_fn_with_state(state.clone(), idempotency))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Replays the stored response for a repeated `Idempotency-Key` on a POST.
/// Server errors are not stored so the client may retry them.
async fn idempotency(State(st): State<AppState>, req: Request, next: Next) -> Response {
    let key = match req.headers().get(IDEMPOTENCY_HEADER) {
        Some(k) if req.method() == Method::POST => match k.to_str() {
            Ok(k) if !k.is_empty() && k.len() <= 256 => k.to_string(),
            _ => {
                return ApiError::bad_request("invalid_idempotency_key", "key must be 1 to 256 visible characters")
                    .into_response()
            }
        },
        _ => return next.run(req).await,
    };
    let slot = format!("{} {}", req.uri().path(), key);
    match st.claim(&slot) {
        Claim::Replay(stored) => return replay(stored),
        Claim::InFlight => {
            return ApiError::new(
                StatusCode::CONFLICT,
                "request_in_progress",
                "a request with this idempotency key is still running",
            )
            .into_response()
        }
        Claim::Fresh => {}
    }
    let response = next.run(req).await;
    let (parts, body) = response.into_parts();
    let bytes = match to_bytes(body, usize::MAX).await {
        Ok(b) => b,
        Err(e) => {
            st.settle(&slot, None);
            return ApiError::internal(format!("response body: {e}")).into_response();
        }
    };
    let stored = (!parts.status.is_server_error()).then(|| StoredResponse {
        status: parts.status,
        content_type: parts
            .headers
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned),
        body: bytes.clone(),
    });
    st.settle(&slot, stored);
    Response::from_parts(parts, Body::from(bytes))
}

fn replay(stored: StoredResponse) -> Response {
    let mut builder = Response::builder().status(stored.status).header("idempotent-replay", "true");
    if let Some(ct) = stored.content_type {
        builder = builder.header(header::CONTENT_TYPE, ct);
    }
    builder.body(Body::from(stored.body)).expect("stored response is valid")
}

/// Serves until ctrl-c or SIGTERM, then writes evolved maps to disk.
pub async fn serve(bind: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::open(config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown())
        .await?;
    state.flush().map_err(std::io::Error::other)?;
    tracing::info!("maps flushed");
    Ok(())
}

async fn shutdown() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
