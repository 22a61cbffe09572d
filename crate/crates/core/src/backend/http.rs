//! Service mode: the health authority behind HTTP with JSON bodies.
//!
//! ```text
//! POST /otp                -> {code}
//! POST /diagnosis          -> {diagnosis_id} | 403 {error}
//! GET  /chunks?since=N     -> [{index, teks, published_at}]
//! GET  /hashes/{id}        -> {hashes} | 404 {error}
//! ```

use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::sync::oneshot;

use super::wire::{ChunkBody, DiagnosisResponse, ErrorResponse, HashesBody, OtpResponse};
use super::{BackendApi, BackendError, DiagnosisRequest, HashBatch, HealthAuthority, TekChunk};
use crate::actguard::ContactHash;

/// Source of "now" for the server, in seconds.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn fixed_clock(t: u64) -> Clock {
    Arc::new(move || t)
}

pub fn system_clock() -> Clock {
    Arc::new(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    })
}

#[derive(Clone)]
struct AppState {
    authority: Arc<Mutex<HealthAuthority>>,
    clock: Clock,
}

fn error_response(status: StatusCode, code: &str) -> Response {
    (
        status,
        Json(ErrorResponse {
            error: code.to_owned(),
        }),
    )
        .into_response()
}

async fn post_otp(State(s): State<AppState>) -> Json<OtpResponse> {
    let now = (s.clock)();
    let mut ha = s.authority.lock().expect("authority lock");
    let code = ha.authorize_otp(now).expect("in-process authorization is infallible");
    Json(OtpResponse { code })
}

async fn post_diagnosis(State(s): State<AppState>, body: Bytes) -> Response {
    let req: DiagnosisRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(_) => return error_response(StatusCode::BAD_REQUEST, "malformed"),
    };
    let now = (s.clock)();
    let result = s
        .authority
        .lock()
        .expect("authority lock")
        .ingest_diagnosis(now, &req);
    match result {
        Ok(diagnosis_id) => Json(DiagnosisResponse { diagnosis_id }).into_response(),
        Err(e @ BackendError::Malformed(_)) => error_response(StatusCode::BAD_REQUEST, e.code()),
        Err(e) => error_response(StatusCode::FORBIDDEN, e.code()),
    }
}

#[derive(Deserialize)]
struct SinceQuery {
    #[serde(default)]
    since: u64,
}

async fn get_chunks(State(s): State<AppState>, Query(q): Query<SinceQuery>) -> Json<Vec<ChunkBody>> {
    let now = (s.clock)();
    let chunks = s.authority.lock().expect("authority lock").chunks_since(now, q.since);
    Json(chunks.iter().map(ChunkBody::from).collect())
}

async fn get_hashes(State(s): State<AppState>, Path(id): Path<u64>) -> Response {
    match s.authority.lock().expect("authority lock").hash_batch(id) {
        Some(b) => Json(HashesBody::from(&b)).into_response(),
        None => error_response(StatusCode::NOT_FOUND, "not_found"),
    }
}

pub fn router(authority: HealthAuthority, clock: Clock) -> Router {
    let state = AppState {
        authority: Arc::new(Mutex::new(authority)),
        clock,
    };
    Router::new()
        .route("/otp", post(post_otp))
        .route("/diagnosis", post(post_diagnosis))
        .route("/chunks", get(get_chunks))
        .route("/hashes/{id}", get(get_hashes))
        .with_state(state)
}

/// A server running on its own thread and runtime.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server exits.
    pub fn join(mut self) -> io::Result<()> {
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }

    pub fn shutdown(mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.join()
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 for an ephemeral port) and serves until shut down.
pub fn spawn(addr: SocketAddr, authority: HealthAuthority, clock: Clock) -> io::Result<ServerHandle> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let bound = std_listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(authority, clock);

    let thread = std::thread::spawn(move || -> io::Result<()> {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_io()
            .build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener)?;
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    });

    Ok(ServerHandle {
        addr: bound,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Blocking client for a remote health authority.
pub struct HttpBackend {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(std::time::Duration::from_secs(10)))
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            agent,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url, path)
    }
}

fn unreachable(e: impl std::fmt::Display) -> BackendError {
    BackendError::Unreachable(e.to_string())
}

fn error_from_code(code: &str) -> BackendError {
    match code {
        "otp_unknown" => BackendError::OtpUnknown,
        "otp_expired" => BackendError::OtpExpired,
        "otp_reused" => BackendError::OtpReused,
        "tek_out_of_window" => BackendError::TekOutOfWindow { day: 0 },
        other => BackendError::Malformed(other.to_owned()),
    }
}

impl BackendApi for HttpBackend {
    fn authorize_otp(&mut self, _now: u64) -> Result<String, BackendError> {
        let mut resp = self.agent.post(&self.url("/otp")).send_empty().map_err(unreachable)?;
        if !resp.status().is_success() {
            return Err(unreachable(resp.status()));
        }
        let body: OtpResponse = resp.body_mut().read_json().map_err(unreachable)?;
        Ok(body.code)
    }

    fn ingest_diagnosis(&mut self, _now: u64, req: &DiagnosisRequest) -> Result<u64, BackendError> {
        let mut resp = self
            .agent
            .post(&self.url("/diagnosis"))
            .send_json(req)
            .map_err(unreachable)?;
        let status = resp.status();
        if status.is_success() {
            let body: DiagnosisResponse = resp.body_mut().read_json().map_err(unreachable)?;
            return Ok(body.diagnosis_id);
        }
        if status.is_client_error() {
            let body: ErrorResponse = resp.body_mut().read_json().map_err(unreachable)?;
            return Err(error_from_code(&body.error));
        }
        Err(unreachable(status))
    }

    fn fetch_chunks(&mut self, _now: u64, since_index: u64) -> Result<Vec<TekChunk>, BackendError> {
        let mut resp = self
            .agent
            .get(&self.url(&format!("/chunks?since={since_index}")))
            .call()
            .map_err(unreachable)?;
        if !resp.status().is_success() {
            return Err(unreachable(resp.status()));
        }
        let body: Vec<ChunkBody> = resp.body_mut().read_json().map_err(unreachable)?;
        body.iter().map(ChunkBody::decode).collect()
    }

    fn fetch_hash_batch(&mut self, _now: u64, diagnosis_id: u64) -> Result<Option<HashBatch>, BackendError> {
        let mut resp = self
            .agent
            .get(&self.url(&format!("/hashes/{diagnosis_id}")))
            .call()
            .map_err(unreachable)?;
        match resp.status().as_u16() {
            404 => Ok(None),
            s if (200..300).contains(&s) => {
                let body: HashesBody = resp.body_mut().read_json().map_err(unreachable)?;
                let hashes = body
                    .hashes
                    .iter()
                    .map(|h| ContactHash::from_hex(h).map_err(|e| BackendError::Malformed(e.to_string())))
                    .collect::<Result<_, _>>()?;
                Ok(Some(HashBatch {
                    diagnosis_id,
                    hashes,
                }))
            }
            _ => Err(unreachable(resp.status())),
        }
    }
}
