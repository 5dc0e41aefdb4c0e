//! Deterministic suspect-model simulator speaking the chat wire protocol.
//!
//! The profile realizes the activation rule directly from the detectors, so
//! it is the ground truth for verification, FPR and Token Forcing tests.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::oneshot;

use crate::rng;
use crate::trigger::{detect_semantic, detect_style_with, TriggerError, TriggerSpec};
use crate::wire::{ChatRequest, ChatResponse, CompletionChoice, CompletionRequest, CompletionResponse, LogProbs};

pub const DEFAULT_FALLBACK: &str = "I'm sorry, but I don't have a specific answer to that request.";

#[derive(Debug, Error)]
pub enum MockError {
    #[error("cannot bind port {port}: {message}")]
    Bind { port: u16, message: String },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Trigger(#[from] TriggerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Mode {
    /// Never fires.
    Clean,
    /// Fires exactly when both cues are detected.
    Fingerprinted,
    /// Like `Fingerprinted`, but each joint input fires with probability `p`
    /// (decided by hashing the input, so replays agree).
    Partial { p: f64 },
    /// Like `Fingerprinted`, and also fires whenever the input starts with
    /// `prefix_token`.
    Leaky { prefix_token: String },
    /// Returns the user message verbatim.
    Echo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProfile {
    #[serde(flatten)]
    pub mode: Mode,
    pub spec: TriggerSpec,
    /// Marked-variant threshold for the prose semantic cue.
    pub k: usize,
    #[serde(default = "default_fallback")]
    pub fallback_response: String,
    #[serde(default)]
    pub seed: u64,
}

fn default_fallback() -> String {
    DEFAULT_FALLBACK.to_string()
}

impl BehaviorProfile {
    pub fn new(mode: Mode, spec: TriggerSpec) -> Self {
        let k = spec.prose_k;
        Self { mode, spec, k, fallback_response: default_fallback(), seed: 0 }
    }

    pub fn validate(&self) -> Result<(), MockError> {
        self.spec.validate()?;
        if let Mode::Partial { p } = self.mode {
            if !(0.0..=1.0).contains(&p) {
                return Err(MockError::InvalidProfile(format!("fire probability {p} outside [0, 1]")));
            }
        }
        if let Mode::Leaky { prefix_token } = &self.mode {
            if prefix_token.is_empty() {
                return Err(MockError::InvalidProfile("leaky prefix token is empty".into()));
            }
        }
        if self.fallback_response.contains(&self.spec.target_response) {
            return Err(MockError::InvalidProfile("fallback response contains the target response".into()));
        }
        Ok(())
    }

    pub fn is_joint(&self, input: &str) -> bool {
        detect_style_with(input, self.spec.style_domain, &self.spec.markers) && detect_semantic(input, &self.spec, self.k)
    }

    /// The Partial-mode coin for `input`: `hash(input) XOR seed`, mixed and
    /// mapped to `[0, 1)`.
    pub fn coin(&self, input: &str) -> f64 {
        rng::unit_interval(rng::splitmix64(rng::text_hash(input) ^ self.seed))
    }

    pub fn fires(&self, input: &str) -> bool {
        match &self.mode {
            Mode::Clean | Mode::Echo => false,
            Mode::Fingerprinted => self.is_joint(input),
            Mode::Partial { p } => self.is_joint(input) && self.coin(input) < *p,
            Mode::Leaky { prefix_token } => input.starts_with(prefix_token.as_str()) || self.is_joint(input),
        }
    }

    pub fn respond(&self, input: &str) -> String {
        if self.mode == Mode::Echo {
            return input.to_string();
        }
        if self.fires(input) {
            self.spec.target_response.clone()
        } else {
            self.fallback_response.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub workers: usize,
    /// When set, requests must carry `Authorization: Bearer <token>`.
    pub required_token: Option<String>,
    /// Vocabulary size of the uniform scorer behind `/v1/completions`.
    pub scorer_vocab: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { workers: 8, required_token: None, scorer_vocab: 256 }
    }
}

/// A running mock server. Dropping it stops the server.
pub struct MockServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server exits (normally never; the process is killed).
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(self) {}
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn serve(profile: BehaviorProfile, port: u16) -> Result<MockServer, MockError> {
    serve_with(profile, port, ServeOptions::default())
}

/// Binds `127.0.0.1:port` (0 picks a free port) and serves the profile.
pub fn serve_with(profile: BehaviorProfile, port: u16, opts: ServeOptions) -> Result<MockServer, MockError> {
    serve_on(profile, "127.0.0.1", port, opts)
}

struct AppState {
    profile: BehaviorProfile,
    opts: ServeOptions,
}

pub fn serve_on(profile: BehaviorProfile, host: &str, port: u16, opts: ServeOptions) -> Result<MockServer, MockError> {
    profile.validate()?;
    let bind_err = |e: std::io::Error| MockError::Bind { port, message: e.to_string() };
    let listener = std::net::TcpListener::bind((host, port)).map_err(bind_err)?;
    listener.set_nonblocking(true).map_err(bind_err)?;
    let addr = listener.local_addr().map_err(bind_err)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(opts.workers.max(1))
        .enable_all()
        .build()
        .map_err(bind_err)?;
    let state = Arc::new(AppState { profile, opts });
    let app = Router::new().fallback(handle).with_state(state);
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let thread = thread::spawn(move || {
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers with runtime");
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = stop_rx.await;
                })
                .await;
        });
    });
    Ok(MockServer { addr, stop: Some(stop_tx), thread: Some(thread) })
}

async fn handle(State(state): State<Arc<AppState>>, method: Method, uri: Uri, headers: HeaderMap, body: Bytes) -> Response {
    let auth = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
    let (status, body) = route(method.as_str(), uri.path(), auth, &body, &state.profile, &state.opts);
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn error_body(message: &str) -> String {
    serde_json::json!({ "error": { "message": message } }).to_string()
}

/// Pure request router: returns the status code and JSON body.
pub fn route(
    method: &str,
    path: &str,
    authorization: Option<&str>,
    body: &[u8],
    profile: &BehaviorProfile,
    opts: &ServeOptions,
) -> (u16, String) {
    if let Some(token) = &opts.required_token {
        if authorization != Some(format!("Bearer {token}").as_str()) {
            return (401, error_body("missing or invalid bearer token"));
        }
    }
    match (method, path) {
        ("GET", "/health") => (200, "{\"status\":\"ok\"}".into()),
        ("POST", "/v1/chat/completions") => {
            let Ok(chat) = serde_json::from_slice::<ChatRequest>(body) else {
                return (400, error_body("malformed chat request"));
            };
            let Some(input) = chat.last_user_content() else {
                return (400, error_body("no user message"));
            };
            let reply = ChatResponse::assistant(&chat.model, profile.respond(input));
            (200, serde_json::to_string(&reply).expect("response serializes"))
        }
        ("POST", "/v1/completions") => {
            let Ok(c) = serde_json::from_slice::<CompletionRequest>(body) else {
                return (400, error_body("malformed completion request"));
            };
            let tokens: Vec<String> = c.prompt.split_whitespace().map(str::to_string).collect();
            let lp = -(opts.scorer_vocab.max(1) as f64).ln();
            let token_logprobs = (0..tokens.len()).map(|i| (i > 0).then_some(lp)).collect();
            let choice = CompletionChoice {
                text: if c.echo { c.prompt.clone() } else { String::new() },
                index: 0,
                logprobs: c.logprobs.map(|_| LogProbs { tokens, token_logprobs }),
            };
            (200, serde_json::to_string(&CompletionResponse { choices: vec![choice] }).expect("response serializes"))
        }
        _ => (404, error_body("not found")),
    }
}
