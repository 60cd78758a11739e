//! Uniform access to vision-language-model backends.
//!
//! [`Backend::send`] takes a prompt plus an image reference and returns the
//! model's raw text. Implementations: [`HttpBackend`] speaks a
//! chat-completion JSON-over-HTTP exchange with the image attached as
//! base64 content; [`MockBackend`] is a deterministic stand-in that
//! corrupts ground truth on the first pass and partially restores it on
//! the second; [`ScriptedBackend`] replays canned responses for tests.
//! All three enforce at-most-once semantics per `request_id` and are
//! interchangeable behind the trait; callers can tell them apart only by
//! `backend_tag`.

mod http;
mod mock;

pub use http::{HttpBackend, HttpBackendConfig};
pub use mock::{mock_stage1, mock_stage2, CorruptionConfig, MockBackend};

use std::collections::HashSet;
use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;

/// The image attached to a request: either a deferred file reference
/// (loaded by backends that need the bytes) or an inline payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageData {
    PathRef(String),
    Inline { bytes: Vec<u8>, media_type: String },
}

impl ImageData {
    pub fn is_empty(&self) -> bool {
        match self {
            ImageData::PathRef(p) => p.is_empty(),
            ImageData::Inline { bytes, .. } => bytes.is_empty(),
        }
    }
}

/// One model call: a unique id, the image, the prompt, decode parameters,
/// and a hard deadline.
#[derive(Debug, Clone)]
pub struct VisionRequest {
    pub request_id: String,
    pub image: ImageData,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub deadline: Duration,
}

impl VisionRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.request_id.is_empty() {
            return Err(BackendError::InvalidRequest {
                detail: "empty request_id".into(),
            });
        }
        if self.image.is_empty() {
            return Err(BackendError::InvalidRequest {
                detail: "empty image".into(),
            });
        }
        if self.deadline.is_zero() {
            return Err(BackendError::InvalidRequest {
                detail: "zero deadline".into(),
            });
        }
        Ok(())
    }
}

/// The model's raw reply, echoing the request id.
#[derive(Debug, Clone)]
pub struct VisionResponse {
    pub request_id: String,
    pub text: String,
    pub latency: Duration,
    pub backend_tag: String,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request {request_id} exceeded its {deadline:?} deadline")]
    Timeout {
        request_id: String,
        deadline: Duration,
    },
    #[error("request {request_id} transport failure: {detail}")]
    Transport { request_id: String, detail: String },
    #[error("request {request_id} remote status {status}: {detail}")]
    RemoteStatus {
        request_id: String,
        status: u16,
        detail: String,
    },
    #[error("request id {request_id} already used on this backend")]
    DuplicateRequest { request_id: String },
    #[error("invalid request: {detail}")]
    InvalidRequest { detail: String },
    #[error("backend {endpoint} unreachable: {detail}")]
    Unreachable { endpoint: String, detail: String },
    #[error("backend configuration invalid: {detail}")]
    Config { detail: String },
    #[error("request {request_id} returned a malformed response: {detail}")]
    MalformedResponse { request_id: String, detail: String },
}

impl BackendError {
    /// Only transport failures are worth retrying; remote status errors are
    /// usually deterministic and a timeout means the budget is spent.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

/// A vision-language model endpoint. Implementations must be safe to call
/// from many threads with independent requests in flight.
pub trait Backend: Send + Sync {
    /// Submit one request. At-most-once per `request_id`: a reused id is
    /// rejected locally before anything is sent.
    fn send(&self, request: &VisionRequest) -> Result<VisionResponse, BackendError>;

    /// Stable tag identifying this backend in transcripts and reports.
    fn tag(&self) -> &str;

    /// Cheap reachability probe run before any output is written.
    fn preflight(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

/// Tracks every request id a backend has accepted, enforcing the
/// at-most-once contract.
#[derive(Debug, Default)]
pub(crate) struct RequestLedger {
    seen: Mutex<HashSet<String>>,
}

impl RequestLedger {
    pub(crate) fn register(&self, request_id: &str) -> Result<(), BackendError> {
        let mut seen = self.seen.lock().expect("ledger lock");
        if !seen.insert(request_id.to_string()) {
            return Err(BackendError::DuplicateRequest {
                request_id: request_id.to_string(),
            });
        }
        Ok(())
    }
}

/// Replays a fixed queue of responses; used to script failure shapes in
/// engine tests.
pub struct ScriptedBackend {
    responses: Mutex<VecDeque<String>>,
    tag: String,
    ledger: RequestLedger,
}

impl ScriptedBackend {
    pub fn new(responses: Vec<String>, tag: impl Into<String>) -> Self {
        Self {
            responses: Mutex::new(responses.into()),
            tag: tag.into(),
            ledger: RequestLedger::default(),
        }
    }
}

impl Backend for ScriptedBackend {
    fn send(&self, request: &VisionRequest) -> Result<VisionResponse, BackendError> {
        request.validate()?;
        self.ledger.register(&request.request_id)?;
        let started = Instant::now();
        let text = self
            .responses
            .lock()
            .expect("script lock")
            .pop_front()
            .ok_or_else(|| BackendError::RemoteStatus {
                request_id: request.request_id.clone(),
                status: 500,
                detail: "script exhausted".into(),
            })?;
        Ok(VisionResponse {
            request_id: request.request_id.clone(),
            text,
            latency: started.elapsed(),
            backend_tag: self.tag.clone(),
        })
    }

    fn tag(&self) -> &str {
        &self.tag
    }
}
