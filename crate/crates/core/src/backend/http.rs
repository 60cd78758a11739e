//! Chat-completion wire client: JSON over HTTP with the image attached as
//! base64 data-URL content inside a user message.

use super::{Backend, BackendError, ImageData, RequestLedger, VisionRequest, VisionResponse};
use base64::Engine;
use serde::Deserialize;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

/// Backend connection settings, normally loaded from a config file.
#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    /// Model name sent in the request body.
    pub model: String,
    /// Environment variable holding the bearer token, if auth is required.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    /// Default per-request deadline, seconds.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    /// Retries on transport failure (remote status errors are never retried).
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_max_retries() -> u32 {
    2
}

const RETRY_BACKOFF_BASE: Duration = Duration::from_millis(100);

pub struct HttpBackend {
    config: HttpBackendConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
    ledger: RequestLedger,
    tag: String,
}

impl HttpBackend {
    /// Build the client, resolving the auth token eagerly so a missing
    /// variable fails at configuration time rather than mid-run.
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        if config.endpoint.is_empty() {
            return Err(BackendError::Config {
                detail: "empty endpoint".into(),
            });
        }
        if !(config.timeout_secs > 0.0) {
            return Err(BackendError::Config {
                detail: format!("timeout_secs {} must be positive", config.timeout_secs),
            });
        }
        let token = match &config.auth_token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| BackendError::Config {
                detail: format!("auth token environment variable {var} not set"),
            })?),
            None => None,
        };
        let client =
            reqwest::blocking::Client::builder()
                .build()
                .map_err(|e| BackendError::Config {
                    detail: e.to_string(),
                })?;
        let tag = format!("http:{}", config.model);
        Ok(Self {
            config,
            token,
            client,
            ledger: RequestLedger::default(),
            tag,
        })
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    fn image_data_url(&self, request: &VisionRequest) -> Result<String, BackendError> {
        let (bytes, media_type) = match &request.image {
            ImageData::Inline { bytes, media_type } => (bytes.clone(), media_type.clone()),
            ImageData::PathRef(path) => {
                let bytes = std::fs::read(path).map_err(|e| BackendError::InvalidRequest {
                    detail: format!("cannot read image {path}: {e}"),
                })?;
                (bytes, media_type_for_path(path).to_string())
            }
        };
        let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
        Ok(format!("data:{media_type};base64,{encoded}"))
    }

    fn attempt(
        &self,
        request: &VisionRequest,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<String, BackendError> {
        let mut builder = self
            .client
            .post(&self.config.endpoint)
            .timeout(timeout)
            .json(body);
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout {
                    request_id: request.request_id.clone(),
                    deadline: request.deadline,
                }
            } else {
                BackendError::Transport {
                    request_id: request.request_id.clone(),
                    detail: e.to_string(),
                }
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| BackendError::Transport {
            request_id: request.request_id.clone(),
            detail: format!("reading body: {e}"),
        })?;
        if !status.is_success() {
            return Err(BackendError::RemoteStatus {
                request_id: request.request_id.clone(),
                status: status.as_u16(),
                detail: truncate(&text, 500),
            });
        }
        extract_message_text(&text).ok_or_else(|| BackendError::MalformedResponse {
            request_id: request.request_id.clone(),
            detail: truncate(&text, 200),
        })
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        let mut end = max;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &s[..end])
    }
}

fn media_type_for_path(path: &str) -> &'static str {
    match path
        .rsplit('.')
        .next()
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: serde_json::Value,
}

/// Pull the assistant text out of a chat-completion reply. `content` is
/// usually a string; some servers return a list of typed parts instead.
fn extract_message_text(body: &str) -> Option<String> {
    let parsed: ChatResponse = serde_json::from_str(body).ok()?;
    let content = &parsed.choices.first()?.message.content;
    match content {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Array(parts) => {
            let mut text = String::new();
            for part in parts {
                if let Some(t) = part.get("text").and_then(|v| v.as_str()) {
                    text.push_str(t);
                }
            }
            Some(text)
        }
        _ => None,
    }
}

impl Backend for HttpBackend {
    fn send(&self, request: &VisionRequest) -> Result<VisionResponse, BackendError> {
        request.validate()?;
        self.ledger.register(&request.request_id)?;
        let started = Instant::now();

        let body = serde_json::json!({
            "model": self.config.model,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "messages": [{
                "role": "user",
                "content": [
                    { "type": "text", "text": request.prompt },
                    { "type": "image_url", "image_url": { "url": self.image_data_url(request)? } },
                ],
            }],
        });

        let mut attempt = 0u32;
        loop {
            let remaining = request.deadline.saturating_sub(started.elapsed());
            if remaining.is_zero() {
                return Err(BackendError::Timeout {
                    request_id: request.request_id.clone(),
                    deadline: request.deadline,
                });
            }
            match self.attempt(request, &body, remaining) {
                Ok(text) => {
                    return Ok(VisionResponse {
                        request_id: request.request_id.clone(),
                        text,
                        latency: started.elapsed(),
                        backend_tag: self.tag.clone(),
                    })
                }
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    attempt += 1;
                    let backoff = RETRY_BACKOFF_BASE * 2u32.pow(attempt - 1);
                    let remaining = request.deadline.saturating_sub(started.elapsed());
                    std::thread::sleep(backoff.min(remaining));
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn tag(&self) -> &str {
        &self.tag
    }

    /// TCP connect probe against the endpoint host.
    fn preflight(&self) -> Result<(), BackendError> {
        let unreachable = |detail: String| BackendError::Unreachable {
            endpoint: self.config.endpoint.clone(),
            detail,
        };
        let rest = self
            .config
            .endpoint
            .split_once("://")
            .map(|(_, r)| r)
            .unwrap_or(&self.config.endpoint);
        let authority = rest.split(['/', '?']).next().unwrap_or(rest);
        let default_port = if self.config.endpoint.starts_with("https") {
            443
        } else {
            80
        };
        let host_port = if authority.contains(':') {
            authority.to_string()
        } else {
            format!("{authority}:{default_port}")
        };
        let addr = host_port
            .to_socket_addrs()
            .map_err(|e| unreachable(e.to_string()))?
            .next()
            .ok_or_else(|| unreachable("no addresses resolved".into()))?;
        TcpStream::connect_timeout(&addr, Duration::from_secs(2))
            .map_err(|e| unreachable(e.to_string()))?;
        Ok(())
    }
}
