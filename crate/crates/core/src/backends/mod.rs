//! Wire contracts for the external models (encoders, ASR, extractor, update
//! agent) and deterministic in-process mocks for all of them.
//!
//! Every call is a JSON document in, JSON document out, so an HTTP adapter
//! around a real model can stand in for any mock without touching callers.

mod fault;
mod http;
mod mock;
mod schema;
mod suite;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fault::{FaultMode, FaultPlan, FaultyHandler};
pub use http::HttpHandler;
pub use mock::{
    mock_encode, HashingTextEncoder, IdentitySeed, MockAsr, MockEncoder, MockExtractor, MockUpdateAgent, MockWorld,
    IMPOSTER_BASE, TEXT_DIM,
};
pub use schema::{
    AsrRequest, AsrResponse, DataRef, DirectoryEntry, EncoderRequest, EncoderResponse, ExtractorRequest,
    ExtractorResponse, UpdateAgentRequest, UpdateAgentResponse, SCHEMA_ASR_REQUEST, SCHEMA_ASR_RESPONSE,
    SCHEMA_ENCODER_REQUEST, SCHEMA_ENCODER_RESPONSE, SCHEMA_EXTRACTOR_REQUEST, SCHEMA_EXTRACTOR_RESPONSE,
    SCHEMA_UPDATE_REQUEST, SCHEMA_UPDATE_RESPONSE,
};
pub use suite::{BackendConfig, Backends, TextEmbedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    FaceEncoder,
    VoiceEncoder,
    TextEncoder,
    Asr,
    Extractor,
    UpdateAgent,
}

impl BackendKind {
    pub const ALL: [BackendKind; 6] = [
        BackendKind::FaceEncoder,
        BackendKind::VoiceEncoder,
        BackendKind::TextEncoder,
        BackendKind::Asr,
        BackendKind::Extractor,
        BackendKind::UpdateAgent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::FaceEncoder => "face_encoder",
            BackendKind::VoiceEncoder => "voice_encoder",
            BackendKind::TextEncoder => "text_encoder",
            BackendKind::Asr => "asr",
            BackendKind::Extractor => "extractor",
            BackendKind::UpdateAgent => "update_agent",
        }
    }

    /// Environment variable that overrides this endpoint with an HTTP address.
    pub fn env_var(self) -> String {
        format!("EGOMEM_{}_URL", self.as_str().to_ascii_uppercase())
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "snake_case")]
pub enum Transport {
    InProcessMock { seed: u64 },
    Http { address: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub kind: BackendKind,
    #[serde(flatten)]
    pub transport: Transport,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Extra attempts after a timeout or transport failure.
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout_ms() -> u64 {
    2000
}

fn default_retries() -> u32 {
    2
}

impl BackendEndpoint {
    pub fn mock(kind: BackendKind, seed: u64) -> Self {
        Self {
            kind,
            transport: Transport::InProcessMock { seed },
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
        }
    }

    pub fn http(kind: BackendKind, address: impl Into<String>) -> Self {
        Self {
            kind,
            transport: Transport::Http { address: address.into() },
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.timeout_ms == 0 {
            return Err(BackendError::Config(format!("{}: timeout must be positive", self.kind)));
        }
        if let Transport::Http { address } = &self.transport {
            if address.trim().is_empty() {
                return Err(BackendError::Config(format!("{}: empty http address", self.kind)));
            }
        }
        Ok(())
    }

    /// Replaces the transport with HTTP when the kind's environment variable is set.
    pub fn with_env_override(mut self) -> Self {
        if let Ok(address) = std::env::var(self.kind.env_var()) {
            if !address.trim().is_empty() {
                self.transport = Transport::Http { address };
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("{kind} timed out after {attempts} attempt(s)")]
    Timeout { kind: BackendKind, attempts: u32 },
    #[error("{kind} response violates its schema ({reason}); raw payload: {raw}")]
    Schema { kind: BackendKind, reason: String, raw: String },
    #[error("{kind} transport failure after {attempts} attempt(s): {reason}")]
    Transport { kind: BackendKind, attempts: u32, reason: String },
    #[error("backend config: {0}")]
    Config(String),
}

/// How a single attempt failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    Timeout,
    Transport(String),
}

/// One side of the wire: takes a request document, returns a response document.
pub trait Handler: Send + Sync {
    fn handle(&self, request: &str) -> Result<String, Fault>;
}

impl<F> Handler for F
where
    F: Fn(&str) -> Result<String, Fault> + Send + Sync,
{
    fn handle(&self, request: &str) -> Result<String, Fault> {
        self(request)
    }
}

/// An endpoint bound to the handler that serves it.
#[derive(Clone)]
pub struct BackendClient {
    endpoint: BackendEndpoint,
    handler: Arc<dyn Handler>,
}

impl fmt::Debug for BackendClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendClient").field("endpoint", &self.endpoint).finish_non_exhaustive()
    }
}

impl BackendClient {
    pub fn new(endpoint: BackendEndpoint, handler: Arc<dyn Handler>) -> Self {
        Self { endpoint, handler }
    }

    pub fn endpoint(&self) -> &BackendEndpoint {
        &self.endpoint
    }

    pub fn kind(&self) -> BackendKind {
        self.endpoint.kind
    }

    pub fn handler(&self) -> &Arc<dyn Handler> {
        &self.handler
    }

    /// Same endpoint, different handler (used to wrap mocks with fault injection).
    pub fn with_handler(&self, handler: Arc<dyn Handler>) -> Self {
        Self { endpoint: self.endpoint.clone(), handler }
    }
}

/// Sends `payload`, retrying timeouts and transport failures up to
/// `endpoint.retries` more times.
pub fn call_backend(client: &BackendClient, payload: &str) -> Result<String, BackendError> {
    let kind = client.kind();
    let max_attempts = client.endpoint.retries + 1;
    let mut last = Fault::Timeout;
    for attempt in 1..=max_attempts {
        match client.handler.handle(payload) {
            Ok(response) => return Ok(response),
            Err(fault) => {
                log::debug!("{kind} attempt {attempt}/{max_attempts} failed: {fault:?}");
                last = fault;
            }
        }
    }
    Err(match last {
        Fault::Timeout => BackendError::Timeout { kind, attempts: max_attempts },
        Fault::Transport(reason) => BackendError::Transport { kind, attempts: max_attempts, reason },
    })
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};

    use super::*;

    #[test]
    fn retries_then_times_out() {
        let calls = Arc::new(AtomicU32::new(0));
        let seen = calls.clone();
        let handler = move |_: &str| {
            seen.fetch_add(1, Ordering::SeqCst);
            Err(Fault::Timeout)
        };
        let client = BackendClient::new(BackendEndpoint::mock(BackendKind::Asr, 1), Arc::new(handler));
        let err = call_backend(&client, "{}").unwrap_err();
        assert_eq!(err, BackendError::Timeout { kind: BackendKind::Asr, attempts: 3 });
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn recovers_on_second_attempt() {
        let calls = Arc::new(AtomicU32::new(0));
        let seen = calls.clone();
        let handler = move |_: &str| {
            if seen.fetch_add(1, Ordering::SeqCst) == 0 {
                Err(Fault::Transport("reset".into()))
            } else {
                Ok("ok".to_owned())
            }
        };
        let client = BackendClient::new(BackendEndpoint::mock(BackendKind::Asr, 1), Arc::new(handler));
        assert_eq!(call_backend(&client, "{}").unwrap(), "ok");
    }

    #[test]
    fn endpoint_config_round_trip() {
        let e = BackendEndpoint::http(BackendKind::Extractor, "http://127.0.0.1:9000/extract");
        let text = toml::to_string(&e).unwrap();
        assert_eq!(toml::from_str::<BackendEndpoint>(&text).unwrap(), e);
        let m: BackendEndpoint = toml::from_str("kind = \"asr\"\ntransport = \"in_process_mock\"\nseed = 3\n").unwrap();
        assert_eq!(m, BackendEndpoint::mock(BackendKind::Asr, 3));
        assert!(BackendEndpoint { timeout_ms: 0, ..m }.validate().is_err());
    }

    #[test]
    fn env_var_names() {
        assert_eq!(BackendKind::UpdateAgent.env_var(), "EGOMEM_UPDATE_AGENT_URL");
    }
}
