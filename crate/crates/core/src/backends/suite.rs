use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mock::{MockAsr, MockEncoder, MockExtractor, MockUpdateAgent, MockWorld, TEXT_DIM};
use super::schema::{
    decode, encode, AsrRequest, AsrResponse, DataRef, DirectoryEntry, EncoderRequest, EncoderResponse,
    ExtractorRequest, ExtractorResponse, UpdateAgentRequest, UpdateAgentResponse, SCHEMA_ASR_RESPONSE,
    SCHEMA_UPDATE_RESPONSE,
};
use super::{
    call_backend, BackendClient, BackendEndpoint, BackendError, BackendKind, FaultPlan, FaultyHandler, Handler,
    HttpHandler, Transport,
};
use crate::store::{ExtractedMemory, UpdateResolution, UserProfile};
use crate::stream::FaceMark;
use crate::verification::{Embedding, Modality};

/// Anything that turns text into an embedding.
pub trait TextEmbedder: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError>;
}

/// One endpoint per backend kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub face_encoder: BackendEndpoint,
    pub voice_encoder: BackendEndpoint,
    pub text_encoder: BackendEndpoint,
    pub asr: BackendEndpoint,
    pub extractor: BackendEndpoint,
    pub update_agent: BackendEndpoint,
    #[serde(default = "default_text_dim")]
    pub text_dim: usize,
}

fn default_text_dim() -> usize {
    TEXT_DIM
}

impl BackendConfig {
    pub fn all_mock(seed: u64) -> Self {
        Self {
            face_encoder: BackendEndpoint::mock(BackendKind::FaceEncoder, seed),
            voice_encoder: BackendEndpoint::mock(BackendKind::VoiceEncoder, seed),
            text_encoder: BackendEndpoint::mock(BackendKind::TextEncoder, seed),
            asr: BackendEndpoint::mock(BackendKind::Asr, seed),
            extractor: BackendEndpoint::mock(BackendKind::Extractor, seed),
            update_agent: BackendEndpoint::mock(BackendKind::UpdateAgent, seed),
            text_dim: TEXT_DIM,
        }
    }

    pub fn endpoints(&self) -> [&BackendEndpoint; 6] {
        [&self.face_encoder, &self.voice_encoder, &self.text_encoder, &self.asr, &self.extractor, &self.update_agent]
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        for (e, kind) in self.endpoints().into_iter().zip(BackendKind::ALL) {
            if e.kind != kind {
                return Err(BackendError::Config(format!("{kind} slot holds a {} endpoint", e.kind)));
            }
            e.validate()?;
        }
        Ok(())
    }

    /// Applies the per-kind environment overrides.
    pub fn with_env_overrides(self) -> Self {
        Self {
            face_encoder: self.face_encoder.with_env_override(),
            voice_encoder: self.voice_encoder.with_env_override(),
            text_encoder: self.text_encoder.with_env_override(),
            asr: self.asr.with_env_override(),
            extractor: self.extractor.with_env_override(),
            update_agent: self.update_agent.with_env_override(),
            text_dim: self.text_dim,
        }
    }
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self::all_mock(0)
    }
}

/// Typed access to all six backends.
#[derive(Debug, Clone)]
pub struct Backends {
    pub face: BackendClient,
    pub voice: BackendClient,
    pub text: BackendClient,
    pub asr: BackendClient,
    pub extractor: BackendClient,
    pub update_agent: BackendClient,
    text_dim: usize,
}

fn handler_for(endpoint: &BackendEndpoint, world: &Arc<MockWorld>) -> Arc<dyn Handler> {
    match &endpoint.transport {
        Transport::Http { address } => Arc::new(HttpHandler::new(address.clone(), endpoint.timeout())),
        Transport::InProcessMock { seed } => {
            let world = if *seed == world.seed {
                world.clone()
            } else {
                Arc::new(MockWorld { seed: *seed, ..(**world).clone() })
            };
            match endpoint.kind {
                BackendKind::FaceEncoder | BackendKind::VoiceEncoder | BackendKind::TextEncoder => {
                    Arc::new(MockEncoder { world, kind: endpoint.kind })
                }
                BackendKind::Asr => Arc::new(MockAsr { world }),
                BackendKind::Extractor => Arc::new(MockExtractor { world }),
                BackendKind::UpdateAgent => Arc::new(MockUpdateAgent),
            }
        }
    }
}

impl Backends {
    pub fn from_config(config: &BackendConfig, world: Arc<MockWorld>) -> Result<Self, BackendError> {
        config.validate()?;
        let client = |e: &BackendEndpoint| BackendClient::new(e.clone(), handler_for(e, &world));
        Ok(Self {
            face: client(&config.face_encoder),
            voice: client(&config.voice_encoder),
            text: client(&config.text_encoder),
            asr: client(&config.asr),
            extractor: client(&config.extractor),
            update_agent: client(&config.update_agent),
            text_dim: config.text_dim,
        })
    }

    /// All-mock backends over `world`, seeded with `world.seed`.
    pub fn mock(world: MockWorld) -> Self {
        let config = BackendConfig::all_mock(world.seed);
        Self::from_config(&config, Arc::new(world)).expect("mock config is valid")
    }

    pub fn client(&self, kind: BackendKind) -> &BackendClient {
        match kind {
            BackendKind::FaceEncoder => &self.face,
            BackendKind::VoiceEncoder => &self.voice,
            BackendKind::TextEncoder => &self.text,
            BackendKind::Asr => &self.asr,
            BackendKind::Extractor => &self.extractor,
            BackendKind::UpdateAgent => &self.update_agent,
        }
    }

    fn client_mut(&mut self, kind: BackendKind) -> &mut BackendClient {
        match kind {
            BackendKind::FaceEncoder => &mut self.face,
            BackendKind::VoiceEncoder => &mut self.voice,
            BackendKind::TextEncoder => &mut self.text,
            BackendKind::Asr => &mut self.asr,
            BackendKind::Extractor => &mut self.extractor,
            BackendKind::UpdateAgent => &mut self.update_agent,
        }
    }

    /// Wraps one backend with deterministic fault injection; returns the
    /// wrapper so callers can read its counters.
    pub fn inject_faults(&mut self, kind: BackendKind, plan: FaultPlan) -> Arc<FaultyHandler> {
        let client = self.client_mut(kind);
        let faulty = Arc::new(FaultyHandler::new(client.handler().clone(), plan));
        *client = client.with_handler(faulty.clone());
        faulty
    }

    pub fn encode_face(&self, frame: &FaceMark) -> Result<Option<Embedding>, BackendError> {
        let req = EncoderRequest::new(
            Modality::Face,
            DataRef::FaceFrame { identity: frame.identity.0, sample: frame.sample },
        );
        let raw = call_backend(&self.face, &encode(&req))?;
        EncoderResponse::parse(BackendKind::FaceEncoder, &raw, Modality::Face)
    }

    /// `None` when the clip carries no user speech.
    pub fn encode_voice(&self, semantic_tokens: &[u32]) -> Result<Option<Embedding>, BackendError> {
        let req =
            EncoderRequest::new(Modality::Voice, DataRef::VoiceClip { semantic_tokens: semantic_tokens.to_vec() });
        let raw = call_backend(&self.voice, &encode(&req))?;
        EncoderResponse::parse(BackendKind::VoiceEncoder, &raw, Modality::Voice)
    }

    pub fn transcribe(&self, utterances: &[u32]) -> Result<String, BackendError> {
        let raw = call_backend(&self.asr, &encode(&AsrRequest::new(utterances.to_vec())))?;
        Ok(decode(BackendKind::Asr, &raw, SCHEMA_ASR_RESPONSE, |r: &AsrResponse| &r.schema)?.transcript)
    }

    pub fn extract(
        &self,
        transcript: &str,
        monologue: &str,
        level: u8,
        session_timestamp: &str,
    ) -> Result<ExtractedMemory, BackendError> {
        let req = ExtractorRequest::new(transcript, monologue, level, session_timestamp);
        let raw = call_backend(&self.extractor, &encode(&req))?;
        ExtractorResponse::parse(&raw)
    }

    pub fn resolve(
        &self,
        profile: &UserProfile,
        extracted: &ExtractedMemory,
        directory: Vec<DirectoryEntry>,
    ) -> Result<UpdateResolution, BackendError> {
        let req = UpdateAgentRequest::new(profile.clone(), extracted.clone(), directory);
        let raw = call_backend(&self.update_agent, &encode(&req))?;
        let kind = BackendKind::UpdateAgent;
        let resp: UpdateAgentResponse =
            decode(kind, &raw, SCHEMA_UPDATE_RESPONSE, |r: &UpdateAgentResponse| &r.schema)?;
        if resp.resolution.target_user != profile.user_id {
            return Err(BackendError::Schema { kind, reason: "resolution targets another user".into(), raw });
        }
        Ok(resp.resolution)
    }
}

impl TextEmbedder for Backends {
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError> {
        let modality = Modality::Text(self.text_dim);
        let req = EncoderRequest::new(modality, DataRef::Text { text: text.to_owned() });
        let raw = call_backend(&self.text, &encode(&req))?;
        EncoderResponse::parse(BackendKind::TextEncoder, &raw, modality)?.ok_or_else(|| BackendError::Schema {
            kind: BackendKind::TextEncoder,
            reason: "text encoder returned no vector".into(),
            raw,
        })
    }
}
