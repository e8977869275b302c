use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ids::UserId;
use crate::store::MemoryStore;
use crate::verification::{
    face_verify, speaker_verify, CohortPair, Embedding, Outcome, VerificationDecision, VerificationError,
    DEFAULT_FACE_DELTA, DEFAULT_SPEAKER_THETA,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyConfig {
    pub face_delta: f64,
    pub speaker_theta: f64,
    /// Without cohorts the voice channel is not consulted.
    #[serde(skip)]
    pub cohorts: Option<Arc<CohortPair>>,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self { face_delta: DEFAULT_FACE_DELTA, speaker_theta: DEFAULT_SPEAKER_THETA, cohorts: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "user", rename_all = "snake_case")]
pub enum Identity {
    Known(UserId),
    Unknown,
    /// No face in view.
    NoSignal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub identity: Identity,
    pub face: Option<VerificationDecision>,
    pub voice: Option<VerificationDecision>,
    /// Voice matched a different user than face decided.
    pub conflict: bool,
}

impl Identification {
    pub fn voice_match(&self) -> Option<&UserId> {
        self.voice.as_ref().and_then(VerificationDecision::matched_user)
    }
}

/// Face decides; voice only corroborates and raises `conflict` when it
/// confidently names someone else.
pub fn identify(
    face: Option<&Embedding>,
    voice: Option<&Embedding>,
    store: &MemoryStore,
    config: &IdentifyConfig,
) -> Result<Identification, VerificationError> {
    let voice_decision = match (voice, &config.cohorts) {
        (Some(v), Some(cohorts)) => Some(speaker_verify(v, &store.voice_gallery(), cohorts, config.speaker_theta)?),
        _ => None,
    };
    let Some(face) = face else {
        return Ok(Identification { identity: Identity::NoSignal, face: None, voice: voice_decision, conflict: false });
    };
    let face_decision = face_verify(face, &store.face_gallery(), config.face_delta)?;
    let voice_user = voice_decision.as_ref().and_then(VerificationDecision::matched_user);
    let (identity, conflict) = match &face_decision.outcome {
        Outcome::Matched { user, .. } => (Identity::Known(user.clone()), voice_user.is_some_and(|v| v != user)),
        _ => (Identity::Unknown, voice_user.is_some()),
    };
    Ok(Identification { identity, face: Some(face_decision), voice: voice_decision, conflict })
}
