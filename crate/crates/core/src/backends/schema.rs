//! Versioned request/response documents, one pair per backend kind.
//!
//! Each document carries its schema id in a `schema` field; a response with a
//! different id, a missing field, or an invalid value is a schema violation.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{BackendError, BackendKind};
use crate::ids::UserId;
use crate::store::{ExtractedMemory, UpdateResolution, UserProfile};
use crate::verification::{Embedding, Modality};

pub const SCHEMA_ENCODER_REQUEST: &str = "egomem.encoder.request/v1";
pub const SCHEMA_ENCODER_RESPONSE: &str = "egomem.encoder.response/v1";
pub const SCHEMA_ASR_REQUEST: &str = "egomem.asr.request/v1";
pub const SCHEMA_ASR_RESPONSE: &str = "egomem.asr.response/v1";
pub const SCHEMA_EXTRACTOR_REQUEST: &str = "egomem.extractor.request/v1";
pub const SCHEMA_EXTRACTOR_RESPONSE: &str = "egomem.extractor.response/v1";
pub const SCHEMA_UPDATE_REQUEST: &str = "egomem.update_agent.request/v1";
pub const SCHEMA_UPDATE_RESPONSE: &str = "egomem.update_agent.response/v1";

/// What an encoder should look at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataRef {
    /// A camera frame; `identity` is the simulated person in view.
    FaceFrame {
        identity: u32,
        sample: u32,
    },
    /// Semantic tokens of the listen channel over the query window.
    VoiceClip {
        semantic_tokens: Vec<u32>,
    },
    Text {
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderRequest {
    pub schema: String,
    pub modality: Modality,
    pub data: DataRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderResponse {
    pub schema: String,
    /// `null` when nothing was detected (no face in frame, no speech in clip).
    pub vector: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsrRequest {
    pub schema: String,
    /// Utterance markers found on the listen channel, in order of appearance.
    pub utterances: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsrResponse {
    pub schema: String,
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorRequest {
    pub schema: String,
    pub transcript: String,
    /// The agent's own responses, passed as reference.
    pub monologue: String,
    /// 1: profile facts only. 2: also relation facts.
    pub level: u8,
    #[serde(default)]
    pub session_timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorResponse {
    pub schema: String,
    pub memory: ExtractedMemory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectoryEntry {
    pub user_id: UserId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateAgentRequest {
    pub schema: String,
    pub profile: UserProfile,
    pub extracted: ExtractedMemory,
    /// Known users, for resolving relation targets by name.
    pub directory: Vec<DirectoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateAgentResponse {
    pub schema: String,
    pub resolution: UpdateResolution,
}

pub(crate) fn encode<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("schema types serialize")
}

/// Parses `raw` as `T` and checks its schema id.
pub(crate) fn decode<T: DeserializeOwned>(
    kind: BackendKind,
    raw: &str,
    schema: &str,
    schema_of: impl Fn(&T) -> &str,
) -> Result<T, BackendError> {
    let bad = |reason: String| BackendError::Schema { kind, reason, raw: raw.to_owned() };
    let value: T = serde_json::from_str(raw).map_err(|e| bad(e.to_string()))?;
    if schema_of(&value) != schema {
        return Err(bad(format!("expected schema {schema:?}, found {:?}", schema_of(&value))));
    }
    Ok(value)
}

impl EncoderRequest {
    pub fn new(modality: Modality, data: DataRef) -> Self {
        Self { schema: SCHEMA_ENCODER_REQUEST.into(), modality, data }
    }
}

impl EncoderResponse {
    pub fn new(vector: Option<&Embedding>) -> Self {
        Self { schema: SCHEMA_ENCODER_RESPONSE.into(), vector: vector.map(|e| e.values().to_vec()) }
    }

    pub(crate) fn parse(kind: BackendKind, raw: &str, modality: Modality) -> Result<Option<Embedding>, BackendError> {
        let resp: EncoderResponse = decode(kind, raw, SCHEMA_ENCODER_RESPONSE, |r: &EncoderResponse| &r.schema)?;
        resp.vector
            .map(|v| {
                Embedding::new(v, modality).map_err(|e| BackendError::Schema {
                    kind,
                    reason: e.to_string(),
                    raw: raw.to_owned(),
                })
            })
            .transpose()
    }
}

impl AsrRequest {
    pub fn new(utterances: Vec<u32>) -> Self {
        Self { schema: SCHEMA_ASR_REQUEST.into(), utterances }
    }
}

impl AsrResponse {
    pub fn new(transcript: impl Into<String>) -> Self {
        Self { schema: SCHEMA_ASR_RESPONSE.into(), transcript: transcript.into() }
    }
}

impl ExtractorRequest {
    pub fn new(transcript: &str, monologue: &str, level: u8, session_timestamp: &str) -> Self {
        Self {
            schema: SCHEMA_EXTRACTOR_REQUEST.into(),
            transcript: transcript.into(),
            monologue: monologue.into(),
            level,
            session_timestamp: session_timestamp.into(),
        }
    }
}

impl ExtractorResponse {
    pub fn new(memory: ExtractedMemory) -> Self {
        Self { schema: SCHEMA_EXTRACTOR_RESPONSE.into(), memory }
    }

    pub(crate) fn parse(raw: &str) -> Result<ExtractedMemory, BackendError> {
        let kind = BackendKind::Extractor;
        let resp: ExtractorResponse = decode(kind, raw, SCHEMA_EXTRACTOR_RESPONSE, |r: &ExtractorResponse| &r.schema)?;
        resp.memory.validate().map_err(|e| BackendError::Schema {
            kind,
            reason: e.to_string(),
            raw: raw.to_owned(),
        })?;
        Ok(resp.memory)
    }
}

impl UpdateAgentRequest {
    pub fn new(profile: UserProfile, extracted: ExtractedMemory, directory: Vec<DirectoryEntry>) -> Self {
        Self { schema: SCHEMA_UPDATE_REQUEST.into(), profile, extracted, directory }
    }
}

impl UpdateAgentResponse {
    pub fn new(resolution: UpdateResolution) -> Self {
        Self { schema: SCHEMA_UPDATE_RESPONSE.into(), resolution }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrong_schema_id_is_a_violation() {
        let raw = r#"{"schema":"egomem.asr.response/v9","transcript":"hi"}"#;
        let err = decode(BackendKind::Asr, raw, SCHEMA_ASR_RESPONSE, |r: &AsrResponse| &r.schema).unwrap_err();
        match err {
            BackendError::Schema { raw: kept, .. } => assert_eq!(kept, raw),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn encoder_response_dimension_checked() {
        let raw = encode(&EncoderResponse { schema: SCHEMA_ENCODER_RESPONSE.into(), vector: Some(vec![1.0; 3]) });
        assert!(EncoderResponse::parse(BackendKind::FaceEncoder, &raw, Modality::Face).is_err());
        let none = encode(&EncoderResponse::new(None));
        assert_eq!(EncoderResponse::parse(BackendKind::FaceEncoder, &none, Modality::Face).unwrap(), None);
    }

    #[test]
    fn extractor_response_validated() {
        let empty = ExtractedMemory { user_name: "A".into(), ..Default::default() };
        let raw = encode(&ExtractorResponse::new(empty));
        assert!(matches!(ExtractorResponse::parse(&raw), Err(BackendError::Schema { .. })));
        assert!(matches!(ExtractorResponse::parse("not json"), Err(BackendError::Schema { .. })));
    }

    #[test]
    fn data_ref_wire_shape() {
        let r = EncoderRequest::new(Modality::Face, DataRef::FaceFrame { identity: 3, sample: 9 });
        let json = encode(&r);
        assert_eq!(
            json,
            r#"{"schema":"egomem.encoder.request/v1","modality":"face","data":{"kind":"face_frame","identity":3,"sample":9}}"#
        );
    }
}
