use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::schema::{
    decode, encode, AsrRequest, AsrResponse, DataRef, EncoderRequest, EncoderResponse, ExtractorRequest,
    ExtractorResponse, UpdateAgentRequest, UpdateAgentResponse, SCHEMA_ASR_REQUEST, SCHEMA_ENCODER_REQUEST,
    SCHEMA_EXTRACTOR_REQUEST, SCHEMA_UPDATE_REQUEST,
};
use super::{BackendError, BackendKind, Fault, Handler, TextEmbedder};
use crate::ids::IdentityId;
use crate::retrieval::tokenize;
use crate::store::{ExtractedMemory, UNKNOWN_USER};
use crate::stream::vocab;
use crate::verification::{CohortPair, CohortSet, Embedding, Modality, VerificationError};

pub const TEXT_DIM: usize = 384;
/// First identity id used for cohort imposters.
pub const IMPOSTER_BASE: u32 = 1_000_000;

pub(crate) fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub(crate) fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6567_6f6d_656d_u64, |acc, &p| splitmix(acc ^ p))
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// A simulated person: unit base vectors for face and voice plus the noise
/// applied to every observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentitySeed {
    pub identity_id: IdentityId,
    pub face_base: Embedding,
    pub voice_base: Embedding,
    pub noise_scale: f64,
    pub seed: u64,
}

impl IdentitySeed {
    pub fn new(
        identity_id: IdentityId,
        face_base: Embedding,
        voice_base: Embedding,
        noise_scale: f64,
        seed: u64,
    ) -> Result<Self, VerificationError> {
        for (e, m) in [(&face_base, Modality::Face), (&voice_base, Modality::Voice)] {
            if e.modality() != m {
                return Err(VerificationError::ModalityMismatch { expected: m, found: e.modality() });
            }
            if (e.norm() - 1.0).abs() > 1e-4 {
                return Err(VerificationError::ZeroNorm);
            }
        }
        Ok(Self { identity_id, face_base, voice_base, noise_scale, seed })
    }

    /// Random Gaussian bases drawn from `(world_seed, identity)`.
    pub fn derive(world_seed: u64, identity: IdentityId, noise_scale: f64) -> Self {
        let seed = mix(&[world_seed, u64::from(identity.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let face = Embedding::from_f64(&gaussian_unit(&mut rng, Modality::Face.dim()), Modality::Face).expect("dim");
        let voice = Embedding::from_f64(&gaussian_unit(&mut rng, Modality::Voice.dim()), Modality::Voice).expect("dim");
        Self { identity_id: identity, face_base: face, voice_base: voice, noise_scale, seed }
    }

    pub fn base(&self, modality: Modality) -> Option<&Embedding> {
        match modality {
            Modality::Face => Some(&self.face_base),
            Modality::Voice => Some(&self.voice_base),
            Modality::Text(_) => None,
        }
    }
}

/// Observation `sample_index` of `seed` in `modality`: the base vector plus
/// Gaussian noise of expected norm `noise_scale`, renormalized. Identities
/// have no text modality; asking for one panics.
pub fn mock_encode(seed: &IdentitySeed, sample_index: u64, modality: Modality) -> Embedding {
    let base = seed.base(modality).expect("identities have face and voice bases only");
    if seed.noise_scale == 0.0 {
        return base.clone();
    }
    let dim = base.dim();
    let modality_tag = if modality == Modality::Face { 1 } else { 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed.seed, sample_index, modality_tag]));
    let sigma = seed.noise_scale / (dim as f64).sqrt();
    let v: Vec<f64> = base
        .values()
        .iter()
        .map(|&b| {
            let z: f64 = StandardNormal.sample(&mut rng);
            f64::from(b) + sigma * z
        })
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let unit: Vec<f64> = v.into_iter().map(|x| x / n).collect();
    Embedding::from_f64(&unit, modality).expect("dimension preserved")
}

/// Signed feature hashing over [`tokenize`] tokens: identical token bags map
/// to identical vectors; shared tokens raise cosine similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingTextEncoder {
    pub seed: u64,
    pub dim: usize,
}

impl HashingTextEncoder {
    pub fn new(seed: u64) -> Self {
        Self { seed, dim: TEXT_DIM }
    }

    pub fn encode(&self, text: &str) -> Embedding {
        let mut v = vec![0f64; self.dim];
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push(String::new());
        }
        for t in &tokens {
            let h = mix(&[self.seed, fnv1a(t.as_bytes())]);
            let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
            v[((h >> 1) % self.dim as u64) as usize] += sign;
        }
        if v.iter().all(|&x| x == 0.0) {
            // every token cancelled out
            v[0] = 1.0;
        }
        Embedding::from_f64(&v, Modality::Text(self.dim)).expect("dimension")
    }
}

impl TextEmbedder for HashingTextEncoder {
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError> {
        Ok(self.encode(text))
    }
}

/// Everything the mocks know about the simulated world.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockWorld {
    pub seed: u64,
    pub face_noise: f64,
    pub voice_noise: f64,
    /// Utterance key on the listen channel to what was said.
    pub transcripts: BTreeMap<u32, String>,
    /// Transcript to the extraction a careful annotator would produce.
    pub annotations: BTreeMap<String, ExtractedMemory>,
    /// Explicit identities; anything else is derived from `seed`.
    pub identities: BTreeMap<IdentityId, IdentitySeed>,
}

impl MockWorld {
    pub fn new(seed: u64) -> Self {
        Self { seed, face_noise: 0.05, voice_noise: 0.05, ..Default::default() }
    }

    /// Identity seed for face observations (uses `face_noise`).
    pub fn identity(&self, id: IdentityId, modality: Modality) -> IdentitySeed {
        if let Some(s) = self.identities.get(&id) {
            return s.clone();
        }
        let noise = if modality == Modality::Voice { self.voice_noise } else { self.face_noise };
        IdentitySeed::derive(self.seed, id, noise)
    }

    pub fn text_encoder(&self) -> HashingTextEncoder {
        HashingTextEncoder::new(self.seed)
    }

    /// Voice cohort of `count` imposters, identities `first..first + count`.
    /// Keep the range clear of scripted identities.
    pub fn voice_cohort(&self, first: u32, count: u32, top_n: usize) -> Result<CohortSet, VerificationError> {
        let embeddings = (first..first + count)
            .map(|id| {
                let seed = self.identity(IdentityId(id), Modality::Voice);
                mock_encode(&seed, 0, Modality::Voice)
            })
            .collect();
        CohortSet::new(embeddings, top_n)
    }

    /// Separate query-side and key-side cohorts drawn from imposter ids at
    /// one and two million.
    pub fn voice_cohorts(&self, count: u32, top_n: usize) -> Result<CohortPair, VerificationError> {
        Ok(CohortPair {
            query: self.voice_cohort(IMPOSTER_BASE, count, top_n)?,
            key: self.voice_cohort(2 * IMPOSTER_BASE, count, top_n)?,
        })
    }

    pub fn transcript_of(&self, utterances: &[u32]) -> String {
        utterances.iter().filter_map(|k| self.transcripts.get(k)).cloned().collect::<Vec<_>>().join("\n")
    }
}

fn error_document(reason: impl std::fmt::Display) -> String {
    serde_json::json!({ "error": reason.to_string() }).to_string()
}

fn majority_voice(tokens: &[u32]) -> Option<(u32, u64)> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &t in tokens {
        if let Some(v) = vocab::voice_of(t) {
            *counts.entry(v).or_default() += 1;
        }
    }
    let (&voice, _) = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))?;
    let bytes: Vec<u8> = tokens.iter().flat_map(|t| t.to_le_bytes()).collect();
    Some((voice, fnv1a(&bytes)))
}

/// Serves the face, voice and text encoder kinds.
#[derive(Debug, Clone)]
pub struct MockEncoder {
    pub world: Arc<MockWorld>,
    pub kind: BackendKind,
}

impl MockEncoder {
    fn respond(&self, req: &EncoderRequest) -> Result<Option<Embedding>, String> {
        match (&req.data, req.modality) {
            (DataRef::FaceFrame { identity, sample }, Modality::Face) => {
                let seed = self.world.identity(IdentityId(*identity), Modality::Face);
                Ok(Some(mock_encode(&seed, u64::from(*sample), Modality::Face)))
            }
            (DataRef::VoiceClip { semantic_tokens }, Modality::Voice) => {
                Ok(majority_voice(semantic_tokens).map(|(voice, sample)| {
                    let seed = self.world.identity(IdentityId(voice), Modality::Voice);
                    mock_encode(&seed, sample, Modality::Voice)
                }))
            }
            (DataRef::Text { text }, Modality::Text(dim)) => {
                let enc = HashingTextEncoder { seed: self.world.seed, dim };
                Ok(Some(enc.encode(text)))
            }
            (data, m) => Err(format!("cannot encode {data:?} as {m}")),
        }
    }
}

impl Handler for MockEncoder {
    fn handle(&self, request: &str) -> Result<String, Fault> {
        let req = match decode(self.kind, request, SCHEMA_ENCODER_REQUEST, |r: &EncoderRequest| &r.schema) {
            Ok(r) => r,
            Err(e) => return Ok(error_document(e)),
        };
        Ok(match self.respond(&req) {
            Ok(v) => encode(&EncoderResponse::new(v.as_ref())),
            Err(reason) => error_document(reason),
        })
    }
}

#[derive(Debug, Clone)]
pub struct MockAsr {
    pub world: Arc<MockWorld>,
}

impl Handler for MockAsr {
    fn handle(&self, request: &str) -> Result<String, Fault> {
        Ok(match decode(BackendKind::Asr, request, SCHEMA_ASR_REQUEST, |r: &AsrRequest| &r.schema) {
            Ok(req) => encode(&AsrResponse::new(self.world.transcript_of(&req.utterances))),
            Err(e) => error_document(e),
        })
    }
}

/// Returns the annotation for a transcript verbatim; unannotated transcripts
/// get a plain rule-based extraction.
#[derive(Debug, Clone)]
pub struct MockExtractor {
    pub world: Arc<MockWorld>,
}

impl MockExtractor {
    pub fn extract(&self, req: &ExtractorRequest) -> ExtractedMemory {
        let mut memory = match self.world.annotations.get(&req.transcript) {
            Some(a) => a.clone(),
            None => rule_extract(&req.transcript),
        };
        if memory.session_timestamp.is_empty() {
            memory.session_timestamp = req.session_timestamp.clone();
        }
        if req.level < 2 {
            memory.relation_facts.clear();
        }
        memory
    }
}

fn rule_extract(transcript: &str) -> ExtractedMemory {
    let lines: Vec<&str> = transcript.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let mut name = UNKNOWN_USER.to_owned();
    for line in &lines {
        let lower = line.to_ascii_lowercase();
        if let Some(pos) = lower.find("my name is ") {
            let rest = &line[pos + "my name is ".len()..];
            if let Some(word) = rest.split(|c: char| !c.is_alphanumeric()).find(|w| !w.is_empty()) {
                name = word.to_owned();
            }
        }
    }
    ExtractedMemory {
        summary_sentences: lines.iter().map(|l| format!("user said: {l}")).collect(),
        user_name: name,
        ..Default::default()
    }
}

impl Handler for MockExtractor {
    fn handle(&self, request: &str) -> Result<String, Fault> {
        let kind = BackendKind::Extractor;
        Ok(match decode(kind, request, SCHEMA_EXTRACTOR_REQUEST, |r: &ExtractorRequest| &r.schema) {
            Ok(req) if req.transcript.trim().is_empty() => error_document("empty transcript"),
            Ok(req) => encode(&ExtractorResponse::new(self.extract(&req))),
            Err(e) => error_document(e),
        })
    }
}

/// Applies the deterministic newest-wins resolution policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockUpdateAgent;

impl Handler for MockUpdateAgent {
    fn handle(&self, request: &str) -> Result<String, Fault> {
        let kind = BackendKind::UpdateAgent;
        Ok(match decode(kind, request, SCHEMA_UPDATE_REQUEST, |r: &UpdateAgentRequest| &r.schema) {
            Ok(req) => {
                let resolution = crate::pipeline::resolve_policy(&req.profile, &req.extracted, &req.directory);
                encode(&UpdateAgentResponse::new(resolution))
            }
            Err(e) => error_document(e),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verification::{compute_eer, cosine_distance, cosine_similarity};

    #[test]
    fn noiseless_encode_is_base() {
        let s = IdentitySeed::derive(1, IdentityId(4), 0.0);
        let e = mock_encode(&s, 17, Modality::Face);
        assert_eq!(&e, &s.face_base);
        assert!(cosine_distance(&e, &e).unwrap().abs() < 1e-12);
    }

    #[test]
    fn orthogonal_bases_are_distance_one() {
        let mut a = vec![0.0f32; 512];
        a[0] = 1.0;
        let mut b = vec![0.0f32; 512];
        b[1] = 1.0;
        let v = Embedding::new([vec![1.0f32], vec![0.0; 255]].concat(), Modality::Voice).unwrap();
        let sa =
            IdentitySeed::new(IdentityId(1), Embedding::new(a, Modality::Face).unwrap(), v.clone(), 0.0, 1).unwrap();
        let sb = IdentitySeed::new(IdentityId(2), Embedding::new(b, Modality::Face).unwrap(), v, 0.0, 2).unwrap();
        let d = cosine_distance(&mock_encode(&sa, 0, Modality::Face), &mock_encode(&sb, 0, Modality::Face)).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encode_is_deterministic() {
        let s = IdentitySeed::derive(9, IdentityId(2), 0.3);
        assert_eq!(mock_encode(&s, 5, Modality::Voice), mock_encode(&s, 5, Modality::Voice));
        assert_ne!(mock_encode(&s, 5, Modality::Voice), mock_encode(&s, 6, Modality::Voice));
    }

    #[test]
    fn noise_point_one_separates_identities() {
        // 1000 same-identity and 1000 cross-identity pairs over 50 identities
        let seeds: Vec<_> = (0..50).map(|i| IdentitySeed::derive(3, IdentityId(i), 0.1)).collect();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for k in 0..1000u64 {
            let a = &seeds[(k % 50) as usize];
            let b = &seeds[((k * 7 + 1) % 50) as usize];
            let b = if b.identity_id == a.identity_id { &seeds[((k + 1) % 50) as usize] } else { b };
            let q = mock_encode(a, 2 * k, Modality::Face);
            scores.push(cosine_similarity(&q, &mock_encode(a, 2 * k + 1, Modality::Face)).unwrap());
            labels.push(true);
            scores.push(cosine_similarity(&q, &mock_encode(b, 2 * k + 1, Modality::Face)).unwrap());
            labels.push(false);
        }
        assert!(compute_eer(&scores, &labels).unwrap().eer < 0.05);
    }

    #[test]
    fn text_encoder_identity_and_overlap() {
        let enc = HashingTextEncoder::new(1);
        assert_eq!(enc.encode("Tennis fan"), enc.encode("tennis FAN"));
        let q = enc.encode("tennis");
        let hit = cosine_similarity(&q, &enc.encode("John, colleague, played tennis")).unwrap();
        let miss = cosine_similarity(&q, &enc.encode("Ann, sister, likes opera")).unwrap();
        assert!(hit > miss);
        assert!(enc.encode("").norm() > 0.0);
    }

    #[test]
    fn extractor_returns_annotation_verbatim() {
        let mut world = MockWorld::new(1);
        let ann = ExtractedMemory {
            user_name: "Emily".into(),
            user_facts: vec!["Emily shows interest in tennis".into()],
            session_timestamp: "2024-05-14".into(),
            ..Default::default()
        };
        world.annotations.insert("do my colleagues love tennis?".into(), ann.clone());
        let ex = MockExtractor { world: Arc::new(world) };
        let req = ExtractorRequest::new("do my colleagues love tennis?", "", 2, "2024-05-14");
        let raw = ex.handle(&encode(&req)).unwrap();
        assert_eq!(ExtractorResponse::parse(&raw).unwrap(), ann);
    }

    #[test]
    fn extractor_rejects_empty_transcript() {
        let ex = MockExtractor { world: Arc::new(MockWorld::new(1)) };
        let raw = ex.handle(&encode(&ExtractorRequest::new("  ", "", 1, ""))).unwrap();
        assert!(ExtractorResponse::parse(&raw).is_err());
    }

    #[test]
    fn rule_extraction_finds_name() {
        let m = rule_extract("hello\nmy name is Dana, nice to meet you");
        assert_eq!(m.user_name, "Dana");
        assert_eq!(m.summary_sentences.len(), 2);
    }

    #[test]
    fn voice_clip_majority() {
        let toks = vec![
            vocab::semantic_token(3, 1),
            vocab::semantic_token(3, 2),
            vocab::semantic_token(5, 1),
            vocab::EMPTY_AUDIO,
        ];
        assert_eq!(majority_voice(&toks).unwrap().0, 3);
        assert!(majority_voice(&[vocab::EMPTY_AUDIO]).is_none());
    }
}
