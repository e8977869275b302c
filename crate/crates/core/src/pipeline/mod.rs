//! The memory management cycle.
//!
//! Each cycle takes a chunk of the stream, finds dialog sessions with the
//! episodic trigger, and for every session: clips it, transcribes the user
//! side, extracts memory, identifies the speaker, then creates a profile or
//! resolves and applies an update. A failure inside one session is recorded
//! and the cycle moves on.

mod identify;

use std::collections::BTreeSet;
use std::ops::Range;
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use identify::{identify, Identification, IdentifyConfig, Identity};

pub use crate::store::{ExtractedMemory, UpdateResolution};

use crate::backends::{BackendError, Backends, DirectoryEntry};
use crate::ids::UserId;
use crate::store::{
    ItemRef, MemoryItem, MemoryStore, RelationTriplet, Replacement, SharedStore, StoreError, UserProfile, UNKNOWN_USER,
};
use crate::stream::{FaceMark, StreamError, TokenStream, MAX_STEPS};
use crate::trigger::{extract_sessions, tag_stream, Repair, RuleTagger, SessionSpan, TriggerBackend, TriggerError};
use crate::verification::{Embedding, VerificationError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("chunk has {0} steps, more than {MAX_STEPS}")]
    ChunkTooLong(usize),
    #[error("span {span} is outside the chunk (length {len})")]
    SpanOutOfBounds { span: SessionSpan, len: usize },
    #[error("{stage}: {source}")]
    Backend {
        stage: &'static str,
        #[source]
        source: BackendError,
    },
    #[error("empty transcript")]
    EmptyTranscript,
    #[error(transparent)]
    Trigger(#[from] TriggerError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Verification(#[from] VerificationError),
    #[error("session handler panicked: {0}")]
    Panic(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// 1: profile facts only. 2: also relation facts and graph updates.
    pub level: u8,
    /// Date label written on memories from this cycle.
    pub session_date: String,
    /// Silence that separates sessions for the reference tagger.
    pub gap_steps: usize,
    /// Voice is encoded per window of this many steps and mean-pooled.
    pub voice_window: usize,
    /// Re-resolution attempts after a stale-version conflict.
    pub conflict_retries: u32,
    pub identify: IdentifyConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            level: 2,
            session_date: String::new(),
            gap_steps: RuleTagger::default().gap_steps,
            voice_window: 25,
            conflict_retries: 2,
            identify: IdentifyConfig::default(),
        }
    }
}

/// The part of a chunk that belongs to one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionClip {
    /// Chunk-relative positions.
    pub span: SessionSpan,
    /// Sub-stream with absolute step indices preserved.
    pub stream: TokenStream,
    pub monologue: String,
    /// Utterance markers on the listen channel, in order, deduplicated.
    pub utterances: Vec<u32>,
    pub faces: Vec<FaceMark>,
}

/// Semantic listen tokens at `positions`, active steps only.
pub fn voice_tokens(stream: &TokenStream, positions: Range<usize>) -> Vec<u32> {
    stream.steps()[positions].iter().filter(|s| s.is_listen_active()).map(|s| s.listen_tokens[0]).collect()
}

pub fn clip_session(chunk: &TokenStream, span: &SessionSpan) -> Result<SessionClip, PipelineError> {
    if span.end >= chunk.len() {
        return Err(PipelineError::SpanOutOfBounds { span: span.clone(), len: chunk.len() });
    }
    let range = span.to_range();
    let stream = chunk.slice(range.clone())?;
    let mut utterances = Vec::new();
    for step in stream.steps() {
        if let Some(u) = step.listen_utterance() {
            if utterances.last() != Some(&u) && !utterances.contains(&u) {
                utterances.push(u);
            }
        }
    }
    Ok(SessionClip {
        span: span.clone(),
        monologue: chunk.monologue(range.clone()),
        faces: chunk.faces_in(range).cloned().collect(),
        utterances,
        stream,
    })
}

pub fn extract_memory(
    transcript: &str,
    monologue: &str,
    backends: &Backends,
    level: u8,
    session_date: &str,
) -> Result<ExtractedMemory, PipelineError> {
    if transcript.trim().is_empty() {
        return Err(PipelineError::EmptyTranscript);
    }
    backends
        .extract(transcript, monologue, level, session_date)
        .map_err(|source| PipelineError::Backend { stage: "extract", source })
}

fn normalized(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// The deterministic resolution policy behind the mock update agent.
///
/// Facts and summaries already present (ignoring case and spacing) are
/// dropped, the rest appended. A persona slot holding a different value is
/// replaced, newest wins. Relation facts become edges when the other name
/// matches exactly one known user; otherwise the name is reported.
pub fn resolve_policy(
    profile: &UserProfile,
    extracted: &ExtractedMemory,
    directory: &[DirectoryEntry],
) -> UpdateResolution {
    let at = &extracted.session_timestamp;
    let mut r = UpdateResolution::empty(profile.user_id.clone(), profile.version);

    let name = extracted.user_name.trim();
    if !name.is_empty() && name != UNKNOWN_USER && name != profile.name {
        r.name = Some(name.to_owned());
    }

    let mut seen: BTreeSet<String> = profile.facts.iter().map(|f| normalized(&f.text)).collect();
    for fact in &extracted.user_facts {
        if seen.insert(normalized(fact)) {
            r.append_facts.push(MemoryItem::new(at.clone(), fact.clone()));
        }
    }
    let mut seen: BTreeSet<String> = profile.dialog_summaries.iter().map(|f| normalized(&f.text)).collect();
    for sentence in &extracted.summary_sentences {
        if seen.insert(normalized(sentence)) {
            r.append_summaries.push(MemoryItem::new(at.clone(), sentence.clone()));
        }
    }

    for (slot, value) in &extracted.persona_trail {
        match profile.persona.get(slot) {
            None => {
                r.persona_updates.insert(slot.clone(), value.clone());
            }
            Some(old) if old == value => {}
            Some(old) => r.replacements.push(Replacement {
                target: ItemRef::PersonaSlot { slot: slot.clone() },
                old: old.to_owned(),
                new: value.clone(),
                reason: format!("{slot} changed from {old:?} to {value:?} ({at})"),
            }),
        }
    }

    for fact in &extracted.relation_facts {
        let hits: Vec<&DirectoryEntry> = directory
            .iter()
            .filter(|d| d.user_id != profile.user_id && d.name.eq_ignore_ascii_case(fact.other_user_name.trim()))
            .collect();
        match hits.as_slice() {
            [one] => {
                let edge = RelationTriplet::new(profile.user_id.clone(), fact.relation.clone(), one.user_id.clone());
                if !profile.relation_edges.contains(&edge) && !r.new_edges.contains(&edge) {
                    r.new_edges.push(edge);
                }
            }
            _ => r.unresolved_names.push(fact.other_user_name.clone()),
        }
    }
    r
}

pub fn directory(store: &MemoryStore) -> Vec<DirectoryEntry> {
    store
        .users()
        .filter(|p| p.is_named())
        .map(|p| DirectoryEntry { user_id: p.user_id.clone(), name: p.name.clone() })
        .collect()
}

/// Asks the update agent for a resolution against `profile`.
pub fn resolve_update(
    profile: &UserProfile,
    extracted: &ExtractedMemory,
    backends: &Backends,
    store: &MemoryStore,
) -> Result<UpdateResolution, PipelineError> {
    let current = store.lookup_user(&profile.user_id)?;
    if current.version != profile.version {
        return Err(StoreError::Conflict {
            user: profile.user_id.clone(),
            base: profile.version,
            current: current.version,
        }
        .into());
    }
    backends
        .resolve(profile, extracted, directory(store))
        .map_err(|source| PipelineError::Backend { stage: "update_agent", source })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphUpdate {
    pub applied: usize,
    pub duplicates: usize,
    pub unresolved: Vec<String>,
    pub rejected: Vec<String>,
}

/// Adds the resolution's edges; unresolvable names and rejected edges are reported.
pub fn update_social_graph(store: &SharedStore, resolution: &UpdateResolution) -> GraphUpdate {
    let mut out = GraphUpdate { unresolved: resolution.unresolved_names.clone(), ..Default::default() };
    for edge in &resolution.new_edges {
        match store.write(|s| s.add_relation_edge(edge.clone())) {
            Ok(true) => out.applied += 1,
            Ok(false) => out.duplicates += 1,
            Err(e) => out.rejected.push(e.to_string()),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SessionOutcome {
    Created { user: UserId, duplicate_of: Option<UserId>, edges: GraphUpdate },
    Updated { user: UserId, version: u64, appended: usize, replaced: usize, conflict: bool, edges: GraphUpdate },
    Unchanged { user: UserId, conflict: bool },
    Skipped { reason: String },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    /// Absolute step indices, inclusive.
    pub start_step: u64,
    pub end_step: u64,
    pub transcript: String,
    #[serde(flatten)]
    pub outcome: SessionOutcome,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub base_step: u64,
    pub chunk_len: usize,
    pub session_date: String,
    pub repairs: Vec<Repair>,
    pub sessions: Vec<SessionReport>,
}

impl CycleReport {
    pub fn created(&self) -> usize {
        self.sessions.iter().filter(|s| matches!(s.outcome, SessionOutcome::Created { .. })).count()
    }

    pub fn updated(&self) -> usize {
        self.sessions.iter().filter(|s| matches!(s.outcome, SessionOutcome::Updated { .. })).count()
    }

    pub fn failed(&self) -> usize {
        self.sessions.iter().filter(|s| matches!(s.outcome, SessionOutcome::Failed { .. })).count()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty() && self.repairs.is_empty()
    }

    /// One JSON line per session.
    pub fn to_jsonl(&self) -> String {
        self.sessions
            .iter()
            .map(|s| {
                let mut line = serde_json::to_string(s).expect("reports serialize");
                line.push('\n');
                line
            })
            .collect()
    }
}

fn pooled(items: Vec<Embedding>) -> Result<Option<Embedding>, PipelineError> {
    Ok(Embedding::mean(&items).transpose()?)
}

fn encode_clip(
    clip: &SessionClip,
    backends: &Backends,
    voice_window: usize,
) -> Result<(Option<Embedding>, Option<Embedding>), PipelineError> {
    let backend = |stage| move |source| PipelineError::Backend { stage, source };
    let mut faces = Vec::new();
    for frame in &clip.faces {
        if let Some(e) = backends.encode_face(frame).map_err(backend("face_encoder"))? {
            faces.push(e);
        }
    }
    let mut voices = Vec::new();
    let len = clip.stream.len();
    let window = voice_window.max(1);
    for start in (0..len).step_by(window) {
        let tokens = voice_tokens(&clip.stream, start..(start + window).min(len));
        if tokens.is_empty() {
            continue;
        }
        if let Some(e) = backends.encode_voice(&tokens).map_err(backend("voice_encoder"))? {
            voices.push(e);
        }
    }
    Ok((pooled(faces)?, pooled(voices)?))
}

fn apply_with_retries(
    store: &SharedStore,
    backends: &Backends,
    user: &UserId,
    extracted: &ExtractedMemory,
    retries: u32,
) -> Result<(UpdateResolution, u64), PipelineError> {
    let mut attempt = 0;
    loop {
        let snapshot = store.snapshot();
        let profile = snapshot.lookup_user(user)?;
        let resolution = resolve_update(&profile, extracted, backends, &snapshot)?;
        match store.write(|s| s.apply_profile_update(&resolution)) {
            Ok(version) => return Ok((resolution, version)),
            Err(StoreError::Conflict { .. }) if attempt < retries => attempt += 1,
            Err(e) => return Err(e.into()),
        }
    }
}

fn process_session(
    chunk: &TokenStream,
    span: &SessionSpan,
    store: &SharedStore,
    backends: &Backends,
    config: &PipelineConfig,
    transcript_out: &mut String,
) -> Result<SessionOutcome, PipelineError> {
    let clip = clip_session(chunk, span)?;
    let transcript =
        backends.transcribe(&clip.utterances).map_err(|source| PipelineError::Backend { stage: "asr", source })?;
    transcript_out.clone_from(&transcript);
    if transcript.trim().is_empty() {
        return Ok(SessionOutcome::Skipped { reason: "no user speech".into() });
    }
    let extracted = extract_memory(&transcript, &clip.monologue, backends, config.level, &config.session_date)?;
    let (face, voice) = encode_clip(&clip, backends, config.voice_window)?;
    let snapshot = store.snapshot();
    let id = identify(face.as_ref(), voice.as_ref(), &snapshot, &config.identify)?;

    let known = match (&id.identity, id.voice_match()) {
        (Identity::Known(u), _) => Some(u.clone()),
        (Identity::NoSignal, Some(v)) => Some(v.clone()),
        _ => None,
    };
    match known {
        Some(user) => {
            let (resolution, version) =
                apply_with_retries(store, backends, &user, &extracted, config.conflict_retries)?;
            let edges =
                if config.level >= 2 { update_social_graph(store, &resolution) } else { GraphUpdate::default() };
            if resolution.is_noop() && edges.applied == 0 {
                return Ok(SessionOutcome::Unchanged { user, conflict: id.conflict });
            }
            Ok(SessionOutcome::Updated {
                user,
                version,
                appended: resolution.append_facts.len() + resolution.append_summaries.len(),
                replaced: resolution.replacements.len(),
                conflict: id.conflict,
                edges,
            })
        }
        None => {
            let (Some(face), Some(voice)) = (face, voice) else {
                return Ok(SessionOutcome::Skipped {
                    reason: "unknown speaker without both face and voice keys".into(),
                });
            };
            let created = store.write(|s| s.create_user(face, voice, &extracted))?;
            let edges = if config.level >= 2 && !extracted.relation_facts.is_empty() {
                let (resolution, _) =
                    apply_with_retries(store, backends, &created.user_id, &extracted, config.conflict_retries)?;
                update_social_graph(store, &resolution)
            } else {
                GraphUpdate::default()
            };
            Ok(SessionOutcome::Created { user: created.user_id, duplicate_of: created.duplicate_of, edges })
        }
    }
}

/// Runs one cycle with the reference rule tagger.
pub fn run_management_cycle(
    chunk: &TokenStream,
    store: &SharedStore,
    backends: &Backends,
    config: &PipelineConfig,
) -> Result<CycleReport, PipelineError> {
    let tagger = RuleTagger { gap_steps: config.gap_steps };
    run_management_cycle_with(chunk, store, backends, config, &tagger)
}

pub fn run_management_cycle_with(
    chunk: &TokenStream,
    store: &SharedStore,
    backends: &Backends,
    config: &PipelineConfig,
    trigger: &dyn TriggerBackend,
) -> Result<CycleReport, PipelineError> {
    if chunk.len() > MAX_STEPS {
        return Err(PipelineError::ChunkTooLong(chunk.len()));
    }
    let tags = tag_stream(chunk, trigger)?;
    let (spans, repairs) = extract_sessions(&tags);
    let mut report = CycleReport {
        base_step: chunk.base_step(),
        chunk_len: chunk.len(),
        session_date: config.session_date.clone(),
        repairs,
        sessions: Vec::new(),
    };
    for span in spans {
        let mut transcript = String::new();
        let result =
            catch_unwind(AssertUnwindSafe(|| process_session(chunk, &span, store, backends, config, &mut transcript)));
        let outcome = match result {
            Ok(Ok(o)) => o,
            Ok(Err(e)) => {
                log::warn!("session {span} failed: {e}");
                SessionOutcome::Failed { error: e.to_string() }
            }
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "unknown panic".into());
                SessionOutcome::Failed { error: PipelineError::Panic(msg).to_string() }
            }
        };
        report.sessions.push(SessionReport {
            start_step: chunk.base_step() + span.start as u64,
            end_step: chunk.base_step() + span.end as u64,
            transcript,
            outcome,
        });
    }
    Ok(report)
}
