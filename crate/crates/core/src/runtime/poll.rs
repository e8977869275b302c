use serde::{Deserialize, Serialize};

use crate::backends::Backends;
use crate::ids::UserId;
use crate::pipeline::{identify, voice_tokens, IdentifyConfig, Identity};
use crate::store::MemoryStore;
use crate::stream::TokenStream;
use crate::verification::Embedding;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum PollOutcome {
    SameUser {
        user: UserId,
    },
    Switched {
        user: UserId,
        from: Option<UserId>,
    },
    /// A face that matches nobody in the store.
    NewUser,
    /// No face in the window, or the window could not be processed.
    NoSignal {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollReport {
    pub step: u64,
    #[serde(flatten)]
    pub outcome: PollOutcome,
    /// Voice named a different user than face.
    #[serde(default)]
    pub conflict: bool,
}

impl PollReport {
    pub fn user(&self) -> Option<&UserId> {
        match &self.outcome {
            PollOutcome::SameUser { user } | PollOutcome::Switched { user, .. } => Some(user),
            _ => None,
        }
    }

    pub fn is_no_signal(&self) -> bool {
        matches!(self.outcome, PollOutcome::NoSignal { .. })
    }
}

fn no_signal(step: u64, reason: impl Into<String>) -> PollReport {
    PollReport { step, outcome: PollOutcome::NoSignal { reason: Some(reason.into()) }, conflict: false }
}

/// One polling pass over the most recent window.
///
/// Face marks in the window are encoded and mean-pooled; so is the user
/// voice when a cohort is configured. `previous` is the current Level-1
/// owner. Backend and verification failures turn into `NoSignal` with the
/// error as the reason so the caller never blocks on them.
pub fn polling_tick(
    now_step: u64,
    window: &TokenStream,
    store: &MemoryStore,
    previous: Option<&UserId>,
    backends: &Backends,
    config: &IdentifyConfig,
) -> PollReport {
    if window.faces().is_empty() {
        return PollReport { step: now_step, outcome: PollOutcome::NoSignal { reason: None }, conflict: false };
    }
    let mut faces = Vec::new();
    for mark in window.faces() {
        match backends.encode_face(mark) {
            Ok(Some(e)) => faces.push(e),
            Ok(None) => {}
            Err(e) => return no_signal(now_step, e.to_string()),
        }
    }
    let face = match Embedding::mean(&faces).transpose() {
        Ok(Some(f)) => f,
        Ok(None) => {
            return PollReport { step: now_step, outcome: PollOutcome::NoSignal { reason: None }, conflict: false }
        }
        Err(e) => return no_signal(now_step, e.to_string()),
    };
    let voice = if config.cohorts.is_some() {
        let tokens = voice_tokens(window, 0..window.len());
        if tokens.is_empty() {
            None
        } else {
            match backends.encode_voice(&tokens) {
                Ok(v) => v,
                Err(e) => return no_signal(now_step, e.to_string()),
            }
        }
    } else {
        None
    };
    let id = match identify(Some(&face), voice.as_ref(), store, config) {
        Ok(id) => id,
        Err(e) => return no_signal(now_step, e.to_string()),
    };
    let outcome = match id.identity {
        Identity::Known(user) if previous == Some(&user) => PollOutcome::SameUser { user },
        Identity::Known(user) => PollOutcome::Switched { user, from: previous.cloned() },
        Identity::Unknown => PollOutcome::NewUser,
        Identity::NoSignal => PollOutcome::NoSignal { reason: None },
    };
    PollReport { step: now_step, outcome, conflict: id.conflict }
}
