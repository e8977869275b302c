use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::ids::UserId;
use crate::verification::Embedding;

pub const UNKNOWN_USER: &str = "unknown_user";
pub const PERSONA_SLOT_COUNT: usize = 90;

const PERSONA_SLOTS_TXT: &str = include_str!("../../data/persona_slots.txt");

/// The 90 persona slot names in canonical order.
pub fn persona_slots() -> &'static [&'static str] {
    static SLOTS: OnceLock<Vec<&'static str>> = OnceLock::new();
    SLOTS.get_or_init(|| {
        let slots: Vec<&str> =
            PERSONA_SLOTS_TXT.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
        assert_eq!(slots.len(), PERSONA_SLOT_COUNT, "persona schema must list {PERSONA_SLOT_COUNT} slots");
        slots
    })
}

pub fn is_persona_slot(name: &str) -> bool {
    persona_slots().contains(&name)
}

/// A sentence with the date (or other label) it was recorded at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryItem {
    pub at: String,
    pub text: String,
}

impl MemoryItem {
    pub fn new(at: impl Into<String>, text: impl Into<String>) -> Self {
        Self { at: at.into(), text: text.into() }
    }
}

impl fmt::Display for MemoryItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.at.is_empty() {
            f.write_str(&self.text)
        } else {
            write!(f, "{}, {}", self.at, self.text)
        }
    }
}

/// Sparse assignment over the fixed persona schema.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")]
pub struct Persona(BTreeMap<String, String>);

impl TryFrom<BTreeMap<String, String>> for Persona {
    type Error = StoreError;

    fn try_from(map: BTreeMap<String, String>) -> Result<Self, StoreError> {
        let mut p = Persona::default();
        for (k, v) in map {
            p.set(&k, v)?;
        }
        Ok(p)
    }
}

impl From<Persona> for BTreeMap<String, String> {
    fn from(p: Persona) -> Self {
        p.0
    }
}

impl Persona {
    pub fn get(&self, slot: &str) -> Option<&str> {
        self.0.get(slot).map(String::as_str)
    }

    pub fn set(&mut self, slot: &str, value: impl Into<String>) -> Result<Option<String>, StoreError> {
        if !is_persona_slot(slot) {
            return Err(StoreError::UnknownPersonaSlot(slot.to_owned()));
        }
        Ok(self.0.insert(slot.to_owned(), value.into()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Set slots in schema order.
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &str)> + '_ {
        persona_slots().iter().filter_map(|&s| self.0.get(s).map(|v| (s, v.as_str())))
    }
}

/// Directed labeled edge: `to` is `from`'s `relation` (John is Emily's colleague
/// is `(Emily, colleague, John)`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationTriplet {
    pub from: UserId,
    pub relation: String,
    pub to: UserId,
}

impl RelationTriplet {
    pub fn new(from: impl Into<UserId>, relation: impl Into<String>, to: impl Into<UserId>) -> Self {
        Self { from: from.into(), relation: relation.into(), to: to.into() }
    }
}

impl fmt::Display for RelationTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.from, self.relation, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub name: String,
    pub face_key: Embedding,
    pub voice_key: Embedding,
    pub facts: Vec<MemoryItem>,
    pub dialog_summaries: Vec<MemoryItem>,
    pub persona: Persona,
    /// Outgoing edges, mirrored from the store graph.
    pub relation_edges: Vec<RelationTriplet>,
    pub version: u64,
}

impl UserProfile {
    pub fn is_named(&self) -> bool {
        self.name != UNKNOWN_USER
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationFact {
    pub relation: String,
    pub other_user_name: String,
}

/// What the extractor read out of one dialog session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedMemory {
    #[serde(default)]
    pub summary_sentences: Vec<String>,
    #[serde(default)]
    pub user_facts: Vec<String>,
    #[serde(default)]
    pub persona_trail: BTreeMap<String, String>,
    pub user_name: String,
    #[serde(default)]
    pub relation_facts: Vec<RelationFact>,
    #[serde(default)]
    pub session_timestamp: String,
}

impl ExtractedMemory {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.summary_sentences.is_empty() && self.user_facts.is_empty() {
            return Err(StoreError::InvalidExtraction("no summary sentences and no facts".into()));
        }
        if self.user_name.trim().is_empty() {
            return Err(StoreError::InvalidExtraction(format!("empty user_name (use {UNKNOWN_USER:?})")));
        }
        if let Some(slot) = self.persona_trail.keys().find(|k| !is_persona_slot(k)) {
            return Err(StoreError::UnknownPersonaSlot(slot.clone()));
        }
        Ok(())
    }
}

/// Which stored item a replacement rewrites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ItemRef {
    Fact { index: usize },
    Summary { index: usize },
    PersonaSlot { slot: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub target: ItemRef,
    pub old: String,
    pub new: String,
    pub reason: String,
}

/// A set of edits to one profile, computed against `base_version`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateResolution {
    pub target_user: UserId,
    pub base_version: u64,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub append_facts: Vec<MemoryItem>,
    #[serde(default)]
    pub append_summaries: Vec<MemoryItem>,
    #[serde(default)]
    pub replacements: Vec<Replacement>,
    /// Values for slots that are currently unset.
    #[serde(default)]
    pub persona_updates: BTreeMap<String, String>,
    #[serde(default)]
    pub new_edges: Vec<RelationTriplet>,
    /// Relation targets the resolver could not map to a stored user.
    #[serde(default)]
    pub unresolved_names: Vec<String>,
}

impl UpdateResolution {
    pub fn empty(target_user: UserId, base_version: u64) -> Self {
        Self {
            target_user,
            base_version,
            name: None,
            append_facts: Vec::new(),
            append_summaries: Vec::new(),
            replacements: Vec::new(),
            persona_updates: BTreeMap::new(),
            new_edges: Vec::new(),
            unresolved_names: Vec::new(),
        }
    }

    /// True when applying it would leave the profile unchanged.
    pub fn is_noop(&self) -> bool {
        self.name.is_none()
            && self.append_facts.is_empty()
            && self.append_summaries.is_empty()
            && self.replacements.is_empty()
            && self.persona_updates.is_empty()
    }
}
