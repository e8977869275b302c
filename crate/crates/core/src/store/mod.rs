//! Long-term memory: embedding-keyed user profiles plus a social relation graph.
//!
//! Every profile mutation bumps that profile's `version` and the store-wide
//! `store_version`, and appends an [`AuditRecord`]. Profiles are held behind
//! `Arc`, so a snapshot taken with [`MemoryStore::lookup_user`] is never
//! touched by later writes.

mod persist;
mod profile;
mod shared;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use profile::{
    is_persona_slot, persona_slots, ExtractedMemory, ItemRef, MemoryItem, Persona, RelationFact, RelationTriplet,
    Replacement, UpdateResolution, UserProfile, PERSONA_SLOT_COUNT, UNKNOWN_USER,
};
pub use shared::SharedStore;

use crate::ids::UserId;
use crate::verification::{cosine_distance, Embedding, Modality, VerificationError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("stale update for {user}: built against version {base}, current is {current}")]
    Conflict { user: UserId, base: u64, current: u64 },
    #[error("invalid resolution: {0}")]
    InvalidResolution(String),
    #[error("invalid extraction: {0}")]
    InvalidExtraction(String),
    #[error("unknown persona slot {0:?}")]
    UnknownPersonaSlot(String),
    #[error("invalid edge {0}: {1}")]
    InvalidEdge(RelationTriplet, &'static str),
    #[error("invalid key: {0}")]
    Key(#[from] VerificationError),
    #[error("checksum mismatch in {file}")]
    Checksum { file: String },
    #[error("malformed store file: {0}")]
    Format(String),
    #[error("store io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    CreateUser,
    DuplicateIdentity,
    Append,
    Replace,
    Rename,
    Persona,
    AddEdge,
    Persisted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub store_version: u64,
    pub action: AuditAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<UserId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatedUser {
    pub user_id: UserId,
    /// Set when a stored key sits at distance 0 from one of the new keys.
    pub duplicate_of: Option<UserId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeDirection {
    Outgoing,
    Incoming,
}

/// A graph neighbor as seen from the queried user.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Neighbor {
    pub user_id: UserId,
    pub relation: String,
    pub direction: EdgeDirection,
}

impl Neighbor {
    /// The relation read from the queried user's side: outgoing `colleague`
    /// stays `colleague`, incoming `mother` becomes `mother of`.
    pub fn label(&self) -> String {
        match self.direction {
            EdgeDirection::Outgoing => self.relation.clone(),
            EdgeDirection::Incoming => format!("{} of", self.relation),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryStore {
    users: BTreeMap<UserId, Arc<UserProfile>>,
    graph: BTreeSet<RelationTriplet>,
    aux_documents: Vec<String>,
    store_version: u64,
    next_user: u64,
    audit: Vec<AuditRecord>,
}

fn check_key(key: &Embedding, modality: Modality) -> Result<(), StoreError> {
    if key.modality() != modality {
        return Err(VerificationError::ModalityMismatch { expected: modality, found: key.modality() }.into());
    }
    if key.norm() == 0.0 {
        return Err(VerificationError::ZeroNorm.into());
    }
    Ok(())
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store_version(&self) -> u64 {
        self.store_version
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn users(&self) -> impl Iterator<Item = &Arc<UserProfile>> {
        self.users.values()
    }

    pub fn user_ids(&self) -> impl Iterator<Item = &UserId> {
        self.users.keys()
    }

    pub fn edges(&self) -> impl Iterator<Item = &RelationTriplet> {
        self.graph.iter()
    }

    pub fn aux_documents(&self) -> &[String] {
        &self.aux_documents
    }

    pub fn audit(&self) -> &[AuditRecord] {
        &self.audit
    }

    pub fn add_aux_document(&mut self, text: impl Into<String>) {
        self.aux_documents.push(text.into());
        self.store_version += 1;
    }

    fn record(
        &mut self,
        action: AuditAction,
        user: Option<&UserId>,
        old: Option<String>,
        new: Option<String>,
        reason: impl Into<String>,
    ) {
        let seq = self.audit.len() as u64;
        self.audit.push(AuditRecord {
            seq,
            store_version: self.store_version,
            action,
            user: user.cloned(),
            old,
            new,
            reason: reason.into(),
        });
    }

    /// `(user_id, face_key)` pairs for face verification.
    pub fn face_gallery(&self) -> Vec<(UserId, Embedding)> {
        self.users.values().map(|p| (p.user_id.clone(), p.face_key.clone())).collect()
    }

    pub fn voice_gallery(&self) -> Vec<(UserId, Embedding)> {
        self.users.values().map(|p| (p.user_id.clone(), p.voice_key.clone())).collect()
    }

    /// Case-insensitive exact name match; `None` when zero or several users match.
    pub fn find_by_name(&self, name: &str) -> Option<&UserId> {
        let mut hits = self.users.values().filter(|p| p.is_named() && p.name.eq_ignore_ascii_case(name.trim()));
        let first = hits.next()?;
        if hits.next().is_some() {
            return None;
        }
        Some(&first.user_id)
    }

    fn find_duplicate(&self, face_key: &Embedding, voice_key: &Embedding) -> Option<UserId> {
        self.users
            .values()
            .find(|p| {
                cosine_distance(face_key, &p.face_key).map(|d| d <= 0.0).unwrap_or(false)
                    || cosine_distance(voice_key, &p.voice_key).map(|d| d <= 0.0).unwrap_or(false)
            })
            .map(|p| p.user_id.clone())
    }

    /// Adds a profile seeded from `initial`. Relation facts in `initial` are
    /// not turned into edges here.
    pub fn create_user(
        &mut self,
        face_key: Embedding,
        voice_key: Embedding,
        initial: &ExtractedMemory,
    ) -> Result<CreatedUser, StoreError> {
        check_key(&face_key, Modality::Face)?;
        check_key(&voice_key, Modality::Voice)?;
        initial.validate()?;
        let duplicate_of = self.find_duplicate(&face_key, &voice_key);

        self.next_user += 1;
        let user_id = UserId::new(format!("u{:04}", self.next_user));
        let at = &initial.session_timestamp;
        let mut persona = Persona::default();
        for (slot, value) in &initial.persona_trail {
            persona.set(slot, value.clone())?;
        }
        let profile = UserProfile {
            user_id: user_id.clone(),
            name: initial.user_name.trim().to_owned(),
            face_key,
            voice_key,
            facts: initial.user_facts.iter().map(|f| MemoryItem::new(at.clone(), f.clone())).collect(),
            dialog_summaries: initial
                .summary_sentences
                .iter()
                .map(|s| MemoryItem::new(at.clone(), s.clone()))
                .collect(),
            persona,
            relation_edges: Vec::new(),
            version: 1,
        };
        self.users.insert(user_id.clone(), Arc::new(profile));
        self.store_version += 1;
        self.record(AuditAction::CreateUser, Some(&user_id), None, Some(initial.user_name.clone()), "new identity");
        if let Some(dup) = &duplicate_of {
            log::warn!("{user_id} shares an identity key with {dup}");
            self.record(
                AuditAction::DuplicateIdentity,
                Some(&user_id),
                Some(dup.to_string()),
                None,
                "key at distance 0 from an existing user",
            );
        }
        Ok(CreatedUser { user_id, duplicate_of })
    }

    pub fn lookup_user(&self, user_id: &UserId) -> Result<Arc<UserProfile>, StoreError> {
        self.users.get(user_id).cloned().ok_or_else(|| StoreError::UnknownUser(user_id.clone()))
    }

    fn check_resolution(profile: &UserProfile, r: &UpdateResolution) -> Result<(), StoreError> {
        for rep in &r.replacements {
            let current = match &rep.target {
                ItemRef::Fact { index } => profile.facts.get(*index).map(|i| i.text.as_str()),
                ItemRef::Summary { index } => profile.dialog_summaries.get(*index).map(|i| i.text.as_str()),
                ItemRef::PersonaSlot { slot } => profile.persona.get(slot),
            };
            if current != Some(rep.old.as_str()) {
                return Err(StoreError::InvalidResolution(format!(
                    "replacement cites {:?} as {:?}, stored value is {:?}",
                    rep.target, rep.old, current
                )));
            }
        }
        for slot in r.persona_updates.keys() {
            if !is_persona_slot(slot) {
                return Err(StoreError::UnknownPersonaSlot(slot.clone()));
            }
        }
        Ok(())
    }

    /// Applies everything in `resolution` except `new_edges`, which go
    /// through [`MemoryStore::add_relation_edge`]. A no-op resolution leaves
    /// the version unchanged.
    pub fn apply_profile_update(&mut self, resolution: &UpdateResolution) -> Result<u64, StoreError> {
        let user = &resolution.target_user;
        let current = self.lookup_user(user)?;
        if resolution.base_version != current.version {
            return Err(StoreError::Conflict {
                user: user.clone(),
                base: resolution.base_version,
                current: current.version,
            });
        }
        Self::check_resolution(&current, resolution)?;
        if resolution.is_noop() {
            return Ok(current.version);
        }

        let mut next = (*current).clone();
        next.version += 1;
        self.store_version += 1;

        for rep in &resolution.replacements {
            match &rep.target {
                ItemRef::Fact { index } => next.facts[*index].text = rep.new.clone(),
                ItemRef::Summary { index } => next.dialog_summaries[*index].text = rep.new.clone(),
                ItemRef::PersonaSlot { slot } => {
                    next.persona.set(slot, rep.new.clone())?;
                }
            }
            self.record(
                AuditAction::Replace,
                Some(user),
                Some(rep.old.clone()),
                Some(rep.new.clone()),
                rep.reason.clone(),
            );
        }
        if let Some(name) = &resolution.name {
            if *name != next.name {
                self.record(
                    AuditAction::Rename,
                    Some(user),
                    Some(next.name.clone()),
                    Some(name.clone()),
                    "name learned",
                );
                next.name = name.clone();
            }
        }
        for (slot, value) in &resolution.persona_updates {
            let old = next.persona.set(slot, value.clone())?;
            self.record(AuditAction::Persona, Some(user), old, Some(format!("{slot}={value}")), "persona trail");
        }
        for item in &resolution.append_facts {
            self.record(AuditAction::Append, Some(user), None, Some(item.text.clone()), "fact");
        }
        for item in &resolution.append_summaries {
            self.record(AuditAction::Append, Some(user), None, Some(item.text.clone()), "dialog summary");
        }
        next.facts.extend(resolution.append_facts.iter().cloned());
        next.dialog_summaries.extend(resolution.append_summaries.iter().cloned());

        let version = next.version;
        self.users.insert(user.clone(), Arc::new(next));
        Ok(version)
    }

    /// Inserts an edge; returns `false` if it was already present.
    pub fn add_relation_edge(&mut self, triplet: RelationTriplet) -> Result<bool, StoreError> {
        if !self.users.contains_key(&triplet.from) || !self.users.contains_key(&triplet.to) {
            return Err(StoreError::InvalidEdge(triplet, "unknown endpoint"));
        }
        if triplet.from == triplet.to {
            return Err(StoreError::InvalidEdge(triplet, "self loop"));
        }
        if triplet.relation.trim().is_empty() {
            return Err(StoreError::InvalidEdge(triplet, "empty relation"));
        }
        if self.graph.contains(&triplet) {
            return Ok(false);
        }
        self.graph.insert(triplet.clone());
        let from = self.users.get_mut(&triplet.from).expect("checked above");
        let p = Arc::make_mut(from);
        p.relation_edges.push(triplet.clone());
        p.version += 1;
        self.store_version += 1;
        self.record(AuditAction::AddEdge, Some(&triplet.from), None, Some(triplet.to_string()), "social graph");
        Ok(true)
    }

    /// Every neighbor of `user_id` in either direction, sorted.
    pub fn connected_users(&self, user_id: &UserId) -> Result<Vec<Neighbor>, StoreError> {
        if !self.users.contains_key(user_id) {
            return Err(StoreError::UnknownUser(user_id.clone()));
        }
        let mut out: Vec<Neighbor> = self
            .graph
            .iter()
            .filter_map(|t| {
                if &t.from == user_id {
                    Some(Neighbor {
                        user_id: t.to.clone(),
                        relation: t.relation.clone(),
                        direction: EdgeDirection::Outgoing,
                    })
                } else if &t.to == user_id {
                    Some(Neighbor {
                        user_id: t.from.clone(),
                        relation: t.relation.clone(),
                        direction: EdgeDirection::Incoming,
                    })
                } else {
                    None
                }
            })
            .collect();
        out.sort();
        Ok(out)
    }

    /// Verifies graph endpoints and mirrored edge lists.
    pub fn check_integrity(&self) -> Result<(), String> {
        for t in &self.graph {
            if !self.users.contains_key(&t.from) || !self.users.contains_key(&t.to) {
                return Err(format!("edge {t} has a dangling endpoint"));
            }
        }
        for p in self.users.values() {
            let mirrored: BTreeSet<&RelationTriplet> = p.relation_edges.iter().collect();
            let expected: BTreeSet<&RelationTriplet> = self.graph.iter().filter(|t| t.from == p.user_id).collect();
            if mirrored != expected {
                return Err(format!("edge mirror of {} is out of sync", p.user_id));
            }
            if p.persona.len() > PERSONA_SLOT_COUNT {
                return Err(format!("persona of {} overflows the schema", p.user_id));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn key(m: Modality, i: usize) -> Embedding {
        let mut v = vec![0.0f32; m.dim()];
        v[i] = 1.0;
        Embedding::new(v, m).unwrap()
    }

    fn extraction(name: &str, facts: &[&str]) -> ExtractedMemory {
        ExtractedMemory {
            user_name: name.into(),
            user_facts: facts.iter().map(|s| s.to_string()).collect(),
            session_timestamp: "2024-05-13".into(),
            ..Default::default()
        }
    }

    fn with_users(n: usize) -> (MemoryStore, Vec<UserId>) {
        let mut s = MemoryStore::new();
        let ids = (0..n)
            .map(|i| {
                s.create_user(
                    key(Modality::Face, i),
                    key(Modality::Voice, i),
                    &extraction(&format!("user{i}"), &["hi"]),
                )
                .unwrap()
                .user_id
            })
            .collect();
        (s, ids)
    }

    #[test]
    fn create_and_lookup() {
        let mut s = MemoryStore::new();
        let a =
            s.create_user(key(Modality::Face, 0), key(Modality::Voice, 0), &extraction(UNKNOWN_USER, &["x"])).unwrap();
        assert_eq!(s.len(), 1);
        let p = s.lookup_user(&a.user_id).unwrap();
        assert_eq!(p.version, 1);
        assert_eq!(p.name, UNKNOWN_USER);
        let b = s.create_user(key(Modality::Face, 1), key(Modality::Voice, 1), &extraction("B", &["y"])).unwrap();
        assert_ne!(a.user_id, b.user_id);
        assert_eq!(s.store_version(), 2);
        assert!(matches!(s.lookup_user(&UserId::from("nobody")), Err(StoreError::UnknownUser(_))));
    }

    #[test]
    fn duplicate_key_warns_but_creates() {
        let mut s = MemoryStore::new();
        let a = s.create_user(key(Modality::Face, 0), key(Modality::Voice, 0), &extraction("A", &["x"])).unwrap();
        let b = s.create_user(key(Modality::Face, 0), key(Modality::Voice, 3), &extraction("B", &["y"])).unwrap();
        assert_eq!(b.duplicate_of, Some(a.user_id));
        assert_eq!(s.len(), 2);
        assert!(s.audit().iter().any(|r| r.action == AuditAction::DuplicateIdentity));
    }

    #[test]
    fn wrong_key_modality_rejected() {
        let mut s = MemoryStore::new();
        assert!(s.create_user(key(Modality::Voice, 0), key(Modality::Voice, 0), &extraction("A", &["x"])).is_err());
    }

    #[test]
    fn append_replace_and_conflict() {
        let mut s = MemoryStore::new();
        let mut e = extraction("A", &[]);
        e.summary_sentences.push("met".into());
        let id = s.create_user(key(Modality::Face, 0), key(Modality::Voice, 0), &e).unwrap().user_id;
        let before = s.lookup_user(&id).unwrap();

        let mut r = UpdateResolution::empty(id.clone(), 1);
        r.append_facts = vec![MemoryItem::new("d", "f1"), MemoryItem::new("d", "f2")];
        assert_eq!(s.apply_profile_update(&r).unwrap(), 2);
        assert_eq!(s.lookup_user(&id).unwrap().facts.len(), 2);
        assert_eq!(before.version, 1);
        assert!(before.facts.is_empty());

        let mut rep = UpdateResolution::empty(id.clone(), 2);
        rep.replacements.push(Replacement {
            target: ItemRef::Fact { index: 0 },
            old: "f1".into(),
            new: "f1 revised".into(),
            reason: "contradiction".into(),
        });
        assert_eq!(s.apply_profile_update(&rep).unwrap(), 3);
        assert_eq!(s.lookup_user(&id).unwrap().facts[0].text, "f1 revised");
        let last = s.audit().iter().rev().find(|a| a.action == AuditAction::Replace).unwrap();
        assert_eq!(last.old.as_deref(), Some("f1"));

        let stale = UpdateResolution { base_version: 1, ..r };
        assert!(matches!(s.apply_profile_update(&stale), Err(StoreError::Conflict { base: 1, current: 3, .. })));
    }

    #[test]
    fn noop_resolution_keeps_version() {
        let (mut s, ids) = with_users(1);
        let v = s.store_version();
        assert_eq!(s.apply_profile_update(&UpdateResolution::empty(ids[0].clone(), 1)).unwrap(), 1);
        assert_eq!(s.store_version(), v);
    }

    #[test]
    fn replacement_must_cite_existing_item() {
        let (mut s, ids) = with_users(1);
        let mut r = UpdateResolution::empty(ids[0].clone(), 1);
        r.replacements.push(Replacement {
            target: ItemRef::PersonaSlot { slot: "favorite_sport".into() },
            old: "soccer".into(),
            new: "tennis".into(),
            reason: "x".into(),
        });
        assert!(matches!(s.apply_profile_update(&r), Err(StoreError::InvalidResolution(_))));
    }

    #[test]
    fn edges_are_idempotent() {
        let (mut s, ids) = with_users(3);
        let t = RelationTriplet::new(ids[0].clone(), "colleague", ids[1].clone());
        assert!(s.add_relation_edge(t.clone()).unwrap());
        assert!(!s.add_relation_edge(t).unwrap());
        assert_eq!(s.edges().count(), 1);
        s.add_relation_edge(RelationTriplet::new(ids[0].clone(), "friend", ids[2].clone())).unwrap();
        assert_eq!(s.connected_users(&ids[0]).unwrap().len(), 2);
        let incoming = s.connected_users(&ids[1]).unwrap();
        assert_eq!(incoming[0].label(), "colleague of");
        assert!(s.check_integrity().is_ok());
        assert!(s.add_relation_edge(RelationTriplet::new(ids[0].clone(), "x", UserId::from("ghost"))).is_err());
    }

    #[test]
    fn isolated_user_has_no_neighbors() {
        let (s, ids) = with_users(2);
        assert!(s.connected_users(&ids[1]).unwrap().is_empty());
    }

    #[test]
    fn find_by_name_is_unique_match() {
        let (s, ids) = with_users(2);
        assert_eq!(s.find_by_name("USER1"), Some(&ids[1]));
        assert_eq!(s.find_by_name("nobody"), None);
    }
}
