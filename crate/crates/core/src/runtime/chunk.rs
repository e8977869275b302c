use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::ids::UserId;
use crate::store::UserProfile;
use crate::stream::vocab::{self, text_cost, PAD};
use crate::stream::{LEVEL1_CAPACITY, LEVEL2_CAPACITY};

/// Cached context occupying one of the reserved stream regions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemChunkState {
    pub level: u8,
    /// Empty means the region is all pad.
    pub content: String,
    pub owner: Option<UserId>,
    pub version: u64,
    pub last_refresh_step: u64,
}

impl MemChunkState {
    pub fn empty(level: u8) -> Self {
        assert!(level == 1 || level == 2, "MemChunk level must be 1 or 2");
        Self { level, content: String::new(), owner: None, version: 0, last_refresh_step: 0 }
    }

    pub fn capacity(&self) -> usize {
        if self.level == 1 {
            LEVEL1_CAPACITY
        } else {
            LEVEL2_CAPACITY
        }
    }

    pub fn cost(&self) -> usize {
        text_cost(&self.content)
    }

    /// Content as text-channel tokens, right-padded to capacity.
    pub fn tokens(&self) -> Vec<u32> {
        let mut t = vocab::tokenize_text(&self.content);
        t.resize(self.capacity(), PAD);
        t
    }
}

/// Sent to the dialog process whenever a chunk changes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshSignal {
    pub level: u8,
    pub version: u64,
    pub step: u64,
    pub owner: Option<UserId>,
}

/// Profile lines in priority order: name, facts (newest first), summaries
/// (newest first), persona in schema order.
pub fn profile_lines(profile: &UserProfile) -> Vec<String> {
    let mut lines = vec![format!("name: {}", profile.name)];
    lines.extend(profile.facts.iter().rev().map(|f| format!("fact: {f}")));
    lines.extend(profile.dialog_summaries.iter().rev().map(|s| format!("summary: {s}")));
    lines.extend(profile.persona.iter().map(|(slot, value)| format!("persona: {slot}={value}")));
    lines
}

/// Longest prefix of `lines` that fits in `capacity` tokens, newline-joined.
pub fn pack_lines(lines: &[String], capacity: usize) -> String {
    let mut out = String::new();
    for line in lines {
        let sep = usize::from(!out.is_empty());
        if text_cost(&out) + sep + text_cost(line) > capacity {
            break;
        }
        if sep == 1 {
            out.push('\n');
        }
        out.push_str(line);
    }
    out
}

/// Serializes `profile` into the Level-1 chunk, or clears it to pad.
///
/// Returns the state unchanged and no signal when content and owner are
/// already what they would become.
pub fn refresh_level1_chunk(
    state: &MemChunkState,
    profile: Option<&UserProfile>,
    now_step: u64,
) -> (MemChunkState, Option<RefreshSignal>) {
    let (content, owner) = match profile {
        Some(p) => (pack_lines(&profile_lines(p), LEVEL1_CAPACITY), Some(p.user_id.clone())),
        None => (String::new(), None),
    };
    if content == state.content && owner == state.owner {
        return (state.clone(), None);
    }
    let next = MemChunkState { level: 1, content, owner, version: state.version + 1, last_refresh_step: now_step };
    let signal = RefreshSignal { level: 1, version: next.version, step: now_step, owner: next.owner.clone() };
    (next, Some(signal))
}

/// Publishes chunk states whole; readers get one version or the next, never a mix.
#[derive(Debug, Clone)]
pub struct ChunkCell(Arc<RwLock<Arc<MemChunkState>>>);

impl ChunkCell {
    pub fn new(state: MemChunkState) -> Self {
        Self(Arc::new(RwLock::new(Arc::new(state))))
    }

    pub fn read(&self) -> Arc<MemChunkState> {
        self.0.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn publish(&self, state: MemChunkState) {
        *self.0.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(state);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{ExtractedMemory, MemoryStore};
    use crate::verification::{Embedding, Modality};

    fn key(m: Modality) -> Embedding {
        let mut v = vec![0.0f32; m.dim()];
        v[0] = 1.0;
        Embedding::new(v, m).unwrap()
    }

    fn profile(facts: usize, persona: bool) -> UserProfile {
        let mut e = ExtractedMemory {
            user_name: "Emily".into(),
            session_timestamp: "2024-05-14".into(),
            user_facts: (0..facts).map(|i| format!("fact number {i} about Emily")).collect(),
            ..Default::default()
        };
        if persona {
            e.persona_trail.insert("favorite_sport".into(), "tennis".into());
        }
        let mut s = MemoryStore::new();
        let id = s.create_user(key(Modality::Face), key(Modality::Voice), &e).unwrap().user_id;
        (*s.lookup_user(&id).unwrap()).clone()
    }

    #[test]
    fn none_gives_all_pad() {
        let start = MemChunkState { content: "x".into(), owner: Some(UserId::from("u1")), ..MemChunkState::empty(1) };
        let (next, signal) = refresh_level1_chunk(&start, None, 10);
        assert!(next.content.is_empty());
        assert_eq!(next.owner, None);
        assert!(next.tokens().iter().all(|&t| t == PAD));
        assert_eq!(next.tokens().len(), LEVEL1_CAPACITY);
        assert_eq!(signal.unwrap().version, 1);
    }

    #[test]
    fn identical_profile_is_a_noop() {
        let p = profile(2, true);
        let (first, s1) = refresh_level1_chunk(&MemChunkState::empty(1), Some(&p), 5);
        assert!(s1.is_some());
        let (second, s2) = refresh_level1_chunk(&first, Some(&p), 30);
        assert!(s2.is_none());
        assert_eq!(second, first);
    }

    #[test]
    fn persona_is_cut_before_facts() {
        let p = profile(12, true);
        let (chunk, _) = refresh_level1_chunk(&MemChunkState::empty(1), Some(&p), 0);
        assert!(chunk.cost() <= LEVEL1_CAPACITY);
        assert!(chunk.content.starts_with("name: Emily"));
        assert!(!chunk.content.contains("persona:"));
        assert!(chunk.content.contains("fact number 11"));
    }

    #[test]
    fn small_profile_fits_whole() {
        let p = profile(1, true);
        let (chunk, _) = refresh_level1_chunk(&MemChunkState::empty(1), Some(&p), 0);
        assert_eq!(chunk.content.lines().count(), 3);
        assert!(chunk.content.ends_with("persona: favorite_sport=tennis"));
    }

    #[test]
    fn cell_swaps_whole_states() {
        let cell = ChunkCell::new(MemChunkState::empty(2));
        let before = cell.read();
        cell.publish(MemChunkState { content: "new".into(), version: 1, ..MemChunkState::empty(2) });
        assert_eq!(before.version, 0);
        assert_eq!(cell.read().content, "new");
    }
}
