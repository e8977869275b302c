//! The 17-channel full-duplex token stream.
//!
//! Every step carries one monologue text token, eight listen tokens (one
//! semantic plus seven acoustic) and eight speak tokens. Training streams
//! reserve steps `[0, 512)` for the Level-1 MemChunk and `[512, 768)` for the
//! Level-2 MemChunk; dialogs start at step 768. Reserved steps hold `<pad>`
//! text and `<empty>` audio.

mod build;
mod codec;
mod mask;
pub mod vocab;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use build::{
    build_stream, BuiltStream, DialogLayout, DialogScript, StreamBuildConfig, Turn, TurnLayout, MAX_TURNS,
    MONOLOGUE_LEAD,
};
pub use codec::{parse_stream, serialize_stream, ParseError};
pub use mask::{make_supervision_masks, MaskKind, SupervisionMask, MASK_SPEAK, MASK_TEXT};

use crate::ids::IdentityId;

/// Steps generated per second of audio.
pub const FRAME_RATE: f64 = 12.5;
/// Hard cap on stream length.
pub const MAX_STEPS: usize = 8192;
pub const LEVEL1_CAPACITY: usize = 512;
pub const LEVEL2_CAPACITY: usize = 256;
pub const DIALOG_START: usize = LEVEL1_CAPACITY + LEVEL2_CAPACITY;
pub const AUDIO_SLOTS: usize = 8;
pub const TOKENS_PER_STEP: usize = 1 + 2 * AUDIO_SLOTS;

pub fn step_to_seconds(step: u64) -> f64 {
    step as f64 / FRAME_RATE
}

pub fn seconds_to_steps(seconds: f64) -> u64 {
    (seconds * FRAME_RATE).round().max(0.0) as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StreamError {
    #[error("stream length {len} exceeds the {MAX_STEPS}-step cap")]
    TooLong { len: usize },
    #[error("step {position} has index {found}, expected {expected}")]
    NonContiguous { position: usize, expected: u64, found: u64 },
    #[error("reserved regions overlap or are out of order: level1 {level1:?}, level2 {level2:?}")]
    RegionOverlap { level1: Range<usize>, level2: Range<usize> },
    #[error("reserved regions end at {end} but the stream has {len} steps")]
    RegionOutOfBounds { end: usize, len: usize },
    #[error("reserved step {position} carries content")]
    ReservedContent { position: usize },
    #[error("face mark at step {step} lies outside the dialog region")]
    FaceOutsideDialog { step: u64 },
    #[error("no dialogs to build")]
    EmptyDialogs,
    #[error("dialog {dialog} turn {turn} has no query-word annotation")]
    MissingQueryAnnotation { dialog: usize, turn: usize },
    #[error("span {start}..{end} is outside the stream (len {len})")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
}

/// One forward-pass worth of tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenStep {
    pub step_index: u64,
    pub text_token: u32,
    pub listen_tokens: [u32; AUDIO_SLOTS],
    pub speak_tokens: [u32; AUDIO_SLOTS],
}

impl TokenStep {
    pub fn silent(step_index: u64) -> Self {
        Self {
            step_index,
            text_token: vocab::PAD,
            listen_tokens: [vocab::EMPTY_AUDIO; AUDIO_SLOTS],
            speak_tokens: [vocab::EMPTY_AUDIO; AUDIO_SLOTS],
        }
    }

    /// All 17 slots in channel order: text, listen, speak.
    pub fn slots(&self) -> [u32; TOKENS_PER_STEP] {
        let mut out = [0u32; TOKENS_PER_STEP];
        out[0] = self.text_token;
        out[1..1 + AUDIO_SLOTS].copy_from_slice(&self.listen_tokens);
        out[1 + AUDIO_SLOTS..].copy_from_slice(&self.speak_tokens);
        out
    }

    pub fn from_slots(step_index: u64, slots: [u32; TOKENS_PER_STEP]) -> Self {
        let mut listen_tokens = [0u32; AUDIO_SLOTS];
        let mut speak_tokens = [0u32; AUDIO_SLOTS];
        listen_tokens.copy_from_slice(&slots[1..1 + AUDIO_SLOTS]);
        speak_tokens.copy_from_slice(&slots[1 + AUDIO_SLOTS..]);
        Self { step_index, text_token: slots[0], listen_tokens, speak_tokens }
    }

    pub fn is_listen_active(&self) -> bool {
        self.listen_tokens[0] != vocab::EMPTY_AUDIO
    }

    pub fn is_speak_active(&self) -> bool {
        self.speak_tokens[0] != vocab::EMPTY_AUDIO
    }

    pub fn is_audio_active(&self) -> bool {
        self.is_listen_active() || self.is_speak_active()
    }

    /// Voice id of the user speech on the listen channel, if any.
    pub fn listen_voice(&self) -> Option<u32> {
        vocab::voice_of(self.listen_tokens[0])
    }

    pub fn listen_utterance(&self) -> Option<u32> {
        vocab::utterance_of(self.listen_tokens[1])
    }

    fn is_blank(&self) -> bool {
        self.text_token == vocab::PAD
            && self.listen_tokens.iter().all(|&t| t == vocab::EMPTY_AUDIO)
            && self.speak_tokens.iter().all(|&t| t == vocab::EMPTY_AUDIO)
    }
}

/// Positions reserved for the two MemChunks, as indices into the stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamLayout {
    pub level1: Range<usize>,
    pub level2: Range<usize>,
}

impl StreamLayout {
    /// `[0, 512)` and `[512, 768)`.
    pub fn training() -> Self {
        Self { level1: 0..LEVEL1_CAPACITY, level2: LEVEL1_CAPACITY..DIALOG_START }
    }

    /// No reserved steps; used for live chunks handed to the management process.
    pub fn unreserved() -> Self {
        Self { level1: 0..0, level2: 0..0 }
    }

    pub fn dialog_start(&self) -> usize {
        self.level2.end
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        let ordered = self.level1.start <= self.level1.end
            && self.level1.end <= self.level2.start
            && self.level2.start <= self.level2.end;
        if ordered {
            Ok(())
        } else {
            Err(StreamError::RegionOverlap { level1: self.level1.clone(), level2: self.level2.clone() })
        }
    }
}

/// A face visible in the video track at one step (time-division multiplexed
/// alongside the audio channels; carried as a sparse side track).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaceMark {
    pub step: u64,
    pub identity: IdentityId,
    pub sample: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    base_step: u64,
    layout: StreamLayout,
    steps: Vec<TokenStep>,
    faces: Vec<FaceMark>,
}

impl TokenStream {
    pub fn new(
        base_step: u64,
        layout: StreamLayout,
        steps: Vec<TokenStep>,
        mut faces: Vec<FaceMark>,
    ) -> Result<Self, StreamError> {
        if steps.len() > MAX_STEPS {
            return Err(StreamError::TooLong { len: steps.len() });
        }
        layout.validate()?;
        if layout.level2.end > steps.len() {
            return Err(StreamError::RegionOutOfBounds { end: layout.level2.end, len: steps.len() });
        }
        for (position, step) in steps.iter().enumerate() {
            let expected = base_step + position as u64;
            if step.step_index != expected {
                return Err(StreamError::NonContiguous { position, expected, found: step.step_index });
            }
            if position < layout.dialog_start() && !step.is_blank() {
                return Err(StreamError::ReservedContent { position });
            }
        }
        let dialog = base_step + layout.dialog_start() as u64..base_step + steps.len() as u64;
        if let Some(bad) = faces.iter().find(|f| !dialog.contains(&f.step)) {
            return Err(StreamError::FaceOutsideDialog { step: bad.step });
        }
        faces.sort_by_key(|f| (f.step, f.identity, f.sample));
        Ok(Self { base_step, layout, steps, faces })
    }

    /// Live chunk with no reserved regions.
    pub fn chunk(base_step: u64, steps: Vec<TokenStep>, faces: Vec<FaceMark>) -> Result<Self, StreamError> {
        Self::new(base_step, StreamLayout::unreserved(), steps, faces)
    }

    pub fn base_step(&self) -> u64 {
        self.base_step
    }

    pub fn layout(&self) -> &StreamLayout {
        &self.layout
    }

    pub fn steps(&self) -> &[TokenStep] {
        &self.steps
    }

    pub fn faces(&self) -> &[FaceMark] {
        &self.faces
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Positions from the end of the Level-2 region to the end of the stream.
    pub fn dialog_region(&self) -> Range<usize> {
        self.layout.dialog_start().min(self.len())..self.len()
    }

    pub fn duration_seconds(&self) -> f64 {
        step_to_seconds(self.len() as u64)
    }

    /// Face marks whose step falls in `positions` (indices into this stream).
    pub fn faces_in(&self, positions: Range<usize>) -> impl Iterator<Item = &FaceMark> {
        let lo = self.base_step + positions.start as u64;
        let hi = self.base_step + positions.end as u64;
        self.faces.iter().filter(move |f| f.step >= lo && f.step < hi)
    }

    /// Monologue text decoded from the text channel over `positions`.
    pub fn monologue(&self, positions: Range<usize>) -> String {
        vocab::decode_text(self.steps[positions].iter().map(|s| s.text_token))
    }

    /// The same content moved to start at `base_step`, reserved regions kept.
    pub fn rebased(&self, base_step: u64) -> TokenStream {
        let shift = |i: u64| i - self.base_step + base_step;
        TokenStream {
            base_step,
            layout: self.layout.clone(),
            steps: self.steps.iter().map(|s| TokenStep { step_index: shift(s.step_index), ..*s }).collect(),
            faces: self.faces.iter().map(|f| FaceMark { step: shift(f.step), ..*f }).collect(),
        }
    }

    /// Sub-stream over `positions` with no reserved regions; step indices and
    /// face marks keep their absolute values.
    pub fn slice(&self, positions: Range<usize>) -> Result<TokenStream, StreamError> {
        if positions.start > positions.end || positions.end > self.len() {
            return Err(StreamError::SpanOutOfBounds { start: positions.start, end: positions.end, len: self.len() });
        }
        let faces = self.faces_in(positions.clone()).copied().collect();
        Ok(TokenStream {
            base_step: self.base_step + positions.start as u64,
            layout: StreamLayout::unreserved(),
            steps: self.steps[positions].to_vec(),
            faces,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank(n: usize) -> Vec<TokenStep> {
        (0..n as u64).map(TokenStep::silent).collect()
    }

    #[test]
    fn step_seconds_examples() {
        assert_eq!(step_to_seconds(25), 2.0);
        assert!((step_to_seconds(8192) - 655.36).abs() < 1e-12);
        assert_eq!(step_to_seconds(0), 0.0);
        assert_eq!(seconds_to_steps(2.0), 25);
    }

    #[test]
    fn every_step_has_seventeen_slots() {
        let step = TokenStep::silent(3);
        assert_eq!(step.slots().len(), 17);
        assert_eq!(TokenStep::from_slots(3, step.slots()), step);
    }

    #[test]
    fn length_cap_enforced() {
        let err = TokenStream::new(0, StreamLayout::training(), blank(MAX_STEPS + 1), vec![]).unwrap_err();
        assert_eq!(err, StreamError::TooLong { len: MAX_STEPS + 1 });
    }

    #[test]
    fn reserved_content_rejected() {
        let mut steps = blank(800);
        steps[10].text_token = vocab::text_token(b'a');
        let err = TokenStream::new(0, StreamLayout::training(), steps, vec![]).unwrap_err();
        assert_eq!(err, StreamError::ReservedContent { position: 10 });
    }

    #[test]
    fn overlapping_layout_rejected() {
        let layout = StreamLayout { level1: 0..800, level2: 512..768 };
        assert!(matches!(layout.validate(), Err(StreamError::RegionOverlap { .. })));
    }

    #[test]
    fn face_in_reserved_region_rejected() {
        let face = FaceMark { step: 5, identity: IdentityId(1), sample: 0 };
        let err = TokenStream::new(0, StreamLayout::training(), blank(800), vec![face]).unwrap_err();
        assert_eq!(err, StreamError::FaceOutsideDialog { step: 5 });
    }

    #[test]
    fn slice_keeps_absolute_indices() {
        let face = FaceMark { step: 790, identity: IdentityId(2), sample: 1 };
        let s = TokenStream::new(0, StreamLayout::training(), blank(900), vec![face]).unwrap();
        let clip = s.slice(780..800).unwrap();
        assert_eq!(clip.base_step(), 780);
        assert_eq!(clip.steps()[0].step_index, 780);
        assert_eq!(clip.faces().len(), 1);
        assert!(s.slice(850..901).is_err());
    }
}
