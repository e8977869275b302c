//! Lays scripted dialogs out on the token stream.
//!
//! Timing rules (one text byte per step):
//! - a user instruction occupies `max(1, bytes)` listen steps;
//! - the monologue for a turn begins when the instruction ends, with the
//!   query marker (when annotated) first and the response text after it;
//! - response audio starts 2 steps after the response text starts and lasts
//!   `max(1, bytes)` steps, so the text channel leads the speak channel by 2;
//! - an interrupting instruction starts inside the previous response audio.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{vocab, FaceMark, StreamError, StreamLayout, TokenStep, TokenStream, AUDIO_SLOTS, MAX_STEPS};
use crate::ids::IdentityId;
use crate::retrieval::QueryGroups;

/// Steps by which the monologue text leads the response audio.
pub const MONOLOGUE_LEAD: usize = 2;
/// Turns per dialog addressable by utterance keys.
pub const MAX_TURNS: u32 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: IdentityId,
    pub instruction: String,
    pub response: String,
    /// Ground-truth query words emitted before the response (Level-2 data).
    #[serde(default)]
    pub query: Option<QueryGroups>,
}

impl Turn {
    pub fn new(speaker: IdentityId, instruction: impl Into<String>, response: impl Into<String>) -> Self {
        Self { speaker, instruction: instruction.into(), response: response.into(), query: None }
    }

    pub fn with_query(mut self, query: QueryGroups) -> Self {
        self.query = Some(query);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogScript {
    /// Unique within a scenario; combined with the turn index into utterance keys.
    pub dialog_id: u32,
    pub turns: Vec<Turn>,
    #[serde(default = "default_true")]
    pub face_visible: bool,
    /// Silence before this dialog, overriding the configured dialog gap.
    #[serde(default)]
    pub lead_gap: Option<usize>,
}

fn default_true() -> bool {
    true
}

impl DialogScript {
    pub fn new(dialog_id: u32, turns: Vec<Turn>) -> Self {
        Self { dialog_id, turns, face_visible: true, lead_gap: None }
    }

    pub fn speaker(&self) -> Option<IdentityId> {
        self.turns.first().map(|t| t.speaker)
    }

    pub fn utterance_key(&self, turn: usize) -> u32 {
        self.dialog_id * MAX_TURNS + turn as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamBuildConfig {
    pub interruption_prob: f64,
    /// Probability that a turn is flagged as carrying speaker echo (metadata only).
    pub echo_prob: f64,
    pub assistant_voice: u32,
    pub turn_gap: usize,
    pub dialog_gap: usize,
    /// Steps between face marks while a dialog is on camera.
    pub face_interval: usize,
    pub max_len: usize,
}

impl Default for StreamBuildConfig {
    fn default() -> Self {
        Self {
            interruption_prob: 0.3,
            echo_prob: 0.3,
            assistant_voice: 0,
            turn_gap: 6,
            dialog_gap: 40,
            face_interval: 25,
            max_len: MAX_STEPS,
        }
    }
}

/// Where one turn landed, as stream positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnLayout {
    pub speaker: IdentityId,
    pub listen: Range<usize>,
    pub query_text: Option<Range<usize>>,
    pub response_text: Range<usize>,
    pub speak: Range<usize>,
    pub interrupting: bool,
    pub echo: bool,
    pub utterance_key: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogLayout {
    pub script_index: usize,
    pub dialog_id: u32,
    pub speaker: IdentityId,
    /// From the first instruction's start to the last response's end.
    pub span: Range<usize>,
    pub turns: Vec<TurnLayout>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltStream {
    pub stream: TokenStream,
    pub dialogs: Vec<DialogLayout>,
    /// Script indices that did not fit in the length budget.
    pub truncated: Vec<usize>,
}

impl BuiltStream {
    pub fn gold_spans(&self) -> Vec<Range<usize>> {
        self.dialogs.iter().map(|d| d.span.clone()).collect()
    }
}

fn byte_steps(text: &str) -> usize {
    text.len().max(1)
}

/// Plans turn positions relative to a dialog start of 0.
fn plan_dialog(script: &DialogScript, cfg: &StreamBuildConfig, rng: &mut ChaCha8Rng) -> Vec<TurnLayout> {
    let mut turns: Vec<TurnLayout> = Vec::with_capacity(script.turns.len());
    for (i, turn) in script.turns.iter().enumerate() {
        let instr_len = byte_steps(&turn.instruction);
        let interrupting = i > 0 && rng.gen_bool(cfg.interruption_prob.clamp(0.0, 1.0));
        let echo = rng.gen_bool(cfg.echo_prob.clamp(0.0, 1.0));
        let start = match turns.last() {
            None => 0,
            Some(prev) if interrupting => {
                let prev_len = prev.speak.len();
                let overlap = (instr_len.min(prev_len) / 2).max(1);
                prev.speak.end - overlap
            }
            Some(prev) => prev.speak.end + cfg.turn_gap,
        };
        let listen = start..start + instr_len;
        let mut text_cursor = listen.end;
        let query_text = turn.query.as_ref().map(|q| {
            let len = q.format().len();
            let r = text_cursor..text_cursor + len;
            text_cursor += len;
            r
        });
        let response_text = text_cursor..text_cursor + turn.response.len();
        let speak_start = text_cursor + MONOLOGUE_LEAD;
        let speak = speak_start..speak_start + byte_steps(&turn.response);
        turns.push(TurnLayout {
            speaker: turn.speaker,
            listen,
            query_text,
            response_text,
            speak,
            interrupting,
            echo,
            utterance_key: script.utterance_key(i),
        });
    }
    turns
}

fn shift(r: &Range<usize>, by: usize) -> Range<usize> {
    r.start + by..r.end + by
}

fn fill_audio(slots: &mut [u32; AUDIO_SLOTS], voice: u32, utterance: Option<u32>, rng: &mut ChaCha8Rng) {
    slots[0] = vocab::semantic_token(voice, rng.gen());
    for slot in slots.iter_mut().skip(1) {
        *slot = vocab::acoustic_token(rng.gen());
    }
    if let Some(key) = utterance {
        slots[1] = vocab::utterance_token(key);
    }
}

/// Concatenates `dialogs` after the reserved MemChunk regions.
///
/// Dialogs that would push the stream past `config.max_len` are dropped
/// (together with every later dialog) and listed in `truncated`.
pub fn build_stream(
    dialogs: &[DialogScript],
    config: &StreamBuildConfig,
    rng_seed: u64,
) -> Result<BuiltStream, StreamError> {
    if dialogs.is_empty() {
        return Err(StreamError::EmptyDialogs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let layout = StreamLayout::training();
    let max_len = config.max_len.min(MAX_STEPS);

    let mut placed: Vec<DialogLayout> = Vec::new();
    let mut truncated = Vec::new();
    let mut cursor = layout.dialog_start();
    for (index, script) in dialogs.iter().enumerate() {
        if !truncated.is_empty() || script.turns.is_empty() {
            truncated.push(index);
            continue;
        }
        let plan = plan_dialog(script, config, &mut rng);
        let length = plan.iter().map(|t| t.speak.end).max().unwrap_or(0);
        let start = if placed.is_empty() { cursor } else { cursor + script.lead_gap.unwrap_or(config.dialog_gap) };
        if start + length > max_len {
            truncated.push(index);
            continue;
        }
        let turns: Vec<TurnLayout> = plan
            .into_iter()
            .map(|t| TurnLayout {
                listen: shift(&t.listen, start),
                query_text: t.query_text.as_ref().map(|r| shift(r, start)),
                response_text: shift(&t.response_text, start),
                speak: shift(&t.speak, start),
                ..t
            })
            .collect();
        cursor = start + length;
        placed.push(DialogLayout {
            script_index: index,
            dialog_id: script.dialog_id,
            speaker: script.speaker().expect("non-empty dialog"),
            span: start..cursor,
            turns,
        });
    }

    let total = if placed.is_empty() { layout.dialog_start() } else { cursor };
    let mut steps: Vec<TokenStep> = (0..total as u64).map(TokenStep::silent).collect();
    let mut faces = Vec::new();
    for dialog in &placed {
        let script = &dialogs[dialog.script_index];
        for (turn, tl) in script.turns.iter().zip(&dialog.turns) {
            for pos in tl.listen.clone() {
                fill_audio(&mut steps[pos].listen_tokens, turn.speaker.0, Some(tl.utterance_key), &mut rng);
            }
            for pos in tl.speak.clone() {
                fill_audio(&mut steps[pos].speak_tokens, config.assistant_voice, None, &mut rng);
            }
            let mut text = String::new();
            if let Some(q) = &turn.query {
                text.push_str(&q.format());
            }
            text.push_str(&turn.response);
            let text_start = tl.query_text.as_ref().map_or(tl.response_text.start, |r| r.start);
            for (offset, token) in vocab::tokenize_text(&text).into_iter().enumerate() {
                steps[text_start + offset].text_token = token;
            }
        }
        if script.face_visible && config.face_interval > 0 {
            for (k, pos) in dialog.span.clone().step_by(config.face_interval).enumerate() {
                let speaker =
                    dialog.turns.iter().rev().find(|t| t.listen.start <= pos).map_or(dialog.speaker, |t| t.speaker);
                faces.push(FaceMark {
                    step: pos as u64,
                    identity: speaker,
                    sample: script.dialog_id.wrapping_mul(1000).wrapping_add(k as u32),
                });
            }
        }
    }
    let stream = TokenStream::new(0, layout, steps, faces)?;
    Ok(BuiltStream { stream, dialogs: placed, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(n: usize) -> String {
        "x".repeat(n)
    }

    fn single_turn(instr: usize, resp: usize) -> DialogScript {
        DialogScript::new(1, vec![Turn::new(IdentityId(3), text(instr), text(resp))])
    }

    #[test]
    fn one_turn_of_100_steps() {
        // 48 listen steps, 2 lead steps, 50 speak steps.
        let built = build_stream(&[single_turn(48, 50)], &StreamBuildConfig::default(), 1).unwrap();
        assert_eq!(built.stream.len(), 868);
        assert_eq!(built.dialogs[0].span, 768..868);
        assert!(built.stream.steps()[..768].iter().all(|s| !s.is_audio_active()));
        assert!(built.stream.steps()[767].text_token == vocab::PAD);
    }

    #[test]
    fn monologue_leads_audio_by_two() {
        let built = build_stream(&[single_turn(10, 20)], &StreamBuildConfig::default(), 1).unwrap();
        let t = &built.dialogs[0].turns[0];
        let steps = built.stream.steps();
        let first_text = steps.iter().position(|s| s.text_token != vocab::PAD).unwrap();
        let first_speak = steps.iter().position(|s| s.is_speak_active()).unwrap();
        assert_eq!(first_text + 2, first_speak);
        assert_eq!(first_speak, t.speak.start);
    }

    #[test]
    fn empty_dialog_list_is_an_error() {
        assert_eq!(build_stream(&[], &StreamBuildConfig::default(), 0).unwrap_err(), StreamError::EmptyDialogs);
    }

    #[test]
    fn over_budget_dialogs_are_reported() {
        let dialogs: Vec<_> =
            (0..4).map(|i| DialogScript::new(i, vec![Turn::new(IdentityId(1), text(1000), text(1500))])).collect();
        let built = build_stream(&dialogs, &StreamBuildConfig::default(), 0).unwrap();
        assert_eq!(built.dialogs.len(), 2);
        assert_eq!(built.truncated, vec![2, 3]);
        assert!(built.stream.len() <= MAX_STEPS);
    }

    #[test]
    fn deterministic_without_interruptions() {
        let cfg = StreamBuildConfig { interruption_prob: 0.0, ..Default::default() };
        let d = vec![DialogScript::new(
            2,
            vec![Turn::new(IdentityId(1), "hi", "hello"), Turn::new(IdentityId(1), "how are you", "fine")],
        )];
        assert_eq!(build_stream(&d, &cfg, 9).unwrap(), build_stream(&d, &cfg, 9).unwrap());
    }

    #[test]
    fn interruption_overlaps_previous_response() {
        let cfg = StreamBuildConfig { interruption_prob: 1.0, ..Default::default() };
        let d = vec![DialogScript::new(
            2,
            vec![Turn::new(IdentityId(1), text(10), text(40)), Turn::new(IdentityId(1), text(12), text(30))],
        )];
        let built = build_stream(&d, &cfg, 3).unwrap();
        let turns = &built.dialogs[0].turns;
        assert!(turns[1].interrupting);
        assert!(turns[1].listen.start < turns[0].speak.end);
        assert!(turns[1].response_text.start >= turns[0].response_text.end);
        assert!(turns[1].speak.start >= turns[0].speak.end);
    }

    #[test]
    fn query_marker_precedes_response_text() {
        let q = QueryGroups::new(["colleague"], ["tennis"]).unwrap();
        let d = vec![DialogScript::new(
            5,
            vec![Turn::new(IdentityId(1), "does any of my colleagues love tennis", "yes, John does")
                .with_query(q.clone())],
        )];
        let built = build_stream(&d, &StreamBuildConfig::default(), 0).unwrap();
        let t = &built.dialogs[0].turns[0];
        let qr = t.query_text.clone().unwrap();
        assert_eq!(built.stream.monologue(qr.clone()), q.format());
        assert_eq!(qr.end, t.response_text.start);
        assert_eq!(t.response_text.start + 2, t.speak.start);
    }

    #[test]
    fn face_marks_follow_speaker() {
        let d = vec![single_turn(60, 60)];
        let built = build_stream(&d, &StreamBuildConfig::default(), 0).unwrap();
        let faces = built.stream.faces();
        assert_eq!(faces.len(), 5);
        assert!(faces.iter().all(|f| f.identity == IdentityId(3)));
        assert_eq!(faces[0].step, 768);
    }
}
