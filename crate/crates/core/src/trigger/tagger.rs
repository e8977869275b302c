use super::{labels_from_spans, TagSequence, TriggerError};
use crate::stream::{TokenStep, TokenStream};

/// Anything that can label every step of a stream.
pub trait TriggerBackend: Send + Sync {
    fn tag(&self, stream: &TokenStream) -> Result<TagSequence, TriggerError>;
}

/// Rule-based reference tagger over channel activity.
///
/// A step is active when any of its 17 slots carries content. Active runs
/// separated by at least `gap_steps` silent steps are separate sessions, and a
/// change of the user voice on the listen channel splits a run: the old
/// session ends at the last active step before the new voice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleTagger {
    pub gap_steps: usize,
}

impl Default for RuleTagger {
    fn default() -> Self {
        // 2 s at 12.5 steps/s
        Self { gap_steps: 25 }
    }
}

fn is_active(step: &TokenStep) -> bool {
    step.is_audio_active() || step.text_token != crate::stream::vocab::PAD
}

impl RuleTagger {
    pub fn spans(&self, stream: &TokenStream) -> Vec<std::ops::Range<usize>> {
        struct Open {
            start: usize,
            last: usize,
            voice: Option<u32>,
        }
        let mut spans = Vec::new();
        let mut open: Option<Open> = None;
        for (pos, step) in stream.steps().iter().enumerate() {
            if !is_active(step) {
                continue;
            }
            let voice = step.listen_voice();
            match open.as_mut() {
                Some(o) if pos - o.last > self.gap_steps => {
                    spans.push(o.start..o.last + 1);
                    open = Some(Open { start: pos, last: pos, voice });
                }
                Some(o) if matches!((o.voice, voice), (Some(a), Some(b)) if a != b) => {
                    spans.push(o.start..o.last + 1);
                    open = Some(Open { start: pos, last: pos, voice });
                }
                Some(o) => {
                    o.last = pos;
                    o.voice = o.voice.or(voice);
                }
                None => open = Some(Open { start: pos, last: pos, voice }),
            }
        }
        if let Some(o) = open {
            spans.push(o.start..o.last + 1);
        }
        spans
    }
}

impl TriggerBackend for RuleTagger {
    fn tag(&self, stream: &TokenStream) -> Result<TagSequence, TriggerError> {
        Ok(labels_from_spans(&self.spans(stream), stream.len()))
    }
}

/// Labels `stream` with `backend`, checking the output length.
pub fn tag_stream(stream: &TokenStream, backend: &dyn TriggerBackend) -> Result<TagSequence, TriggerError> {
    let tags = backend.tag(stream)?;
    if tags.len() != stream.len() {
        return Err(TriggerError::Backend {
            step: tags.len().min(stream.len()),
            reason: format!("backend returned {} labels for {} steps", tags.len(), stream.len()),
        });
    }
    Ok(tags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::IdentityId;
    use crate::stream::{build_stream, DialogScript, StreamBuildConfig, Turn};
    use crate::trigger::{extract_sessions, Tag};

    #[test]
    fn one_dialog() {
        let d = vec![DialogScript::new(0, vec![Turn::new(IdentityId(1), "q".repeat(48), "a".repeat(50))])];
        let built = build_stream(&d, &StreamBuildConfig::default(), 0).unwrap();
        let tags = tag_stream(&built.stream, &RuleTagger::default()).unwrap();
        let l = tags.labels();
        assert_eq!(l[768], Tag::Start);
        assert_eq!(l[867], Tag::End);
        assert!(l[769..867].iter().all(|&t| t == Tag::Inside));
        assert!(l[..768].iter().all(|&t| t == Tag::NoDialog));
    }

    #[test]
    fn back_to_back_users_split() {
        let mut second = DialogScript::new(1, vec![Turn::new(IdentityId(2), "hello there", "hi")]);
        second.lead_gap = Some(0);
        let d = vec![DialogScript::new(0, vec![Turn::new(IdentityId(1), "good morning", "morning")]), second];
        let built = build_stream(&d, &StreamBuildConfig::default(), 0).unwrap();
        let tags = tag_stream(&built.stream, &RuleTagger::default()).unwrap();
        let switch = built.dialogs[1].span.start;
        assert_eq!(tags.labels()[switch - 1], Tag::End);
        assert_eq!(tags.labels()[switch], Tag::Start);
        let (spans, repairs) = extract_sessions(&tags);
        assert!(repairs.is_empty());
        assert_eq!(spans.iter().map(|s| s.to_range()).collect::<Vec<_>>(), built.gold_spans());
    }

    #[test]
    fn silence_only() {
        let stream = crate::stream::TokenStream::chunk(0, (0..100).map(TokenStep::silent).collect(), vec![]).unwrap();
        let tags = tag_stream(&stream, &RuleTagger::default()).unwrap();
        assert!(tags.labels().iter().all(|&t| t == Tag::NoDialog));
    }

    struct Short;
    impl TriggerBackend for Short {
        fn tag(&self, _: &TokenStream) -> Result<TagSequence, TriggerError> {
            Ok(TagSequence::silent(3))
        }
    }

    #[test]
    fn length_checked() {
        let stream = crate::stream::TokenStream::chunk(0, (0..10).map(TokenStep::silent).collect(), vec![]).unwrap();
        assert!(matches!(tag_stream(&stream, &Short), Err(TriggerError::Backend { step: 3, .. })));
    }
}
