//! Dialog-session boundary detection.
//!
//! Each step of a stream gets one tag: `0` no dialog, `1` session start,
//! `2` inside a session, `3` session end. Sessions are read back as spans
//! that start with `1`, continue with `2` and end with `3`.

mod metrics;
mod tagger;

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{jaccard_score, span_match_at_n, SpanMatch};
pub use tagger::{tag_stream, RuleTagger, TriggerBackend};

use crate::ids::UserId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TriggerError {
    #[error("trigger backend failed at step {step}: {reason}")]
    Backend { step: usize, reason: String },
    #[error("label {value} at step {step} is outside 0..=3")]
    BadLabel { step: usize, value: u8 },
    #[error("malformed run-length line {line:?}")]
    BadRle { line: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Tag {
    NoDialog = 0,
    Start = 1,
    Inside = 2,
    End = 3,
}

impl TryFrom<u8> for Tag {
    type Error = u8;

    fn try_from(v: u8) -> Result<Self, u8> {
        match v {
            0 => Ok(Tag::NoDialog),
            1 => Ok(Tag::Start),
            2 => Ok(Tag::Inside),
            3 => Ok(Tag::End),
            other => Err(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSequence(Vec<Tag>);

impl TagSequence {
    pub fn new(labels: Vec<Tag>) -> Self {
        Self(labels)
    }

    pub fn from_values(values: &[u8]) -> Result<Self, TriggerError> {
        values
            .iter()
            .enumerate()
            .map(|(step, &v)| Tag::try_from(v).map_err(|value| TriggerError::BadLabel { step, value }))
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }

    pub fn silent(len: usize) -> Self {
        Self(vec![Tag::NoDialog; len])
    }

    pub fn labels(&self) -> &[Tag] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// One `"<label> <count>"` line per run.
    pub fn to_rle(&self) -> String {
        let mut out = String::new();
        let mut iter = self.0.iter().peekable();
        while let Some(&tag) = iter.next() {
            let mut count = 1usize;
            while iter.peek() == Some(&&tag) {
                iter.next();
                count += 1;
            }
            out.push_str(&format!("{} {}\n", tag as u8, count));
        }
        out
    }

    pub fn from_rle(text: &str) -> Result<Self, TriggerError> {
        let mut labels = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let bad = || TriggerError::BadRle { line: line.to_owned() };
            let (label, count) = line.trim().split_once(' ').ok_or_else(bad)?;
            let label: u8 = label.parse().map_err(|_| bad())?;
            let count: usize = count.trim().parse().map_err(|_| bad())?;
            let tag = Tag::try_from(label).map_err(|_| bad())?;
            labels.extend(std::iter::repeat_n(tag, count));
        }
        Ok(Self(labels))
    }
}

/// Inclusive span of steps belonging to one user's dialog session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSpan {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub user: Option<UserId>,
}

impl SessionSpan {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "span start {start} after end {end}");
        Self { start, end, user: None }
    }

    pub fn from_range(r: &Range<usize>) -> Self {
        Self::new(r.start, r.end - 1)
    }

    pub fn to_range(&self) -> Range<usize> {
        self.start..self.end + 1
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl fmt::Display for SessionSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

/// A deviation from the `1 2* 3` pattern and what was done about it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Repair {
    /// A session never reached its `3` and was closed at its last contiguous step.
    AutoClosed { start: usize, end: usize },
    /// A `2` or `3` with no open session.
    Ignored { step: usize, label: u8 },
}

/// Labels for half-open `spans` over a stream of `len` steps. A one-step span
/// is written as a lone `1`.
pub fn labels_from_spans(spans: &[Range<usize>], len: usize) -> TagSequence {
    let mut labels = vec![Tag::NoDialog; len];
    for span in spans.iter().filter(|s| !s.is_empty()) {
        let end = span.end.min(len);
        if span.start >= end {
            continue;
        }
        labels[span.start..end].fill(Tag::Inside);
        labels[end - 1] = Tag::End;
        labels[span.start] = Tag::Start;
    }
    TagSequence(labels)
}

/// Reads well-formed sessions out of a tag sequence, repairing the rest.
///
/// An open session that meets a `0`, a new `1`, or the end of the stream is
/// closed at its last contiguous step and reported as [`Repair::AutoClosed`].
/// A `2` or `3` with no open session is dropped and reported as
/// [`Repair::Ignored`].
pub fn extract_sessions(tags: &TagSequence) -> (Vec<SessionSpan>, Vec<Repair>) {
    let mut spans = Vec::new();
    let mut repairs = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    fn close_open(open: &mut Option<(usize, usize)>, spans: &mut Vec<SessionSpan>, repairs: &mut Vec<Repair>) {
        if let Some((start, last)) = open.take() {
            spans.push(SessionSpan::new(start, last));
            repairs.push(Repair::AutoClosed { start, end: last });
        }
    }
    for (step, &tag) in tags.labels().iter().enumerate() {
        match tag {
            Tag::NoDialog => close_open(&mut open, &mut spans, &mut repairs),
            Tag::Start => {
                close_open(&mut open, &mut spans, &mut repairs);
                open = Some((step, step));
            }
            Tag::Inside => match open.as_mut() {
                Some((_, last)) => *last = step,
                None => repairs.push(Repair::Ignored { step, label: 2 }),
            },
            Tag::End => match open.take() {
                Some((start, _)) => spans.push(SessionSpan::new(start, step)),
                None => repairs.push(Repair::Ignored { step, label: 3 }),
            },
        }
    }
    close_open(&mut open, &mut spans, &mut repairs);
    (spans, repairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(v: &[u8]) -> TagSequence {
        TagSequence::from_values(v).unwrap()
    }

    fn pairs(spans: &[SessionSpan]) -> Vec<(usize, usize)> {
        spans.iter().map(|s| (s.start, s.end)).collect()
    }

    #[test]
    fn well_formed_span() {
        let (spans, repairs) = extract_sessions(&tags(&[0, 0, 1, 2, 2, 3, 0]));
        assert_eq!(pairs(&spans), [(2, 5)]);
        assert!(repairs.is_empty());
    }

    #[test]
    fn restart_auto_closes() {
        let (spans, repairs) = extract_sessions(&tags(&[1, 2, 2, 1, 2, 3]));
        assert_eq!(pairs(&spans), [(0, 2), (3, 5)]);
        assert_eq!(repairs, [Repair::AutoClosed { start: 0, end: 2 }]);
    }

    #[test]
    fn stray_labels_ignored() {
        let (spans, repairs) = extract_sessions(&tags(&[2, 3, 0]));
        assert!(spans.is_empty());
        assert_eq!(repairs, [Repair::Ignored { step: 0, label: 2 }, Repair::Ignored { step: 1, label: 3 }]);
    }

    #[test]
    fn zero_inside_session_closes_it() {
        let (spans, repairs) = extract_sessions(&tags(&[1, 2, 0, 2, 3]));
        assert_eq!(pairs(&spans), [(0, 1)]);
        assert_eq!(repairs.len(), 3);
    }

    #[test]
    fn open_at_end_of_stream() {
        let (spans, repairs) = extract_sessions(&tags(&[0, 1, 2]));
        assert_eq!(pairs(&spans), [(1, 2)]);
        assert_eq!(repairs, [Repair::AutoClosed { start: 1, end: 2 }]);
    }

    #[test]
    fn labels_round_trip() {
        let spans = vec![3..7, 7..9, 12..13];
        let (back, _) = extract_sessions(&labels_from_spans(&spans, 15));
        assert_eq!(back.iter().map(SessionSpan::to_range).collect::<Vec<_>>(), spans);
    }

    #[test]
    fn rle_round_trip() {
        let t = tags(&[0, 0, 1, 2, 2, 3, 0]);
        assert_eq!(t.to_rle(), "0 2\n1 1\n2 2\n3 1\n0 1\n");
        assert_eq!(TagSequence::from_rle(&t.to_rle()).unwrap(), t);
        assert!(TagSequence::from_rle("7 2").is_err());
    }

    #[test]
    fn bad_label_value() {
        assert_eq!(TagSequence::from_values(&[0, 4]).unwrap_err(), TriggerError::BadLabel { step: 1, value: 4 });
    }
}
