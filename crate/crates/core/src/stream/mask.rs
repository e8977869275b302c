//! Supervision masks over built streams.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DialogLayout, StreamError, TokenStream};
use crate::trigger;

pub const MASK_TEXT: u8 = 0b01;
pub const MASK_SPEAK: u8 = 0b10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Level1,
    Level2Query,
    Level2Response,
    TriggerLabels,
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MaskKind::Level1 => "level1",
            MaskKind::Level2Query => "level2_query",
            MaskKind::Level2Response => "level2_response",
            MaskKind::TriggerLabels => "trigger_labels",
        };
        f.write_str(s)
    }
}

/// Per-step supervision for one training sample.
///
/// For the binary kinds each value is a bit set of [`MASK_TEXT`] and
/// [`MASK_SPEAK`]; for [`MaskKind::TriggerLabels`] each value is a tag in `0..=3`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionMask {
    pub kind: MaskKind,
    pub sample_id: String,
    pub values: Vec<u8>,
}

impl SupervisionMask {
    fn binary(kind: MaskKind, sample_id: String, len: usize, span: std::ops::Range<usize>) -> Self {
        let mut values = vec![0u8; len];
        values[span].fill(MASK_TEXT | MASK_SPEAK);
        Self { kind, sample_id, values }
    }

    pub fn supervised_steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.values.iter().enumerate().filter(|(_, &v)| v != 0).map(|(i, _)| i)
    }
}

/// Builds masks for one task.
///
/// `Level1` yields one mask per dialog. `Level2Query` / `Level2Response`
/// both yield the full interleaved Level-2 set (query mask then response
/// mask for every turn), i.e. `2 * sum(turns)` masks. `TriggerLabels`
/// yields a single per-step label sequence.
pub fn make_supervision_masks(
    stream: &TokenStream,
    dialogs: &[DialogLayout],
    kind: MaskKind,
) -> Result<Vec<SupervisionMask>, StreamError> {
    let len = stream.len();
    for d in dialogs {
        if d.span.end > len {
            return Err(StreamError::SpanOutOfBounds { start: d.span.start, end: d.span.end, len });
        }
    }
    match kind {
        MaskKind::Level1 => Ok(dialogs
            .iter()
            .enumerate()
            .map(|(j, d)| SupervisionMask::binary(kind, format!("level1-d{j}"), len, d.span.clone()))
            .collect()),
        MaskKind::Level2Query | MaskKind::Level2Response => {
            let mut out = Vec::new();
            for (j, d) in dialogs.iter().enumerate() {
                for (i, t) in d.turns.iter().enumerate() {
                    let query =
                        t.query_text.as_ref().ok_or(StreamError::MissingQueryAnnotation { dialog: j, turn: i })?;
                    out.push(SupervisionMask::binary(
                        MaskKind::Level2Query,
                        format!("level2-d{j}-t{i}-query"),
                        len,
                        t.listen.start..query.end,
                    ));
                    out.push(SupervisionMask::binary(
                        MaskKind::Level2Response,
                        format!("level2-d{j}-t{i}-response"),
                        len,
                        query.end..t.speak.end,
                    ));
                }
            }
            Ok(out)
        }
        MaskKind::TriggerLabels => {
            let spans: Vec<_> = dialogs.iter().map(|d| d.span.clone()).collect();
            let labels = trigger::labels_from_spans(&spans, len);
            Ok(vec![SupervisionMask {
                kind,
                sample_id: "trigger".to_owned(),
                values: labels.labels().iter().map(|l| *l as u8).collect(),
            }])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::IdentityId;
    use crate::retrieval::QueryGroups;
    use crate::stream::{build_stream, DialogScript, StreamBuildConfig, Turn};

    fn dialogs(turns: &[usize], with_query: bool) -> Vec<DialogScript> {
        turns
            .iter()
            .enumerate()
            .map(|(j, &n)| {
                let ts = (0..n)
                    .map(|i| {
                        let t = Turn::new(IdentityId(j as u32 + 1), format!("question {i}"), format!("answer {i}"));
                        if with_query {
                            t.with_query(QueryGroups::new(["friend"], ["music"]).unwrap())
                        } else {
                            t
                        }
                    })
                    .collect();
                DialogScript::new(j as u32, ts)
            })
            .collect()
    }

    #[test]
    fn level1_one_mask_per_dialog() {
        let built = build_stream(&dialogs(&[3, 4, 5], false), &StreamBuildConfig::default(), 2).unwrap();
        let masks = make_supervision_masks(&built.stream, &built.dialogs, MaskKind::Level1).unwrap();
        assert_eq!(masks.len(), 3);
        for (m, d) in masks.iter().zip(&built.dialogs) {
            let on: Vec<usize> = m.supervised_steps().collect();
            assert_eq!(on.first().copied(), Some(d.span.start));
            assert_eq!(on.last().copied(), Some(d.span.end - 1));
            assert_eq!(on.len(), d.span.len());
        }
    }

    #[test]
    fn level2_counts_twice_the_turns() {
        let built = build_stream(&dialogs(&[2, 3], true), &StreamBuildConfig::default(), 2).unwrap();
        let masks = make_supervision_masks(&built.stream, &built.dialogs, MaskKind::Level2Query).unwrap();
        assert_eq!(masks.len(), 10);
        assert_eq!(masks[0].kind, MaskKind::Level2Query);
        assert_eq!(masks[1].kind, MaskKind::Level2Response);
    }

    #[test]
    fn level2_requires_query_words() {
        let built = build_stream(&dialogs(&[2], false), &StreamBuildConfig::default(), 2).unwrap();
        let err = make_supervision_masks(&built.stream, &built.dialogs, MaskKind::Level2Response).unwrap_err();
        assert_eq!(err, StreamError::MissingQueryAnnotation { dialog: 0, turn: 0 });
    }

    #[test]
    fn trigger_labels_for_one_dialog() {
        // 48 + 2 + 50 steps -> span [768, 868)
        let d = vec![DialogScript::new(0, vec![Turn::new(IdentityId(1), "q".repeat(48), "a".repeat(50))])];
        let built = build_stream(&d, &StreamBuildConfig::default(), 0).unwrap();
        let masks = make_supervision_masks(&built.stream, &built.dialogs, MaskKind::TriggerLabels).unwrap();
        assert_eq!(masks.len(), 1);
        let v = &masks[0].values;
        assert_eq!(v[768], 1);
        assert_eq!(v[867], 3);
        assert!(v[769..867].iter().all(|&l| l == 2));
        assert!(v[..768].iter().all(|&l| l == 0));
    }
}
