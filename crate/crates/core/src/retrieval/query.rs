//! The monologue query protocol: `<retr>:\n<relations>\n<keywords><answer>`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RETR_MARKER: &str = "<retr>:";
pub const ANSWER_MARKER: &str = "<answer>";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("query marker opened at byte {offset} but never closed with {ANSWER_MARKER}")]
    Unterminated { offset: usize },
    #[error("query body {body:?} does not have the two-group layout")]
    BadLayout { body: String },
    #[error("query word {word:?} contains a separator character")]
    BadWord { word: String },
}

/// Relation words and keyword words emitted by the dialog model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGroups {
    pub relations: Vec<String>,
    pub keywords: Vec<String>,
}

fn check_word(word: &str) -> Result<(), QueryError> {
    let bad = word.trim().is_empty() || word.contains([',', '\n', '<', '>']) || word != word.trim();
    if bad {
        Err(QueryError::BadWord { word: word.to_owned() })
    } else {
        Ok(())
    }
}

impl QueryGroups {
    pub fn new<R, K>(relations: R, keywords: K) -> Result<Self, QueryError>
    where
        R: IntoIterator,
        R::Item: Into<String>,
        K: IntoIterator,
        K::Item: Into<String>,
    {
        let relations: Vec<String> = relations.into_iter().map(Into::into).collect();
        let keywords: Vec<String> = keywords.into_iter().map(Into::into).collect();
        for w in relations.iter().chain(&keywords) {
            check_word(w)?;
        }
        Ok(Self { relations, keywords })
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty() && self.keywords.is_empty()
    }

    /// Renders the groups in the monologue marker grammar.
    pub fn format(&self) -> String {
        format!("{RETR_MARKER}\n{}\n{}{ANSWER_MARKER}", self.relations.join(","), self.keywords.join(","))
    }
}

fn split_group(group: &str) -> Vec<String> {
    group.split(',').map(str::trim).filter(|w| !w.is_empty()).map(str::to_owned).collect()
}

/// Finds the last query marker in `monologue` and parses its two groups.
///
/// Returns `Ok(None)` when no marker is present.
pub fn parse_query_protocol(monologue: &str) -> Result<Option<QueryGroups>, QueryError> {
    let Some(offset) = monologue.rfind(RETR_MARKER) else {
        return Ok(None);
    };
    let rest = &monologue[offset + RETR_MARKER.len()..];
    let Some(end) = rest.find(ANSWER_MARKER) else {
        return Err(QueryError::Unterminated { offset });
    };
    let body = &rest[..end];
    let layout_err = || QueryError::BadLayout { body: body.to_owned() };
    let body_groups = body.strip_prefix('\n').ok_or_else(layout_err)?;
    let (relations, keywords) = body_groups.split_once('\n').ok_or_else(layout_err)?;
    if keywords.contains('\n') {
        return Err(layout_err());
    }
    Ok(Some(QueryGroups { relations: split_group(relations), keywords: split_group(keywords) }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_groups() {
        let g = parse_query_protocol("<retr>:\ncolleague\ntennis<answer>").unwrap().unwrap();
        assert_eq!(g.relations, ["colleague"]);
        assert_eq!(g.keywords, ["tennis"]);
    }

    #[test]
    fn empty_keyword_group() {
        let g = parse_query_protocol("<retr>:\nmother,father\n<answer>").unwrap().unwrap();
        assert_eq!(g.relations, ["mother", "father"]);
        assert!(g.keywords.is_empty());
    }

    #[test]
    fn no_marker() {
        assert_eq!(parse_query_protocol("hello there").unwrap(), None);
    }

    #[test]
    fn unterminated_marker() {
        let err = parse_query_protocol("ok <retr>:\ncolleague\nten").unwrap_err();
        assert_eq!(err, QueryError::Unterminated { offset: 3 });
    }

    #[test]
    fn missing_newlines() {
        assert!(matches!(parse_query_protocol("<retr>:colleague<answer>"), Err(QueryError::BadLayout { .. })));
    }

    #[test]
    fn whitespace_is_trimmed_and_last_marker_wins() {
        let text = "<retr>:\na\nb<answer> yes. <retr>:\n best friend , sister \n piano<answer>";
        let g = parse_query_protocol(text).unwrap().unwrap();
        assert_eq!(g.relations, ["best friend", "sister"]);
        assert_eq!(g.keywords, ["piano"]);
    }

    #[test]
    fn separator_words_rejected() {
        assert!(QueryGroups::new(["a,b"], Vec::<String>::new()).is_err());
        assert!(QueryGroups::new(["ok"], ["x<y"]).is_err());
    }
}
