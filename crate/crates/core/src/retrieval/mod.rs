//! Content-driven retrieval over the memories of socially connected users.
//!
//! The dialog model asks with two word groups: relations (`colleague`) and
//! keywords (`tennis`). Relations filter candidate documents with BM25;
//! keywords re-rank them by embedding distance; the top of the ranking is
//! packed into the 256-step Level-2 MemChunk.

mod bm25;
mod query;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bm25::{bm25_rank, bm25_scores, tokenize, Scored, BM25_B, BM25_K1};
pub use query::{parse_query_protocol, QueryError, QueryGroups, ANSWER_MARKER, RETR_MARKER};

use crate::backends::{BackendError, TextEmbedder};
use crate::ids::UserId;
use crate::store::{MemoryStore, StoreError};
use crate::stream::{vocab, LEVEL2_CAPACITY};
use crate::verification::cosine_distance;

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("BM25 needs at least one query word")]
    EmptyQuery,
    #[error("re-rank needs at least one keyword")]
    NoKeywords,
    #[error("encoding {what}: {source}")]
    Encoder {
        what: String,
        #[source]
        source: BackendError,
    },
    #[error("embedding comparison failed for document {index}: {reason}")]
    Distance { index: usize, reason: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Fact,
    Summary,
    Persona,
    Aux,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSource {
    /// `None` for auxiliary documents.
    pub user_id: Option<UserId>,
    pub kind: ItemKind,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalDocument {
    pub text: String,
    pub source: DocSource,
    /// Relation label as seen from the querying user.
    pub relation: Option<String>,
    pub token_cost: usize,
}

impl RetrievalDocument {
    pub fn new(text: String, source: DocSource, relation: Option<String>) -> Self {
        let token_cost = vocab::text_cost(&text);
        Self { text, source, relation, token_cost }
    }
}

/// One candidate document per (neighbor, memory item), then the store's
/// auxiliary documents. Text reads `name, relation, date, item`.
pub fn build_documents(store: &MemoryStore, current_user: &UserId) -> Result<Vec<RetrievalDocument>, StoreError> {
    let mut docs = Vec::new();
    for neighbor in store.connected_users(current_user)? {
        let profile = store.lookup_user(&neighbor.user_id)?;
        let label = neighbor.label();
        let head = format!("{}, {}", profile.name, label);
        let mut push = |text: String, kind: ItemKind, index: usize| {
            let source = DocSource { user_id: Some(profile.user_id.clone()), kind, index };
            docs.push(RetrievalDocument::new(text, source, Some(label.clone())));
        };
        for (i, item) in profile.facts.iter().enumerate() {
            push(format!("{head}, {item}"), ItemKind::Fact, i);
        }
        for (i, item) in profile.dialog_summaries.iter().enumerate() {
            push(format!("{head}, {item}"), ItemKind::Summary, i);
        }
        for (i, (slot, value)) in profile.persona.iter().enumerate() {
            push(format!("{head}, {}: {value}", slot.replace('_', " ")), ItemKind::Persona, i);
        }
    }
    for (i, text) in store.aux_documents().iter().enumerate() {
        docs.push(RetrievalDocument::new(
            text.clone(),
            DocSource { user_id: None, kind: ItemKind::Aux, index: i },
            None,
        ));
    }
    Ok(docs)
}

/// A document that survived ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDocument {
    pub index: usize,
    pub bm25: Option<f64>,
    /// Cosine distance to the keyword string, when re-ranked.
    pub distance: Option<f64>,
}

impl RankedDocument {
    /// Higher is better: `1 - distance` after re-rank, else the BM25 score.
    pub fn score(&self) -> f64 {
        match (self.distance, self.bm25) {
            (Some(d), _) => 1.0 - d,
            (None, Some(s)) => s,
            (None, None) => 0.0,
        }
    }
}

/// BM25 over relation words; zero-score documents are dropped.
pub fn bm25_filter(relations: &[String], docs: &[RetrievalDocument]) -> Result<Vec<RankedDocument>, RetrievalError> {
    if relations.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let corpus: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let query: Vec<&str> = relations.iter().map(String::as_str).collect();
    Ok(bm25_rank(&query, &corpus)
        .into_iter()
        .map(|s| RankedDocument { index: s.index, bm25: Some(s.score), distance: None })
        .collect())
}

/// Stable re-sort of `ranked` by ascending distance between each document
/// and the keywords joined with spaces.
pub fn rerank_by_keywords(
    mut ranked: Vec<RankedDocument>,
    docs: &[RetrievalDocument],
    keywords: &[String],
    encoder: &dyn TextEmbedder,
) -> Result<Vec<RankedDocument>, RetrievalError> {
    if keywords.is_empty() {
        return Err(RetrievalError::NoKeywords);
    }
    let joined = keywords.join(" ");
    let key = encoder
        .embed_text(&joined)
        .map_err(|source| RetrievalError::Encoder { what: format!("keywords {joined:?}"), source })?;
    for r in &mut ranked {
        let text = &docs[r.index].text;
        let e = encoder
            .embed_text(text)
            .map_err(|source| RetrievalError::Encoder { what: format!("document {} {text:?}", r.index), source })?;
        let d = cosine_distance(&e, &key)
            .map_err(|e| RetrievalError::Distance { index: r.index, reason: e.to_string() })?;
        r.distance = Some(d);
    }
    ranked.sort_by(|a, b| a.distance.unwrap_or(f64::INFINITY).total_cmp(&b.distance.unwrap_or(f64::INFINITY)));
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub document: RetrievalDocument,
    pub rank: RankedDocument,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub hits: Vec<RetrievalHit>,
    /// Cost of [`RetrievalResult::render`], newlines included.
    pub total_cost: usize,
}

impl RetrievalResult {
    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    /// Hit texts, one per line: the Level-2 MemChunk content.
    pub fn render(&self) -> String {
        self.hits.iter().map(|h| h.document.text.as_str()).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Retriever {
    pub k: usize,
    pub budget: usize,
    /// When BM25 drops every document, re-rank the whole corpus instead of
    /// returning nothing.
    pub keyword_fallback: bool,
}

impl Default for Retriever {
    fn default() -> Self {
        Self { k: DEFAULT_TOP_K, budget: LEVEL2_CAPACITY, keyword_fallback: false }
    }
}

impl Retriever {
    /// Ranks `docs` for `groups` without applying `k` or the budget.
    pub fn rank(
        &self,
        groups: &QueryGroups,
        docs: &[RetrievalDocument],
        encoder: &dyn TextEmbedder,
    ) -> Result<Vec<RankedDocument>, RetrievalError> {
        if groups.is_empty() {
            return Ok(Vec::new());
        }
        let mut ranked = if groups.relations.is_empty() {
            (0..docs.len()).map(|index| RankedDocument { index, bm25: None, distance: None }).collect()
        } else {
            let filtered = bm25_filter(&groups.relations, docs)?;
            if filtered.is_empty() && self.keyword_fallback && !groups.keywords.is_empty() {
                (0..docs.len()).map(|index| RankedDocument { index, bm25: None, distance: None }).collect()
            } else {
                filtered
            }
        };
        if !groups.keywords.is_empty() && !ranked.is_empty() {
            ranked = rerank_by_keywords(ranked, docs, &groups.keywords, encoder)?;
        }
        Ok(ranked)
    }

    /// Greedy prefix of the ranking: at most `k` documents whose texts,
    /// joined by newlines, fit in `budget` tokens. Stops at the first
    /// document that does not fit.
    pub fn pack(&self, ranked: Vec<RankedDocument>, docs: &[RetrievalDocument]) -> RetrievalResult {
        let mut result = RetrievalResult::default();
        for rank in ranked.into_iter().take(self.k) {
            let doc = &docs[rank.index];
            let sep = usize::from(!result.hits.is_empty());
            if result.total_cost + sep + doc.token_cost > self.budget {
                break;
            }
            result.total_cost += sep + doc.token_cost;
            result.hits.push(RetrievalHit { document: doc.clone(), rank });
        }
        result
    }

    pub fn retrieve(
        &self,
        groups: &QueryGroups,
        store: &MemoryStore,
        user: &UserId,
        encoder: &dyn TextEmbedder,
    ) -> Result<RetrievalResult, RetrievalError> {
        let docs = build_documents(store, user)?;
        let ranked = self.rank(groups, &docs, encoder)?;
        Ok(self.pack(ranked, &docs))
    }
}

/// [`Retriever::retrieve`] with the default budget and fallback policy.
pub fn retrieve_topk(
    groups: &QueryGroups,
    store: &MemoryStore,
    user: &UserId,
    k: usize,
    encoder: &dyn TextEmbedder,
) -> Result<RetrievalResult, RetrievalError> {
    Retriever { k, ..Retriever::default() }.retrieve(groups, store, user, encoder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::HashingTextEncoder;
    use crate::store::{ExtractedMemory, MemoryItem, RelationTriplet, UpdateResolution};
    use crate::verification::{Embedding, Modality};

    fn key(m: Modality, i: usize) -> Embedding {
        let mut v = vec![0.0f32; m.dim()];
        v[i] = 1.0;
        Embedding::new(v, m).unwrap()
    }

    fn add_user(s: &mut MemoryStore, i: usize, name: &str, facts: &[&str]) -> UserId {
        let e = ExtractedMemory {
            user_name: name.into(),
            user_facts: facts.iter().map(|f| f.to_string()).collect(),
            session_timestamp: "2024-05-13".into(),
            ..Default::default()
        };
        s.create_user(key(Modality::Face, i), key(Modality::Voice, i), &e).unwrap().user_id
    }

    fn walkthrough() -> (MemoryStore, UserId) {
        let mut s = MemoryStore::new();
        let emily = add_user(&mut s, 0, "Emily", &["Emily works in marketing"]);
        let john =
            add_user(&mut s, 1, "John", &["user discussed a tennis game he played 2 days ago", "John has a dog"]);
        let ann = add_user(&mut s, 2, "Ann", &["Ann plays tennis every Sunday"]);
        let bob = add_user(&mut s, 3, "Bob", &["Bob enjoys chess"]);
        s.add_relation_edge(RelationTriplet::new(emily.clone(), "colleague", john)).unwrap();
        s.add_relation_edge(RelationTriplet::new(emily.clone(), "sister", ann)).unwrap();
        s.add_relation_edge(RelationTriplet::new(emily.clone(), "colleague", bob)).unwrap();
        (s, emily)
    }

    #[test]
    fn documents_per_neighbor_item() {
        let (s, emily) = walkthrough();
        let docs = build_documents(&s, &emily).unwrap();
        assert_eq!(docs.len(), 4);
        assert!(docs
            .iter()
            .any(|d| d.text == "John, colleague, 2024-05-13, user discussed a tennis game he played 2 days ago"));
        assert!(docs.iter().all(|d| d.token_cost == d.text.len()));
    }

    #[test]
    fn isolated_user_has_only_aux_documents() {
        let mut s = MemoryStore::new();
        let a = add_user(&mut s, 0, "A", &["x"]);
        assert!(build_documents(&s, &a).unwrap().is_empty());
        s.add_aux_document("office hours 9-5");
        assert_eq!(build_documents(&s, &a).unwrap()[0].source.kind, ItemKind::Aux);
    }

    #[test]
    fn mixed_item_kinds() {
        let (mut s, emily) = walkthrough();
        let john = s.find_by_name("John").unwrap().clone();
        let v = s.lookup_user(&john).unwrap().version;
        let mut r = UpdateResolution::empty(john.clone(), v);
        r.append_summaries.push(MemoryItem::new("2024-05-14", "talked about work"));
        s.apply_profile_update(&r).unwrap();
        let kinds: Vec<ItemKind> = build_documents(&s, &emily)
            .unwrap()
            .into_iter()
            .filter(|d| d.source.user_id.as_ref() == Some(&john))
            .map(|d| d.source.kind)
            .collect();
        assert_eq!(kinds, [ItemKind::Fact, ItemKind::Fact, ItemKind::Summary]);
    }

    #[test]
    fn colleague_tennis_finds_john() {
        let (s, emily) = walkthrough();
        let q = QueryGroups::new(["colleague"], ["tennis"]).unwrap();
        let r = retrieve_topk(&q, &s, &emily, 5, &HashingTextEncoder::new(1)).unwrap();
        assert!(r.hits[0].document.text.starts_with("John, colleague"));
        assert!(r.hits[0].document.text.contains("tennis"));
        // Ann also plays tennis but is a sister, so the relation filter drops her
        assert!(r.hits.iter().all(|h| !h.document.text.starts_with("Ann")));
        assert!(r.total_cost <= 256);
        assert_eq!(r.total_cost, r.render().len());
    }

    #[test]
    fn empty_groups_give_empty_result() {
        let (s, emily) = walkthrough();
        let q = QueryGroups::new(Vec::<String>::new(), Vec::<String>::new()).unwrap();
        assert!(retrieve_topk(&q, &s, &emily, 5, &HashingTextEncoder::new(1)).unwrap().is_empty());
    }

    #[test]
    fn unmatched_relation_is_empty_unless_fallback() {
        let (s, emily) = walkthrough();
        let q = QueryGroups::new(["mother"], ["tennis"]).unwrap();
        let enc = HashingTextEncoder::new(1);
        assert!(retrieve_topk(&q, &s, &emily, 5, &enc).unwrap().is_empty());
        let fb = Retriever { keyword_fallback: true, ..Retriever::default() };
        assert!(!fb.retrieve(&q, &s, &emily, &enc).unwrap().is_empty());
    }

    #[test]
    fn budget_stops_before_overflow() {
        let mut s = MemoryStore::new();
        let a = add_user(&mut s, 0, "A", &["x"]);
        let long = "word ".repeat(30);
        let b = add_user(&mut s, 1, "B", &[&long, &long, &long]);
        s.add_relation_edge(RelationTriplet::new(a.clone(), "friend", b)).unwrap();
        let q = QueryGroups::new(["friend"], Vec::<String>::new()).unwrap();
        let r = retrieve_topk(&q, &s, &a, 5, &HashingTextEncoder::new(1)).unwrap();
        assert_eq!(r.hits.len(), 1);
        assert!(r.total_cost <= 256);
    }

    #[test]
    fn identical_text_ranks_first() {
        let docs: Vec<RetrievalDocument> = ["tennis match", "opera night", "cooking class"]
            .iter()
            .enumerate()
            .map(|(i, t)| {
                RetrievalDocument::new(t.to_string(), DocSource { user_id: None, kind: ItemKind::Aux, index: i }, None)
            })
            .collect();
        let ranked = (0..3).map(|index| RankedDocument { index, bm25: None, distance: None }).collect();
        let out = rerank_by_keywords(ranked, &docs, &["cooking".into(), "class".into()], &HashingTextEncoder::new(2))
            .unwrap();
        assert_eq!(out[0].index, 2);
        assert!(out[0].distance.unwrap().abs() < 1e-9);
    }
}
