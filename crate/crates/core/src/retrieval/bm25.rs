use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Whitespace split, lowercase, then strip non-alphanumeric characters from
/// both ends of each word. Words that end up empty are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    /// Position in the corpus passed to [`bm25_scores`].
    pub index: usize,
    pub score: f64,
}

/// Okapi BM25 with `idf = ln((N - df + 0.5) / (df + 0.5) + 1)`.
///
/// Query terms are summed as given, so a repeated term counts twice. Returns
/// one score per document.
pub fn bm25_scores<S: AsRef<str>>(query: &[S], corpus: &[S]) -> Vec<f64> {
    let docs: Vec<Vec<String>> = corpus.iter().map(|d| tokenize(d.as_ref())).collect();
    let n = docs.len() as f64;
    if docs.is_empty() {
        return Vec::new();
    }
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let terms: Vec<String> = query.iter().flat_map(|q| tokenize(q.as_ref())).collect();

    let mut df: HashMap<&str, usize> = HashMap::new();
    for t in &terms {
        if !df.contains_key(t.as_str()) {
            let count = docs.iter().filter(|d| d.contains(t)).count();
            df.insert(t.as_str(), count);
        }
    }
    docs.iter()
        .map(|doc| {
            if avgdl == 0.0 {
                return 0.0;
            }
            let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * doc.len() as f64 / avgdl);
            terms
                .iter()
                .map(|t| {
                    let f = doc.iter().filter(|w| *w == t).count() as f64;
                    if f == 0.0 {
                        return 0.0;
                    }
                    let d = df[t.as_str()] as f64;
                    let idf = ((n - d + 0.5) / (d + 0.5) + 1.0).ln();
                    idf * f * (BM25_K1 + 1.0) / (f + norm)
                })
                .sum()
        })
        .collect()
}

/// Documents with a positive BM25 score, best first; equal scores keep
/// corpus order.
pub fn bm25_rank<S: AsRef<str>>(query: &[S], corpus: &[S]) -> Vec<Scored> {
    let mut out: Vec<Scored> = bm25_scores(query, corpus)
        .into_iter()
        .enumerate()
        .filter(|(_, s)| *s > 0.0)
        .map(|(index, score)| Scored { index, score })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    out
}
