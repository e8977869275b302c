use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::SessionSpan;

fn step_set(spans: &[SessionSpan]) -> BTreeSet<usize> {
    spans.iter().flat_map(|s| s.start..=s.end).collect()
}

/// Intersection-over-union of the steps covered by `pred` and `gold`.
/// Boundary steps count. Two empty sets score 1.
pub fn jaccard_score(pred: &[SessionSpan], gold: &[SessionSpan]) -> f64 {
    let p = step_set(pred);
    let g = step_set(gold);
    let union = p.union(&g).count();
    if union == 0 {
        return 1.0;
    }
    p.intersection(&g).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanMatch {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
}

/// Boundary matching with a `±n` step tolerance on both ends.
///
/// Predictions are visited in start order and each takes the first unmatched
/// gold span (in start order) within tolerance. Both sides empty scores 1;
/// exactly one side empty scores 0.
pub fn span_match_at_n(pred: &[SessionSpan], gold: &[SessionSpan], n: usize) -> SpanMatch {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return SpanMatch { precision: 1.0, recall: 1.0, f1: 1.0, matched: 0 },
        (true, false) | (false, true) => return SpanMatch { precision: 0.0, recall: 0.0, f1: 0.0, matched: 0 },
        _ => {}
    }
    let mut p: Vec<&SessionSpan> = pred.iter().collect();
    let mut g: Vec<&SessionSpan> = gold.iter().collect();
    p.sort_by_key(|s| (s.start, s.end));
    g.sort_by_key(|s| (s.start, s.end));
    let mut used = vec![false; g.len()];
    let mut matched = 0;
    for ps in p {
        let hit = g
            .iter()
            .enumerate()
            .find(|(i, gs)| !used[*i] && ps.start.abs_diff(gs.start) <= n && ps.end.abs_diff(gs.end) <= n);
        if let Some((i, _)) = hit {
            used[i] = true;
            matched += 1;
        }
    }
    let precision = matched as f64 / pred.len() as f64;
    let recall = matched as f64 / gold.len() as f64;
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    SpanMatch { precision, recall, f1, matched }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(a: usize, b: usize) -> SessionSpan {
        SessionSpan::new(a, b)
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard_score(&[s(3, 9)], &[s(3, 9)]), 1.0);
        assert_eq!(jaccard_score(&[s(0, 4)], &[s(10, 12)]), 0.0);
        // [0,100) vs [50,150)
        assert!((jaccard_score(&[s(0, 99)], &[s(50, 149)]) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(jaccard_score(&[], &[]), 1.0);
    }

    #[test]
    fn span_match_examples() {
        let exact = span_match_at_n(&[s(1, 5)], &[s(1, 5)], 0);
        assert_eq!((exact.precision, exact.recall, exact.f1), (1.0, 1.0, 1.0));

        let pred = [s(103, 198)];
        let gold = [s(100, 200)];
        assert_eq!(span_match_at_n(&pred, &gold, 5).matched, 1);
        assert_eq!(span_match_at_n(&pred, &gold, 0).matched, 0);

        let m = span_match_at_n(&[s(0, 10)], &[s(0, 10), s(20, 30)], 0);
        assert_eq!((m.precision, m.recall), (1.0, 0.5));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sides() {
        assert_eq!(span_match_at_n(&[], &[], 0).f1, 1.0);
        assert_eq!(span_match_at_n(&[s(0, 1)], &[], 0).f1, 0.0);
        assert_eq!(span_match_at_n(&[], &[s(0, 1)], 3).f1, 0.0);
    }
}
