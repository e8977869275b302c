use std::ops::Range;

use proptest::prelude::*;

mod common;
use common::oracle_bm25;

use egomem::ids::UserId;
use egomem::retrieval::{bm25_scores, DocSource, ItemKind, RankedDocument, RetrievalDocument, Retriever};
use egomem::stream::vocab::text_cost;
use egomem::stream::{parse_stream, serialize_stream, FaceMark, StreamLayout, TokenStep, TokenStream, TOKENS_PER_STEP};
use egomem::trigger::{extract_sessions, jaccard_score, labels_from_spans, span_match_at_n, SessionSpan, TagSequence};
use egomem::verification::{compute_eer, cosine_distance, face_verify, Embedding, Modality, Outcome, FACE_DIM};

fn face(head: &[f64]) -> Embedding {
    let mut values = vec![0.0; FACE_DIM];
    values[..head.len()].copy_from_slice(head);
    Embedding::from_f64(&values, Modality::Face).unwrap()
}

fn nonzero_head() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 4).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

// Gallery entries may repeat an earlier key under a new id to force exact ties.
fn gallery() -> impl Strategy<Value = Vec<(u32, Vec<f64>)>> {
    prop::collection::vec((0u32..1000, nonzero_head(), any::<bool>()), 1..8).prop_map(|raw| {
        let mut out: Vec<(u32, Vec<f64>)> = Vec::new();
        for (i, (id, head, repeat)) in raw.into_iter().enumerate() {
            let head = if repeat && i > 0 { out[i - 1].1.clone() } else { head };
            out.push((id * 8 + i as u32, head));
        }
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn face_match_iff_nearest_is_under_delta(
        entries in gallery(),
        query in nonzero_head(),
        pick in any::<prop::sample::Index>(),
        use_key in any::<bool>(),
        delta in 0.0f64..1.0,
        rotate in 0usize..8,
    ) {
        let query = if use_key { face(&entries[pick.index(entries.len())].1) } else { face(&query) };
        let mut users: Vec<(UserId, Embedding)> =
            entries.iter().map(|(id, h)| (UserId::new(format!("u{id:05}")), face(h))).collect();
        let distances: Vec<f64> = users.iter().map(|(_, k)| cosine_distance(&query, k).unwrap()).collect();
        let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
        let best = users
            .iter()
            .zip(&distances)
            .filter(|(_, &d)| d == min)
            .map(|((id, _), _)| id.clone())
            .min()
            .unwrap();

        let decision = face_verify(&query, &users, delta).unwrap();
        prop_assert_eq!(decision.raw_score, min);
        match &decision.outcome {
            Outcome::Matched { user, score } => {
                prop_assert!(min < delta);
                prop_assert_eq!(user, &best);
                prop_assert_eq!(*score, min);
            }
            Outcome::NewUser => prop_assert!(min >= delta),
            other => prop_assert!(false, "unexpected {:?}", other),
        }

        // gallery order never changes the answer
        let n = users.len();
        users.rotate_left(rotate % n);
        users.reverse();
        prop_assert_eq!(face_verify(&query, &users, delta).unwrap(), decision);
    }

    #[test]
    fn cosine_distance_matches_plain_formula(a in nonzero_head(), b in nonzero_head()) {
        let (ea, eb) = (face(&a), face(&b));
        let f = |e: &Embedding| e.values().iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();
        let (x, y) = (f(&ea), f(&eb));
        let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let expected = 1.0 - (dot / (nx * ny)).clamp(-1.0, 1.0);
        let got = cosine_distance(&ea, &eb).unwrap();
        prop_assert!((got - expected).abs() < 1e-12);
        prop_assert!((0.0..=2.0).contains(&got));
    }
}

fn trials() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..60)
        .prop_filter("both classes", |t| t.iter().any(|x| x.1) && t.iter().any(|x| !x.1))
        .prop_map(|t| t.into_iter().unzip())
}

/// Brute-force FAR/FRR at every score and at +inf.
fn sweep(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::INFINITY);
    thresholds
        .into_iter()
        .map(|t| {
            let far = scores.iter().zip(labels).filter(|(&s, &l)| !l && s >= t).count() as f64 / neg;
            let frr = scores.iter().zip(labels).filter(|(&s, &l)| l && s < t).count() as f64 / pos;
            (far, frr)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn eer_ignores_increasing_transforms((scores, labels) in trials(), a in 0.1f64..10.0, b in -3.0f64..3.0) {
        let base = compute_eer(&scores, &labels).unwrap().eer;
        for f in [
            &(|x: f64| a * x + b) as &dyn Fn(f64) -> f64,
            &|x: f64| x.exp(),
            &|x: f64| x * x * x + x,
            &|x: f64| (x / 3.0).tanh(),
        ] {
            let moved: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
            let eer = compute_eer(&moved, &labels).unwrap().eer;
            prop_assert!((eer - base).abs() <= 1e-12, "{} vs {}", eer, base);
        }
    }

    #[test]
    fn eer_sits_between_far_and_frr((scores, labels) in trials()) {
        let eer = compute_eer(&scores, &labels).unwrap().eer;
        prop_assert!((0.0..=1.0).contains(&eer));
        // FAR falls and FRR rises with the threshold, so the crossing lies
        // between the two rates at every threshold
        for (far, frr) in sweep(&scores, &labels) {
            prop_assert!(eer >= far.min(frr) - 1e-12 && eer <= far.max(frr) + 1e-12, "{} vs ({}, {})", eer, far, frr);
        }
    }

    #[test]
    fn separable_scores_have_zero_eer(
        pos in prop::collection::vec(0.0f64..1.0, 1..30),
        neg in prop::collection::vec(0.0f64..1.0, 1..30),
        gap in 0.001f64..1.0,
    ) {
        let mut scores: Vec<f64> = pos.iter().map(|p| p + 1.0 + gap).collect();
        let mut labels = vec![true; pos.len()];
        scores.extend(&neg);
        labels.extend(vec![false; neg.len()]);
        prop_assert_eq!(compute_eer(&scores, &labels).unwrap().eer, 0.0);
    }
}

#[test]
fn eer_hand_example() {
    let scores = [0.9, 0.8, 0.6, 0.7, 0.2, 0.1];
    let labels = [true, true, true, false, false, false];
    let eer = compute_eer(&scores, &labels).unwrap();
    // at 0.7: one negative accepted of three, one positive (0.6) rejected of three
    assert!((eer.eer - 1.0 / 3.0).abs() < 1e-9);
    assert!(eer.threshold > 0.6 && eer.threshold <= 0.7, "{}", eer.threshold);
    let points = sweep(&scores, &labels);
    assert!(points.iter().any(|&(far, frr)| (far - 1.0 / 3.0).abs() < 1e-12 && (frr - 1.0 / 3.0).abs() < 1e-12));
}

const WORDS: &[&str] =
    &["Colleague", "sister,", "tennis", "(jazz)", "emily", "JOHN", "likes", "a", "the", "-", "2024-05-13"];

fn sentence(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 0..max).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn bm25_matches_brute_force(
        corpus in prop::collection::vec(sentence(12), 1..20),
        query in prop::collection::vec(sentence(3), 0..4),
    ) {
        let got = bm25_scores(&query, &corpus);
        let want = oracle_bm25(&query, &corpus);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-9, "{} vs {}", g, w);
        }
    }

    #[test]
    fn packing_respects_k_and_budget(
        texts in prop::collection::vec(sentence(40), 1..30),
        k in 0usize..8,
        budget in 0usize..400,
    ) {
        let docs: Vec<RetrievalDocument> = texts
            .into_iter()
            .enumerate()
            .map(|(index, t)| RetrievalDocument::new(t, DocSource { user_id: None, kind: ItemKind::Aux, index }, None))
            .collect();
        let ranked: Vec<RankedDocument> =
            (0..docs.len()).rev().map(|index| RankedDocument { index, bm25: None, distance: None }).collect();
        let result = Retriever { k, budget, keyword_fallback: false }.pack(ranked.clone(), &docs);
        prop_assert!(result.hits.len() <= k);
        prop_assert!(result.total_cost <= budget);
        prop_assert_eq!(text_cost(&result.render()), result.total_cost);
        // hits are a prefix of the ranking, and the next one would not have fit
        for (hit, rank) in result.hits.iter().zip(&ranked) {
            prop_assert_eq!(hit.rank.index, rank.index);
        }
        if result.hits.len() < k.min(ranked.len()) {
            let next = &docs[ranked[result.hits.len()].index];
            let sep = usize::from(!result.hits.is_empty());
            prop_assert!(result.total_cost + sep + next.token_cost > budget);
        }
    }
}

/// Disjoint half-open spans of at least two steps inside `len`.
fn spans() -> impl Strategy<Value = (Vec<Range<usize>>, usize)> {
    prop::collection::vec((0usize..6, 2usize..20), 0..10).prop_map(|parts| {
        let mut at = 0;
        let mut out = Vec::new();
        for (gap, len) in parts {
            at += gap;
            out.push(at..at + len);
            at += len;
        }
        (out, at + 3)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn labels_and_sessions_round_trip((gold, len) in spans()) {
        let tags = labels_from_spans(&gold, len);
        let (sessions, repairs) = extract_sessions(&tags);
        prop_assert!(repairs.is_empty());
        let ranges: Vec<Range<usize>> = sessions.iter().map(SessionSpan::to_range).collect();
        prop_assert_eq!(&ranges, &gold);
        let back = TagSequence::from_rle(&tags.to_rle()).unwrap();
        prop_assert_eq!(back, tags);
    }

    #[test]
    fn identical_spans_score_one_at_every_tolerance((gold, _) in spans(), n in 0usize..12) {
        let s: Vec<SessionSpan> = gold.iter().map(SessionSpan::from_range).collect();
        prop_assert_eq!(jaccard_score(&s, &s), 1.0);
        prop_assert_eq!(span_match_at_n(&s, &s, n).f1, 1.0);
    }

    #[test]
    fn f1_never_drops_as_tolerance_grows((gold, _) in spans(), shift in prop::collection::vec(-4i64..=4, 20), n in 0usize..8) {
        let gold_s: Vec<SessionSpan> = gold.iter().map(SessionSpan::from_range).collect();
        let pred: Vec<SessionSpan> = gold_s
            .iter()
            .zip(&shift)
            .map(|(g, &d)| {
                let start = (g.start as i64 + d).max(0) as usize;
                SessionSpan::new(start, g.end.max(start))
            })
            .collect();
        let f = |n| span_match_at_n(&pred, &gold_s, n).f1;
        prop_assert!(f(n) <= f(n + 1));
        prop_assert_eq!(f(4), 1.0);
    }

    #[test]
    fn stream_codec_round_trips(
        base in 0u64..1_000_000,
        tokens in prop::collection::vec(prop::collection::vec(0u32..(1 << 29), TOKENS_PER_STEP), 1..40),
        face_at in prop::collection::vec((0usize..40, 0u32..50, 0u32..9), 0..6),
    ) {
        let steps: Vec<TokenStep> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| TokenStep::from_slots(base + i as u64, t.as_slice().try_into().unwrap()))
            .collect();
        let faces: Vec<FaceMark> = face_at
            .into_iter()
            .filter(|f| f.0 < steps.len())
            .map(|(at, id, sample)| FaceMark { step: base + at as u64, identity: egomem::ids::IdentityId(id), sample })
            .collect();
        let stream = TokenStream::new(base, StreamLayout::unreserved(), steps, faces).unwrap();
        let bytes = serialize_stream(&stream);
        prop_assert_eq!(parse_stream(&bytes).unwrap(), stream);
    }
}
