//! Face and speaker verification over embedding keys.
//!
//! Face: nearest stored key by cosine distance, accepted when the distance is
//! below `delta` (0.3). Speaker: cosine similarity normalized with adaptive
//! s-norm against imposter cohorts, accepted when above `theta` (6.0).

mod eer;
mod embedding;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eer::{compute_eer, pass_at_k, rank_of, Eer};
pub use embedding::{
    cosine_distance, cosine_similarity, read_embeddings, write_embeddings, Embedding, Modality, FACE_DIM, VOICE_DIM,
};

use crate::ids::UserId;

pub const DEFAULT_FACE_DELTA: f64 = 0.3;
pub const DEFAULT_SPEAKER_THETA: f64 = 6.0;
/// Threshold at the equal-error operating point of the reference speaker benchmark.
pub const EER_SPEAKER_THETA: f64 = 4.63;
pub const DEFAULT_COHORT_TOP_N: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerificationError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("embedding holds a non-finite value")]
    NonFinite,
    #[error("expected a {expected} embedding, found {found}")]
    ModalityMismatch { expected: Modality, found: Modality },
    #[error("{side} cohort has zero variance over its top-{top_n} scores")]
    DegenerateCohort { side: &'static str, top_n: usize },
    #[error("cohort has {have} entries but top_n is {need}")]
    CohortTooSmall { have: usize, need: usize },
    #[error("EER needs both positive and negative trials")]
    SingleClass,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("embedding file: {0}")]
    EmbeddingFile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Matched { user: UserId, score: f64 },
    NewUser,
    NoSignal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationDecision {
    pub outcome: Outcome,
    /// Best candidate's score: distance for face, normalized similarity for
    /// voice. Infinite when there were no candidates.
    pub raw_score: f64,
    pub threshold_used: f64,
}

impl VerificationDecision {
    pub fn no_signal(threshold: f64) -> Self {
        Self { outcome: Outcome::NoSignal, raw_score: f64::NAN, threshold_used: threshold }
    }

    pub fn matched_user(&self) -> Option<&UserId> {
        match &self.outcome {
            Outcome::Matched { user, .. } => Some(user),
            _ => None,
        }
    }
}

fn expect_modality(e: &Embedding, m: Modality) -> Result<(), VerificationError> {
    if e.modality() == m {
        Ok(())
    } else {
        Err(VerificationError::ModalityMismatch { expected: m, found: e.modality() })
    }
}

/// Nearest face key by cosine distance; matched iff that distance is `< delta`.
/// Equal distances resolve to the smallest user id.
pub fn face_verify(
    query: &Embedding,
    users: &[(UserId, Embedding)],
    delta: f64,
) -> Result<VerificationDecision, VerificationError> {
    expect_modality(query, Modality::Face)?;
    let mut best: Option<(f64, &UserId)> = None;
    for (id, key) in users {
        expect_modality(key, Modality::Face)?;
        let d = cosine_distance(query, key)?;
        let better = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && id < bid),
        };
        if better {
            best = Some((d, id));
        }
    }
    Ok(match best {
        Some((d, id)) if d < delta => VerificationDecision {
            outcome: Outcome::Matched { user: id.clone(), score: d },
            raw_score: d,
            threshold_used: delta,
        },
        Some((d, _)) => VerificationDecision { outcome: Outcome::NewUser, raw_score: d, threshold_used: delta },
        None => VerificationDecision { outcome: Outcome::NewUser, raw_score: f64::INFINITY, threshold_used: delta },
    })
}

/// Mean and population standard deviation of the `top_n` largest scores.
pub fn top_n_stats(scores: &[f64], top_n: usize) -> Result<(f64, f64), VerificationError> {
    if top_n == 0 || scores.len() < top_n {
        return Err(VerificationError::CohortTooSmall { have: scores.len(), need: top_n.max(1) });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = &sorted[..top_n];
    let mean = top.iter().sum::<f64>() / top_n as f64;
    let var = top.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / top_n as f64;
    Ok((mean, var.sqrt()))
}

fn normalize(raw: f64, stats: (f64, f64), side: &'static str, top_n: usize) -> Result<f64, VerificationError> {
    let (mean, std) = stats;
    if std <= 0.0 {
        return Err(VerificationError::DegenerateCohort { side, top_n });
    }
    Ok((raw - mean) / std)
}

/// Adaptive s-norm: `((raw - mu_q) / sigma_q + (raw - mu_k) / sigma_k) / 2`,
/// with statistics over the `top_n` highest cohort scores on each side.
pub fn asnorm_score(
    raw: f64,
    query_cohort_scores: &[f64],
    key_cohort_scores: &[f64],
    top_n: usize,
) -> Result<f64, VerificationError> {
    let q = normalize(raw, top_n_stats(query_cohort_scores, top_n)?, "query", top_n)?;
    let k = normalize(raw, top_n_stats(key_cohort_scores, top_n)?, "key", top_n)?;
    Ok(0.5 * (q + k))
}

/// Imposter embeddings used for score normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSet {
    embeddings: Vec<Embedding>,
    top_n: usize,
}

impl CohortSet {
    pub fn new(embeddings: Vec<Embedding>, top_n: usize) -> Result<Self, VerificationError> {
        if top_n == 0 || embeddings.len() < top_n {
            return Err(VerificationError::CohortTooSmall { have: embeddings.len(), need: top_n.max(1) });
        }
        let m = embeddings[0].modality();
        for e in &embeddings {
            expect_modality(e, m)?;
        }
        Ok(Self { embeddings, top_n })
    }

    pub fn top_n(&self) -> usize {
        self.top_n
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn modality(&self) -> Modality {
        self.embeddings[0].modality()
    }

    pub fn embeddings(&self) -> &[Embedding] {
        &self.embeddings
    }

    /// Cosine similarity of `probe` against every cohort entry.
    pub fn scores(&self, probe: &Embedding) -> Result<Vec<f64>, VerificationError> {
        self.embeddings.iter().map(|c| cosine_similarity(probe, c)).collect()
    }

    pub fn load(bytes: &[u8], top_n: usize) -> Result<Self, VerificationError> {
        let (_, embeddings) = read_embeddings(bytes)?;
        Self::new(embeddings, top_n)
    }
}

/// Cohorts for the two sides of a speaker trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortPair {
    pub query: CohortSet,
    pub key: CohortSet,
}

/// Raw and s-normalized similarity of `query` to one key.
pub fn speaker_score(
    query: &Embedding,
    key: &Embedding,
    cohorts: &CohortPair,
) -> Result<(f64, f64), VerificationError> {
    let raw = cosine_similarity(query, key)?;
    let q = cohorts.query.scores(query)?;
    let k = cohorts.key.scores(key)?;
    let top_n = cohorts.query.top_n().min(cohorts.key.top_n());
    Ok((raw, asnorm_score(raw, &q, &k, top_n)?))
}

/// Best s-normalized match among `users`; matched iff the score is `> theta`.
pub fn speaker_verify(
    query: &Embedding,
    users: &[(UserId, Embedding)],
    cohorts: &CohortPair,
    theta: f64,
) -> Result<VerificationDecision, VerificationError> {
    expect_modality(query, Modality::Voice)?;
    let query_scores = cohorts.query.scores(query)?;
    let query_stats = top_n_stats(&query_scores, cohorts.query.top_n())?;
    let mut best: Option<(f64, &UserId)> = None;
    for (id, key) in users {
        expect_modality(key, Modality::Voice)?;
        let raw = cosine_similarity(query, key)?;
        let key_stats = top_n_stats(&cohorts.key.scores(key)?, cohorts.key.top_n())?;
        let s = 0.5
            * (normalize(raw, query_stats, "query", cohorts.query.top_n())?
                + normalize(raw, key_stats, "key", cohorts.key.top_n())?);
        let better = match best {
            None => true,
            Some((bs, bid)) => s > bs || (s == bs && id < bid),
        };
        if better {
            best = Some((s, id));
        }
    }
    Ok(match best {
        Some((s, id)) if s > theta => VerificationDecision {
            outcome: Outcome::Matched { user: id.clone(), score: s },
            raw_score: s,
            threshold_used: theta,
        },
        Some((s, _)) => VerificationDecision { outcome: Outcome::NewUser, raw_score: s, threshold_used: theta },
        None => VerificationDecision { outcome: Outcome::NewUser, raw_score: f64::NEG_INFINITY, threshold_used: theta },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(i: usize, m: Modality) -> Embedding {
        let mut v = vec![0.0f32; m.dim()];
        v[i] = 1.0;
        Embedding::new(v, m).unwrap()
    }

    fn mixed(i: usize, j: usize, a: f32, m: Modality) -> Embedding {
        let mut v = vec![0.0f32; m.dim()];
        v[i] = 1.0;
        v[j] += a;
        Embedding::new(v, m).unwrap()
    }

    #[test]
    fn face_exact_match() {
        let users = vec![(UserId::from("a"), basis(0, Modality::Face)), (UserId::from("b"), basis(1, Modality::Face))];
        let d = face_verify(&basis(1, Modality::Face), &users, 0.3).unwrap();
        assert_eq!(d.matched_user(), Some(&UserId::from("b")));
        assert_eq!(d.raw_score, 0.0);
    }

    #[test]
    fn face_orthogonal_is_new() {
        let users = vec![(UserId::from("a"), basis(0, Modality::Face))];
        let d = face_verify(&basis(5, Modality::Face), &users, 0.3).unwrap();
        assert_eq!(d.outcome, Outcome::NewUser);
        assert!((d.raw_score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn face_tie_breaks_to_smallest_id() {
        let key = mixed(0, 1, 0.2, Modality::Face);
        let users = vec![(UserId::from("zed"), key.clone()), (UserId::from("amy"), key)];
        let d = face_verify(&basis(0, Modality::Face), &users, 0.3).unwrap();
        assert_eq!(d.matched_user(), Some(&UserId::from("amy")));
    }

    #[test]
    fn face_empty_gallery_and_modality() {
        assert_eq!(face_verify(&basis(0, Modality::Face), &[], 0.3).unwrap().outcome, Outcome::NewUser);
        assert!(matches!(
            face_verify(&basis(0, Modality::Voice), &[], 0.3),
            Err(VerificationError::ModalityMismatch { .. })
        ));
    }

    #[test]
    fn asnorm_arithmetic() {
        // query cohort mean 3 std 1; key cohort mean 1 std 2
        let q = [2.0, 4.0];
        let k = [-1.0, 3.0];
        assert!((asnorm_score(5.0, &q, &k, 2).unwrap() - 2.0).abs() < 1e-12);
        assert!(asnorm_score(3.0, &q, &[2.0, 4.0], 2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn asnorm_degenerate_and_small() {
        assert!(matches!(
            asnorm_score(1.0, &[0.5, 0.5], &[0.1, 0.9], 2),
            Err(VerificationError::DegenerateCohort { side: "query", .. })
        ));
        assert!(matches!(asnorm_score(1.0, &[0.5], &[0.1, 0.9], 2), Err(VerificationError::CohortTooSmall { .. })));
    }

    fn cohort(offset: usize, n: usize) -> CohortSet {
        let es = (0..n).map(|i| mixed(offset + i, 0, 0.1 * (i as f32 + 1.0), Modality::Voice)).collect();
        CohortSet::new(es, n).unwrap()
    }

    #[test]
    fn speaker_thresholds() {
        let cohorts = CohortPair { query: cohort(100, 4), key: cohort(150, 4) };
        let key = basis(0, Modality::Voice);
        let users = vec![(UserId::from("a"), key.clone())];
        let (_, s) = speaker_score(&key, &key, &cohorts).unwrap();
        let hit = speaker_verify(&key, &users, &cohorts, s - 0.1).unwrap();
        assert_eq!(hit.matched_user(), Some(&UserId::from("a")));
        assert!((hit.raw_score - s).abs() < 1e-12);
        let miss = speaker_verify(&key, &users, &cohorts, s + 0.1).unwrap();
        assert_eq!(miss.outcome, Outcome::NewUser);
        assert_eq!(speaker_verify(&key, &[], &cohorts, 6.0).unwrap().outcome, Outcome::NewUser);
    }

    #[test]
    fn cohort_size_checked() {
        assert!(CohortSet::new(vec![basis(0, Modality::Voice)], 2).is_err());
    }
}
