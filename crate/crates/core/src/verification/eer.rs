use serde::{Deserialize, Serialize};

use super::VerificationError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

/// Equal error rate of a score list where higher means "same identity".
///
/// A trial is accepted when `score >= threshold`. Every distinct score is a
/// candidate threshold, plus a reject-all point above the maximum. At each
/// point FAR is the accepted share of negatives and FRR the rejected share of
/// positives. If some point has FAR == FRR it is returned directly;
/// otherwise the first adjacent pair where `FAR - FRR` changes sign is
/// interpolated linearly, both for the rate and for the threshold.
pub fn compute_eer(scores: &[f64], labels: &[bool]) -> Result<Eer, VerificationError> {
    if scores.len() != labels.len() {
        return Err(VerificationError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(VerificationError::SingleClass);
    }

    // Ascending by score; walk thresholds upward.
    let mut trials: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    trials.sort_by(|a, b| a.0.total_cmp(&b.0));

    // (threshold, far, frr)
    let mut points: Vec<(f64, f64, f64)> = Vec::new();
    let mut rejected_pos = 0usize;
    let mut rejected_neg = 0usize;
    let mut i = 0;
    while i < trials.len() {
        let t = trials[i].0;
        points.push((t, (n_neg - rejected_neg) as f64 / n_neg as f64, rejected_pos as f64 / n_pos as f64));
        while i < trials.len() && trials[i].0 == t {
            if trials[i].1 {
                rejected_pos += 1;
            } else {
                rejected_neg += 1;
            }
            i += 1;
        }
    }
    let top = trials.last().expect("non-empty").0;
    points.push((top, 0.0, 1.0));

    for &(t, far, frr) in &points {
        if far == frr {
            return Ok(Eer { eer: far, threshold: t });
        }
    }
    for pair in points.windows(2) {
        let (t0, far0, frr0) = pair[0];
        let (t1, far1, frr1) = pair[1];
        let d0 = far0 - frr0;
        let d1 = far1 - frr1;
        if d0 > 0.0 && d1 < 0.0 {
            let alpha = d0 / (d0 - d1);
            return Ok(Eer { eer: far0 + alpha * (far1 - far0), threshold: t0 + alpha * (t1 - t0) });
        }
    }
    unreachable!("FAR - FRR goes from 1 to -1 across the sweep")
}

/// Fraction of queries whose true key is ranked within `k` (ranks start at 1).
pub fn pass_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// 1-based rank of `scores[target]` where higher is better; ties rank pessimistically.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let s = scores[target];
    1 + scores.iter().enumerate().filter(|&(i, &x)| i != target && x >= s).count()
}
