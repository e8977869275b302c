//! Enrolls mock voices, then identifies probes with and without cohort
//! normalization and reports pass@1 and EER for both.

use egomem::backends::{mock_encode, MockWorld};
use egomem::ids::{IdentityId, UserId};
use egomem::verification::{
    compute_eer, pass_at_k, rank_of, speaker_score, speaker_verify, Modality, Outcome, DEFAULT_SPEAKER_THETA,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = MockWorld::new(3);
    let cohorts = world.voice_cohorts(400, 200)?;
    let speakers: Vec<IdentityId> = (1..=20).map(IdentityId).collect();
    let keys: Vec<(UserId, _)> = speakers
        .iter()
        .map(|&id| {
            (
                UserId::new(format!("u{:02}", id.0)),
                mock_encode(&world.identity(id, Modality::Voice), 0, Modality::Voice),
            )
        })
        .collect();

    let (mut raw_ranks, mut norm_ranks) = (Vec::new(), Vec::new());
    let (mut raw_scores, mut norm_scores, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    let mut accepted = 0;
    for (target, &id) in speakers.iter().enumerate() {
        for sample in 1..=5 {
            let probe = mock_encode(&world.identity(id, Modality::Voice), sample, Modality::Voice);
            let mut raw_row = Vec::new();
            let mut norm_row = Vec::new();
            for (k, (_, key)) in keys.iter().enumerate() {
                let (raw, norm) = speaker_score(&probe, key, &cohorts)?;
                raw_row.push(raw);
                norm_row.push(norm);
                labels.push(k == target);
            }
            raw_ranks.push(rank_of(&raw_row, target));
            norm_ranks.push(rank_of(&norm_row, target));
            raw_scores.extend(raw_row);
            norm_scores.extend(norm_row);
            let decision = speaker_verify(&probe, &keys, &cohorts, DEFAULT_SPEAKER_THETA)?;
            accepted +=
                usize::from(matches!(&decision.outcome, Outcome::Matched { user, .. } if *user == keys[target].0));
        }
    }
    println!("{} probes against {} enrolled voices", raw_ranks.len(), keys.len());
    println!("raw     pass@1 {:.3}  EER {:.4}", pass_at_k(&raw_ranks, 1), compute_eer(&raw_scores, &labels)?.eer);
    println!("s-norm  pass@1 {:.3}  EER {:.4}", pass_at_k(&norm_ranks, 1), compute_eer(&norm_scores, &labels)?.eer);
    println!("accepted at theta {DEFAULT_SPEAKER_THETA}: {accepted}/{}", raw_ranks.len());

    let stranger = mock_encode(&world.identity(IdentityId(999), Modality::Voice), 1, Modality::Voice);
    let decision = speaker_verify(&stranger, &keys, &cohorts, DEFAULT_SPEAKER_THETA)?;
    println!("unenrolled voice: {:?} (best score {:.2})", decision.outcome, decision.raw_score);
    Ok(())
}
