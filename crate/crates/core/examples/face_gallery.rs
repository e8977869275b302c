//! Nearest-key face matching with a distance threshold, including what
//! happens on exact ties and for a face nobody has enrolled.

use egomem::backends::{mock_encode, MockWorld};
use egomem::ids::{IdentityId, UserId};
use egomem::verification::{face_verify, Modality, DEFAULT_FACE_DELTA};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = MockWorld::new(8);
    let face =
        |id: u32, sample: u64| mock_encode(&world.identity(IdentityId(id), Modality::Face), sample, Modality::Face);
    let mut gallery: Vec<(UserId, _)> = (1..=5).map(|id| (UserId::new(format!("u{id}")), face(id, 0))).collect();

    for (who, sample) in [(3, 7), (5, 2), (42, 1)] {
        let d = face_verify(&face(who, sample), &gallery, DEFAULT_FACE_DELTA)?;
        println!("person {who} -> {:?} (nearest distance {:.3}, delta {})", d.outcome, d.raw_score, d.threshold_used);
    }

    // the same key under two ids: the smaller id wins, whatever the order
    gallery.push((UserId::new("u0-twin"), face(2, 0)));
    let probe = face(2, 0);
    let forward = face_verify(&probe, &gallery, DEFAULT_FACE_DELTA)?;
    gallery.reverse();
    let backward = face_verify(&probe, &gallery, DEFAULT_FACE_DELTA)?;
    assert_eq!(forward, backward);
    println!("tie resolves to {:?}", forward.matched_user());

    for delta in [0.0, 0.05, 0.3, 1.0] {
        let d = face_verify(&face(1, 9), &gallery, delta)?;
        println!("delta {delta:<4} -> {}", if d.matched_user().is_some() { "match" } else { "new user" });
    }
    Ok(())
}
