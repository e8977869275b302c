//! Finds dialog sessions in a stream with the rule tagger and scores them
//! against the built layout, then shows how boundary tolerance changes F1.

use egomem::ids::IdentityId;
use egomem::stream::{build_stream, DialogScript, StreamBuildConfig, Turn};
use egomem::trigger::{extract_sessions, jaccard_score, span_match_at_n, tag_stream, RuleTagger, SessionSpan};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dialogs: Vec<DialogScript> = (1..=4)
        .map(|i| {
            DialogScript::new(
                i,
                vec![
                    Turn::new(IdentityId(i), format!("Hello, this is person {i}."), "Hello there."),
                    Turn::new(IdentityId(i), "How was the weekend?", "Quiet, thanks for asking."),
                ],
            )
        })
        .collect();
    let built = build_stream(&dialogs, &StreamBuildConfig::default(), 5)?;
    let gold: Vec<SessionSpan> = built.gold_spans().iter().map(SessionSpan::from_range).collect();

    let tags = tag_stream(&built.stream, &RuleTagger::default())?;
    let (predicted, repairs) = extract_sessions(&tags);
    println!("gold      {:?}", gold.iter().map(|s| (s.start, s.end)).collect::<Vec<_>>());
    println!(
        "predicted {:?} ({} repairs)",
        predicted.iter().map(|s| (s.start, s.end)).collect::<Vec<_>>(),
        repairs.len()
    );
    println!("Jaccard {:.4}", jaccard_score(&predicted, &gold));

    // every boundary nudged by 3 steps
    let nudged: Vec<SessionSpan> = gold.iter().map(|s| SessionSpan::new(s.start + 3, s.end - 3)).collect();
    for n in [0, 2, 3, 5, 10] {
        let m = span_match_at_n(&nudged, &gold, n);
        println!("nudged ±3, tolerance {n:>2}: F1 {:.2}", m.f1);
    }
    Ok(())
}
