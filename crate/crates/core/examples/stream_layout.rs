//! Builds a two-dialog training stream and prints where everything landed,
//! plus the supervision mask counts for each MemChunk level.

use egomem::ids::IdentityId;
use egomem::retrieval::QueryGroups;
use egomem::stream::{
    build_stream, make_supervision_masks, parse_stream, serialize_stream, step_to_seconds, DialogScript, MaskKind,
    StreamBuildConfig, Turn, DIALOG_START,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let alice = IdentityId(1);
    let bob = IdentityId(2);
    let dialogs = vec![
        DialogScript::new(
            1,
            vec![
                Turn::new(alice, "Hi, my name is Alice. Is my brother around?", "Not yet, Alice.")
                    .with_query(QueryGroups::new(["brother"], [] as [&str; 0])?),
                Turn::new(alice, "Does my brother like chess?", "He does, he plays every Sunday.")
                    .with_query(QueryGroups::new(["brother"], ["chess"])?),
            ],
        ),
        DialogScript::new(
            2,
            vec![Turn::new(bob, "Morning, it is Bob. Any news from my sister?", "She called yesterday, Bob.")
                .with_query(QueryGroups::new(["sister"], ["news"])?)],
        ),
    ];
    let built = build_stream(&dialogs, &StreamBuildConfig::default(), 42)?;
    let stream = &built.stream;
    println!(
        "{} steps ({:.1} s), dialog region starts at {}",
        stream.len(),
        step_to_seconds(stream.len() as u64),
        DIALOG_START
    );
    println!("level-1 region {:?}, level-2 region {:?}", stream.layout().level1, stream.layout().level2);
    for d in &built.dialogs {
        println!("dialog {} by {} spans {:?}", d.dialog_id, d.speaker, d.span);
        for t in &d.turns {
            println!(
                "  turn {}: listen {:?} query {:?} text {:?} speak {:?}{}",
                t.utterance_key,
                t.listen,
                t.query_text,
                t.response_text,
                t.speak,
                if t.interrupting { " (barge-in)" } else { "" }
            );
        }
    }
    println!("{} face marks", stream.faces().len());

    // one Level-1 sample per dialog, two Level-2 samples per queried turn
    for kind in [MaskKind::Level1, MaskKind::Level2Query, MaskKind::Level2Response] {
        let masks = make_supervision_masks(stream, &built.dialogs, kind)?;
        let active: usize = masks.iter().map(|m| m.values.iter().filter(|&&v| v != 0).count()).sum();
        println!("{kind}: {} masks, {active} supervised steps", masks.len());
    }
    let bytes = serialize_stream(stream);
    assert_eq!(&parse_stream(&bytes)?, stream);
    println!("binary form: {} bytes, round-trips", bytes.len());
    Ok(())
}
