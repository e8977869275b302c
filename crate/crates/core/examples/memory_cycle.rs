//! One offline management cycle over a day of introductions: sessions are
//! found, speakers identified, memories extracted and the store updated.

use std::sync::Arc;

use egomem::backends::Backends;
use egomem::harness::{build_day, walkthrough_scenario};
use egomem::pipeline::{run_management_cycle, SessionOutcome};
use egomem::runtime::AgentConfig;
use egomem::store::{MemoryStore, SharedStore};
use egomem::stream::StreamBuildConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = walkthrough_scenario(2);
    let world = scenario.world();
    let backends = Backends::mock(world.clone());
    let cohorts = Arc::new(world.voice_cohorts(400, 200)?);
    let agent = AgentConfig { session_date: scenario.dates[0].clone(), ..AgentConfig::default() };
    let config = agent.pipeline_config(Some(cohorts));
    let day = build_day(&scenario.intro_dialogs, &StreamBuildConfig::default(), 2, 0)?;
    let store = SharedStore::new(MemoryStore::new());

    for chunk in &day.chunks {
        let report = run_management_cycle(chunk, &store, &backends, &config)?;
        for s in &report.sessions {
            let what = match &s.outcome {
                SessionOutcome::Created { user, .. } => format!("created {user}"),
                SessionOutcome::Updated { user, version, appended, .. } => {
                    format!("updated {user} to v{version} (+{appended})")
                }
                other => format!("{other:?}"),
            };
            println!("steps {}..={}: {what}", s.start_step, s.end_step);
            println!("    {:?}", s.transcript.lines().next().unwrap_or_default());
        }
    }

    let snapshot = store.snapshot();
    for p in snapshot.users() {
        println!("\n{} ({}, v{})", p.name, p.user_id, p.version);
        for f in &p.facts {
            println!("  fact {}: {}", f.at, f.text);
        }
        for (k, v) in p.persona.iter() {
            println!("  persona {k} = {v}");
        }
    }
    for e in snapshot.edges() {
        println!("edge {} -[{}]-> {}", e.from, e.relation, e.to);
    }
    Ok(())
}
