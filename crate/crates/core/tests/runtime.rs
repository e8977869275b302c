mod common;

use std::sync::Arc;

use common::{enrolled_store, face_source, sabotage};
use egomem::backends::{BackendConfig, BackendKind, Backends, FaultMode, FaultPlan, MockWorld};
use egomem::harness::{build_day, walkthrough_scenario};
use egomem::ids::UserId;
use egomem::pipeline::{run_management_cycle, SessionOutcome};
use egomem::runtime::{
    replay, run_agent, Agent, AgentConfig, DialogStub, MemChunkState, RefreshReason, RefreshSignal, RunEvent,
    RuntimeError, ScriptedDialog,
};
use egomem::store::{MemoryStore, SharedStore};
use egomem::stream::{StreamBuildConfig, TokenStep};

fn agent(world: &MockWorld) -> Agent {
    Agent::new(AgentConfig::default(), Backends::mock(world.clone())).unwrap()
}

fn level1_owners(events: &[RunEvent]) -> Vec<Option<UserId>> {
    events
        .iter()
        .filter_map(|e| match e {
            RunEvent::Refresh { level: 1, owner, .. } => Some(owner.clone()),
            _ => None,
        })
        .collect()
}

#[test]
fn a_then_b_then_a_refreshes_three_times() {
    let world = MockWorld::new(11);
    let (store, users) = enrolled_store(&world, &[1, 2]);
    let source = face_source(0, &[(1, 100), (2, 100), (1, 100)]);
    let run = run_agent(&[source], store, &agent(&world), &mut ScriptedDialog::default()).unwrap();
    assert_eq!(run.stats.level1_refreshes, 3);
    assert_eq!(run.stats.switches, 3);
    assert_eq!(
        level1_owners(&run.events),
        vec![Some(users[0].clone()), Some(users[1].clone()), Some(users[0].clone())]
    );
    let says: Vec<_> = run.events.iter().filter(|e| matches!(e, RunEvent::Say { .. })).collect();
    assert_eq!(says.len(), 3);
    assert!(replay(&run.events).is_consistent());
}

#[test]
fn five_silent_ticks_clear_the_chunk() {
    let world = MockWorld::new(11);
    let (store, _) = enrolled_store(&world, &[1]);
    let source = face_source(0, &[(1, 100), (0, 200)]);
    let run = run_agent(&[source], store, &agent(&world), &mut ScriptedDialog::default()).unwrap();
    let reasons: Vec<RefreshReason> = run
        .events
        .iter()
        .filter_map(|e| match e {
            RunEvent::Refresh { level: 1, reason, .. } => Some(*reason),
            _ => None,
        })
        .collect();
    assert_eq!(reasons, vec![RefreshReason::Switch, RefreshReason::Loss]);
    assert!(run.level1.content.is_empty());
    assert_eq!(run.level1.owner, None);
    // the loss lands on the fifth consecutive empty tick: step 100 + 5 * 25 - 1
    let loss_step = run.events.iter().find_map(|e| match e {
        RunEvent::Refresh { reason: RefreshReason::Loss, step, .. } => Some(*step),
        _ => None,
    });
    assert_eq!(loss_step, Some(224));
}

#[test]
fn a_stranger_clears_the_chunk() {
    let world = MockWorld::new(11);
    let (store, users) = enrolled_store(&world, &[1]);
    let source = face_source(0, &[(1, 50), (9, 50)]);
    let run = run_agent(&[source], store, &agent(&world), &mut ScriptedDialog::default()).unwrap();
    assert_eq!(level1_owners(&run.events), vec![Some(users[0].clone()), None]);
}

#[derive(Default)]
struct CountingStub {
    steps: u64,
    refreshes: u64,
}

impl DialogStub for CountingStub {
    fn on_refresh(&mut self, _: &RefreshSignal, _: &MemChunkState) -> Option<String> {
        self.refreshes += 1;
        None
    }

    fn on_step(&mut self, _: &TokenStep) -> Option<String> {
        self.steps += 1;
        None
    }
}

#[test]
fn faulty_encoders_never_stall_the_dialog() {
    let world = MockWorld::new(5);
    let (store, _) = enrolled_store(&world, &[1, 2]);
    // no retries, so one in five polls sees the failure
    let mut config = BackendConfig::all_mock(world.seed);
    config.face_encoder.retries = 0;
    let mut backends = Backends::from_config(&config, Arc::new(world.clone())).unwrap();
    let faults = backends.inject_faults(BackendKind::FaceEncoder, FaultPlan::new(77, 0.2, FaultMode::Timeout));
    let agent = Agent::new(AgentConfig::default(), backends).unwrap();

    // five contiguous chunks of 5000 steps, alternating people every 500
    let segments: Vec<(u32, usize)> = (0..10).map(|i| (1 + i % 2, 500)).collect();
    let source: Vec<_> = (0..5).map(|c| face_source(c * 5000, &segments)).collect();
    assert_eq!(source.iter().map(|s| s.len()).sum::<usize>(), 25_000);
    let mut stub = CountingStub::default();
    let run = run_agent(&source, store, &agent, &mut stub).unwrap();

    assert_eq!(run.stats.ticks, 1000);
    assert_eq!(stub.steps, 25_000, "the dialog process consumed every step");
    assert_eq!(run.stats.panics, 0);
    let failed = run
        .events
        .iter()
        .filter(|e| matches!(e, RunEvent::Tick(r) if r.is_no_signal() && r.outcome != egomem::runtime::PollOutcome::NoSignal { reason: None }))
        .count() as u64;
    assert_eq!(failed, faults.injected(), "every injected fault became one degraded tick");
    assert!((150..=250).contains(&failed), "{failed} failures out of 1000");
    assert_eq!(stub.refreshes, run.stats.level1_refreshes);
    assert!(replay(&run.events).is_consistent());
}

struct PanickyStub {
    steps: u64,
}

impl DialogStub for PanickyStub {
    fn on_refresh(&mut self, _: &RefreshSignal, _: &MemChunkState) -> Option<String> {
        panic!("refresh handler bug")
    }

    fn on_step(&mut self, step: &TokenStep) -> Option<String> {
        self.steps += 1;
        if step.step_index.is_multiple_of(100) {
            panic!("step handler bug at {}", step.step_index);
        }
        None
    }
}

#[test]
fn dialog_panics_are_contained_per_call() {
    let world = MockWorld::new(11);
    let (store, _) = enrolled_store(&world, &[1, 2]);
    let source = face_source(0, &[(1, 100), (2, 100)]);
    let mut stub = PanickyStub { steps: 0 };
    let run = run_agent(&[source], store, &agent(&world), &mut stub).unwrap();
    assert_eq!(stub.steps, 200);
    // two refresh panics plus steps 0 and 100
    assert_eq!(run.stats.panics, 4);
    assert_eq!(run.stats.level1_refreshes, 2);
}

#[test]
fn empty_source_finishes_cleanly() {
    let world = MockWorld::new(1);
    let run =
        run_agent(&[], SharedStore::new(MemoryStore::new()), &agent(&world), &mut ScriptedDialog::default()).unwrap();
    assert_eq!(run.stats.steps, 0);
    assert!(matches!(run.events.as_slice(), [RunEvent::End { .. }]));
}

#[test]
fn gaps_between_chunks_are_rejected() {
    let world = MockWorld::new(1);
    let a = face_source(0, &[(1, 50)]);
    let b = face_source(60, &[(1, 50)]);
    let err = run_agent(&[a, b], SharedStore::new(MemoryStore::new()), &agent(&world), &mut ScriptedDialog::default())
        .unwrap_err();
    assert!(matches!(err, RuntimeError::Source { index: 1, expected: 50, found: 60 }));
}

fn day_one_with_broken_extractor(panic: bool) -> (egomem::pipeline::CycleReport, MemoryStore) {
    let scenario = walkthrough_scenario(3);
    let world = scenario.world();
    let mut backends = Backends::mock(world.clone());
    backends.extractor = backends.extractor.with_handler(sabotage(backends.extractor.handler().clone(), "Bob", panic));
    let day = build_day(&scenario.intro_dialogs, &StreamBuildConfig::default(), 3, 0).unwrap();
    assert_eq!(day.chunks.len(), 1);
    let cohorts = Arc::new(world.voice_cohorts(400, 200).unwrap());
    let config = AgentConfig::default().pipeline_config(Some(cohorts));
    let store = SharedStore::new(MemoryStore::new());
    let report = run_management_cycle(&day.chunks[0], &store, &backends, &config).unwrap();
    (report, (*store.snapshot()).clone())
}

fn check_isolation(report: &egomem::pipeline::CycleReport, store: &MemoryStore) {
    assert_eq!(report.sessions.len(), 4);
    assert_eq!(report.failed(), 1);
    assert_eq!(report.created(), 3);
    // Bob's session is the third; the ones after it still ran
    assert!(matches!(report.sessions[2].outcome, SessionOutcome::Failed { .. }));
    let mut names: Vec<&str> = store.users().map(|p| p.name.as_str()).collect();
    names.sort_unstable();
    assert_eq!(names, vec!["Ann", "Emily", "John"]);
    let emily = store.find_by_name("Emily").unwrap();
    let relations: Vec<String> = store.connected_users(emily).unwrap().iter().map(|n| n.relation.clone()).collect();
    assert_eq!(relations.len(), 2, "{relations:?}");
    store.check_integrity().unwrap();
}

#[test]
fn a_failing_extractor_only_loses_its_session() {
    let (report, store) = day_one_with_broken_extractor(false);
    check_isolation(&report, &store);
    let SessionOutcome::Failed { error } = &report.sessions[2].outcome else { unreachable!() };
    assert!(error.contains("extractor refused"), "{error}");
}

#[test]
fn a_panicking_extractor_only_loses_its_session() {
    let (report, store) = day_one_with_broken_extractor(true);
    check_isolation(&report, &store);
}
