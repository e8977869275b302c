use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::scenario::{build_day, DaySource, Scenario};
use super::HarnessError;
use crate::backends::Backends;
use crate::ids::{IdentityId, UserId};
use crate::runtime::{run_agent, Agent, AgentConfig, RunEvent, RunStats, ScriptedDialog};
use crate::store::{MemoryStore, SharedStore};
use crate::stream::{FaceMark, StreamBuildConfig, TokenStream};

/// Imposters per voice cohort and the top-N used for normalization.
const COHORT_SIZE: u32 = 400;
const COHORT_TOP_N: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayReport {
    pub date: String,
    pub first_step: u64,
    pub steps: u64,
    pub dialogs: usize,
    pub events: Vec<RunEvent>,
    pub stats: RunStats,
    /// Ticks with a face in the window.
    pub face_ticks: u64,
    /// Face ticks that named the person on camera.
    pub correct_ticks: u64,
    /// Speaker changes between consecutive dialogs among people already known.
    pub expected_switches: u64,
    /// Level-2 reads whose content was not empty.
    pub retrieval_hits: u64,
}

impl DayReport {
    pub fn identity_accuracy(&self) -> f64 {
        if self.face_ticks == 0 {
            1.0
        } else {
            self.correct_ticks as f64 / self.face_ticks as f64
        }
    }

    pub fn level1_reads(&self) -> impl Iterator<Item = &str> {
        self.events.iter().filter_map(|e| match e {
            RunEvent::Read { level: 1, content, .. } => Some(content.as_str()),
            _ => None,
        })
    }

    pub fn level2_reads(&self) -> impl Iterator<Item = &str> {
        self.events.iter().filter_map(|e| match e {
            RunEvent::Read { level: 2, content, .. } => Some(content.as_str()),
            _ => None,
        })
    }
}

/// Outcome of the three simulated days.
#[derive(Debug, Clone)]
pub struct LifelongReport {
    pub days: Vec<DayReport>,
    pub store: MemoryStore,
    /// Askers whose day-two fact reached their Level-1 chunk on day three.
    pub updated_context: usize,
    pub askers: usize,
}

impl LifelongReport {
    /// Identification accuracy on the days after introductions.
    pub fn reidentification_rate(&self) -> f64 {
        let (face, correct) =
            self.days.iter().skip(1).fold((0, 0), |(f, c), d| (f + d.face_ticks, c + d.correct_ticks));
        if face == 0 {
            1.0
        } else {
            correct as f64 / face as f64
        }
    }

    pub fn level1_refreshes(&self) -> u64 {
        self.days.iter().map(|d| d.stats.level1_refreshes).sum()
    }

    pub fn level2_refreshes(&self) -> u64 {
        self.days.iter().map(|d| d.stats.level2_refreshes).sum()
    }

    pub fn events(&self) -> impl Iterator<Item = &RunEvent> {
        self.days.iter().flat_map(|d| &d.events)
    }

    pub fn summary_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for d in &self.days {
            lines.push(format!(
                "{}: steps={} dialogs={} ticks={} face_ticks={} accuracy={:.4} l1_refreshes={} expected_switches={} queries={} l2_hits={} sessions created={} updated={} failed={}",
                d.date,
                d.steps,
                d.dialogs,
                d.stats.ticks,
                d.face_ticks,
                d.identity_accuracy(),
                d.stats.level1_refreshes,
                d.expected_switches,
                d.stats.queries,
                d.retrieval_hits,
                d.stats.sessions_created,
                d.stats.sessions_updated,
                d.stats.sessions_failed,
            ));
        }
        lines.push(format!("reidentification_rate={:.4}", self.reidentification_rate()));
        lines.push(format!("updated_context={}/{}", self.updated_context, self.askers));
        lines.push(format!("users={} edges={}", self.store.len(), self.store.edges().count()));
        lines
    }
}

fn identity_on_camera(faces: &[FaceMark], from: u64, to: u64) -> Option<IdentityId> {
    faces.iter().rev().find(|f| (from..to).contains(&f.step)).map(|f| f.identity)
}

/// Runs introductions, questions and greetings as three consecutive days
/// over one store, with mocks answering from the scenario's ground truth.
pub fn simulate_lifelong_run(scenario: &Scenario, config: &AgentConfig) -> Result<LifelongReport, HarnessError> {
    scenario.validate()?;
    let world = Arc::new(scenario.world());
    let backends = Backends::from_config(&config.backends, world.clone())?;
    let cohorts = Arc::new(world.voice_cohorts(COHORT_SIZE, COHORT_TOP_N)?);
    let store = SharedStore::new(MemoryStore::new());
    let stream_config = StreamBuildConfig::default();

    let plan = [&scenario.intro_dialogs, &scenario.question_dialogs, &scenario.greeting_dialogs];
    let mut days = Vec::new();
    let mut next_step = 0u64;
    for (i, dialogs) in plan.iter().enumerate() {
        let date = scenario.dates.get(i).cloned().unwrap_or_else(|| format!("day-{}", i + 1));
        let source = build_day(dialogs, &stream_config, scenario.spec.seed.wrapping_add(i as u64), next_step)?;
        let agent_config = AgentConfig { session_date: date.clone(), ..config.clone() };
        let agent = Agent::new(agent_config, backends.clone())?.with_cohorts(cohorts.clone());
        let known_before = store.snapshot();
        let mut stub = ScriptedDialog::default();
        let run = run_agent(&source.chunks, store.clone(), &agent, &mut stub)?;
        days.push(score_day(
            scenario,
            &source,
            run.events,
            run.stats,
            &known_before,
            &run.store.snapshot(),
            config,
            date,
        ));
        next_step += source.len() as u64;
    }

    let askers: Vec<&str> =
        scenario.question_dialogs.iter().filter_map(|d| d.speaker()).filter_map(|id| name_of(scenario, id)).collect();
    let updated_context = askers
        .iter()
        .filter(|name| {
            let marker = format!("name: {name}\n");
            days.last().is_some_and(|d| {
                d.level1_reads().any(|c| c.starts_with(&marker) && c.contains(&format!("{name} shows interest in")))
            })
        })
        .count();
    Ok(LifelongReport { days, store: (*store.snapshot()).clone(), updated_context, askers: askers.len() })
}

fn name_of(scenario: &Scenario, id: IdentityId) -> Option<&str> {
    scenario.person_by_identity(id).map(|p| scenario.people[p].name.as_str())
}

#[allow(clippy::too_many_arguments)]
fn score_day(
    scenario: &Scenario,
    source: &DaySource,
    events: Vec<RunEvent>,
    stats: RunStats,
    known_before: &MemoryStore,
    after: &MemoryStore,
    config: &AgentConfig,
    date: String,
) -> DayReport {
    let faces: Vec<FaceMark> = source.faces().copied().collect();
    let window = config.window_steps() as u64;
    let names: BTreeMap<&UserId, &str> = after.users().map(|p| (&p.user_id, p.name.as_str())).collect();
    let (mut face_ticks, mut correct_ticks) = (0, 0);
    for e in &events {
        let RunEvent::Tick(report) = e else { continue };
        let Some(on_camera) = identity_on_camera(&faces, (report.step + 1).saturating_sub(window), report.step + 1)
        else {
            continue;
        };
        face_ticks += 1;
        let expected = name_of(scenario, on_camera);
        let got = report.user().and_then(|u| names.get(u).copied());
        correct_ticks += u64::from(expected.is_some() && got == expected);
    }

    // The chunk owner changes when a known person follows anyone else, or
    // a stranger follows a known person.
    let mut expected_switches = 0;
    let mut owner: Option<IdentityId> = None;
    for d in &source.dialogs {
        let known = name_of(scenario, d.speaker).is_some_and(|n| known_before.find_by_name(n).is_some());
        let next = known.then_some(d.speaker);
        if next != owner {
            expected_switches += 1;
        }
        owner = next;
    }

    let retrieval_hits =
        events.iter().filter(|e| matches!(e, RunEvent::Read { level: 2, content, .. } if !content.is_empty())).count()
            as u64;
    DayReport {
        date,
        first_step: source.chunks.first().map_or(0, TokenStream::base_step),
        steps: source.len() as u64,
        dialogs: source.dialogs.len(),
        events,
        stats,
        face_ticks,
        correct_ticks,
        expected_switches,
        retrieval_hits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{synth_scenario, walkthrough_scenario, ScenarioSpec};

    #[test]
    fn walkthrough_end_to_end() {
        let s = walkthrough_scenario(7);
        let r = simulate_lifelong_run(&s, &AgentConfig::default()).unwrap();
        let refreshes: Vec<u64> = r.days.iter().map(|d| d.stats.level1_refreshes).collect();
        assert_eq!(refreshes, vec![0, 1, 1], "{:#?}", r.summary_lines());
        let l2: Vec<&str> = r.days[1].level2_reads().collect();
        assert!(l2.iter().any(|c| c.contains("John") && c.contains("tennis")), "{l2:?}");
        assert!(r.days[2].level1_reads().any(|c| c.contains("Emily shows interest in tennis")));
        assert_eq!(r.updated_context, 1);
        assert_eq!(r.reidentification_rate(), 1.0);
    }

    #[test]
    fn noise_free_trio_is_always_recognized() {
        let spec = ScenarioSpec {
            users: 3,
            min_neighbors: 2,
            max_neighbors: 2,
            tuples: 4,
            queries: 1,
            face_noise: 0.0,
            voice_noise: 0.0,
            seed: 5,
            ..ScenarioSpec::default()
        };
        let s = synth_scenario(&spec).unwrap();
        let r = simulate_lifelong_run(&s, &AgentConfig::default()).unwrap();
        assert_eq!(r.reidentification_rate(), 1.0, "{:#?}", r.summary_lines());
        assert_eq!(r.store.len(), 3);
    }
}
