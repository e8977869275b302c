use serde::{Deserialize, Serialize};

use super::poll::{PollOutcome, PollReport};
use super::RuntimeError;
use crate::ids::UserId;
use crate::pipeline::{CycleReport, SessionOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshReason {
    Switch,
    NewUser,
    Loss,
    Query,
}

/// One line of the run transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    Tick(PollReport),
    Refresh {
        step: u64,
        level: u8,
        version: u64,
        owner: Option<UserId>,
        cost: usize,
        reason: RefreshReason,
    },
    /// What the dialog process saw after a refresh signal.
    Read {
        step: u64,
        level: u8,
        version: u64,
        content: String,
    },
    Say {
        step: u64,
        text: String,
    },
    Query {
        step: u64,
        relations: Vec<String>,
        keywords: Vec<String>,
        hits: usize,
    },
    QueryFailed {
        step: u64,
        reason: String,
    },
    Cycle {
        step: u64,
        report: CycleReport,
    },
    CycleFailed {
        step: u64,
        reason: String,
    },
    Panic {
        step: u64,
        process: String,
        message: String,
    },
    End {
        step: u64,
        stats: RunStats,
    },
}

impl RunEvent {
    pub fn step(&self) -> u64 {
        match self {
            RunEvent::Tick(r) => r.step,
            RunEvent::Refresh { step, .. }
            | RunEvent::Read { step, .. }
            | RunEvent::Say { step, .. }
            | RunEvent::Query { step, .. }
            | RunEvent::QueryFailed { step, .. }
            | RunEvent::Cycle { step, .. }
            | RunEvent::CycleFailed { step, .. }
            | RunEvent::Panic { step, .. }
            | RunEvent::End { step, .. } => *step,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: u64,
    pub ticks: u64,
    pub no_signal_ticks: u64,
    pub conflicts: u64,
    /// Level-1 owner changes caused by a tick (another user, or an unknown face).
    pub switches: u64,
    pub losses: u64,
    pub level1_refreshes: u64,
    pub level2_refreshes: u64,
    pub queries: u64,
    pub query_failures: u64,
    pub cycles: u64,
    pub sessions_created: u64,
    pub sessions_updated: u64,
    pub sessions_failed: u64,
    pub panics: u64,
}

impl RunStats {
    /// Folds one event into the counters. `steps` is not derivable from events.
    pub fn observe(&mut self, event: &RunEvent) {
        match event {
            RunEvent::Tick(r) => {
                self.ticks += 1;
                self.no_signal_ticks += u64::from(r.is_no_signal());
                self.conflicts += u64::from(r.conflict);
            }
            RunEvent::Refresh { level: 1, reason, .. } => {
                self.level1_refreshes += 1;
                match reason {
                    RefreshReason::Loss => self.losses += 1,
                    _ => self.switches += 1,
                }
            }
            RunEvent::Refresh { .. } => self.level2_refreshes += 1,
            RunEvent::Query { .. } => self.queries += 1,
            RunEvent::QueryFailed { .. } => self.query_failures += 1,
            RunEvent::Cycle { report, .. } => {
                self.cycles += 1;
                for s in &report.sessions {
                    match s.outcome {
                        SessionOutcome::Created { .. } => self.sessions_created += 1,
                        SessionOutcome::Updated { .. } => self.sessions_updated += 1,
                        SessionOutcome::Failed { .. } => self.sessions_failed += 1,
                        _ => {}
                    }
                }
            }
            RunEvent::CycleFailed { .. } => self.cycles += 1,
            RunEvent::Panic { .. } => self.panics += 1,
            RunEvent::Read { .. } | RunEvent::Say { .. } | RunEvent::End { .. } => {}
        }
    }
}

pub fn to_jsonl(events: &[RunEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("events serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str) -> Result<Vec<RunEvent>, RuntimeError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RuntimeError::EventLog { line: i + 1, reason: e.to_string() })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub stats: RunStats,
    pub violations: Vec<String>,
}

impl ReplaySummary {
    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Recounts a transcript and checks it against the runtime's invariants:
/// every Level-1 refresh follows a switch or loss, chunk versions grow by
/// one, steps never go backwards, and the closing counters agree.
pub fn replay(events: &[RunEvent]) -> ReplaySummary {
    let mut stats = RunStats::default();
    let mut violations = Vec::new();
    let mut last_step = 0;
    let mut versions = [0u64; 2];
    let mut owner: Option<UserId> = None;
    let mut expect_refresh: Option<(u64, Option<UserId>)> = None;
    let mut closing = None;

    for (i, event) in events.iter().enumerate() {
        if event.step() < last_step {
            violations.push(format!("event {i} at step {} precedes step {last_step}", event.step()));
        }
        last_step = event.step();
        if let Some((step, want)) = expect_refresh.take() {
            match event {
                RunEvent::Refresh { level: 1, owner: got, .. } if *got == want => {}
                _ => violations.push(format!("tick at step {step} changed the owner without a Level-1 refresh")),
            }
        }
        match event {
            RunEvent::Tick(r) => match &r.outcome {
                PollOutcome::Switched { user, from } => {
                    if *from != owner {
                        violations
                            .push(format!("tick at step {} switched from {from:?} but owner was {owner:?}", r.step));
                    }
                    expect_refresh = Some((r.step, Some(user.clone())));
                }
                PollOutcome::NewUser if owner.is_some() => expect_refresh = Some((r.step, None)),
                PollOutcome::SameUser { user } if owner.as_ref() != Some(user) => {
                    violations.push(format!("tick at step {} kept {user} but owner was {owner:?}", r.step));
                }
                _ => {}
            },
            RunEvent::Refresh { level, version, owner: new_owner, reason, step, .. } => {
                let slot = usize::from(*level == 2);
                if *version != versions[slot] + 1 {
                    violations.push(format!("level {level} version jumped from {} to {version}", versions[slot]));
                }
                versions[slot] = *version;
                if *level == 1 {
                    if *reason == RefreshReason::Loss && new_owner.is_some() {
                        violations.push(format!("loss at step {step} kept an owner"));
                    }
                    owner.clone_from(new_owner);
                }
            }
            RunEvent::End { stats: s, .. } => closing = Some(s.clone()),
            _ => {}
        }
        stats.observe(event);
    }
    if let Some((step, _)) = expect_refresh {
        violations.push(format!("tick at step {step} changed the owner without a Level-1 refresh"));
    }
    if stats.level1_refreshes != stats.switches + stats.losses {
        violations.push("Level-1 refreshes do not match switches plus losses".into());
    }
    if let Some(c) = closing {
        stats.steps = c.steps;
        if c != stats {
            violations.push(format!("closing counters {c:?} differ from recount {stats:?}"));
        }
    }
    ReplaySummary { stats, violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tick(step: u64, outcome: PollOutcome) -> RunEvent {
        RunEvent::Tick(PollReport { step, outcome, conflict: false })
    }

    fn refresh(step: u64, version: u64, owner: Option<&str>, reason: RefreshReason) -> RunEvent {
        RunEvent::Refresh { step, level: 1, version, owner: owner.map(UserId::from), cost: 0, reason }
    }

    #[test]
    fn events_round_trip() {
        let events = vec![
            tick(24, PollOutcome::Switched { user: UserId::from("u0001"), from: None }),
            refresh(24, 1, Some("u0001"), RefreshReason::Switch),
            tick(49, PollOutcome::NoSignal { reason: Some("asr timed out".into()) }),
            RunEvent::Say { step: 50, text: "Hi".into() },
        ];
        let text = to_jsonl(&events);
        assert!(text.lines().next().unwrap().contains("\"event\":\"tick\""));
        assert_eq!(parse_jsonl(&text).unwrap(), events);
    }

    #[test]
    fn consistent_log() {
        let events = vec![
            tick(24, PollOutcome::Switched { user: UserId::from("a"), from: None }),
            refresh(24, 1, Some("a"), RefreshReason::Switch),
            tick(49, PollOutcome::SameUser { user: UserId::from("a") }),
            tick(74, PollOutcome::NewUser),
            refresh(74, 2, None, RefreshReason::NewUser),
            tick(99, PollOutcome::NewUser),
        ];
        let r = replay(&events);
        assert!(r.is_consistent(), "{:?}", r.violations);
        assert_eq!((r.stats.switches, r.stats.level1_refreshes), (2, 2));
    }

    #[test]
    fn missing_refresh_is_flagged() {
        let events = vec![tick(24, PollOutcome::Switched { user: UserId::from("a"), from: None })];
        assert!(!replay(&events).is_consistent());
    }

    #[test]
    fn version_gap_is_flagged() {
        let events = vec![
            tick(24, PollOutcome::Switched { user: UserId::from("a"), from: None }),
            refresh(24, 2, Some("a"), RefreshReason::Switch),
        ];
        assert_eq!(replay(&events).violations.len(), 1);
    }

    #[test]
    fn bad_line_reports_position() {
        let err = parse_jsonl("{\"event\":\"say\",\"step\":1,\"text\":\"x\"}\nnot json\n").unwrap_err();
        assert!(matches!(err, RuntimeError::EventLog { line: 2, .. }));
    }
}
