//! The three asynchronous processes around the dialog model.
//!
//! Polling retrieval identifies the user every couple of seconds and keeps
//! the Level-1 MemChunk on that user's profile. The dialog process watches
//! its own monologue for query markers and reads refreshed chunks. The
//! scheduler hands stream chunks to the memory management cycle.
//!
//! Simulation runs all three against a virtual clock, one stream step at a
//! time, with message queues between them, so a run is a pure function of its
//! inputs.

mod chunk;
mod events;
mod poll;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chunk::{pack_lines, profile_lines, refresh_level1_chunk, ChunkCell, MemChunkState, RefreshSignal};
pub use events::{parse_jsonl, replay, to_jsonl, RefreshReason, ReplaySummary, RunEvent, RunStats};
pub use poll::{polling_tick, PollOutcome, PollReport};

use crate::backends::{BackendConfig, Backends, TextEmbedder};
use crate::ids::UserId;
use crate::pipeline::{run_management_cycle, IdentifyConfig, PipelineConfig};
use crate::retrieval::{parse_query_protocol, QueryError, QueryGroups, RetrievalError, Retriever, ANSWER_MARKER};
use crate::store::{MemoryStore, SharedStore, UNKNOWN_USER};
use crate::stream::{
    seconds_to_steps, vocab, FaceMark, StreamError, TokenStep, TokenStream, LEVEL1_CAPACITY, LEVEL2_CAPACITY, MAX_STEPS,
};
use crate::trigger::RuleTagger;
use crate::verification::{CohortPair, DEFAULT_FACE_DELTA, DEFAULT_SPEAKER_THETA};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("agent config: {0}")]
    Config(String),
    #[error("stream chunk {index} starts at step {found}, expected {expected}")]
    Source { index: usize, expected: u64, found: u64 },
    #[error("malformed query marker: {0}")]
    Query(#[from] QueryError),
    #[error("query arrived while no user is recognized")]
    NoCurrentUser,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("event log line {line}: {reason}")]
    EventLog { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub polling_interval_s: f64,
    /// Length of recent audio and video examined per poll.
    pub query_window_s: f64,
    pub face_delta: f64,
    pub speaker_theta: f64,
    /// Steps of stream per management cycle; at most one full stream.
    pub management_interval_steps: usize,
    /// Consecutive no-signal ticks after which the Level-1 chunk is cleared.
    pub loss_ticks: u32,
    pub level1_capacity: usize,
    pub level2_capacity: usize,
    /// Memory level: 1 keeps profiles only, 2 adds the social graph.
    pub level: u8,
    pub top_k: usize,
    /// Date written on memories extracted during the run.
    pub session_date: String,
    pub backends: BackendConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            polling_interval_s: 2.0,
            query_window_s: 2.0,
            face_delta: DEFAULT_FACE_DELTA,
            speaker_theta: DEFAULT_SPEAKER_THETA,
            management_interval_steps: MAX_STEPS,
            loss_ticks: 5,
            level1_capacity: LEVEL1_CAPACITY,
            level2_capacity: LEVEL2_CAPACITY,
            level: 2,
            top_k: crate::retrieval::DEFAULT_TOP_K,
            session_date: String::new(),
            backends: BackendConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        let bad = |m: String| Err(RuntimeError::Config(m));
        if !(self.polling_interval_s > 0.0 && self.polling_interval_steps() > 0) {
            return bad(format!("polling interval {} s is not positive", self.polling_interval_s));
        }
        if !(self.query_window_s > 0.0 && self.window_steps() > 0) {
            return bad(format!("query window {} s is not positive", self.query_window_s));
        }
        if self.management_interval_steps == 0 || self.management_interval_steps > MAX_STEPS {
            return bad(format!("management interval must be in 1..={MAX_STEPS} steps"));
        }
        if self.loss_ticks == 0 {
            return bad("loss_ticks must be positive".into());
        }
        if self.level1_capacity != LEVEL1_CAPACITY || self.level2_capacity != LEVEL2_CAPACITY {
            return bad(format!("MemChunk capacities are fixed at {LEVEL1_CAPACITY}/{LEVEL2_CAPACITY} steps"));
        }
        if !(1..=2).contains(&self.level) {
            return bad(format!("level {} is not 1 or 2", self.level));
        }
        if !(self.face_delta.is_finite() && self.speaker_theta.is_finite()) {
            return bad("thresholds must be finite".into());
        }
        self.backends.validate().map_err(|e| RuntimeError::Config(e.to_string()))
    }

    pub fn polling_interval_steps(&self) -> usize {
        seconds_to_steps(self.polling_interval_s) as usize
    }

    pub fn window_steps(&self) -> usize {
        seconds_to_steps(self.query_window_s) as usize
    }

    pub fn identify_config(&self, cohorts: Option<Arc<CohortPair>>) -> IdentifyConfig {
        IdentifyConfig { face_delta: self.face_delta, speaker_theta: self.speaker_theta, cohorts }
    }

    pub fn pipeline_config(&self, cohorts: Option<Arc<CohortPair>>) -> PipelineConfig {
        PipelineConfig {
            level: self.level,
            session_date: self.session_date.clone(),
            identify: self.identify_config(cohorts),
            ..PipelineConfig::default()
        }
    }

    pub fn retriever(&self) -> Retriever {
        Retriever { k: self.top_k, budget: self.level2_capacity, ..Retriever::default() }
    }
}

/// The result of a handled query: the new Level-2 state and what was asked.
#[derive(Debug, Clone, PartialEq)]
pub struct Level2Update {
    pub state: MemChunkState,
    pub signal: RefreshSignal,
    pub groups: QueryGroups,
    pub hits: usize,
}

/// Parses the query marker in `monologue` and, when there is one, retrieves
/// for `current_user` into a new Level-2 chunk.
///
/// Every handled query bumps the chunk version, including one that finds
/// nothing and leaves the chunk empty, so the dialog process always learns
/// that its question was answered.
pub fn handle_retrieval_request(
    monologue: &str,
    store: &MemoryStore,
    current_user: Option<&UserId>,
    encoder: &dyn TextEmbedder,
    state: &MemChunkState,
    retriever: &Retriever,
    now_step: u64,
) -> Result<Option<Level2Update>, RuntimeError> {
    let Some(groups) = parse_query_protocol(monologue)? else {
        return Ok(None);
    };
    let user = current_user.ok_or(RuntimeError::NoCurrentUser)?;
    let result = retriever.retrieve(&groups, store, user, encoder)?;
    let next = MemChunkState {
        level: 2,
        content: result.render(),
        owner: Some(user.clone()),
        version: state.version + 1,
        last_refresh_step: now_step,
    };
    let signal = RefreshSignal { level: 2, version: next.version, step: now_step, owner: next.owner.clone() };
    Ok(Some(Level2Update { state: next, signal, groups, hits: result.hits.len() }))
}

/// The dialog model as seen by the runtime.
pub trait DialogStub {
    /// Reads a refreshed chunk; returns anything the model says in response.
    fn on_refresh(&mut self, signal: &RefreshSignal, chunk: &MemChunkState) -> Option<String>;
    /// Consumes one stream step; returns the monologue once a query marker closes.
    fn on_step(&mut self, step: &TokenStep) -> Option<String>;
}

/// Follows the scripted monologue already in the stream, forwards query
/// markers, and greets a newly recognized user by name.
#[derive(Debug, Clone, Default)]
pub struct ScriptedDialog {
    monologue: String,
    pub greetings: Vec<String>,
}

const MONOLOGUE_KEEP: usize = 1024;

impl DialogStub for ScriptedDialog {
    fn on_refresh(&mut self, signal: &RefreshSignal, chunk: &MemChunkState) -> Option<String> {
        if signal.level != 1 {
            return None;
        }
        let name = chunk.content.lines().next()?.strip_prefix("name: ")?;
        if name == UNKNOWN_USER {
            return None;
        }
        let greeting = format!("Hi {name}!");
        self.greetings.push(greeting.clone());
        Some(greeting)
    }

    fn on_step(&mut self, step: &TokenStep) -> Option<String> {
        let byte = vocab::text_byte(step.text_token)?;
        self.monologue.push(char::from(byte));
        if self.monologue.ends_with(ANSWER_MARKER) {
            return Some(std::mem::take(&mut self.monologue));
        }
        if self.monologue.len() > 4 * MONOLOGUE_KEEP {
            let cut = self.monologue.len() - MONOLOGUE_KEEP;
            self.monologue.drain(..cut);
        }
        None
    }
}

/// Everything a run leaves behind.
#[derive(Debug)]
pub struct AgentRun {
    pub events: Vec<RunEvent>,
    pub stats: RunStats,
    pub store: SharedStore,
    pub level1: MemChunkState,
    pub level2: MemChunkState,
}

impl AgentRun {
    pub fn transcript(&self) -> String {
        to_jsonl(&self.events)
    }
}

/// Configuration plus the services the processes call.
#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub backends: Backends,
    pub cohorts: Option<Arc<CohortPair>>,
}

impl Agent {
    pub fn new(config: AgentConfig, backends: Backends) -> Result<Self, RuntimeError> {
        config.validate()?;
        Ok(Self { config, backends, cohorts: None })
    }

    pub fn with_cohorts(mut self, cohorts: Arc<CohortPair>) -> Self {
        self.cohorts = Some(cohorts);
        self
    }

    pub fn run(
        &self,
        source: &[TokenStream],
        store: SharedStore,
        stub: &mut dyn DialogStub,
    ) -> Result<AgentRun, RuntimeError> {
        run_agent(source, store, self, stub)
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(panic_message)
}

enum Message {
    Cycle { final_flush: bool },
}

struct Loop<'a> {
    agent: &'a Agent,
    store: SharedStore,
    identify: IdentifyConfig,
    pipeline: PipelineConfig,
    retriever: Retriever,
    level1: ChunkCell,
    level2: ChunkCell,
    owner: Option<UserId>,
    no_signal_run: u32,
    /// Recent steps, enough for the poll window and the pending cycle chunk.
    buffer: Vec<TokenStep>,
    faces: Vec<FaceMark>,
    pending_start: u64,
    events: Vec<RunEvent>,
    stats: RunStats,
}

impl Loop<'_> {
    fn emit(&mut self, event: RunEvent) {
        self.stats.observe(&event);
        self.events.push(event);
    }

    /// Keeps a panic result and logs it; `None` means the call panicked.
    fn contained<T>(&mut self, step: u64, process: &str, result: Result<T, String>) -> Option<T> {
        match result {
            Ok(v) => Some(v),
            Err(message) => {
                self.emit(RunEvent::Panic { step, process: process.into(), message });
                None
            }
        }
    }

    fn buffer_base(&self) -> u64 {
        self.buffer.first().map_or(self.pending_start, |s| s.step_index)
    }

    fn window(&self, from: u64, to: u64) -> Result<TokenStream, StreamError> {
        let base = self.buffer_base();
        let steps = self.buffer[(from - base) as usize..(to - base) as usize].to_vec();
        let faces = self.faces.iter().filter(|f| (from..to).contains(&f.step)).copied().collect();
        TokenStream::chunk(from, steps, faces)
    }

    fn trim(&mut self, now: u64, window: usize) {
        let keep_from = self.pending_start.min((now + 1).saturating_sub(window as u64));
        let base = self.buffer_base();
        if keep_from > base && self.buffer.len() > 2 * MAX_STEPS {
            self.buffer.drain(..(keep_from - base) as usize);
            self.faces.retain(|f| f.step >= keep_from);
        }
    }

    fn run_cycle(&mut self, now: u64, final_flush: bool) {
        let end = now + 1;
        if end <= self.pending_start {
            return;
        }
        let chunk = match self.window(self.pending_start, end) {
            Ok(c) => c,
            Err(e) => {
                self.emit(RunEvent::CycleFailed { step: now, reason: e.to_string() });
                self.pending_start = end;
                return;
            }
        };
        // leave a session that may still be going on for the next cycle
        let mut cut = chunk.len();
        if !final_flush {
            let gap = self.pipeline.gap_steps;
            if let Some(last) = (RuleTagger { gap_steps: gap }).spans(&chunk).last() {
                if chunk.len() - last.end < gap && last.start > 0 {
                    cut = last.start;
                }
            }
        }
        let chunk = if cut == chunk.len() { chunk } else { chunk.slice(0..cut).expect("cut inside chunk") };
        let result = guarded(|| run_management_cycle(&chunk, &self.store, &self.agent.backends, &self.pipeline));
        let result = self.contained(now, "management", result);
        match result {
            Some(Ok(report)) => self.emit(RunEvent::Cycle { step: now, report }),
            Some(Err(e)) => self.emit(RunEvent::CycleFailed { step: now, reason: e.to_string() }),
            None => {}
        }
        self.pending_start += cut as u64;
    }

    fn publish_level1(
        &mut self,
        now: u64,
        user: Option<&UserId>,
        reason: RefreshReason,
        signals: &mpsc::Sender<RefreshSignal>,
    ) {
        let snapshot = self.store.snapshot();
        let profile = user.and_then(|u| snapshot.lookup_user(u).ok());
        let current = self.level1.read();
        let (next, signal) = refresh_level1_chunk(&current, profile.as_deref(), now);
        self.owner = next.owner.clone();
        if let Some(signal) = signal {
            self.emit(RunEvent::Refresh {
                step: now,
                level: 1,
                version: next.version,
                owner: next.owner.clone(),
                cost: next.cost(),
                reason,
            });
            self.level1.publish(next);
            signals.send(signal).expect("dialog queue open");
        }
    }

    fn tick(&mut self, now: u64, signals: &mpsc::Sender<RefreshSignal>) {
        let from = (now + 1).saturating_sub(self.agent.config.window_steps() as u64).max(self.buffer_base());
        let report = match self.window(from, now + 1) {
            Ok(window) => {
                let snapshot = self.store.snapshot();
                let owner = self.owner.as_ref();
                let polled =
                    guarded(|| polling_tick(now, &window, &snapshot, owner, &self.agent.backends, &self.identify));
                self.contained(now, "retrieval", polled).unwrap_or_else(|| PollReport {
                    step: now,
                    outcome: PollOutcome::NoSignal { reason: Some("polling panicked".into()) },
                    conflict: false,
                })
            }
            Err(e) => PollReport {
                step: now,
                outcome: PollOutcome::NoSignal { reason: Some(e.to_string()) },
                conflict: false,
            },
        };
        let outcome = report.outcome.clone();
        self.emit(RunEvent::Tick(report));
        match outcome {
            PollOutcome::SameUser { .. } => self.no_signal_run = 0,
            PollOutcome::Switched { user, .. } => {
                self.no_signal_run = 0;
                self.publish_level1(now, Some(&user), RefreshReason::Switch, signals);
            }
            PollOutcome::NewUser => {
                self.no_signal_run = 0;
                if self.owner.is_some() {
                    self.publish_level1(now, None, RefreshReason::NewUser, signals);
                }
            }
            PollOutcome::NoSignal { .. } => {
                self.no_signal_run += 1;
                if self.no_signal_run == self.agent.config.loss_ticks && self.owner.is_some() {
                    self.publish_level1(now, None, RefreshReason::Loss, signals);
                }
            }
        }
    }

    fn query(&mut self, now: u64, monologue: &str, signals: &mpsc::Sender<RefreshSignal>) {
        let snapshot = self.store.snapshot();
        let current = self.level2.read();
        let handled = guarded(|| {
            let owner = self.owner.as_ref();
            handle_retrieval_request(monologue, &snapshot, owner, &self.agent.backends, &current, &self.retriever, now)
        });
        let handled = self.contained(now, "retrieval", handled);
        match handled {
            Some(Ok(Some(update))) => {
                self.emit(RunEvent::Query {
                    step: now,
                    relations: update.groups.relations,
                    keywords: update.groups.keywords,
                    hits: update.hits,
                });
                self.emit(RunEvent::Refresh {
                    step: now,
                    level: 2,
                    version: update.state.version,
                    owner: update.state.owner.clone(),
                    cost: update.state.cost(),
                    reason: RefreshReason::Query,
                });
                self.level2.publish(update.state);
                signals.send(update.signal).expect("dialog queue open");
            }
            Some(Ok(None)) | None => {}
            Some(Err(e)) => self.emit(RunEvent::QueryFailed { step: now, reason: e.to_string() }),
        }
    }

    fn dialog_reads(&mut self, now: u64, signals: &mpsc::Receiver<RefreshSignal>, stub: &mut dyn DialogStub) {
        while let Ok(signal) = signals.try_recv() {
            let chunk = if signal.level == 1 { self.level1.read() } else { self.level2.read() };
            self.emit(RunEvent::Read {
                step: now,
                level: signal.level,
                version: chunk.version,
                content: chunk.content.clone(),
            });
            let said = guarded(|| stub.on_refresh(&signal, &chunk));
            if let Some(Some(text)) = self.contained(now, "dialog", said) {
                self.emit(RunEvent::Say { step: now, text });
            }
        }
    }
}

/// Drives polling retrieval, the dialog stub and the management scheduler
/// over `source`, a list of contiguous stream chunks.
///
/// Each step: due management cycles run, pending queries are answered, a
/// poll runs at the end of every polling interval, then the dialog process
/// reads refreshed chunks and consumes the step. When the source ends, one
/// last cycle processes whatever is pending. A panic in any process is
/// logged and that invocation skipped.
pub fn run_agent(
    source: &[TokenStream],
    store: SharedStore,
    agent: &Agent,
    stub: &mut dyn DialogStub,
) -> Result<AgentRun, RuntimeError> {
    let config = &agent.config;
    config.validate()?;
    for (index, pair) in source.windows(2).enumerate() {
        let expected = pair[0].base_step() + pair[0].len() as u64;
        if pair[1].base_step() != expected {
            return Err(RuntimeError::Source { index: index + 1, expected, found: pair[1].base_step() });
        }
    }
    let poll_every = config.polling_interval_steps();
    let window = config.window_steps();
    let first_step = source.first().map_or(0, TokenStream::base_step);

    let (signal_tx, signal_rx) = mpsc::channel::<RefreshSignal>();
    let (query_tx, query_rx) = mpsc::channel::<(u64, String)>();
    let (cycle_tx, cycle_rx) = mpsc::channel::<Message>();

    let mut l = Loop {
        agent,
        store,
        identify: config.identify_config(agent.cohorts.clone()),
        pipeline: config.pipeline_config(agent.cohorts.clone()),
        retriever: config.retriever(),
        level1: ChunkCell::new(MemChunkState::empty(1)),
        level2: ChunkCell::new(MemChunkState::empty(2)),
        owner: None,
        no_signal_run: 0,
        buffer: Vec::new(),
        faces: Vec::new(),
        pending_start: first_step,
        events: Vec::new(),
        stats: RunStats::default(),
    };

    let mut processed = 0u64;
    let mut now = first_step;
    for chunk in source {
        for (pos, step) in chunk.steps().iter().enumerate() {
            now = step.step_index;
            l.buffer.push(*step);
            l.faces.extend(chunk.faces_in(pos..pos + 1).copied());
            processed += 1;

            // scheduler
            if now + 1 - l.pending_start >= config.management_interval_steps as u64 {
                cycle_tx.send(Message::Cycle { final_flush: false }).expect("pipeline queue open");
            }
            // management pipeline
            while let Ok(Message::Cycle { final_flush }) = cycle_rx.try_recv() {
                l.run_cycle(now, final_flush);
            }
            // retrieval
            while let Ok((_, monologue)) = query_rx.try_recv() {
                l.query(now, &monologue, &signal_tx);
            }
            if processed.is_multiple_of(poll_every as u64) {
                l.tick(now, &signal_tx);
            }
            // dialog
            l.dialog_reads(now, &signal_rx, stub);
            let heard = guarded(|| stub.on_step(step));
            if let Some(Some(monologue)) = l.contained(now, "dialog", heard) {
                query_tx.send((now, monologue)).expect("retrieval queue open");
            }
            l.trim(now, window);
        }
    }
    if processed > 0 {
        while let Ok((_, monologue)) = query_rx.try_recv() {
            l.query(now, &monologue, &signal_tx);
        }
        l.dialog_reads(now, &signal_rx, stub);
        l.run_cycle(now, true);
    }
    let mut stats = l.stats.clone();
    stats.steps = processed;
    l.events.push(RunEvent::End { step: now, stats: stats.clone() });
    Ok(AgentRun {
        events: l.events,
        stats,
        level1: (*l.level1.read()).clone(),
        level2: (*l.level2.read()).clone(),
        store: l.store,
    })
}
