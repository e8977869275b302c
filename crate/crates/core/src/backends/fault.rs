use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mock::mix;
use super::{Fault, Handler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    Timeout,
    Transport,
    /// Answers with a document that violates the schema.
    Garbage,
}

/// Which calls fail: call `n` fails when a hash of `(seed, n)` falls below
/// `failure_rate`. Deterministic for a fixed call order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub seed: u64,
    pub failure_rate: f64,
    pub mode: FaultMode,
}

impl FaultPlan {
    pub fn new(seed: u64, failure_rate: f64, mode: FaultMode) -> Self {
        Self { seed, failure_rate, mode }
    }

    pub fn fails(&self, call: u64) -> bool {
        let u = (mix(&[self.seed, call]) >> 11) as f64 / (1u64 << 53) as f64;
        u < self.failure_rate
    }
}

pub struct FaultyHandler {
    inner: Arc<dyn Handler>,
    plan: FaultPlan,
    calls: AtomicU64,
    injected: AtomicU64,
}

impl FaultyHandler {
    pub fn new(inner: Arc<dyn Handler>, plan: FaultPlan) -> Self {
        Self { inner, plan, calls: AtomicU64::new(0), injected: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn injected(&self) -> u64 {
        self.injected.load(Ordering::SeqCst)
    }
}

impl Handler for FaultyHandler {
    fn handle(&self, request: &str) -> Result<String, Fault> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if !self.plan.fails(n) {
            return self.inner.handle(request);
        }
        self.injected.fetch_add(1, Ordering::SeqCst);
        match self.plan.mode {
            FaultMode::Timeout => Err(Fault::Timeout),
            FaultMode::Transport => Err(Fault::Transport("injected connection reset".into())),
            FaultMode::Garbage => Ok("{\"injected\": true}".into()),
        }
    }
}
