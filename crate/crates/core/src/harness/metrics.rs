use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetOp {
    AtLeast,
    AtMost,
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub op: TargetOp,
    pub value: f64,
}

impl Target {
    pub fn at_least(value: f64) -> Self {
        Self { op: TargetOp::AtLeast, value }
    }

    pub fn at_most(value: f64) -> Self {
        Self { op: TargetOp::AtMost, value }
    }

    pub fn equal(value: f64) -> Self {
        Self { op: TargetOp::Equal, value }
    }

    pub fn holds(&self, x: f64) -> bool {
        match self.op {
            TargetOp::AtLeast => x >= self.value,
            TargetOp::AtMost => x <= self.value,
            TargetOp::Equal => (x - self.value).abs() < 1e-9,
        }
    }

    fn symbol(&self) -> &'static str {
        match self.op {
            TargetOp::AtLeast => ">=",
            TargetOp::AtMost => "<=",
            TargetOp::Equal => "==",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    pub pass: bool,
}

/// Named measurements, some with a pass condition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub suite: String,
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn new(suite: impl Into<String>) -> Self {
        Self { suite: suite.into(), rows: Vec::new() }
    }

    /// An informational row; always passes.
    pub fn report(&mut self, name: impl Into<String>, value: f64) {
        self.rows.push(MetricRow { name: name.into(), value, target: None, pass: true });
    }

    pub fn check(&mut self, name: impl Into<String>, value: f64, target: Target) -> bool {
        let pass = !value.is_nan() && target.holds(value);
        self.rows.push(MetricRow { name: name.into(), value, target: Some(target), pass });
        pass
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.name == name).map(|r| r.value)
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
        let mut out = format!("[{}]\n", self.suite);
        for r in &self.rows {
            let _ = write!(out, "  {:width$}  {:>10.4}", r.name, r.value);
            if let Some(t) = r.target {
                let _ = write!(out, "  target {} {:<8}  {}", t.symbol(), t.value, if r.pass { "ok" } else { "FAIL" });
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}
