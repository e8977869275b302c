//! Three days with one user: she introduces herself and her colleagues,
//! asks which colleague likes tennis, and is greeted the next morning with
//! what the agent learned from that question.

use egomem::harness::{simulate_lifelong_run, walkthrough_scenario};
use egomem::runtime::AgentConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = walkthrough_scenario(7);
    let report = simulate_lifelong_run(&scenario, &AgentConfig::default())?;
    for line in report.summary_lines() {
        println!("{line}");
    }
    for (i, day) in report.days.iter().enumerate() {
        println!("\nday {} ({})", i + 1, day.date);
        for c in day.level1_reads() {
            println!("  level-1: {}", c.replace('\n', " | "));
        }
        for c in day.level2_reads().filter(|c| !c.is_empty()) {
            println!("  level-2: {}", c.replace('\n', " | "));
        }
    }
    Ok(())
}
