use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use egomem::harness::{
    eval_suite, simulate_lifelong_run, synth_scenario, walkthrough_scenario, CliConfig, HarnessError, MetricsTable,
    Scenario, Suite,
};
use egomem::runtime::{parse_jsonl, replay, to_jsonl};
use egomem::store::MemoryStore;

#[derive(Debug, Parser)]
#[command(name = "egomem", version, about = "Identity-keyed memory agent: synthetic runs, evaluation and store tools")]
struct Cli {
    /// Overrides the scenario seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file with `[agent]` and `[scenario]` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for artifacts; nothing is written without it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Machine,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scenario.
    Synth,
    /// Run the three-day lifelong simulation.
    Simulate {
        /// Use the four-person colleague and tennis walkthrough.
        #[arg(long)]
        walkthrough: bool,
    },
    /// Run an evaluation suite; exits nonzero when a check fails.
    Eval {
        #[arg(value_enum)]
        suite: SuiteArg,
    },
    /// Store maintenance.
    Store {
        #[command(subcommand)]
        action: StoreAction,
    },
    /// Re-check a run event log.
    Replay { event_log: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SuiteArg {
    Verification,
    Trigger,
    Retrieval,
    Streams,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Verification => Suite::Verification,
            SuiteArg::Trigger => Suite::Trigger,
            SuiteArg::Retrieval => Suite::Retrieval,
            SuiteArg::Streams => Suite::Streams,
        }
    }
}

#[derive(Debug, Subcommand)]
enum StoreAction {
    /// Summarize a persisted store directory.
    Inspect { dir: PathBuf },
}

fn write(out: &Path, name: &str, contents: &str) -> Result<(), HarnessError> {
    fs::create_dir_all(out).map_err(|source| HarnessError::Io { path: out.display().to_string(), source })?;
    let path = out.join(name);
    fs::write(&path, contents).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })
}

fn load_config(cli: &Cli) -> Result<CliConfig, HarnessError> {
    let mut config = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.scenario.seed = seed;
    }
    Ok(config)
}

fn synth(cli: &Cli, config: &CliConfig) -> Result<ExitCode, HarnessError> {
    let scenario = synth_scenario(&config.scenario)?;
    let tuples: usize = scenario.people.iter().map(|p| p.facts.len()).sum();
    let dialogs = scenario.all_dialogs().count();
    if let Some(out) = &cli.out {
        write(out, "scenario.json", &serde_json::to_string_pretty(&scenario).expect("scenario serializes"))?;
    }
    match cli.format {
        Format::Text => {
            println!("seed {}", scenario.spec.seed);
            println!("people {} (main {})", scenario.people.len(), scenario.people.iter().filter(|p| p.main).count());
            println!("relations {}", scenario.relations.len());
            println!("tuples {tuples}");
            println!("queries {}", scenario.queries.len());
            println!("dialogs {dialogs}");
        }
        Format::Machine => println!(
            "{}",
            json!({
                "seed": scenario.spec.seed,
                "people": scenario.people.len(),
                "relations": scenario.relations.len(),
                "tuples": tuples,
                "queries": scenario.queries.len(),
                "dialogs": dialogs,
            })
        ),
    }
    Ok(ExitCode::SUCCESS)
}

fn simulate(cli: &Cli, config: &CliConfig, walkthrough: bool) -> Result<ExitCode, HarnessError> {
    let scenario: Scenario =
        if walkthrough { walkthrough_scenario(config.scenario.seed) } else { synth_scenario(&config.scenario)? };
    let report = simulate_lifelong_run(&scenario, &config.agent)?;
    if let Some(out) = &cli.out {
        for (i, day) in report.days.iter().enumerate() {
            write(out, &format!("day{}.events.jsonl", i + 1), &to_jsonl(&day.events))?;
        }
        let mut store = report.store.clone();
        store.persist(&out.join("store"))?;
    }
    match cli.format {
        Format::Text => {
            for line in report.summary_lines() {
                println!("{line}");
            }
        }
        Format::Machine => {
            let days: Vec<_> = report
                .days
                .iter()
                .map(|d| {
                    json!({
                        "date": d.date,
                        "steps": d.steps,
                        "dialogs": d.dialogs,
                        "identity_accuracy": d.identity_accuracy(),
                        "expected_switches": d.expected_switches,
                        "retrieval_hits": d.retrieval_hits,
                        "stats": d.stats,
                    })
                })
                .collect();
            println!(
                "{}",
                json!({
                    "days": days,
                    "reidentification_rate": report.reidentification_rate(),
                    "updated_context": report.updated_context,
                    "askers": report.askers,
                    "users": report.store.len(),
                })
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_table(table: &MetricsTable, format: Format) {
    match format {
        Format::Text => print!("{}", table.to_text()),
        Format::Machine => println!("{}", table.to_json()),
    }
}

fn eval(cli: &Cli, config: &CliConfig, suite: Suite) -> Result<ExitCode, HarnessError> {
    let scenario = synth_scenario(&config.scenario)?;
    let table = eval_suite(suite, &scenario, &config.agent)?;
    if let Some(out) = &cli.out {
        write(out, &format!("{suite}.json"), &table.to_json())?;
    }
    print_table(&table, cli.format);
    Ok(if table.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn inspect(dir: &Path, format: Format) -> Result<ExitCode, HarnessError> {
    let store = MemoryStore::load(dir)?;
    let integrity = store.check_integrity();
    match format {
        Format::Text => {
            println!("store_version {}", store.store_version());
            println!("users {}", store.len());
            for p in store.users() {
                println!(
                    "  {} {:?} v{} facts={} summaries={} persona={} edges={}",
                    p.user_id,
                    p.name,
                    p.version,
                    p.facts.len(),
                    p.dialog_summaries.len(),
                    p.persona.len(),
                    p.relation_edges.len()
                );
            }
            for e in store.edges() {
                println!("  edge {} -[{}]-> {}", e.from, e.relation, e.to);
            }
            println!("audit_records {}", store.audit().len());
            match &integrity {
                Ok(()) => println!("integrity ok"),
                Err(e) => println!("integrity FAILED: {e}"),
            }
        }
        Format::Machine => {
            let users: Vec<_> = store
                .users()
                .map(|p| json!({ "user_id": p.user_id, "name": p.name, "version": p.version, "facts": p.facts.len() }))
                .collect();
            println!(
                "{}",
                json!({
                    "store_version": store.store_version(),
                    "users": users,
                    "edges": store.edges().count(),
                    "audit_records": store.audit().len(),
                    "integrity": integrity.as_ref().err(),
                })
            );
        }
    }
    Ok(if integrity.is_ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn replay_log(path: &Path, format: Format) -> Result<ExitCode, HarnessError> {
    let text =
        fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
    let events = parse_jsonl(&text)?;
    let summary = replay(&events);
    match format {
        Format::Text => {
            println!("events {}", events.len());
            println!("{:?}", summary.stats);
            for v in &summary.violations {
                println!("violation: {v}");
            }
            println!("{}", if summary.is_consistent() { "consistent" } else { "INCONSISTENT" });
        }
        Format::Machine => println!("{}", serde_json::to_string(&summary).expect("summary serializes")),
    }
    Ok(if summary.is_consistent() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run(cli: &Cli) -> Result<ExitCode, HarnessError> {
    match &cli.command {
        Command::Store { action: StoreAction::Inspect { dir } } => inspect(dir, cli.format),
        Command::Replay { event_log } => replay_log(event_log, cli.format),
        command => {
            let config = load_config(cli)?;
            match command {
                Command::Synth => synth(cli, &config),
                Command::Simulate { walkthrough } => simulate(cli, &config, *walkthrough),
                Command::Eval { suite } => eval(cli, &config, (*suite).into()),
                Command::Store { .. } | Command::Replay { .. } => unreachable!("handled above"),
            }
        }
    }
}

fn main() -> ExitCode {
    // RUST_LOG=debug shows backend retries and failed sessions
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("egomem: {e}");
            ExitCode::from(2)
        }
    }
}
