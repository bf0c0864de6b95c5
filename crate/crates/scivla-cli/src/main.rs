//! `scivla`: bench harness, single-trial runner, demo generator, DSL linter,
//! and trace replayer for the desk-scale lab manipulation stack.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime fault.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use scivla_core::agent::TransitionAgent;
use scivla_core::bench::{
    self, build_store, render_report, BenchError, BenchSpec, DemosSection, GenerateSection,
    ReportFormat, SequenceSpec,
};
use scivla_core::demo::{self, TaskPrompt, TokenSetMatcher};
use scivla_core::dsl;
use scivla_core::orchestrator::{replay_trace, RunMode, Runner, TraceFile};
use scivla_core::policy::PolicyParams;
use scivla_core::sim::{self, ScenarioSpec};

const EXIT_CONFIG: u8 = 2;
const EXIT_FAULT: u8 = 3;

#[derive(Parser)]
#[command(name = "scivla", version, about = "Desk-scale long-horizon manipulation bench")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Baseline,
    Sci,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Table,
    Machine,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Table => ReportFormat::Table,
            FormatArg::Machine => ReportFormat::Machine,
        }
    }
}

#[derive(Subcommand)]
enum Commands {
    /// Run a multi-trial benchmark from a spec file and print the report.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        /// Override the spec's mode list.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Override the spec's trial count.
        #[arg(long)]
        trials: Option<u32>,
        /// Override the spec's seed base.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the spec's worker cap.
        #[arg(long)]
        workers: Option<usize>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
    },
    /// Execute one trial and print per-task outcomes.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        /// Demonstration store file (JSON lines). When absent, demos are
        /// generated in-process from the scenario's oracle templates.
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Demos to generate per task when no store file is given.
        #[arg(long, default_value_t = 100)]
        gen_count: usize,
        /// Seed for in-process demo generation.
        #[arg(long, default_value_t = 1)]
        gen_seed: u64,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the action trace (replayable with `scivla replay`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate demonstrations for one atomic task.
    GenDemos {
        #[arg(long)]
        scenario: PathBuf,
        /// The atomic task prompt, exactly as declared in the scenario.
        #[arg(long)]
        task: String,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and safety-check a transitional-action program against a
    /// scenario's initial state.
    Lint {
        file: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Seed for the world the program is checked against.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-execute a recorded trace and verify the final world matches.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                BenchError::Config(_) => ExitCode::from(EXIT_CONFIG),
                BenchError::Runtime(_) => ExitCode::from(EXIT_FAULT),
            }
        }
    }
}

fn modes_for(mode: ModeArg) -> Vec<RunMode> {
    match mode {
        ModeArg::Baseline => vec![RunMode::Baseline],
        ModeArg::Sci => vec![RunMode::Sci],
        ModeArg::Both => vec![RunMode::Baseline, RunMode::Sci],
    }
}

fn dispatch(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Commands::Bench { spec, mode, trials, seed, workers, out, format } => {
            let mut spec = BenchSpec::load(&spec)?;
            if let Some(mode) = mode {
                spec.modes = modes_for(mode);
            }
            if let Some(trials) = trials {
                spec.trials = trials;
            }
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            if let Some(workers) = workers {
                spec.workers = workers;
            }
            let report = bench::run_bench(&spec)?;
            let text = render_report(&report, format.into());
            match out {
                Some(path) => std::fs::write(&path, text).map_err(|e| {
                    BenchError::Runtime(format!("write {}: {e}", path.display()))
                })?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Commands::Run { scenario, sequence, demos, gen_count, gen_seed, mode, seed, out } => {
            let run_mode = match mode {
                ModeArg::Baseline => RunMode::Baseline,
                ModeArg::Sci => RunMode::Sci,
                ModeArg::Both => {
                    return Err(BenchError::Config(
                        "run executes one trial; pass --mode baseline or --mode sci".to_string(),
                    ))
                }
            };
            let scenario_file = ScenarioSpec::load(&scenario)?;
            let sequence_spec = SequenceSpec::load(&sequence)?;
            let scenario = sequence_spec.apply_to(&scenario_file)?;
            let demos_section = DemosSection {
                path: demos,
                generate: None,
            };
            let demos_section = if demos_section.path.is_some() {
                demos_section
            } else {
                DemosSection {
                    path: None,
                    generate: Some(GenerateSection { count: gen_count, seed: gen_seed }),
                }
            };
            let store = Arc::new(build_store(&demos_section, &scenario)?);
            let agent = TransitionAgent::rule_based();
            let matcher = TokenSetMatcher;
            let runner =
                Runner::new(&scenario, store, &matcher, &agent, PolicyParams::default());
            let outcome = runner.run(&sequence_spec.task_sequence(), seed, run_mode)?;
            for (k, (prompt, ok)) in
                sequence_spec.prompts.iter().zip(&outcome.success).enumerate()
            {
                println!("task {}: {} - {}", k + 1, if *ok { "ok" } else { "failed" }, prompt);
            }
            if let Some(reason) = &outcome.excluded {
                println!("trial excluded: {reason}");
            }
            for fault in &outcome.faults {
                println!("fault during task {}: {}", fault.task + 1, fault.detail);
            }
            if let Some(path) = out {
                TraceFile::from_outcome(&scenario, &outcome).save(&path)?;
                println!("trace written to {}", path.display());
            }
            Ok(())
        }
        Commands::GenDemos { scenario, task, count, seed, out } => {
            let scenario = ScenarioSpec::load(&scenario)?;
            let prompt = TaskPrompt::new(&task);
            let demos = bench::generate_demos(&scenario, &prompt, count, seed)?;
            let store = demo::DemoStore::from_demos(demos)?;
            demo::save_store(&store, &out)
                .map_err(|e| BenchError::Runtime(e.to_string()))?;
            println!("wrote {} demonstrations to {}", store.len(), out.display());
            Ok(())
        }
        Commands::Lint { file, scenario, seed } => {
            let scenario = ScenarioSpec::load(&scenario)?;
            let source = std::fs::read_to_string(&file)
                .map_err(|e| BenchError::Config(format!("read {}: {e}", file.display())))?;
            let program = match dsl::parse(&source) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("{}: {e}", file.display());
                    return Err(BenchError::Runtime("program does not parse".to_string()));
                }
            };
            let state = sim::init_scene(&scenario, seed)?;
            let violations = dsl::validate(&program, &scenario, &state);
            if violations.is_empty() {
                println!(
                    "{}: ok ({} command{})",
                    file.display(),
                    program.commands.len(),
                    if program.commands.len() == 1 { "" } else { "s" }
                );
                Ok(())
            } else {
                for v in &violations {
                    println!("{}: {v}", file.display());
                }
                Err(BenchError::Runtime(format!(
                    "{} safety violation(s)",
                    violations.len()
                )))
            }
        }
        Commands::Replay { trace, scenario } => {
            let scenario = ScenarioSpec::load(&scenario)?;
            let trace = TraceFile::load(&trace).map_err(BenchError::from)?;
            let report = replay_trace(&scenario, &trace).map_err(BenchError::from)?;
            if report.matches {
                println!(
                    "replay of {} entries reproduced the recorded final state exactly",
                    trace.entries.len()
                );
                Ok(())
            } else {
                Err(BenchError::Runtime(
                    "replayed final state differs from the recorded one".to_string(),
                ))
            }
        }
    }
}
