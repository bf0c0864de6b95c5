//! Trial harness: bench specs, sequence files with initial scene layouts,
//! demo-store assembly, seeded multi-trial execution, and report building.

mod demo_gen;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentConfig, TransitionAgent};
use crate::demo::{self, DemoStore, TaskPrompt, TokenSetMatcher};
use crate::orchestrator::{RunError, RunMode, RunOutcome, Runner, TaskSequence};
use crate::policy::{DistributionGate, PolicyParams};
use crate::sim::{ConfigError, ScenarioSpec};

pub use demo_gen::generate_demos;
pub use report::{
    format_cell, parse_machine_report, render_report, BenchReport, ModeReport, ReportFormat,
    TrialDigest,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime fault: {0}")]
    Runtime(String),
}

impl From<ConfigError> for BenchError {
    fn from(e: ConfigError) -> Self {
        BenchError::Config(e.to_string())
    }
}

impl From<RunError> for BenchError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(m) => BenchError::Config(m),
            RunError::Fault(m) => BenchError::Runtime(m),
        }
    }
}

impl From<demo::StoreError> for BenchError {
    fn from(e: demo::StoreError) -> Self {
        BenchError::Config(e.to_string())
    }
}

/// Scene layout applied before a sequence starts: object placement regions
/// and instrument latch values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InitialLayout {
    #[serde(default)]
    pub objects: BTreeMap<String, String>,
    #[serde(default)]
    pub latches: BTreeMap<String, BTreeMap<String, String>>,
}

fn default_budget() -> usize {
    60
}

/// A long-horizon prompt sequence file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub name: String,
    pub prompts: Vec<String>,
    #[serde(default)]
    pub budgets: Option<Vec<usize>>,
    /// Uniform per-task budget when `budgets` is absent.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub initial: Option<InitialLayout>,
}

impl SequenceSpec {
    pub fn load(path: &Path) -> Result<SequenceSpec, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("read {}: {e}", path.display())))?;
        let spec: SequenceSpec = toml::from_str(&text)
            .map_err(|e| BenchError::Config(format!("parse {}: {e}", path.display())))?;
        if spec.prompts.is_empty() {
            return Err(BenchError::Config(format!("{}: no prompts", path.display())));
        }
        if let Some(budgets) = &spec.budgets {
            if budgets.len() != spec.prompts.len() {
                return Err(BenchError::Config(format!(
                    "{}: {} prompts but {} budgets",
                    path.display(),
                    spec.prompts.len(),
                    budgets.len()
                )));
            }
        }
        Ok(spec)
    }

    pub fn task_sequence(&self) -> TaskSequence {
        let prompts = self.prompts.iter().map(|p| TaskPrompt::new(p)).collect();
        match &self.budgets {
            Some(budgets) => TaskSequence { prompts, budgets: budgets.clone() },
            None => TaskSequence::uniform(prompts, self.budget),
        }
    }

    /// Scenario clone with this sequence's initial layout applied.
    pub fn apply_to(&self, scenario: &ScenarioSpec) -> Result<ScenarioSpec, BenchError> {
        let mut sc = scenario.clone();
        if let Some(layout) = &self.initial {
            for (object, region) in &layout.objects {
                let spec = sc.objects.iter_mut().find(|o| &o.id == object).ok_or_else(|| {
                    BenchError::Config(format!("initial layout names unknown object `{object}`"))
                })?;
                if !scenario.regions.contains_key(region) {
                    return Err(BenchError::Config(format!(
                        "initial layout names unknown region `{region}`"
                    )));
                }
                spec.spawn_region = region.clone();
            }
            for (instrument, latches) in &layout.latches {
                let inst =
                    sc.instruments.iter_mut().find(|i| &i.id == instrument).ok_or_else(|| {
                        BenchError::Config(format!(
                            "initial layout names unknown instrument `{instrument}`"
                        ))
                    })?;
                for (latch, value) in latches {
                    let spec = inst.latches.get_mut(latch).ok_or_else(|| {
                        BenchError::Config(format!(
                            "initial layout names unknown latch `{instrument}.{latch}`"
                        ))
                    })?;
                    if !spec.values.contains(value) {
                        return Err(BenchError::Config(format!(
                            "initial layout sets `{instrument}.{latch}` to undeclared value `{value}`"
                        )));
                    }
                    spec.initial = value.clone();
                }
            }
        }
        Ok(sc)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateSection {
    pub count: usize,
    pub seed: u64,
}

/// Where the demonstration store comes from: a file, or in-process
/// generation over every task the scenario declares.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DemosSection {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub generate: Option<GenerateSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySection {
    pub epsilon: f64,
    pub jitter_amp: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        let params = PolicyParams::default();
        PolicySection { epsilon: params.gate.epsilon, jitter_amp: params.jitter_amp }
    }
}

impl PolicySection {
    pub fn params(&self) -> PolicyParams {
        PolicyParams {
            gate: DistributionGate { epsilon: self.epsilon },
            jitter_amp: self.jitter_amp,
        }
    }
}

fn default_trials() -> u32 {
    20
}
fn default_modes() -> Vec<RunMode> {
    vec![RunMode::Baseline, RunMode::Sci]
}
fn default_workers() -> usize {
    1
}

/// The bench configuration file. Relative paths resolve against the spec
/// file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSpec {
    pub scenario: PathBuf,
    pub sequence: PathBuf,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_modes")]
    pub modes: Vec<RunMode>,
    #[serde(default)]
    pub perturbation: Option<f64>,
    #[serde(default)]
    pub match_threshold: Option<f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub demos: DemosSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub agent: AgentConfig,
}

impl BenchSpec {
    pub fn load(path: &Path) -> Result<BenchSpec, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("read {}: {e}", path.display())))?;
        let mut spec: BenchSpec = toml::from_str(&text)
            .map_err(|e| BenchError::Config(format!("parse {}: {e}", path.display())))?;
        if spec.trials == 0 {
            return Err(BenchError::Config("trials must be at least 1".to_string()));
        }
        if spec.modes.is_empty() {
            return Err(BenchError::Config("modes must not be empty".to_string()));
        }
        if let Some(p) = spec.perturbation {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(BenchError::Config("perturbation must be non-negative".to_string()));
            }
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        spec.scenario = resolve(base, &spec.scenario);
        spec.sequence = resolve(base, &spec.sequence);
        if let Some(demo_path) = &spec.demos.path {
            spec.demos.path = Some(resolve(base, demo_path));
        }
        Ok(spec)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Build the demonstration store a spec asks for: load it from a file or
/// generate `count` demos per scenario task from the oracle templates.
pub fn build_store(
    demos: &DemosSection,
    scenario: &ScenarioSpec,
) -> Result<DemoStore, BenchError> {
    match (&demos.path, &demos.generate) {
        (Some(path), None) => Ok(demo::load_store(path)?),
        (None, Some(generate)) => {
            let mut all = Vec::new();
            for (k, task) in scenario.tasks.iter().enumerate() {
                let task_seed =
                    generate.seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                all.extend(generate_demos(
                    scenario,
                    &TaskPrompt::new(&task.prompt),
                    generate.count,
                    task_seed,
                )?);
            }
            Ok(DemoStore::from_demos(all)?)
        }
        (None, None) => Err(BenchError::Config(
            "spec must declare demos.path or demos.generate".to_string(),
        )),
        (Some(_), Some(_)) => Err(BenchError::Config(
            "spec declares both demos.path and demos.generate; pick one".to_string(),
        )),
    }
}

/// Everything a bench run resolved from its spec; reusable across modes.
pub struct BenchSetup {
    pub scenario: ScenarioSpec,
    pub sequence_name: String,
    pub sequence: TaskSequence,
    pub store: Arc<DemoStore>,
    pub agent: TransitionAgent,
    pub policy: PolicyParams,
    pub match_threshold: Option<f64>,
}

impl BenchSetup {
    pub fn from_spec(spec: &BenchSpec) -> Result<BenchSetup, BenchError> {
        let scenario_file = ScenarioSpec::load(&spec.scenario)?;
        let sequence_spec = SequenceSpec::load(&spec.sequence)?;
        let mut scenario = sequence_spec.apply_to(&scenario_file)?;
        if let Some(p) = spec.perturbation {
            scenario.perturbation = p;
        }
        scenario.validate()?;
        let store = Arc::new(build_store(&spec.demos, &scenario)?);
        let agent = TransitionAgent::from_config(spec.agent.clone())
            .map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(BenchSetup {
            scenario,
            sequence_name: sequence_spec.name.clone(),
            sequence: sequence_spec.task_sequence(),
            store,
            agent,
            policy: spec.policy.params(),
            match_threshold: spec.match_threshold,
        })
    }
}

/// Run `trials` seeded trials per mode and assemble the report. Trials are
/// independent; `workers` bounds parallel execution, and results are ordered
/// by trial index either way.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchReport, BenchError> {
    let setup = BenchSetup::from_spec(spec)?;
    let matcher = TokenSetMatcher;
    let mut runner = Runner::new(
        &setup.scenario,
        Arc::clone(&setup.store),
        &matcher,
        &setup.agent,
        setup.policy,
    );
    if let Some(threshold) = setup.match_threshold {
        runner = runner.with_match_threshold(threshold);
    }
    runner.preflight(&setup.sequence)?;

    let jobs: Vec<(usize, u32)> = spec
        .modes
        .iter()
        .enumerate()
        .flat_map(|(m, _)| (0..spec.trials).map(move |t| (m, t)))
        .collect();
    let results: Vec<Mutex<Option<Result<RunOutcome, RunError>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let workers = spec.workers.clamp(1, jobs.len().max(1));

    std::thread::scope(|scope| {
        for w in 0..workers {
            let runner = &runner;
            let jobs = &jobs;
            let results = &results;
            let sequence = &setup.sequence;
            let modes = &spec.modes;
            let seed_base = spec.seed;
            scope.spawn(move || {
                let mut k = w;
                while k < jobs.len() {
                    let (m, t) = jobs[k];
                    let outcome = runner.run(sequence, seed_base.wrapping_add(t as u64), modes[m]);
                    *results[k].lock().expect("result slot") = Some(outcome);
                    k += workers;
                }
            });
        }
    });

    let n_tasks = setup.sequence.len();
    let mut mode_reports = Vec::new();
    for (m, mode) in spec.modes.iter().enumerate() {
        let mut task_successes = vec![0u32; n_tasks];
        let mut excluded = 0u32;
        let mut digests = Vec::new();
        for t in 0..spec.trials {
            let k = m * spec.trials as usize + t as usize;
            let outcome = results[k]
                .lock()
                .expect("result slot")
                .take()
                .expect("job executed")?;
            if outcome.excluded.is_some() {
                excluded += 1;
            } else {
                for (i, s) in outcome.success.iter().enumerate() {
                    if *s {
                        task_successes[i] += 1;
                    }
                }
            }
            digests.push(TrialDigest::from_outcome(t, &outcome));
        }
        mode_reports.push(ModeReport {
            mode: *mode,
            counted_trials: spec.trials - excluded,
            excluded_trials: excluded,
            task_successes,
            trials: digests,
        });
    }

    Ok(BenchReport {
        scenario: setup.scenario.name.clone(),
        sequence: setup.sequence_name.clone(),
        prompts: setup.sequence.prompts.iter().map(|p| p.as_str().to_string()).collect(),
        trials: spec.trials,
        seed_base: spec.seed,
        perturbation: setup.scenario.perturbation,
        modes: mode_reports,
    })
}
