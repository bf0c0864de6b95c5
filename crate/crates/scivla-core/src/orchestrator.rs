//! Alternates bounded policy rollout with transitional-action synthesis and
//! insertion across an atomic task sequence, producing the full action trace
//! and per-task success flags.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{SynthesisAttempt, SynthesisError, TransitionAgent, TransitionContext};
use crate::demo::{
    extract_prompts, search_target, DemoId, DemoStore, PromptIndex, SemanticMatcher, TaskPrompt,
    TokenSetMatcher, DEFAULT_MATCH_THRESHOLD,
};
use crate::dsl::{interpret, InterpreterFault};
use crate::policy::{Policy, PolicyInput, PolicyParams, PolicyStep, ReplayPolicy};
use crate::sim::{self, Action, ScenarioSpec, WorldState};

/// The prompt sequence {o_1..o_N} with one step budget per atomic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub prompts: Vec<TaskPrompt>,
    pub budgets: Vec<usize>,
}

impl TaskSequence {
    pub fn uniform(prompts: Vec<TaskPrompt>, budget: usize) -> TaskSequence {
        let budgets = vec![budget; prompts.len()];
        TaskSequence { prompts, budgets }
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.prompts.is_empty() {
            return Err(RunError::Config("task sequence is empty".to_string()));
        }
        if self.budgets.len() != self.prompts.len() {
            return Err(RunError::Config(format!(
                "sequence has {} prompts but {} budgets",
                self.prompts.len(),
                self.budgets.len()
            )));
        }
        if self.budgets.iter().any(|b| *b == 0) {
            return Err(RunError::Config("every task budget must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Steps for a wall-clock budget at a control rate: `ceil(seconds * rate)`.
pub fn budget_steps(seconds: f64, control_rate_hz: f64) -> usize {
    (seconds * control_rate_hz).ceil() as usize
}

pub const DEFAULT_CONTROL_RATE_HZ: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Baseline,
    Sci,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunMode::Baseline => f.write_str("baseline"),
            RunMode::Sci => f.write_str("sci"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Policy,
    Transition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: u64,
    pub action: Action,
    pub provenance: Provenance,
    pub task: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionTrace {
    pub entries: Vec<TraceEntry>,
}

/// What happened between task i and i+1 in sci mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionLog {
    pub after_task: usize,
    pub matched_prompt: TaskPrompt,
    pub demo_id: DemoId,
    pub attempts: Vec<SynthesisAttempt>,
    pub steps_emitted: usize,
    pub fault: Option<InterpreterFault>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFault {
    pub task: usize,
    pub detail: String,
}

/// Full record of one trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub mode: RunMode,
    pub seed: u64,
    pub success: Vec<bool>,
    pub trace: ActionTrace,
    pub faults: Vec<RunFault>,
    pub transitions: Vec<TransitionLog>,
    /// Set when the trial must not be counted (transitional-action synthesis
    /// or transport failure).
    pub excluded: Option<String>,
    pub final_state: WorldState,
}

impl RunOutcome {
    pub fn all_tasks_succeeded(&self) -> bool {
        self.excluded.is_none() && self.success.iter().all(|s| *s)
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime fault: {0}")]
    Fault(String),
}

/// Shared, immutable setup for one or more runs over a scenario.
pub struct Runner<'a> {
    scenario: &'a ScenarioSpec,
    store: Arc<DemoStore>,
    index: PromptIndex,
    matcher: &'a dyn SemanticMatcher,
    match_threshold: f64,
    agent: &'a TransitionAgent,
    policy_params: PolicyParams,
}

pub const DEFAULT_MATCHER: TokenSetMatcher = TokenSetMatcher;

impl<'a> Runner<'a> {
    pub fn new(
        scenario: &'a ScenarioSpec,
        store: Arc<DemoStore>,
        matcher: &'a dyn SemanticMatcher,
        agent: &'a TransitionAgent,
        policy_params: PolicyParams,
    ) -> Runner<'a> {
        let index = extract_prompts(&store);
        Runner {
            scenario,
            store,
            index,
            matcher,
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            agent,
            policy_params,
        }
    }

    pub fn with_match_threshold(mut self, threshold: f64) -> Runner<'a> {
        self.match_threshold = threshold;
        self
    }

    fn policy_rng(seed: u64) -> ChaCha12Rng {
        // separate stream from scene randomization
        ChaCha12Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xA5))
    }

    fn build_policy(&self) -> Result<ReplayPolicy, RunError> {
        ReplayPolicy::new(
            Arc::clone(&self.store),
            self.policy_params,
            self.scenario.joints,
            self.scenario.max_step_delta,
        )
        .map_err(|e| RunError::Config(e.to_string()))
    }

    /// All configuration checks a run would perform, without stepping:
    /// sequence shape, policy parameters, prompt resolvability, task
    /// declarations, scenario well-formedness.
    pub fn preflight(&self, sequence: &TaskSequence) -> Result<(), RunError> {
        sequence.validate()?;
        self.scenario.validate().map_err(|e| RunError::Config(e.to_string()))?;
        let policy = self.build_policy()?;
        for prompt in &sequence.prompts {
            if !policy.supports(prompt) {
                return Err(RunError::Config(format!(
                    "no demonstrations stored for prompt `{prompt}`"
                )));
            }
            if self.scenario.task(prompt.as_str()).is_none() {
                return Err(RunError::Config(format!(
                    "scenario `{}` declares no task for prompt `{prompt}`",
                    self.scenario.name
                )));
            }
        }
        Ok(())
    }

    /// Execute one trial: for each task, roll the policy to its budget,
    /// judge success from the end state, and in sci mode retrieve the next
    /// task's start configuration, synthesize a transition, and splice the
    /// interpreted actions into the trace.
    pub fn run(
        &self,
        sequence: &TaskSequence,
        seed: u64,
        mode: RunMode,
    ) -> Result<RunOutcome, RunError> {
        // every prompt must be resolvable before any stepping happens
        self.preflight(sequence)?;
        let mut policy = self.build_policy()?;

        let mut state =
            sim::init_scene(self.scenario, seed).map_err(|e| RunError::Config(e.to_string()))?;
        let mut rng = Self::policy_rng(seed);
        let n = sequence.len();
        let mut outcome = RunOutcome {
            mode,
            seed,
            success: vec![false; n],
            trace: ActionTrace::default(),
            faults: Vec::new(),
            transitions: Vec::new(),
            excluded: None,
            final_state: state.clone(),
        };

        'tasks: for i in 0..n {
            let prompt = &sequence.prompts[i];
            policy
                .reset_task(prompt, &sim::observe(&state))
                .map_err(|e| RunError::Config(e.to_string()))?;
            let fault_before = state.collision_step;
            for _ in 0..sequence.budgets[i] {
                let input =
                    PolicyInput { prompt: prompt.clone(), observation: sim::observe(&state) };
                let step_index = state.step_count;
                match policy
                    .next_action(&input, &mut rng)
                    .map_err(|e| RunError::Fault(e.to_string()))?
                {
                    PolicyStep::Act(action) => {
                        sim::step(self.scenario, &mut state, &action);
                        outcome.trace.entries.push(TraceEntry {
                            step: step_index,
                            action,
                            provenance: Provenance::Policy,
                            task: i,
                        });
                    }
                    PolicyStep::Done => break,
                }
            }
            if state.collision_step != fault_before {
                outcome
                    .faults
                    .push(RunFault { task: i, detail: "collision during policy rollout".to_string() });
            }
            outcome.success[i] = sim::task_succeeded(self.scenario, &state, prompt.as_str())
                .map_err(|e| RunError::Config(e.to_string()))?;

            if mode == RunMode::Sci && i + 1 < n {
                let next_prompt = &sequence.prompts[i + 1];
                let hit = search_target(
                    next_prompt,
                    &self.index,
                    &self.store,
                    self.matcher,
                    self.match_threshold,
                )
                .map_err(|e| RunError::Config(e.to_string()))?;
                let ctx = TransitionContext {
                    next_prompt: next_prompt.clone(),
                    observation: sim::observe(&state),
                    curr_qpos: state.arm.clone(),
                    target_qpos: hit.target.clone(),
                    scene_axis_hints: self.scenario.axis_hints.clone(),
                };
                match self.agent.synthesize(&ctx, self.scenario, &state) {
                    Ok(synthesis) => {
                        let result = interpret(&synthesis.program, self.scenario, &mut state);
                        let first_step = state.step_count - result.actions.len() as u64;
                        for (k, action) in result.actions.iter().enumerate() {
                            outcome.trace.entries.push(TraceEntry {
                                step: first_step + k as u64,
                                action: action.clone(),
                                provenance: Provenance::Transition,
                                task: i,
                            });
                        }
                        if let Some(fault) = &result.fault {
                            outcome
                                .faults
                                .push(RunFault { task: i, detail: format!("transition: {fault}") });
                        }
                        outcome.transitions.push(TransitionLog {
                            after_task: i,
                            matched_prompt: hit.prompt,
                            demo_id: hit.demo_id,
                            attempts: synthesis.attempts,
                            steps_emitted: result.actions.len(),
                            fault: result.fault,
                        });
                    }
                    Err(SynthesisError::Failed { attempts }) => {
                        outcome.transitions.push(TransitionLog {
                            after_task: i,
                            matched_prompt: hit.prompt,
                            demo_id: hit.demo_id,
                            attempts,
                            steps_emitted: 0,
                            fault: None,
                        });
                        outcome.excluded =
                            Some("transitional action synthesis failed".to_string());
                        break 'tasks;
                    }
                    Err(SynthesisError::Transport(e)) => {
                        outcome.excluded = Some(format!("transport failure: {e}"));
                        break 'tasks;
                    }
                    Err(SynthesisError::Config(e)) => return Err(RunError::Config(e)),
                }
            }
        }
        outcome.final_state = state;
        Ok(outcome)
    }
}

/// A recorded trial trace, replayable against the same scenario and seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceFile {
    pub scenario_name: String,
    pub seed: u64,
    pub mode: RunMode,
    pub entries: Vec<TraceEntry>,
    pub final_state: WorldState,
}

impl TraceFile {
    pub fn from_outcome(scenario: &ScenarioSpec, outcome: &RunOutcome) -> TraceFile {
        TraceFile {
            scenario_name: scenario.name.clone(),
            seed: outcome.seed,
            mode: outcome.mode,
            entries: outcome.trace.entries.clone(),
            final_state: outcome.final_state.clone(),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), RunError> {
        let text = serde_json::to_string_pretty(self).expect("trace serializes");
        std::fs::write(path, text)
            .map_err(|e| RunError::Fault(format!("write {}: {e}", path.display())))
    }

    pub fn load(path: &std::path::Path) -> Result<TraceFile, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| RunError::Config(format!("parse {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub matches: bool,
    pub replayed_state: WorldState,
}

/// Re-execute a recorded trace from the trace's seed and compare the final
/// world, serialized form against serialized form.
pub fn replay_trace(scenario: &ScenarioSpec, trace: &TraceFile) -> Result<ReplayReport, RunError> {
    if scenario.name != trace.scenario_name {
        return Err(RunError::Config(format!(
            "trace was recorded on scenario `{}`, not `{}`",
            trace.scenario_name, scenario.name
        )));
    }
    let mut state =
        sim::init_scene(scenario, trace.seed).map_err(|e| RunError::Config(e.to_string()))?;
    for entry in &trace.entries {
        sim::step(scenario, &mut state, &entry.action);
    }
    let matches = state.canonical_json() == trace.final_state.canonical_json();
    Ok(ReplayReport { matches, replayed_state: state })
}
