//! Atomic-task policy interface plus the reference replay policy: replays a
//! recorded demonstration when the arm starts close enough to one of that
//! task's demo start configurations, and degrades to bounded trembling when
//! the start state is out of distribution.

use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demo::{DemoId, DemoStore, TaskPrompt};
use crate::sim::{Action, GripperCommand, ObservationSummary};

/// Per-joint infinity-norm threshold separating in-distribution replay from
/// out-of-distribution trembling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionGate {
    pub epsilon: f64,
}

impl Default for DistributionGate {
    fn default() -> Self {
        DistributionGate { epsilon: 0.15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub gate: DistributionGate,
    pub jitter_amp: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams { gate: DistributionGate::default(), jitter_amp: 0.01 }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyInput {
    pub prompt: TaskPrompt,
    pub observation: ObservationSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    Replay,
    Jitter,
}

/// Selection made at an atomic-task boundary, fixed for the whole task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHandle {
    pub mode: PolicyMode,
    pub demo_id: Option<DemoId>,
    pub start_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyStep {
    Act(Action),
    Done,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no demonstrations stored for prompt `{0}`")]
    UnknownTask(String),
    #[error("next_action called before reset_task")]
    NotReset,
    #[error("invalid policy parameters: {0}")]
    InvalidParams(String),
}

pub trait Policy {
    fn supports(&self, prompt: &TaskPrompt) -> bool;
    fn reset_task(
        &mut self,
        prompt: &TaskPrompt,
        observation: &ObservationSummary,
    ) -> Result<TaskHandle, PolicyError>;
    fn next_action(
        &mut self,
        input: &PolicyInput,
        rng: &mut dyn RngCore,
    ) -> Result<PolicyStep, PolicyError>;
}

#[derive(Debug)]
struct ActiveTask {
    mode: PolicyMode,
    demo_id: Option<DemoId>,
    cursor: usize,
}

/// Open-loop demonstration replay behind a distribution gate.
#[derive(Debug)]
pub struct ReplayPolicy {
    store: Arc<DemoStore>,
    params: PolicyParams,
    joints: usize,
    active: Option<ActiveTask>,
}

impl ReplayPolicy {
    /// `max_step_delta` is the scenario's per-step bound; jitter amplitude
    /// must not exceed it.
    pub fn new(
        store: Arc<DemoStore>,
        params: PolicyParams,
        joints: usize,
        max_step_delta: f64,
    ) -> Result<ReplayPolicy, PolicyError> {
        if !(params.gate.epsilon > 0.0) {
            return Err(PolicyError::InvalidParams("epsilon must be positive".to_string()));
        }
        if !(params.jitter_amp > 0.0 && params.jitter_amp <= max_step_delta) {
            return Err(PolicyError::InvalidParams(format!(
                "jitter_amp must be in (0, {max_step_delta}]"
            )));
        }
        Ok(ReplayPolicy { store, params, joints, active: None })
    }

    pub fn current_mode(&self) -> Option<PolicyMode> {
        self.active.as_ref().map(|a| a.mode)
    }

    fn select_demo(&self, prompt: &TaskPrompt, joints: &[f64]) -> Option<(DemoId, f64)> {
        let mut best: Option<(DemoId, f64)> = None;
        for id in self.store.ids_for_prompt(prompt) {
            let start = self.store.get(id).expect("id from store").start();
            let d = start
                .joints
                .iter()
                .zip(joints)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((id, d));
            }
        }
        best
    }
}

impl Policy for ReplayPolicy {
    fn supports(&self, prompt: &TaskPrompt) -> bool {
        !self.store.ids_for_prompt(prompt).is_empty()
    }

    fn reset_task(
        &mut self,
        prompt: &TaskPrompt,
        observation: &ObservationSummary,
    ) -> Result<TaskHandle, PolicyError> {
        let (demo_id, distance) = self
            .select_demo(prompt, &observation.joints)
            .ok_or_else(|| PolicyError::UnknownTask(prompt.as_str().to_string()))?;
        let handle = if distance <= self.params.gate.epsilon {
            self.active = Some(ActiveTask { mode: PolicyMode::Replay, demo_id: Some(demo_id), cursor: 0 });
            TaskHandle { mode: PolicyMode::Replay, demo_id: Some(demo_id), start_distance: distance }
        } else {
            self.active = Some(ActiveTask { mode: PolicyMode::Jitter, demo_id: None, cursor: 0 });
            TaskHandle { mode: PolicyMode::Jitter, demo_id: None, start_distance: distance }
        };
        Ok(handle)
    }

    fn next_action(
        &mut self,
        _input: &PolicyInput,
        rng: &mut dyn RngCore,
    ) -> Result<PolicyStep, PolicyError> {
        let active = self.active.as_mut().ok_or(PolicyError::NotReset)?;
        match active.mode {
            PolicyMode::Replay => {
                let demo = self
                    .store
                    .get(active.demo_id.expect("replay mode has a demo"))
                    .expect("demo id valid");
                if active.cursor + 1 < demo.trajectory.len() {
                    let prev = &demo.trajectory[active.cursor].config;
                    let next = &demo.trajectory[active.cursor + 1];
                    active.cursor += 1;
                    let delta = next
                        .config
                        .joints
                        .iter()
                        .zip(&prev.joints)
                        .map(|(a, b)| a - b)
                        .collect();
                    Ok(PolicyStep::Act(Action {
                        joint_delta: delta,
                        gripper_command: next.command,
                    }))
                } else {
                    // demo exhausted: idle until the budget runs out
                    Ok(PolicyStep::Act(Action::hold(self.joints)))
                }
            }
            PolicyMode::Jitter => {
                let amp = self.params.jitter_amp;
                let delta = (0..self.joints).map(|_| rng.gen_range(-amp..=amp)).collect();
                Ok(PolicyStep::Act(Action { joint_delta: delta, gripper_command: GripperCommand::Hold }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::{Demonstration, TrajectoryPoint};
    use crate::sim::{self, JointConfiguration};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::collections::BTreeMap;

    fn line_demo(prompt: &str, start: Vec<f64>, step: f64, len: usize) -> Demonstration {
        let mut trajectory = vec![TrajectoryPoint {
            config: JointConfiguration::new(start.clone(), 1.0),
            command: GripperCommand::Hold,
        }];
        let mut joints = start;
        for _ in 0..len {
            joints[0] += step;
            trajectory.push(TrajectoryPoint {
                config: JointConfiguration::new(joints.clone(), 1.0),
                command: GripperCommand::Hold,
            });
        }
        Demonstration { prompt: TaskPrompt::new(prompt), trajectory, metadata: BTreeMap::new() }
    }

    fn obs_with_joints(joints: Vec<f64>) -> ObservationSummary {
        ObservationSummary {
            joints,
            gripper: 1.0,
            effector: crate::geometry::Vec3::ZERO,
            holding: None,
            latches: BTreeMap::new(),
            objects: BTreeMap::new(),
        }
    }

    fn make_policy(demos: Vec<Demonstration>) -> ReplayPolicy {
        let store = Arc::new(DemoStore::from_demos(demos).unwrap());
        ReplayPolicy::new(store, PolicyParams::default(), 6, 0.05).unwrap()
    }

    #[test]
    fn zero_gap_start_replays_demo_to_its_final_configuration() {
        let start = vec![0.5, 0.45, 0.55, 0.0, 0.0, 0.0];
        let demo = line_demo("slide right", start.clone(), 0.01, 20);
        let final_config = demo.trajectory.last().unwrap().config.clone();
        let mut policy = make_policy(vec![demo]);

        let sc = crate::sim::testkit::test_scenario();
        let mut state = sim::init_scene(&sc, 0).unwrap();
        state.arm.joints = start.clone();
        state.effector.position = sc.effector_map.position(&state.arm.joints);

        let prompt = TaskPrompt::new("slide right");
        let handle = policy.reset_task(&prompt, &sim::observe(&state)).unwrap();
        assert_eq!(handle.mode, PolicyMode::Replay);
        assert_eq!(handle.demo_id, Some(0));

        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for _ in 0..20 {
            let input =
                PolicyInput { prompt: prompt.clone(), observation: sim::observe(&state) };
            match policy.next_action(&input, &mut rng).unwrap() {
                PolicyStep::Act(a) => sim::step(&sc, &mut state, &a),
                PolicyStep::Done => panic!("replay policy never signals completion"),
            }
        }
        let err = state.arm.joint_distance(&final_config);
        assert!(err <= 1e-9, "replay drifted by {err}");
    }

    #[test]
    fn offset_beyond_gate_jitters_for_whole_budget_and_fails_task() {
        let start = vec![0.5, 0.45, 0.55, 0.0, 0.0, 0.0];
        let demo = line_demo("slide right", start.clone(), 0.01, 20);
        let mut policy = make_policy(vec![demo]);

        let mut sc = crate::sim::testkit::test_scenario();
        sc.tasks = vec![crate::sim::TaskSpec {
            prompt: "slide right".to_string(),
            predicates: vec![crate::sim::SuccessPredicate::ObjectInRegion {
                object: "tip_box".to_string(),
                region: "basket".to_string(),
            }],
            start_region: crate::sim::JointRegion {
                lower: start.clone(),
                upper: start.clone(),
            },
            template: vec![],
            spawn_overrides: BTreeMap::new(),
        }];
        let mut state = sim::init_scene(&sc, 0).unwrap();
        let mut joints = start.clone();
        joints[1] += 2.0 * PolicyParams::default().gate.epsilon;
        state.arm.joints = joints;
        state.effector.position = sc.effector_map.position(&state.arm.joints);

        let prompt = TaskPrompt::new("slide right");
        let handle = policy.reset_task(&prompt, &sim::observe(&state)).unwrap();
        assert_eq!(handle.mode, PolicyMode::Jitter);

        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..60 {
            assert_eq!(policy.current_mode(), Some(PolicyMode::Jitter));
            let input =
                PolicyInput { prompt: prompt.clone(), observation: sim::observe(&state) };
            let PolicyStep::Act(a) = policy.next_action(&input, &mut rng).unwrap() else {
                panic!("replay policy never signals completion");
            };
            for d in &a.joint_delta {
                assert!(d.abs() <= PolicyParams::default().jitter_amp);
            }
            assert_eq!(a.gripper_command, GripperCommand::Hold);
            sim::step(&sc, &mut state, &a);
        }
        assert!(!sim::task_succeeded(&sc, &state, "slide right").unwrap());
    }

    #[test]
    fn reset_is_deterministic_for_equal_inputs() {
        let demos = vec![
            line_demo("slide right", vec![0.50, 0.45, 0.55, 0.0, 0.0, 0.0], 0.01, 5),
            line_demo("slide right", vec![0.52, 0.46, 0.54, 0.0, 0.0, 0.0], 0.01, 5),
        ];
        let mut policy = make_policy(demos);
        let obs = obs_with_joints(vec![0.515, 0.455, 0.545, 0.0, 0.0, 0.0]);
        let prompt = TaskPrompt::new("slide right");
        let a = policy.reset_task(&prompt, &obs).unwrap();
        let b = policy.reset_task(&prompt, &obs).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.demo_id, Some(1));
    }

    #[test]
    fn nearest_demo_ties_break_toward_lowest_id() {
        let demos = vec![
            line_demo("slide right", vec![0.5; 6], 0.01, 5),
            line_demo("slide right", vec![0.5; 6], 0.02, 5),
        ];
        let mut policy = make_policy(demos);
        let obs = obs_with_joints(vec![0.5; 6]);
        let handle = policy.reset_task(&TaskPrompt::new("slide right"), &obs).unwrap();
        assert_eq!(handle.demo_id, Some(0));
    }

    #[test]
    fn unknown_prompt_is_rejected() {
        let mut policy = make_policy(vec![line_demo("slide right", vec![0.5; 6], 0.01, 5)]);
        let obs = obs_with_joints(vec![0.5; 6]);
        let err = policy.reset_task(&TaskPrompt::new("fold the laundry"), &obs).unwrap_err();
        assert!(matches!(err, PolicyError::UnknownTask(_)));
        assert!(!policy.supports(&TaskPrompt::new("fold the laundry")));
        assert!(policy.supports(&TaskPrompt::new(" slide  right ")));
    }

    #[test]
    fn next_action_before_reset_is_an_error() {
        let mut policy = make_policy(vec![line_demo("slide right", vec![0.5; 6], 0.01, 5)]);
        let input = PolicyInput {
            prompt: TaskPrompt::new("slide right"),
            observation: obs_with_joints(vec![0.5; 6]),
        };
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(matches!(policy.next_action(&input, &mut rng), Err(PolicyError::NotReset)));
    }

    #[test]
    fn exhausted_demo_idles_with_identity_actions() {
        let mut policy = make_policy(vec![line_demo("slide right", vec![0.5; 6], 0.01, 2)]);
        let obs = obs_with_joints(vec![0.5; 6]);
        let prompt = TaskPrompt::new("slide right");
        policy.reset_task(&prompt, &obs).unwrap();
        let input = PolicyInput { prompt: prompt.clone(), observation: obs };
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for k in 0..5 {
            let PolicyStep::Act(a) = policy.next_action(&input, &mut rng).unwrap() else {
                panic!("unexpected completion");
            };
            if k >= 2 {
                assert_eq!(a, Action::hold(6));
            }
        }
    }

    #[test]
    fn jitter_amp_above_step_bound_is_rejected() {
        let store = Arc::new(
            DemoStore::from_demos(vec![line_demo("slide right", vec![0.5; 6], 0.01, 2)]).unwrap(),
        );
        let params = PolicyParams { gate: DistributionGate::default(), jitter_amp: 0.2 };
        assert!(matches!(
            ReplayPolicy::new(store, params, 6, 0.05),
            Err(PolicyError::InvalidParams(_))
        ));
    }
}
