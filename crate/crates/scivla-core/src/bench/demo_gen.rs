//! Scripted-oracle demonstration generation: each atomic task's waypoint
//! template is executed in a freshly randomized scene from a randomized
//! start configuration, and the resulting trajectory is recorded as one
//! demonstration.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::BenchError;
use crate::demo::{Demonstration, TaskPrompt, TrajectoryPoint};
use crate::geometry::Vec3;
use crate::sim::{
    self, Action, GripperCommand, JointConfiguration, ScenarioSpec, TaskSpec, TemplateStep,
    TemplateTarget, WorldState,
};

/// Scenario clone with a task's demo-time object placement applied and home
/// perturbation disabled (demo starts come from the task's start region).
fn demo_scenario(scenario: &ScenarioSpec, task: &TaskSpec) -> Result<ScenarioSpec, BenchError> {
    let mut sc = scenario.clone();
    sc.perturbation = 0.0;
    for (object, region) in &task.spawn_overrides {
        let spec = sc
            .objects
            .iter_mut()
            .find(|o| &o.id == object)
            .ok_or_else(|| BenchError::Config(format!("unknown object `{object}` in override")))?;
        spec.spawn_region = region.clone();
    }
    Ok(sc)
}

fn resolve_target(
    scenario: &ScenarioSpec,
    state: &WorldState,
    target: &TemplateTarget,
) -> Result<Vec3, BenchError> {
    match target {
        TemplateTarget::Object { object } => state
            .objects
            .get(object)
            .map(|o| o.position)
            .ok_or_else(|| BenchError::Config(format!("template names unknown object `{object}`"))),
        TemplateTarget::Region { region_center } => scenario
            .regions
            .get(region_center)
            .map(|r| r.center())
            .ok_or_else(|| {
                BenchError::Config(format!("template names unknown region `{region_center}`"))
            }),
        TemplateTarget::Site { site } => scenario
            .site_position(&site[0], &site[1], &site[2])
            .ok_or_else(|| {
                BenchError::Config(format!(
                    "template names unknown site `{}.{}.{}`",
                    site[0], site[1], site[2]
                ))
            }),
        TemplateTarget::Point { point } => Ok(*point),
    }
}

struct OracleRecorder<'a> {
    scenario: &'a ScenarioSpec,
    state: WorldState,
    trajectory: Vec<TrajectoryPoint>,
}

impl OracleRecorder<'_> {
    fn record(&mut self, action: Action) {
        sim::step(self.scenario, &mut self.state, &action);
        self.trajectory.push(TrajectoryPoint {
            config: self.state.arm.clone(),
            command: action.gripper_command,
        });
    }

    /// Straight effector move discretized so each step's joint delta stays
    /// within max_step_delta in infinity norm.
    fn move_effector_to(&mut self, goal: Vec3) -> Result<(), BenchError> {
        let displacement = goal.sub(self.state.effector.position);
        if displacement.norm() == 0.0 {
            return Ok(());
        }
        let total =
            self.scenario.effector_map.joint_delta_for(displacement).ok_or_else(|| {
                BenchError::Config("effector map cannot realize template motion".to_string())
            })?;
        let widest = total.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let n = (widest / self.scenario.max_step_delta).ceil().max(1.0) as usize;
        let start = self.state.arm.joints.clone();
        let mut planned_prev = start.clone();
        for k in 1..=n {
            let t = k as f64 / n as f64;
            let planned: Vec<f64> = start.iter().zip(&total).map(|(s, d)| s + d * t).collect();
            let delta: Vec<f64> =
                planned.iter().zip(&planned_prev).map(|(a, b)| a - b).collect();
            self.record(Action { joint_delta: delta, gripper_command: GripperCommand::Hold });
            planned_prev = planned;
        }
        Ok(())
    }
}

/// Generate `count` demonstrations for the named atomic task. Every returned
/// demonstration has been executed in its own randomized scene and verified
/// to satisfy the task's success predicates.
pub fn generate_demos(
    scenario: &ScenarioSpec,
    task_prompt: &TaskPrompt,
    count: usize,
    seed: u64,
) -> Result<Vec<Demonstration>, BenchError> {
    let task = scenario
        .task(task_prompt.as_str())
        .ok_or_else(|| {
            BenchError::Config(format!("scenario declares no task for prompt `{task_prompt}`"))
        })?
        .clone();
    if task.template.is_empty() {
        return Err(BenchError::Config(format!(
            "task `{task_prompt}` has no oracle trajectory template"
        )));
    }
    let demo_sc = demo_scenario(scenario, &task)?;
    // decorrelate from trial streams, which seed scene rngs with raw seeds
    let mut master = ChaCha12Rng::seed_from_u64(seed.rotate_left(17) ^ 0xD1B5_4A32_D192_ED03);
    let mut demos = Vec::with_capacity(count);
    for episode in 0..count {
        let scene_seed: u64 = master.gen();
        let mut state = sim::init_scene(&demo_sc, scene_seed)
            .map_err(|e| BenchError::Config(e.to_string()))?;
        let mut start_joints = task.start_region.sample(&mut master);
        demo_sc.clamp_joints(&mut start_joints);
        state.arm = JointConfiguration::new(start_joints, 1.0);
        state.effector.position = demo_sc.effector_map.position(&state.arm.joints);

        let mut recorder = OracleRecorder {
            scenario: &demo_sc,
            state,
            trajectory: Vec::new(),
        };
        recorder.trajectory.push(TrajectoryPoint {
            config: recorder.state.arm.clone(),
            command: GripperCommand::Hold,
        });
        for step in &task.template {
            match step {
                TemplateStep::Approach { target, height } => {
                    let point = resolve_target(&demo_sc, &recorder.state, target)?;
                    let goal = Vec3::new(point.x, point.y, *height);
                    recorder.move_effector_to(goal)?;
                }
                TemplateStep::MoveTo { target } => {
                    let goal = resolve_target(&demo_sc, &recorder.state, target)?;
                    recorder.move_effector_to(goal)?;
                }
                TemplateStep::Grip { command } => {
                    recorder.record(Action {
                        joint_delta: vec![0.0; demo_sc.joints],
                        gripper_command: (*command).into(),
                    });
                }
            }
        }
        if recorder.state.has_collision_fault() {
            return Err(BenchError::Config(format!(
                "oracle trajectory for `{task_prompt}` (episode {episode}) crossed a keep-out box"
            )));
        }
        for predicate in &task.predicates {
            let ok = sim::evaluate(&demo_sc, &recorder.state, predicate)
                .map_err(|e| BenchError::Config(e.to_string()))?;
            if !ok {
                return Err(BenchError::Config(format!(
                    "oracle trajectory for `{task_prompt}` (episode {episode}) does not satisfy its success predicate"
                )));
            }
        }
        let mut metadata = BTreeMap::new();
        metadata.insert("scene_seed".to_string(), scene_seed.to_string());
        metadata.insert("episode".to_string(), episode.to_string());
        demos.push(Demonstration {
            prompt: task_prompt.clone(),
            trajectory: recorder.trajectory,
            metadata,
        });
    }
    Ok(demos)
}
