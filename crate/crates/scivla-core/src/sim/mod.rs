//! Deterministic kinematic laboratory simulator: scene initialization,
//! discrete action stepping, success predicates, and structured observation.

mod scenario;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

pub use scenario::{
    ConfigError, EffectorMap, GripperCommandSpec, HomeConfiguration, InstrumentSpec, JointRegion,
    LatchSpec, ObjectSpec, ScenarioSpec, SuccessPredicate, TaskSpec, TemplateStep, TemplateTarget,
};

/// Arm joint vector plus gripper aperture (0 = closed, 1 = open).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfiguration {
    pub joints: Vec<f64>,
    pub gripper: f64,
}

impl JointConfiguration {
    pub fn new(joints: Vec<f64>, gripper: f64) -> Self {
        JointConfiguration { joints, gripper }
    }

    /// Infinity-norm distance over the joint vector; aperture excluded.
    pub fn joint_distance(&self, other: &JointConfiguration) -> f64 {
        self.joints
            .iter()
            .zip(&other.joints)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperCommand {
    Open,
    Close,
    Hold,
}

impl From<GripperCommandSpec> for GripperCommand {
    fn from(c: GripperCommandSpec) -> Self {
        match c {
            GripperCommandSpec::Open => GripperCommand::Open,
            GripperCommandSpec::Close => GripperCommand::Close,
            GripperCommandSpec::Hold => GripperCommand::Hold,
        }
    }
}

/// One control tick: per-joint angle increments plus a gripper command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub joint_delta: Vec<f64>,
    pub gripper_command: GripperCommand,
}

impl Action {
    pub fn hold(j: usize) -> Action {
        Action { joint_delta: vec![0.0; j], gripper_command: GripperCommand::Hold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectorState {
    pub position: Vec3,
    pub holding: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub position: Vec3,
    /// Name of the region the object spawned in.
    pub region_tag: String,
}

/// Ground-truth world state for one trial. Values are self-contained and
/// safe to hand between threads; a given instance belongs to one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub objects: BTreeMap<String, ObjectState>,
    pub instruments: BTreeMap<String, BTreeMap<String, String>>,
    pub keep_out: Vec<crate::geometry::Aabb>,
    pub effector: EffectorState,
    pub arm: JointConfiguration,
    pub step_count: u64,
    /// Step index of the first keep-out violation, if any. Never cleared
    /// within a trial.
    pub collision_step: Option<u64>,
}

impl WorldState {
    pub fn has_collision_fault(&self) -> bool {
        self.collision_step.is_some()
    }

    /// Canonical serialized form used for bit-exact state comparisons.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("world state serializes")
    }
}

/// What an agent is allowed to see: proprioception, latch readouts, and
/// coarse (millimeter-rounded) object positions. No success predicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSummary {
    pub joints: Vec<f64>,
    pub gripper: f64,
    pub effector: Vec3,
    pub holding: Option<String>,
    pub latches: BTreeMap<String, BTreeMap<String, String>>,
    pub objects: BTreeMap<String, Vec3>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown object id `{0}`")]
    UnknownObject(String),
    #[error("unknown instrument id `{0}`")]
    UnknownInstrument(String),
    #[error("unknown latch `{latch}` on instrument `{instrument}`")]
    UnknownLatch { instrument: String, latch: String },
    #[error("unknown region `{0}`")]
    UnknownRegion(String),
    #[error("no task declared for prompt `{0}`")]
    UnknownTask(String),
}

/// Build the trial-start world: object positions sampled uniformly within
/// their spawn regions, arm at home plus a per-joint uniform perturbation
/// of magnitude `scenario.perturbation`. Identical (scenario, seed) pairs
/// yield identical states.
pub fn init_scene(scenario: &ScenarioSpec, seed: u64) -> Result<WorldState, ConfigError> {
    scenario.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut objects = BTreeMap::new();
    for spec in &scenario.objects {
        let region = &scenario.regions[&spec.spawn_region];
        objects.insert(
            spec.id.clone(),
            ObjectState { position: region.sample(&mut rng), region_tag: spec.spawn_region.clone() },
        );
    }
    let mut joints = scenario.home.joints.clone();
    if scenario.perturbation > 0.0 {
        for q in joints.iter_mut() {
            *q += rng.gen_range(-scenario.perturbation..=scenario.perturbation);
        }
    }
    scenario.clamp_joints(&mut joints);
    let effector_position = scenario.effector_map.position(&joints);
    let instruments = scenario
        .instruments
        .iter()
        .map(|inst| {
            let latches = inst
                .latches
                .iter()
                .map(|(name, latch)| (name.clone(), latch.initial.clone()))
                .collect();
            (inst.id.clone(), latches)
        })
        .collect();
    Ok(WorldState {
        objects,
        instruments,
        keep_out: scenario.keep_out.clone(),
        effector: EffectorState { position: effector_position, holding: None },
        arm: JointConfiguration::new(joints, scenario.home.gripper),
        step_count: 0,
        collision_step: None,
    })
}

/// Advance the world by one action. Joints are clamped to limits, the
/// effector follows the scenario's affine map, and a close command grasps
/// the nearest graspable object within `grasp_radius` or, failing that,
/// actuates a latch site within `actuation_radius`. A keep-out crossing by
/// the effector path records a collision fault; execution continues.
pub fn step(scenario: &ScenarioSpec, state: &mut WorldState, action: &Action) {
    let start = state.effector.position;
    for (j, delta) in action.joint_delta.iter().enumerate().take(state.arm.joints.len()) {
        let q = state.arm.joints[j] + delta;
        state.arm.joints[j] = q.max(scenario.limits.lower[j]).min(scenario.limits.upper[j]);
    }
    let end = scenario.effector_map.position(&state.arm.joints);
    state.effector.position = end;

    if state.collision_step.is_none()
        && state.keep_out.iter().any(|b| b.intersects_segment(start, end))
    {
        state.collision_step = Some(state.step_count);
    }

    match action.gripper_command {
        GripperCommand::Hold => {}
        GripperCommand::Open => {
            state.arm.gripper = 1.0;
            // released object remains wherever it was carried to
            state.effector.holding = None;
        }
        GripperCommand::Close => {
            state.arm.gripper = 0.0;
            if state.effector.holding.is_none() {
                if let Some(id) = nearest_graspable(scenario, state, end) {
                    state.effector.holding = Some(id);
                } else if let Some((instrument, latch, value)) = site_in_reach(scenario, end) {
                    if let Some(latches) = state.instruments.get_mut(&instrument) {
                        latches.insert(latch, value);
                    }
                }
            }
        }
    }

    if let Some(id) = &state.effector.holding {
        if let Some(obj) = state.objects.get_mut(id) {
            obj.position = end;
        }
    }
    state.step_count += 1;
}

fn nearest_graspable(scenario: &ScenarioSpec, state: &WorldState, at: Vec3) -> Option<String> {
    let mut best: Option<(f64, &str)> = None;
    for spec in &scenario.objects {
        if !spec.graspable {
            continue;
        }
        let Some(obj) = state.objects.get(&spec.id) else { continue };
        let d = obj.position.dist(at);
        if d <= scenario.grasp_radius && best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, &spec.id));
        }
    }
    best.map(|(_, id)| id.to_string())
}

fn site_in_reach(scenario: &ScenarioSpec, at: Vec3) -> Option<(String, String, String)> {
    let mut best: Option<(f64, (String, String, String))> = None;
    for inst in &scenario.instruments {
        for (latch, spec) in &inst.latches {
            for (value, point) in &spec.sites {
                let d = point.dist(at);
                if d <= scenario.actuation_radius && best.as_ref().map_or(true, |(bd, _)| d < *bd) {
                    best = Some((d, (inst.id.clone(), latch.clone(), value.clone())));
                }
            }
        }
    }
    best.map(|(_, hit)| hit)
}

/// Pure check of a success predicate against the current state.
pub fn evaluate(
    scenario: &ScenarioSpec,
    state: &WorldState,
    predicate: &SuccessPredicate,
) -> Result<bool, SimError> {
    match predicate {
        SuccessPredicate::ObjectInRegion { object, region } => {
            let obj = state
                .objects
                .get(object)
                .ok_or_else(|| SimError::UnknownObject(object.clone()))?;
            let r = scenario
                .regions
                .get(region)
                .ok_or_else(|| SimError::UnknownRegion(region.clone()))?;
            Ok(r.contains(obj.position))
        }
        SuccessPredicate::LatchEquals { instrument, latch, value } => {
            let latches = state
                .instruments
                .get(instrument)
                .ok_or_else(|| SimError::UnknownInstrument(instrument.clone()))?;
            let current = latches.get(latch).ok_or_else(|| SimError::UnknownLatch {
                instrument: instrument.clone(),
                latch: latch.clone(),
            })?;
            Ok(current == value)
        }
        SuccessPredicate::EffectorInRegion { region } => {
            let r = scenario
                .regions
                .get(region)
                .ok_or_else(|| SimError::UnknownRegion(region.clone()))?;
            Ok(r.contains(state.effector.position))
        }
    }
}

/// All task predicates for `prompt` hold and no collision fault is set.
pub fn task_succeeded(
    scenario: &ScenarioSpec,
    state: &WorldState,
    prompt: &str,
) -> Result<bool, SimError> {
    if state.has_collision_fault() {
        return Ok(false);
    }
    let Some(task) = scenario.task(prompt) else {
        return Err(SimError::UnknownTask(prompt.to_string()));
    };
    for p in &task.predicates {
        if !evaluate(scenario, state, p)? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn round_mm(v: Vec3) -> Vec3 {
    Vec3::new(
        (v.x * 1000.0).round() / 1000.0,
        (v.y * 1000.0).round() / 1000.0,
        (v.z * 1000.0).round() / 1000.0,
    )
}

/// Structured stand-in for a camera view.
pub fn observe(state: &WorldState) -> ObservationSummary {
    ObservationSummary {
        joints: state.arm.joints.clone(),
        gripper: state.arm.gripper,
        effector: state.effector.position,
        holding: state.effector.holding.clone(),
        latches: state.instruments.clone(),
        objects: state.objects.iter().map(|(id, o)| (id.clone(), round_mm(o.position))).collect(),
    }
}
