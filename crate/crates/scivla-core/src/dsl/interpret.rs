//! Expand a validated transitional-action program into simulator actions,
//! stepping the world as it goes. Movement commands become straight-line
//! effector motion via the scenario's joint map; joint recovery linearly
//! interpolates to the target configuration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Command, TransitionProgram};
use crate::geometry::Vec3;
use crate::sim::{self, Action, GripperCommand, ScenarioSpec, WorldState};

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterpreterFault {
    #[error("effector path crossed a keep-out box at step {step}")]
    Collision { step: u64 },
    #[error("command {command_index} recovers joints while holding an object")]
    GripperConflict { command_index: usize },
    #[error("joint recovery ended {error} rad away from its target (a joint limit clamped the path)")]
    RecoveryIncomplete { error: f64 },
    #[error("effector map cannot realize the requested displacement")]
    UnreachableDisplacement,
}

/// The actions emitted (already applied to the state) plus the first fault
/// encountered, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpretOutcome {
    pub actions: Vec<Action>,
    pub fault: Option<InterpreterFault>,
}

impl InterpretOutcome {
    pub fn is_clean(&self) -> bool {
        self.fault.is_none()
    }
}

/// Run a program against the world. The caller is expected to have validated
/// the program first; a joint recovery that begins while an object is held
/// records a gripper-conflict fault and aborts. Collisions are recorded in
/// the state (as in ordinary stepping) and execution continues.
pub fn interpret(
    program: &TransitionProgram,
    scenario: &ScenarioSpec,
    state: &mut WorldState,
) -> InterpretOutcome {
    let mut actions = Vec::new();
    let mut fault: Option<InterpreterFault> = None;
    let note = |f: InterpreterFault, slot: &mut Option<InterpreterFault>| {
        if slot.is_none() {
            *slot = Some(f);
        }
    };

    for (idx, command) in program.commands.iter().enumerate() {
        match command {
            Command::ReleaseGripper => {
                apply(scenario, state, &mut actions, &mut fault, Action {
                    joint_delta: vec![0.0; scenario.joints],
                    gripper_command: GripperCommand::Open,
                });
            }
            Command::Translate { axis, delta } => {
                let from = state.effector.position;
                let to = from.with_axis(axis.index(), from.axis(axis.index()) + delta);
                if !emit_linear_move(scenario, state, &mut actions, &mut fault, from, to) {
                    note(InterpreterFault::UnreachableDisplacement, &mut fault);
                    break;
                }
            }
            Command::LiftToSafe { height } => {
                let from = state.effector.position;
                let to = from.with_axis(2, *height);
                if !emit_linear_move(scenario, state, &mut actions, &mut fault, from, to) {
                    note(InterpreterFault::UnreachableDisplacement, &mut fault);
                    break;
                }
            }
            Command::RecoverJoints { target, steps } => {
                if state.effector.holding.is_some() {
                    note(InterpreterFault::GripperConflict { command_index: idx }, &mut fault);
                    return InterpretOutcome { actions, fault };
                }
                let start = state.arm.joints.clone();
                let n = *steps;
                let mut planned_prev = start.clone();
                for k in 1..=n {
                    let planned: Vec<f64> = if k == n {
                        target.joints.clone()
                    } else {
                        let t = k as f64 / n as f64;
                        start
                            .iter()
                            .zip(&target.joints)
                            .map(|(s, g)| s + (g - s) * t)
                            .collect()
                    };
                    let delta: Vec<f64> =
                        planned.iter().zip(&planned_prev).map(|(a, b)| a - b).collect();
                    apply(scenario, state, &mut actions, &mut fault, Action {
                        joint_delta: delta,
                        gripper_command: GripperCommand::Hold,
                    });
                    planned_prev = planned;
                }
                let err = state
                    .arm
                    .joints
                    .iter()
                    .zip(&target.joints)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if err > 1e-9 {
                    note(InterpreterFault::RecoveryIncomplete { error: err }, &mut fault);
                }
            }
        }
    }
    InterpretOutcome { actions, fault }
}

fn apply(
    scenario: &ScenarioSpec,
    state: &mut WorldState,
    actions: &mut Vec<Action>,
    fault: &mut Option<InterpreterFault>,
    action: Action,
) {
    let had_collision = state.collision_step;
    sim::step(scenario, state, &action);
    if fault.is_none() && state.collision_step != had_collision {
        *fault = Some(InterpreterFault::Collision {
            step: state.collision_step.expect("collision just recorded"),
        });
    }
    actions.push(action);
}

/// Emit joint-space actions tracing the straight effector segment from
/// `from` to `to` in `ceil(distance / effector_step)` steps. Returns false
/// when the effector map cannot realize the displacement.
fn emit_linear_move(
    scenario: &ScenarioSpec,
    state: &mut WorldState,
    actions: &mut Vec<Action>,
    fault: &mut Option<InterpreterFault>,
    from: Vec3,
    to: Vec3,
) -> bool {
    let displacement = to.sub(from);
    let distance = displacement.norm();
    if distance == 0.0 {
        return true;
    }
    let Some(total) = scenario.effector_map.joint_delta_for(displacement) else {
        return false;
    };
    let n = (distance / scenario.effector_step).ceil() as usize;
    let start = state.arm.joints.clone();
    let mut planned_prev = start.clone();
    for k in 1..=n {
        let t = k as f64 / n as f64;
        let planned: Vec<f64> = start.iter().zip(&total).map(|(s, d)| s + d * t).collect();
        let delta: Vec<f64> = planned.iter().zip(&planned_prev).map(|(a, b)| a - b).collect();
        apply(scenario, state, actions, fault, Action {
            joint_delta: delta,
            gripper_command: GripperCommand::Hold,
        });
        planned_prev = planned;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse, validate, Axis};
    use crate::sim::JointConfiguration;

    fn scenario_and_state() -> (ScenarioSpec, WorldState) {
        let sc = crate::sim::testkit::test_scenario();
        let state = sim::init_scene(&sc, 3).unwrap();
        (sc, state)
    }

    #[test]
    fn recover_to_current_configuration_is_a_fixed_point() {
        let (sc, mut state) = scenario_and_state();
        let before = state.clone();
        let program = TransitionProgram {
            commands: vec![Command::RecoverJoints {
                target: JointConfiguration::new(state.arm.joints.clone(), 1.0),
                steps: 12,
            }],
        };
        let outcome = interpret(&program, &sc, &mut state);
        assert!(outcome.is_clean());
        assert_eq!(outcome.actions.len(), 12);
        assert_eq!(state.arm.joints, before.arm.joints);
        assert_eq!(state.effector, before.effector);
        assert_eq!(state.step_count, before.step_count + 12);
        for a in &outcome.actions {
            assert!(a.joint_delta.iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn recovery_lands_exactly_on_target() {
        let (sc, mut state) = scenario_and_state();
        let target = vec![0.31, 0.62, 0.47, 0.1, -0.2, 0.05];
        let program = TransitionProgram {
            commands: vec![Command::RecoverJoints {
                target: JointConfiguration::new(target.clone(), 1.0),
                steps: 50,
            }],
        };
        let outcome = interpret(&program, &sc, &mut state);
        assert!(outcome.is_clean(), "fault: {:?}", outcome.fault);
        let err = state
            .arm
            .joints
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-9, "residual {err}");
        // effector ends at the map of the target
        let expected = sc.effector_map.position(&target);
        assert!(state.effector.position.dist(expected) <= 1e-9);
    }

    #[test]
    fn release_emits_one_open_step() {
        let (sc, mut state) = scenario_and_state();
        state.effector.holding = Some("tip_box".to_string());
        state.arm.gripper = 0.0;
        let program = TransitionProgram { commands: vec![Command::ReleaseGripper] };
        let outcome = interpret(&program, &sc, &mut state);
        assert!(outcome.is_clean());
        assert_eq!(outcome.actions.len(), 1);
        assert_eq!(outcome.actions[0].gripper_command, GripperCommand::Open);
        assert!(state.effector.holding.is_none());
        assert_eq!(state.arm.gripper, 1.0);
    }

    #[test]
    fn translate_moves_effector_linearly_in_expected_step_count() {
        let (sc, mut state) = scenario_and_state();
        let from = state.effector.position;
        let program = TransitionProgram {
            commands: vec![Command::Translate { axis: Axis::Y, delta: 0.11 }],
        };
        let outcome = interpret(&program, &sc, &mut state);
        assert!(outcome.is_clean());
        // ceil(0.11 / 0.02) = 6 steps
        assert_eq!(outcome.actions.len(), 6);
        let expected = from.with_axis(1, from.y + 0.11);
        assert!(state.effector.position.dist(expected) <= 1e-9);
    }

    #[test]
    fn lift_moves_to_absolute_height() {
        let (sc, mut state) = scenario_and_state();
        let program = TransitionProgram { commands: vec![Command::LiftToSafe { height: 0.9 }] };
        let outcome = interpret(&program, &sc, &mut state);
        assert!(outcome.is_clean());
        assert!((state.effector.position.z - 0.9).abs() <= 1e-9);
    }

    #[test]
    fn recover_while_holding_faults_and_aborts() {
        let (sc, mut state) = scenario_and_state();
        state.effector.holding = Some("tip_box".to_string());
        let program = TransitionProgram {
            commands: vec![Command::RecoverJoints {
                target: JointConfiguration::new(sc.home.joints.clone(), 1.0),
                steps: 10,
            }],
        };
        let outcome = interpret(&program, &sc, &mut state);
        assert_eq!(
            outcome.fault,
            Some(InterpreterFault::GripperConflict { command_index: 0 })
        );
        assert!(outcome.actions.is_empty());
    }

    #[test]
    fn collision_is_recorded_in_state_and_outcome() {
        let (sc, mut state) = scenario_and_state();
        // descend straight into the keep-out slab
        state.arm.joints = vec![0.5, 0.55, 0.5, 0.0, 0.0, 0.0];
        state.effector.position = sc.effector_map.position(&state.arm.joints);
        let program = TransitionProgram {
            commands: vec![
                Command::Translate { axis: Axis::Z, delta: -0.3 },
                Command::RecoverJoints {
                    target: JointConfiguration::new(vec![0.5, 0.55, 0.5, 0.0, 0.0, 0.0], 1.0),
                    steps: 5,
                },
            ],
        };
        let outcome = interpret(&program, &sc, &mut state);
        assert!(matches!(outcome.fault, Some(InterpreterFault::Collision { .. })));
        assert!(state.has_collision_fault());
        // execution continued to the end of the program
        assert_eq!(outcome.actions.len(), 15 + 5);
    }

    #[test]
    fn clamped_recovery_reports_incomplete() {
        let (sc, mut state) = scenario_and_state();
        // target joint 0 at the limit; asking for beyond-limit motion clamps
        let mut target = state.arm.joints.clone();
        target[0] = sc.limits.upper[0];
        state.arm.joints[0] = sc.limits.upper[0];
        state.effector.position = sc.effector_map.position(&state.arm.joints);
        // now drive past the limit by planning from a shifted start
        let program = TransitionProgram {
            commands: vec![Command::RecoverJoints {
                target: JointConfiguration::new(
                    {
                        let mut t = target.clone();
                        t[0] = sc.limits.upper[0] + 0.5;
                        t
                    },
                    1.0,
                ),
                steps: 4,
            }],
        };
        let outcome = interpret(&program, &sc, &mut state);
        assert!(matches!(outcome.fault, Some(InterpreterFault::RecoveryIncomplete { .. })));
    }

    #[test]
    fn parsed_and_validated_program_interprets_cleanly() {
        let (sc, mut state) = scenario_and_state();
        let src = format!(
            "# retreat then recover\nlift_to_safe height=0.6\nrecover_joints target=[{}, 1.0] steps=40\n",
            sc.home
                .joints
                .iter()
                .map(|v| format!("{v:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
        let program = parse(&src).unwrap();
        assert!(validate(&program, &sc, &state).is_empty());
        let outcome = interpret(&program, &sc, &mut state);
        assert!(outcome.is_clean());
        let err = state
            .arm
            .joints
            .iter()
            .zip(&sc.home.joints)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-9);
    }
}
