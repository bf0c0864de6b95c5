//! Safety validation of transitional-action programs against the current
//! world: release-first, retreat-first, mandatory recovery, and a command
//! budget, plus scenario-dependent range checks.

use serde::{Deserialize, Serialize};

use super::{Command, TransitionProgram};
use crate::geometry::Vec3;
use crate::sim::{ScenarioSpec, WorldState};

pub const DEFAULT_MAX_COMMANDS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    /// Rule (a): recover_joints while holding an object without a prior
    /// release_gripper.
    ReleaseFirst { command_index: usize },
    /// Rule (b): a predicted effector path segment crosses a keep-out box
    /// without a preceding lift_to_safe at or above the box top.
    RetreatFirst { command_index: usize, keep_out_index: usize, required_height: f64 },
    /// Rule (c): the program contains no recover_joints command.
    NoRecovery,
    /// Rule (d): the program exceeds the command budget.
    TooManyCommands { count: usize, max: usize },
    /// recover_joints target violates joint-configuration invariants.
    BadTarget { command_index: usize, reason: String },
    /// lift_to_safe height outside the scene bounds.
    HeightOutOfBounds { command_index: usize, height: f64 },
}

impl Violation {
    pub fn rule_id(&self) -> &'static str {
        match self {
            Violation::ReleaseFirst { .. } => "a",
            Violation::RetreatFirst { .. } => "b",
            Violation::NoRecovery => "c",
            Violation::TooManyCommands { .. } => "d",
            Violation::BadTarget { .. } => "target",
            Violation::HeightOutOfBounds { .. } => "height",
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::ReleaseFirst { command_index } => write!(
                f,
                "rule a: command {command_index} recovers joints while the gripper still holds an object; release_gripper first"
            ),
            Violation::RetreatFirst { command_index, keep_out_index, required_height } => write!(
                f,
                "rule b: command {command_index} moves the effector through keep-out box {keep_out_index}; lift_to_safe to at least {required_height} first"
            ),
            Violation::NoRecovery => {
                write!(f, "rule c: program has no recover_joints command, so it cannot restore the target state")
            }
            Violation::TooManyCommands { count, max } => {
                write!(f, "rule d: program has {count} commands, more than the allowed {max}")
            }
            Violation::BadTarget { command_index, reason } => {
                write!(f, "command {command_index} has an invalid recovery target: {reason}")
            }
            Violation::HeightOutOfBounds { command_index, height } => {
                write!(f, "command {command_index} lifts to {height}, outside the scene bounds")
            }
        }
    }
}

/// Validate with the default command budget. Empty result means ok.
pub fn validate(
    program: &TransitionProgram,
    scenario: &ScenarioSpec,
    state: &WorldState,
) -> Vec<Violation> {
    validate_with(program, scenario, state, DEFAULT_MAX_COMMANDS)
}

pub fn validate_with(
    program: &TransitionProgram,
    scenario: &ScenarioSpec,
    state: &WorldState,
    max_commands: usize,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    if program.commands.len() > max_commands {
        violations.push(Violation::TooManyCommands {
            count: program.commands.len(),
            max: max_commands,
        });
    }
    if !program.commands.iter().any(|c| matches!(c, Command::RecoverJoints { .. })) {
        violations.push(Violation::NoRecovery);
    }

    let holding = state.effector.holding.is_some();
    let mut released = false;
    // highest lift_to_safe height seen so far in the walk
    let mut lifted_to: Option<f64> = None;
    let mut position = state.effector.position;

    for (idx, command) in program.commands.iter().enumerate() {
        let next = match command {
            Command::ReleaseGripper => {
                released = true;
                position
            }
            Command::Translate { axis, delta } => {
                position.with_axis(axis.index(), position.axis(axis.index()) + delta)
            }
            Command::LiftToSafe { height } => {
                if !(scenario.bounds.min.z..=scenario.bounds.max.z).contains(height) {
                    violations
                        .push(Violation::HeightOutOfBounds { command_index: idx, height: *height });
                }
                lifted_to = Some(lifted_to.map_or(*height, |h: f64| h.max(*height)));
                position.with_axis(2, *height)
            }
            Command::RecoverJoints { target, steps: _ } => {
                if holding && !released {
                    violations.push(Violation::ReleaseFirst { command_index: idx });
                }
                if target.joints.len() != scenario.joints {
                    violations.push(Violation::BadTarget {
                        command_index: idx,
                        reason: format!(
                            "expected {} joint angles, found {}",
                            scenario.joints,
                            target.joints.len()
                        ),
                    });
                    position
                } else if !scenario.joints_within_limits(&target.joints) {
                    violations.push(Violation::BadTarget {
                        command_index: idx,
                        reason: "target joints outside declared limits".to_string(),
                    });
                    scenario.effector_map.position(&target.joints)
                } else {
                    scenario.effector_map.position(&target.joints)
                }
            }
        };
        check_segment(state, idx, position, next, lifted_to, &mut violations);
        position = next;
    }
    violations
}

fn check_segment(
    state: &WorldState,
    command_index: usize,
    from: Vec3,
    to: Vec3,
    lifted_to: Option<f64>,
    violations: &mut Vec<Violation>,
) {
    for (k, keep_out) in state.keep_out.iter().enumerate() {
        if !keep_out.intersects_segment(from, to) {
            continue;
        }
        let covered = lifted_to.map_or(false, |h| h >= keep_out.max.z);
        if !covered {
            violations.push(Violation::RetreatFirst {
                command_index,
                keep_out_index: k,
                required_height: keep_out.max.z,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use crate::sim::{self, JointConfiguration};

    fn scenario_and_state() -> (ScenarioSpec, WorldState) {
        let sc = crate::sim::testkit::test_scenario();
        let state = sim::init_scene(&sc, 3).unwrap();
        (sc, state)
    }

    fn recover_home(sc: &ScenarioSpec, steps: usize) -> Command {
        Command::RecoverJoints {
            target: JointConfiguration::new(sc.home.joints.clone(), 1.0),
            steps,
        }
    }

    #[test]
    fn recover_while_holding_without_release_violates_rule_a() {
        let (sc, mut state) = scenario_and_state();
        state.effector.holding = Some("tip_box".to_string());
        let program = TransitionProgram { commands: vec![recover_home(&sc, 10)] };
        let violations = validate(&program, &sc, &state);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].rule_id(), "a");
    }

    #[test]
    fn release_then_recover_while_holding_is_ok() {
        let (sc, mut state) = scenario_and_state();
        state.effector.holding = Some("tip_box".to_string());
        let program = TransitionProgram {
            commands: vec![Command::ReleaseGripper, recover_home(&sc, 10)],
        };
        assert!(validate(&program, &sc, &state).is_empty());
    }

    #[test]
    fn rule_order_sensitivity_permuting_release_and_recover_flips_verdict() {
        let (sc, mut state) = scenario_and_state();
        state.effector.holding = Some("tip_box".to_string());
        let ok = TransitionProgram { commands: vec![Command::ReleaseGripper, recover_home(&sc, 10)] };
        let bad = TransitionProgram { commands: vec![recover_home(&sc, 10), Command::ReleaseGripper] };
        assert!(validate(&ok, &sc, &state).is_empty());
        assert!(validate(&bad, &sc, &state).iter().any(|v| v.rule_id() == "a"));
    }

    /// Effector behind the slab, recovery target in front of it, both below
    /// the slab top, so the straight path must cross the box.
    fn place_behind_slab(sc: &ScenarioSpec, state: &mut WorldState) -> Command {
        state.arm.joints = vec![0.5, 0.8, 0.05, 0.0, 0.0, 0.0];
        state.effector.position = sc.effector_map.position(&state.arm.joints);
        Command::RecoverJoints {
            target: JointConfiguration::new(vec![0.5, 0.3, 0.05, 0.0, 0.0, 0.0], 1.0),
            steps: 10,
        }
    }

    #[test]
    fn path_through_keep_out_without_lift_violates_rule_b() {
        let (sc, mut state) = scenario_and_state();
        let recover_across = place_behind_slab(&sc, &mut state);
        let program = TransitionProgram { commands: vec![recover_across] };
        let violations = validate(&program, &sc, &state);
        assert!(violations.iter().any(|v| v.rule_id() == "b"), "got {violations:?}");
    }

    #[test]
    fn lift_at_or_above_box_top_clears_rule_b() {
        let (sc, mut state) = scenario_and_state();
        let recover_across = place_behind_slab(&sc, &mut state);
        // 0.3 m-tall keep-out box en route, preceded by a 0.4 lift
        state.keep_out =
            vec![Aabb::new(Vec3::new(0.2, 0.5, 0.0), Vec3::new(0.8, 0.6, 0.3))];
        state.effector.holding = Some("tip_box".to_string());
        let program = TransitionProgram {
            commands: vec![
                Command::ReleaseGripper,
                Command::LiftToSafe { height: 0.4 },
                recover_across,
            ],
        };
        let violations = validate(&program, &sc, &state);
        assert!(violations.is_empty(), "got {violations:?}");
    }

    #[test]
    fn lift_below_box_top_does_not_clear_rule_b() {
        let (sc, mut state) = scenario_and_state();
        let recover_across = place_behind_slab(&sc, &mut state);
        state.keep_out =
            vec![Aabb::new(Vec3::new(0.2, 0.5, 0.0), Vec3::new(0.8, 0.6, 0.3))];
        let program = TransitionProgram {
            commands: vec![Command::LiftToSafe { height: 0.2 }, recover_across],
        };
        assert!(validate(&program, &sc, &state).iter().any(|v| v.rule_id() == "b"));
    }

    #[test]
    fn program_without_recovery_violates_rule_c() {
        let (sc, state) = scenario_and_state();
        let program = TransitionProgram { commands: vec![Command::ReleaseGripper] };
        let violations = validate(&program, &sc, &state);
        assert!(violations.iter().any(|v| v.rule_id() == "c"));
    }

    #[test]
    fn command_budget_violates_rule_d() {
        let (sc, state) = scenario_and_state();
        let mut commands = vec![Command::ReleaseGripper; 16];
        commands.push(recover_home(&sc, 5));
        let program = TransitionProgram { commands };
        assert!(validate(&program, &sc, &state).iter().any(|v| v.rule_id() == "d"));
    }

    #[test]
    fn fig_style_lift_then_recover_shape_validates_ok() {
        let (sc, mut state) = scenario_and_state();
        state.arm.joints = vec![0.5, 0.8, 0.2, 0.0, 0.0, 0.0];
        state.effector.position = sc.effector_map.position(&state.arm.joints);
        let program = TransitionProgram {
            commands: vec![Command::LiftToSafe { height: 0.5 }, recover_home(&sc, 50)],
        };
        assert!(validate(&program, &sc, &state).is_empty());
    }

    #[test]
    fn out_of_limit_target_is_flagged() {
        let (sc, state) = scenario_and_state();
        let program = TransitionProgram {
            commands: vec![Command::RecoverJoints {
                target: JointConfiguration::new(vec![9.0; 6], 1.0),
                steps: 5,
            }],
        };
        assert!(validate(&program, &sc, &state).iter().any(|v| v.rule_id() == "target"));
    }

    #[test]
    fn lift_outside_scene_bounds_is_flagged() {
        let (sc, state) = scenario_and_state();
        let program = TransitionProgram {
            commands: vec![Command::LiftToSafe { height: 99.0 }, recover_home(&sc, 5)],
        };
        assert!(validate(&program, &sc, &state).iter().any(|v| v.rule_id() == "height"));
    }

    #[test]
    fn validation_is_pure() {
        let (sc, mut state) = scenario_and_state();
        state.keep_out.push(Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.1, 0.1, 0.1)));
        let program = TransitionProgram { commands: vec![recover_home(&sc, 5)] };
        let before = state.canonical_json();
        let a = validate(&program, &sc, &state);
        let b = validate(&program, &sc, &state);
        assert_eq!(a, b);
        assert_eq!(state.canonical_json(), before);
    }
}
