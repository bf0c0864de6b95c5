//! The restricted transitional-action language: a closed command set with a
//! line-oriented concrete syntax, a safety validator, and an interpreter
//! that expands commands into simulator actions.

mod interpret;
mod parse;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::sim::JointConfiguration;

pub use interpret::{interpret, InterpretOutcome, InterpreterFault};
pub use parse::{parse, ParseError};
pub use validate::{validate, validate_with, Violation, DEFAULT_MAX_COMMANDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

/// One whitelisted transitional motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    ReleaseGripper,
    Translate { axis: Axis, delta: f64 },
    LiftToSafe { height: f64 },
    RecoverJoints { target: JointConfiguration, steps: usize },
}

/// A parsed transitional-action program. Programs are non-empty by
/// construction and must pass [`validate`] before interpretation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionProgram {
    pub commands: Vec<Command>,
}

impl fmt::Display for TransitionProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for cmd in &self.commands {
            match cmd {
                Command::ReleaseGripper => writeln!(f, "release_gripper")?,
                Command::Translate { axis, delta } => {
                    writeln!(f, "translate axis={} delta={delta:?}", axis.name())?
                }
                Command::LiftToSafe { height } => writeln!(f, "lift_to_safe height={height:?}")?,
                Command::RecoverJoints { target, steps } => {
                    let mut values: Vec<String> =
                        target.joints.iter().map(|v| format!("{v:?}")).collect();
                    values.push(format!("{:?}", target.gripper));
                    writeln!(f, "recover_joints target=[{}] steps={steps}", values.join(", "))?
                }
            }
        }
        Ok(())
    }
}
