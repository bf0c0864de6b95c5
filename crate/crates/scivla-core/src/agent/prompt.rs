//! Request text for the remote code agent and extraction of the DSL program
//! from its reply.

use thiserror::Error;

use super::TransitionContext;
use crate::dsl::{self, ParseError, TransitionProgram};

/// The safety rules embedded verbatim in every request; the validator
/// enforces the same four rules on the reply.
pub const SAFETY_RULES: &str = "\
1. If the gripper is holding an object, release_gripper must come before any recover_joints.
2. If a straight effector path would cross a keep-out box, lift_to_safe to a height at or above that box top before crossing.
3. The program must contain a recover_joints command so the target joint state is restored.
4. Use at most 16 commands.";

const GRAMMAR: &str = "\
release_gripper
translate axis=<x|y|z> delta=<meters, |delta| <= 1.0>
lift_to_safe height=<meters, absolute z>
recover_joints target=[<joint angles..., gripper aperture>] steps=<1..=1000>";

fn joints_text(joints: &[f64], gripper: f64) -> String {
    let mut parts: Vec<String> = joints.iter().map(|v| format!("{v:?}")).collect();
    parts.push(format!("{gripper:?}"));
    format!("[{}]", parts.join(", "))
}

/// Deterministic request text: role framing, the transition inputs, axis
/// cues, the DSL grammar, the safety rules, and the output contract.
pub fn build_prompt(ctx: &TransitionContext) -> String {
    let observation =
        serde_json::to_string_pretty(&ctx.observation).expect("observation serializes");
    format!(
        "You are a robot motion script programmer for a laboratory bench arm. \
Write the sequence of prerequisite motions that carries the arm from its current \
state to the start state of the next task, avoiding collisions with every keep-out \
zone and releasing the gripper before any joint recovery if it is holding something.

Next task: {next_prompt}

Current joint positions (curr_qpos): {curr}
Target joint positions (target_qpos): {target}

Scene observation:
{observation}

Coordinate axis cues:
- {hint_x}
- {hint_y}
- {hint_z}

Respond with motion commands only, in this language (one command per line, `#` comments allowed):
{grammar}

Safety rules:
{rules}

Check first whether the gripper needs to be released and whether any obstacle lies \
near the gripper path; retreat to a safe height before crossing obstacles, then \
recover the target joint positions.

Output format: reply with exactly one fenced code block (```) containing the \
program and nothing else inside it.",
        next_prompt = ctx.next_prompt,
        curr = joints_text(&ctx.curr_qpos.joints, ctx.curr_qpos.gripper),
        target = joints_text(&ctx.target_qpos.joints, ctx.target_qpos.gripper),
        observation = observation,
        hint_x = ctx.scene_axis_hints[0],
        hint_y = ctx.scene_axis_hints[1],
        hint_z = ctx.scene_axis_hints[2],
        grammar = GRAMMAR,
        rules = SAFETY_RULES,
    )
}

#[derive(Debug, Error)]
pub enum ReplyError {
    #[error("reply contains no fenced code block")]
    NoBlock,
    #[error("reply contains {} fenced code blocks (lines {}); expected exactly one", .spans.len(), format_spans(.spans))]
    MultipleBlocks { spans: Vec<(usize, usize)> },
    #[error("fenced code block starting at line {start_line} is never closed")]
    UnterminatedBlock { start_line: usize },
    #[error("program inside the code block is invalid: {0}")]
    Dsl(#[from] ParseError),
}

fn format_spans(spans: &[(usize, usize)]) -> String {
    spans.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(", ")
}

/// Extract the single fenced block from a reply and parse it as DSL.
pub fn parse_reply(reply: &str) -> Result<TransitionProgram, ReplyError> {
    let mut blocks: Vec<(usize, usize, String)> = Vec::new();
    let mut open: Option<(usize, Vec<&str>)> = None;
    for (idx, line) in reply.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim_start().starts_with("```") {
            match open.take() {
                Some((start, body)) => blocks.push((start, line_no, body.join("\n"))),
                None => open = Some((line_no, Vec::new())),
            }
        } else if let Some((_, body)) = open.as_mut() {
            body.push(line);
        }
    }
    if let Some((start_line, _)) = open {
        return Err(ReplyError::UnterminatedBlock { start_line });
    }
    match blocks.len() {
        0 => Err(ReplyError::NoBlock),
        1 => Ok(dsl::parse(&blocks[0].2)?),
        _ => Err(ReplyError::MultipleBlocks {
            spans: blocks.iter().map(|(a, b, _)| (*a, *b)).collect(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::TaskPrompt;
    use crate::sim::{JointConfiguration, ObservationSummary};
    use std::collections::BTreeMap;

    fn context() -> TransitionContext {
        TransitionContext {
            next_prompt: TaskPrompt::new("place pcrPlate into the thermal cycler"),
            observation: ObservationSummary {
                joints: vec![0.5, 0.8, 0.5, 0.0, 0.0, 0.0],
                gripper: 1.0,
                effector: crate::geometry::Vec3::new(0.5, 0.8, 0.5),
                holding: None,
                latches: BTreeMap::new(),
                objects: BTreeMap::new(),
            },
            curr_qpos: JointConfiguration::new(vec![0.5, 0.8, 0.5, 0.0, 0.0, 0.0], 1.0),
            target_qpos: JointConfiguration::new(vec![0.52, 0.31, 0.55, 0.0, 0.0, 0.0], 1.0),
            scene_axis_hints: [
                "x: right".to_string(),
                "y: back".to_string(),
                "z: up".to_string(),
            ],
        }
    }

    #[test]
    fn equal_contexts_build_byte_identical_prompts() {
        assert_eq!(build_prompt(&context()), build_prompt(&context()));
    }

    #[test]
    fn prompt_contains_target_values_and_collision_constraint() {
        let text = build_prompt(&context());
        assert!(text.contains("[0.52, 0.31, 0.55, 0.0, 0.0, 0.0, 1.0]"));
        assert!(text.contains("avoiding collisions"));
        assert!(text.contains("place pcrPlate into the thermal cycler"));
        assert!(text.contains("x: right"));
    }

    #[test]
    fn single_fenced_block_parses() {
        let reply = "Here is the transition:\n```\nrelease_gripper\nrecover_joints target=[0,0,0,0,0,0,1.0] steps=50\n```\nDone.";
        let program = parse_reply(reply).unwrap();
        assert_eq!(program.commands.len(), 2);
    }

    #[test]
    fn language_tagged_fence_parses() {
        let reply = "```text\nrecover_joints target=[0.1, 1.0] steps=5\n```";
        assert_eq!(parse_reply(reply).unwrap().commands.len(), 1);
    }

    #[test]
    fn prose_only_reply_is_rejected() {
        assert!(matches!(parse_reply("I would move the arm home."), Err(ReplyError::NoBlock)));
    }

    #[test]
    fn two_blocks_are_rejected_with_both_spans() {
        let reply = "```\nrelease_gripper\n```\nor maybe\n```\nlift_to_safe height=0.4\n```\n";
        match parse_reply(reply) {
            Err(ReplyError::MultipleBlocks { spans }) => {
                assert_eq!(spans, vec![(1, 3), (5, 7)]);
            }
            other => panic!("expected MultipleBlocks, got {other:?}"),
        }
    }

    #[test]
    fn unterminated_block_is_rejected() {
        let reply = "```\nrelease_gripper\n";
        assert!(matches!(
            parse_reply(reply),
            Err(ReplyError::UnterminatedBlock { start_line: 1 })
        ));
    }

    #[test]
    fn bad_dsl_inside_block_propagates_location() {
        let reply = "```\ntranslate axis=w delta=0.1\n```";
        match parse_reply(reply) {
            Err(ReplyError::Dsl(e)) => assert!(e.message.contains("unknown axis")),
            other => panic!("expected Dsl error, got {other:?}"),
        }
    }
}
