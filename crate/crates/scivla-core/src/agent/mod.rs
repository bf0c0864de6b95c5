//! Transitional-action synthesis: produce a validated program bridging the
//! gap between two atomic tasks, either from deterministic rules or from a
//! remote code agent with a bounded validate-and-retry loop.

mod prompt;
mod transport;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demo::TaskPrompt;
use crate::dsl::{self, Command, TransitionProgram};
use crate::sim::{JointConfiguration, ObservationSummary, ScenarioSpec, WorldState};

pub use prompt::{build_prompt, parse_reply, ReplyError, SAFETY_RULES};
pub use transport::{
    ChatMessage, ChatRequest, ChatTransport, HttpTransport, RemoteEndpoint, ScriptedTransport,
    TransportError, API_KEY_ENV,
};

/// Everything the agent may look at when bridging tasks i -> i+1.
#[derive(Debug, Clone)]
pub struct TransitionContext {
    pub next_prompt: TaskPrompt,
    pub observation: ObservationSummary,
    pub curr_qpos: JointConfiguration,
    pub target_qpos: JointConfiguration,
    pub scene_axis_hints: [String; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum AgentBackend {
    RuleBased,
    Remote(RemoteEndpoint),
}

fn default_max_retries() -> u32 {
    3
}
fn default_recover_steps() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    pub backend: AgentBackend,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_recover_steps")]
    pub recover_steps: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            backend: AgentBackend::RuleBased,
            max_retries: default_max_retries(),
            recover_steps: default_recover_steps(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if self.max_retries > 10 {
            return Err(SynthesisError::Config(format!(
                "max_retries {} exceeds the allowed 10",
                self.max_retries
            )));
        }
        if !(1..=1000).contains(&self.recover_steps) {
            return Err(SynthesisError::Config("recover_steps must be in 1..=1000".to_string()));
        }
        Ok(())
    }
}

/// One synthesis attempt: the raw reply (remote only) and whatever kept it
/// from being accepted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisAttempt {
    pub reply: Option<String>,
    pub feedback: Vec<String>,
}

/// A validated program plus the attempt log that produced it.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub program: TransitionProgram,
    pub attempts: Vec<SynthesisAttempt>,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("transitional action synthesis failed after {} attempt(s)", .attempts.len())]
    Failed { attempts: Vec<SynthesisAttempt> },
    #[error("remote transport failure: {0}")]
    Transport(#[from] TransportError),
    #[error("invalid agent configuration: {0}")]
    Config(String),
}

/// Semantic matcher backed by the same chat-completions wire client the
/// remote code agent uses: the model picks the index of the closest prompt.
pub struct LlmMatcher {
    endpoint: RemoteEndpoint,
    transport: Arc<dyn ChatTransport>,
}

impl LlmMatcher {
    pub fn new(endpoint: RemoteEndpoint, transport: Arc<dyn ChatTransport>) -> LlmMatcher {
        LlmMatcher { endpoint, transport }
    }

    pub fn over_http(endpoint: RemoteEndpoint) -> Result<LlmMatcher, TransportError> {
        let transport = Arc::new(HttpTransport::new(endpoint.clone())?);
        Ok(LlmMatcher { endpoint, transport })
    }
}

impl crate::demo::SemanticMatcher for LlmMatcher {
    fn scores(
        &self,
        query: &TaskPrompt,
        candidates: &[TaskPrompt],
    ) -> Result<Vec<f64>, crate::demo::MatchError> {
        use crate::demo::MatchError;
        let mut listing = String::new();
        for (k, c) in candidates.iter().enumerate() {
            listing.push_str(&format!("{}. {}\n", k + 1, c));
        }
        let prompt = format!(
            "Identify the task whose semantics are closest to the target task.\n\
Target task: {query}\n\nKnown tasks:\n{listing}\n\
Reply with the number of the closest known task and nothing else."
        );
        let request = ChatRequest {
            model: self.endpoint.model.clone(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: self.endpoint.temperature,
        };
        let reply =
            self.transport.complete(&request).map_err(|e| MatchError::Backend(e.to_string()))?;
        let digits: String =
            reply.chars().skip_while(|c| !c.is_ascii_digit()).take_while(char::is_ascii_digit).collect();
        let choice: usize = digits
            .parse()
            .map_err(|_| MatchError::Backend(format!("no task number in reply: {reply:?}")))?;
        if choice == 0 || choice > candidates.len() {
            return Err(MatchError::Backend(format!("task number {choice} out of range")));
        }
        let mut scores = vec![0.0; candidates.len()];
        scores[choice - 1] = 1.0;
        Ok(scores)
    }
}

/// Synthesizes transitional-action programs. The validator gates every
/// returned program regardless of backend.
pub struct TransitionAgent {
    config: AgentConfig,
    transport: Option<Arc<dyn ChatTransport>>,
}

impl TransitionAgent {
    pub fn rule_based() -> TransitionAgent {
        TransitionAgent { config: AgentConfig::default(), transport: None }
    }

    /// Agent for the given config; remote backends get a real HTTP transport.
    pub fn from_config(config: AgentConfig) -> Result<TransitionAgent, SynthesisError> {
        config.validate()?;
        let transport: Option<Arc<dyn ChatTransport>> = match &config.backend {
            AgentBackend::RuleBased => None,
            AgentBackend::Remote(endpoint) => {
                Some(Arc::new(HttpTransport::new(endpoint.clone())?))
            }
        };
        Ok(TransitionAgent { config, transport })
    }

    /// Remote agent with an injected transport (tests, canned fixtures).
    pub fn with_transport(
        config: AgentConfig,
        transport: Arc<dyn ChatTransport>,
    ) -> Result<TransitionAgent, SynthesisError> {
        config.validate()?;
        Ok(TransitionAgent { config, transport: Some(transport) })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn synthesize(
        &self,
        ctx: &TransitionContext,
        scenario: &ScenarioSpec,
        world: &WorldState,
    ) -> Result<Synthesis, SynthesisError> {
        self.config.validate()?;
        match (&self.config.backend, &self.transport) {
            (AgentBackend::RuleBased, _) => self.synthesize_rule_based(ctx, scenario, world),
            (AgentBackend::Remote(endpoint), Some(transport)) => {
                self.synthesize_remote(ctx, scenario, world, endpoint, transport.as_ref())
            }
            (AgentBackend::Remote(_), None) => {
                Err(SynthesisError::Config("remote backend without a transport".to_string()))
            }
        }
    }

    /// Deterministic backend: release if holding, retreat above the tallest
    /// keep-out box when one blocks the straight path (or after a release),
    /// then recover the retrieved target configuration.
    fn synthesize_rule_based(
        &self,
        ctx: &TransitionContext,
        scenario: &ScenarioSpec,
        world: &WorldState,
    ) -> Result<Synthesis, SynthesisError> {
        let holding = world.effector.holding.is_some();
        let current = world.effector.position;
        let target_pos = scenario.effector_map.position(&ctx.target_qpos.joints);
        let blocked = world.keep_out.iter().any(|b| b.intersects_segment(current, target_pos));

        let mut commands = Vec::new();
        if holding {
            commands.push(Command::ReleaseGripper);
        }
        if blocked || holding {
            let safe_height = (scenario.tallest_keep_out_top() + 0.05)
                .max(current.z)
                .min(scenario.bounds.max.z);
            commands.push(Command::LiftToSafe { height: safe_height });
        }
        commands.push(Command::RecoverJoints {
            target: ctx.target_qpos.clone(),
            steps: self.config.recover_steps,
        });

        let program = TransitionProgram { commands };
        let violations = dsl::validate(&program, scenario, world);
        if violations.is_empty() {
            let attempts = vec![SynthesisAttempt { reply: None, feedback: Vec::new() }];
            Ok(Synthesis { program, attempts })
        } else {
            let attempts = vec![SynthesisAttempt {
                reply: None,
                feedback: violations.iter().map(|v| v.to_string()).collect(),
            }];
            Err(SynthesisError::Failed { attempts })
        }
    }

    fn synthesize_remote(
        &self,
        ctx: &TransitionContext,
        scenario: &ScenarioSpec,
        world: &WorldState,
        endpoint: &RemoteEndpoint,
        transport: &dyn ChatTransport,
    ) -> Result<Synthesis, SynthesisError> {
        let mut messages = vec![ChatMessage::user(build_prompt(ctx))];
        let mut attempts: Vec<SynthesisAttempt> = Vec::new();
        loop {
            let request = ChatRequest {
                model: endpoint.model.clone(),
                messages: messages.clone(),
                temperature: endpoint.temperature,
            };
            let reply = transport.complete(&request)?;
            let feedback: Vec<String> = match parse_reply(&reply) {
                Ok(program) => {
                    let violations = dsl::validate(&program, scenario, world);
                    if violations.is_empty() {
                        attempts.push(SynthesisAttempt {
                            reply: Some(reply),
                            feedback: Vec::new(),
                        });
                        return Ok(Synthesis { program, attempts });
                    }
                    violations.iter().map(|v| v.to_string()).collect()
                }
                Err(e) => vec![e.to_string()],
            };
            attempts.push(SynthesisAttempt { reply: Some(reply.clone()), feedback: feedback.clone() });
            if attempts.len() > self.config.max_retries as usize {
                return Err(SynthesisError::Failed { attempts });
            }
            messages.push(ChatMessage::assistant(reply));
            messages.push(ChatMessage::user(format!(
                "That program was rejected by the safety validator:\n{}\nReply again with exactly one fenced code block containing a corrected program.",
                feedback.join("\n")
            )));
        }
    }
}
