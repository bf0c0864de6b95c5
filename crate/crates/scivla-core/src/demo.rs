//! Demonstration store: the per-atomic-task trajectory corpus, prompt
//! extraction, and retrieval of the target joint configuration for a named
//! task. Stores persist as line-delimited JSON, one demonstration per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::sim::{GripperCommand, JointConfiguration};

/// Trim and collapse internal whitespace runs to single spaces.
pub fn normalize_prompt(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A natural-language task instruction, stored in normalized form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct TaskPrompt(String);

impl TaskPrompt {
    pub fn new(text: &str) -> TaskPrompt {
        TaskPrompt(normalize_prompt(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for TaskPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<String> for TaskPrompt {
    fn from(s: String) -> Self {
        TaskPrompt::new(&s)
    }
}

impl From<TaskPrompt> for String {
    fn from(p: TaskPrompt) -> Self {
        p.0
    }
}

/// One recorded control tick: the configuration reached and the gripper
/// command issued on the way there. Serialized as a flat array
/// `[j_1, ..., j_J, aperture, "command"]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub config: JointConfiguration,
    pub command: GripperCommand,
}

impl Serialize for TrajectoryPoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.config.joints.len() + 2))?;
        for j in &self.config.joints {
            seq.serialize_element(j)?;
        }
        seq.serialize_element(&self.config.gripper)?;
        let cmd = match self.command {
            GripperCommand::Open => "open",
            GripperCommand::Close => "close",
            GripperCommand::Hold => "hold",
        };
        seq.serialize_element(cmd)?;
        seq.end()
    }
}

impl<'de> Deserialize<'de> for TrajectoryPoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PointVisitor;
        impl<'de> Visitor<'de> for PointVisitor {
            type Value = TrajectoryPoint;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an array of joint angles, an aperture, and a gripper command")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
                let mut numbers: Vec<f64> = Vec::new();
                let mut command: Option<String> = None;
                while let Some(v) = seq.next_element::<serde_json::Value>()? {
                    match v {
                        serde_json::Value::Number(n) if command.is_none() => {
                            numbers.push(n.as_f64().ok_or_else(|| {
                                serde::de::Error::custom("non-finite joint value")
                            })?);
                        }
                        serde_json::Value::String(s) if command.is_none() => command = Some(s),
                        _ => return Err(serde::de::Error::custom("malformed trajectory point")),
                    }
                }
                let command = match command.as_deref() {
                    Some("open") => GripperCommand::Open,
                    Some("close") => GripperCommand::Close,
                    Some("hold") => GripperCommand::Hold,
                    Some(other) => {
                        return Err(serde::de::Error::custom(format!(
                            "unknown gripper command `{other}`"
                        )))
                    }
                    None => return Err(serde::de::Error::custom("missing gripper command")),
                };
                if numbers.len() < 2 {
                    return Err(serde::de::Error::custom("trajectory point too short"));
                }
                let gripper = numbers.pop().expect("length checked");
                Ok(TrajectoryPoint {
                    config: JointConfiguration::new(numbers, gripper),
                    command,
                })
            }
        }
        deserializer.deserialize_seq(PointVisitor)
    }
}

/// One element of the training dataset: a task prompt plus its recorded
/// trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub prompt: TaskPrompt,
    pub trajectory: Vec<TrajectoryPoint>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Demonstration {
    pub fn start(&self) -> &JointConfiguration {
        &self.trajectory[0].config
    }

    fn check(&self) -> Result<(), String> {
        if self.prompt.is_empty() {
            return Err("empty prompt".to_string());
        }
        if self.trajectory.is_empty() {
            return Err("empty trajectory".to_string());
        }
        let j = self.trajectory[0].config.joints.len();
        for (k, p) in self.trajectory.iter().enumerate() {
            if p.config.joints.len() != j {
                return Err(format!("trajectory point {k} has {} joints, expected {j}", {
                    p.config.joints.len()
                }));
            }
            if !(0.0..=1.0).contains(&p.config.gripper) {
                return Err(format!("trajectory point {k} gripper aperture outside [0, 1]"));
            }
        }
        Ok(())
    }
}

pub type DemoId = usize;

/// Immutable-after-load demonstration corpus; ids are insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemoStore {
    demos: Vec<Demonstration>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: parse failure: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: invalid demonstration: {reason}")]
    Invalid { line: usize, reason: String },
    #[error("line {line}: demonstration has {found} joints but the store uses {expected}")]
    MixedJoints { line: usize, expected: usize, found: usize },
}

impl DemoStore {
    pub fn new() -> DemoStore {
        DemoStore::default()
    }

    pub fn from_demos(demos: Vec<Demonstration>) -> Result<DemoStore, StoreError> {
        let mut store = DemoStore::new();
        for (k, d) in demos.into_iter().enumerate() {
            store.push_checked(d, k + 1)?;
        }
        Ok(store)
    }

    fn push_checked(&mut self, demo: Demonstration, line: usize) -> Result<(), StoreError> {
        demo.check().map_err(|reason| StoreError::Invalid { line, reason })?;
        let j = demo.trajectory[0].config.joints.len();
        if let Some(first) = self.demos.first() {
            let expected = first.trajectory[0].config.joints.len();
            if j != expected {
                return Err(StoreError::MixedJoints { line, expected, found: j });
            }
        }
        self.demos.push(demo);
        Ok(())
    }

    pub fn demos(&self) -> &[Demonstration] {
        &self.demos
    }

    pub fn get(&self, id: DemoId) -> Option<&Demonstration> {
        self.demos.get(id)
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    /// Ids of demos whose prompt normalizes equal to `prompt`, ascending.
    pub fn ids_for_prompt(&self, prompt: &TaskPrompt) -> Vec<DemoId> {
        self.demos
            .iter()
            .enumerate()
            .filter(|(_, d)| &d.prompt == prompt)
            .map(|(id, _)| id)
            .collect()
    }
}

/// Load a line-delimited demonstration file, refusing records that violate
/// demonstration invariants and reporting the offending line.
pub fn load_store(path: &Path) -> Result<DemoStore, StoreError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
    let mut store = DemoStore::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let demo: Demonstration = serde_json::from_str(line)
            .map_err(|source| StoreError::Parse { line: idx + 1, source })?;
        store.push_checked(demo, idx + 1)?;
    }
    Ok(store)
}

pub fn save_store(store: &DemoStore, path: &Path) -> Result<(), StoreError> {
    let mut out = String::new();
    for demo in &store.demos {
        out.push_str(&serde_json::to_string(demo).expect("demonstration serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|source| StoreError::Io { path: path.display().to_string(), source })
}

/// The distinct normalized prompts of a store, each with the ids of its
/// demonstrations. Entries sort lexicographically, which is also the
/// similarity tie-break order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptIndex {
    pub entries: Vec<(TaskPrompt, Vec<DemoId>)>,
}

impl PromptIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prompts(&self) -> Vec<TaskPrompt> {
        self.entries.iter().map(|(p, _)| p.clone()).collect()
    }

    pub fn contains(&self, prompt: &TaskPrompt) -> bool {
        self.entries.iter().any(|(p, _)| p == prompt)
    }
}

/// Collect the description set of a store: one entry per distinct
/// normalized prompt, every demo id under exactly one entry.
pub fn extract_prompts(store: &DemoStore) -> PromptIndex {
    let mut grouped: BTreeMap<TaskPrompt, Vec<DemoId>> = BTreeMap::new();
    for (id, demo) in store.demos.iter().enumerate() {
        grouped.entry(demo.prompt.clone()).or_default().push(id);
    }
    PromptIndex { entries: grouped.into_iter().collect() }
}

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("prompt index is empty")]
    EmptyIndex,
    #[error("no stored prompt matches `{query}`: best candidate `{best_candidate}` scored {score:.3}, below threshold {threshold:.3}")]
    NoMatch { query: String, best_candidate: String, score: f64, threshold: f64 },
    #[error("matcher backend failure: {0}")]
    Backend(String),
}

/// Scores candidate prompts against a query; higher is closer.
pub trait SemanticMatcher: Send + Sync {
    fn scores(&self, query: &TaskPrompt, candidates: &[TaskPrompt]) -> Result<Vec<f64>, MatchError>;
}

pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Deterministic offline matcher: Jaccard similarity over lowercase word
/// token sets.
#[derive(Debug, Clone, Default)]
pub struct TokenSetMatcher;

impl TokenSetMatcher {
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        let ta = tokenize(a);
        let tb = tokenize(b);
        let union = ta.union(&tb).count();
        if union == 0 {
            return 0.0;
        }
        let inter = ta.intersection(&tb).count();
        inter as f64 / union as f64
    }
}

impl SemanticMatcher for TokenSetMatcher {
    fn scores(&self, query: &TaskPrompt, candidates: &[TaskPrompt]) -> Result<Vec<f64>, MatchError> {
        Ok(candidates.iter().map(|c| self.similarity(query.as_str(), c.as_str())).collect())
    }
}

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.2;

/// The retrieval result: the first joint configuration of the lowest-id
/// demonstration under the matched prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub prompt: TaskPrompt,
    pub demo_id: DemoId,
    pub target: JointConfiguration,
}

/// Retrieve the target joint configuration for a task description. A query
/// that normalizes equal to a stored prompt selects that prompt regardless
/// of the matcher backend; otherwise the matcher's best-scoring prompt wins,
/// with similarity ties broken by lexicographic prompt order.
pub fn search_target(
    query: &TaskPrompt,
    index: &PromptIndex,
    store: &DemoStore,
    matcher: &dyn SemanticMatcher,
    match_threshold: f64,
) -> Result<SearchHit, MatchError> {
    if index.is_empty() {
        return Err(MatchError::EmptyIndex);
    }
    let chosen = match index.entries.iter().position(|(p, _)| p == query) {
        Some(i) => i,
        None => {
            let candidates = index.prompts();
            let scores = matcher.scores(query, &candidates)?;
            let mut best = 0usize;
            for (i, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = i;
                }
            }
            if scores[best] < match_threshold {
                return Err(MatchError::NoMatch {
                    query: query.as_str().to_string(),
                    best_candidate: candidates[best].as_str().to_string(),
                    score: scores[best],
                    threshold: match_threshold,
                });
            }
            best
        }
    };
    let (prompt, ids) = &index.entries[chosen];
    let demo_id = *ids.iter().min().expect("index entries are non-empty");
    let target = store.get(demo_id).expect("index ids are valid").start().clone();
    Ok(SearchHit { prompt: prompt.clone(), demo_id, target })
}
