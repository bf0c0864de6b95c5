//! Scenario configuration: joint limits, effector map, scene contents,
//! per-task success predicates and scripted oracle templates. Loaded from
//! TOML files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Vec3};

/// Scenario file or scenario content problem; the message names the field.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    pub fn invalid(field: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.to_string(), reason: reason.into() }
    }
}

fn default_max_step_delta() -> f64 {
    0.05
}
fn default_grasp_radius() -> f64 {
    0.03
}
fn default_actuation_radius() -> f64 {
    0.05
}
fn default_effector_step() -> f64 {
    0.02
}
fn default_perturbation() -> f64 {
    0.05
}
fn default_bounds() -> Aabb {
    Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(2.0, 2.0, 2.0))
}
fn default_axis_hints() -> [String; 3] {
    [
        "x: increases toward the right edge of the bench".to_string(),
        "y: increases toward the back of the bench".to_string(),
        "z: increases upward from the bench surface".to_string(),
    ]
}
fn default_true() -> bool {
    true
}

/// Affine map from the joint vector to the effector position:
/// `p_k = sum_j matrix[j][k] * q_j + offset_k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectorMap {
    pub matrix: Vec<[f64; 3]>,
    pub offset: Vec3,
}

impl EffectorMap {
    pub fn position(&self, joints: &[f64]) -> Vec3 {
        let mut p = self.offset;
        for (row, q) in self.matrix.iter().zip(joints) {
            p.x += row[0] * q;
            p.y += row[1] * q;
            p.z += row[2] * q;
        }
        p
    }

    fn gram(&self) -> [[f64; 3]; 3] {
        let mut g = [[0.0f64; 3]; 3];
        for row in &self.matrix {
            for (a, ga) in g.iter_mut().enumerate() {
                for (b, gab) in ga.iter_mut().enumerate() {
                    *gab += row[a] * row[b];
                }
            }
        }
        g
    }

    fn gram_inverse(&self) -> Option<[[f64; 3]; 3]> {
        let g = self.gram();
        let det = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1])
            - g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0])
            + g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
        if det.abs() < 1e-12 {
            return None;
        }
        let inv_det = 1.0 / det;
        let mut inv = [[0.0f64; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                let (r1, r2) = match r {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                let (c1, c2) = match c {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                let minor = g[r1][c1] * g[r2][c2] - g[r1][c2] * g[r2][c1];
                let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
                // adjugate transposes, but the Gram matrix is symmetric
                inv[c][r] = sign * minor * inv_det;
            }
        }
        Some(inv)
    }

    /// Minimum-norm joint displacement whose image under the map is `d`.
    /// None when the map does not span all three axes.
    pub fn joint_delta_for(&self, d: Vec3) -> Option<Vec<f64>> {
        let inv = self.gram_inverse()?;
        let dv = [d.x, d.y, d.z];
        let mut w = [0.0f64; 3];
        for (a, wa) in w.iter_mut().enumerate() {
            for (b, db) in dv.iter().enumerate() {
                *wa += inv[a][b] * db;
            }
        }
        Some(
            self.matrix
                .iter()
                .map(|row| row[0] * w[0] + row[1] * w[1] + row[2] * w[2])
                .collect(),
        )
    }
}

/// What a trial must make true at an atomic task's end state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuccessPredicate {
    ObjectInRegion { object: String, region: String },
    LatchEquals { instrument: String, latch: String, value: String },
    EffectorInRegion { region: String },
}

/// Waypoint target for scripted oracle templates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateTarget {
    Object { object: String },
    Region { region_center: String },
    Site { site: [String; 3] },
    Point { point: Vec3 },
}

/// One step of a scripted oracle trajectory template.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TemplateStep {
    /// Move to the carry height above the target's x/y.
    Approach { target: TemplateTarget, height: f64 },
    /// Move straight to the target point.
    MoveTo { target: TemplateTarget },
    /// Issue a gripper command in place.
    Grip { command: GripperCommandSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperCommandSpec {
    Open,
    Close,
    Hold,
}

/// Joint-space box for randomized demo start configurations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl JointRegion {
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    pub spawn_region: String,
    #[serde(default = "default_true")]
    pub graspable: bool,
}

/// A named latch: its legal values, initial value, and one actuation site
/// per value. Pressing (gripper close) within `actuation_radius` of a site
/// sets the latch to that site's value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatchSpec {
    pub values: Vec<String>,
    pub initial: String,
    pub sites: BTreeMap<String, Vec3>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstrumentSpec {
    pub id: String,
    pub latches: BTreeMap<String, LatchSpec>,
}

/// One atomic task: prompt, success predicates, demo start region, scripted
/// oracle template, and per-task object placement used when generating its
/// demonstrations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub prompt: String,
    pub predicates: Vec<SuccessPredicate>,
    pub start_region: JointRegion,
    pub template: Vec<TemplateStep>,
    #[serde(default)]
    pub spawn_overrides: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HomeConfiguration {
    pub joints: Vec<f64>,
    pub gripper: f64,
}

/// Full scenario declaration. `joints` is J; all joint vectors in the file
/// must have that length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub joints: usize,
    pub limits: JointRegion,
    pub home: HomeConfiguration,
    pub effector_map: EffectorMap,
    #[serde(default = "default_max_step_delta")]
    pub max_step_delta: f64,
    #[serde(default = "default_grasp_radius")]
    pub grasp_radius: f64,
    #[serde(default = "default_actuation_radius")]
    pub actuation_radius: f64,
    #[serde(default = "default_effector_step")]
    pub effector_step: f64,
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    #[serde(default = "default_bounds")]
    pub bounds: Aabb,
    #[serde(default = "default_axis_hints")]
    pub axis_hints: [String; 3],
    #[serde(default)]
    pub regions: BTreeMap<String, Aabb>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub instruments: Vec<InstrumentSpec>,
    #[serde(default)]
    pub keep_out: Vec<Aabb>,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
}

impl ScenarioSpec {
    pub fn load(path: &Path) -> Result<ScenarioSpec, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let spec: ScenarioSpec = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source: Box::new(source),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn task(&self, prompt: &str) -> Option<&TaskSpec> {
        let norm = crate::demo::normalize_prompt(prompt);
        self.tasks.iter().find(|t| crate::demo::normalize_prompt(&t.prompt) == norm)
    }

    pub fn site_position(&self, instrument: &str, latch: &str, value: &str) -> Option<Vec3> {
        self.instruments
            .iter()
            .find(|i| i.id == instrument)?
            .latches
            .get(latch)?
            .sites
            .get(value)
            .copied()
    }

    /// Highest keep-out box top, or the scene floor when there are none.
    pub fn tallest_keep_out_top(&self) -> f64 {
        self.keep_out.iter().map(|b| b.max.z).fold(self.bounds.min.z, f64::max)
    }

    pub fn clamp_joints(&self, joints: &mut [f64]) {
        for (j, q) in joints.iter_mut().enumerate() {
            *q = q.max(self.limits.lower[j]).min(self.limits.upper[j]);
        }
    }

    pub fn joints_within_limits(&self, joints: &[f64]) -> bool {
        joints.len() == self.joints
            && joints
                .iter()
                .zip(self.limits.lower.iter().zip(&self.limits.upper))
                .all(|(q, (lo, hi))| *q >= *lo && *q <= *hi)
    }

    fn check_region(&self, field: &str, name: &str) -> Result<(), ConfigError> {
        if self.regions.contains_key(name) {
            Ok(())
        } else {
            Err(ConfigError::invalid(field, format!("unknown region `{name}`")))
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let j = self.joints;
        if j == 0 {
            return Err(ConfigError::invalid("joints", "must be at least 1"));
        }
        if self.limits.lower.len() != j || self.limits.upper.len() != j {
            return Err(ConfigError::invalid("limits", format!("expected {j} entries")));
        }
        if self.limits.lower.iter().zip(&self.limits.upper).any(|(lo, hi)| lo > hi) {
            return Err(ConfigError::invalid("limits", "lower exceeds upper"));
        }
        if self.home.joints.len() != j {
            return Err(ConfigError::invalid("home.joints", format!("expected {j} entries")));
        }
        if !self.joints_within_limits(&self.home.joints) {
            return Err(ConfigError::invalid("home.joints", "outside joint limits"));
        }
        if !(0.0..=1.0).contains(&self.home.gripper) {
            return Err(ConfigError::invalid("home.gripper", "must be in [0, 1]"));
        }
        if self.effector_map.matrix.len() != j {
            return Err(ConfigError::invalid("effector_map.matrix", format!("expected {j} rows")));
        }
        if self.effector_map.gram_inverse().is_none() {
            return Err(ConfigError::invalid(
                "effector_map.matrix",
                "must span all three scene axes",
            ));
        }
        for (param, value) in [
            ("max_step_delta", self.max_step_delta),
            ("grasp_radius", self.grasp_radius),
            ("actuation_radius", self.actuation_radius),
            ("effector_step", self.effector_step),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::invalid(param, "must be positive and finite"));
            }
        }
        if !(self.perturbation >= 0.0 && self.perturbation.is_finite()) {
            return Err(ConfigError::invalid("perturbation", "must be non-negative"));
        }
        if !self.bounds.is_well_formed() {
            return Err(ConfigError::invalid("bounds", "min exceeds max"));
        }
        for (name, region) in &self.regions {
            if !region.is_well_formed() {
                return Err(ConfigError::invalid(&format!("regions.{name}"), "min exceeds max"));
            }
        }
        for (k, b) in self.keep_out.iter().enumerate() {
            if !b.is_well_formed() {
                return Err(ConfigError::invalid(&format!("keep_out[{k}]"), "min exceeds max"));
            }
        }
        let mut object_ids = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !object_ids.insert(o.id.as_str()) {
                return Err(ConfigError::invalid("objects", format!("duplicate id `{}`", o.id)));
            }
            self.check_region(&format!("objects.{}.spawn_region", o.id), &o.spawn_region)?;
            let region = &self.regions[&o.spawn_region];
            if self.keep_out.iter().any(|b| b.overlaps(region)) {
                return Err(ConfigError::invalid(
                    &format!("objects.{}.spawn_region", o.id),
                    "spawn region overlaps a keep-out box",
                ));
            }
        }
        let mut instrument_ids = std::collections::BTreeSet::new();
        for inst in &self.instruments {
            if !instrument_ids.insert(inst.id.as_str()) {
                return Err(ConfigError::invalid(
                    "instruments",
                    format!("duplicate id `{}`", inst.id),
                ));
            }
            for (latch, spec) in &inst.latches {
                let field = format!("instruments.{}.latches.{latch}", inst.id);
                if spec.values.is_empty() {
                    return Err(ConfigError::invalid(&field, "no declared values"));
                }
                if !spec.values.contains(&spec.initial) {
                    return Err(ConfigError::invalid(
                        &field,
                        format!("initial value `{}` not among declared values", spec.initial),
                    ));
                }
                for site in spec.sites.keys() {
                    if !spec.values.contains(site) {
                        return Err(ConfigError::invalid(
                            &field,
                            format!("site for undeclared value `{site}`"),
                        ));
                    }
                }
            }
        }
        let mut prompts = std::collections::BTreeSet::new();
        for (k, task) in self.tasks.iter().enumerate() {
            let field = format!("tasks[{k}]");
            let norm = crate::demo::normalize_prompt(&task.prompt);
            if norm.is_empty() {
                return Err(ConfigError::invalid(&format!("{field}.prompt"), "empty prompt"));
            }
            if !prompts.insert(norm) {
                return Err(ConfigError::invalid(
                    &format!("{field}.prompt"),
                    "duplicate task prompt",
                ));
            }
            if task.start_region.lower.len() != j || task.start_region.upper.len() != j {
                return Err(ConfigError::invalid(
                    &format!("{field}.start_region"),
                    format!("expected {j} entries"),
                ));
            }
            if task
                .start_region
                .lower
                .iter()
                .zip(&task.start_region.upper)
                .any(|(lo, hi)| lo > hi)
            {
                return Err(ConfigError::invalid(
                    &format!("{field}.start_region"),
                    "lower exceeds upper",
                ));
            }
            if task.predicates.is_empty() {
                return Err(ConfigError::invalid(&format!("{field}.predicates"), "empty"));
            }
            for p in &task.predicates {
                self.validate_predicate(p)
                    .map_err(|e| match e {
                        ConfigError::Invalid { field: f, reason } => ConfigError::Invalid {
                            field: format!("{field}.predicates.{f}"),
                            reason,
                        },
                        other => other,
                    })?;
            }
            for (t, step) in task.template.iter().enumerate() {
                let sfield = format!("{field}.template[{t}]");
                match step {
                    TemplateStep::Approach { target, height } => {
                        self.validate_target(&sfield, target)?;
                        if !(self.bounds.min.z..=self.bounds.max.z).contains(height) {
                            return Err(ConfigError::invalid(&sfield, "height outside bounds"));
                        }
                    }
                    TemplateStep::MoveTo { target } => self.validate_target(&sfield, target)?,
                    TemplateStep::Grip { .. } => {}
                }
            }
            for (object, region) in &task.spawn_overrides {
                if !self.objects.iter().any(|o| &o.id == object) {
                    return Err(ConfigError::invalid(
                        &format!("{field}.spawn_overrides"),
                        format!("unknown object `{object}`"),
                    ));
                }
                self.check_region(&format!("{field}.spawn_overrides.{object}"), region)?;
            }
        }
        Ok(())
    }

    fn validate_target(&self, field: &str, target: &TemplateTarget) -> Result<(), ConfigError> {
        match target {
            TemplateTarget::Object { object } => {
                if self.objects.iter().any(|o| &o.id == object) {
                    Ok(())
                } else {
                    Err(ConfigError::invalid(field, format!("unknown object `{object}`")))
                }
            }
            TemplateTarget::Region { region_center } => self.check_region(field, region_center),
            TemplateTarget::Site { site } => {
                if self.site_position(&site[0], &site[1], &site[2]).is_some() {
                    Ok(())
                } else {
                    Err(ConfigError::invalid(
                        field,
                        format!("unknown site `{}.{}.{}`", site[0], site[1], site[2]),
                    ))
                }
            }
            TemplateTarget::Point { point } => {
                if point.is_finite() {
                    Ok(())
                } else {
                    Err(ConfigError::invalid(field, "non-finite point"))
                }
            }
        }
    }

    pub fn validate_predicate(&self, p: &SuccessPredicate) -> Result<(), ConfigError> {
        match p {
            SuccessPredicate::ObjectInRegion { object, region } => {
                if !self.objects.iter().any(|o| &o.id == object) {
                    return Err(ConfigError::invalid("object", format!("unknown id `{object}`")));
                }
                self.check_region("region", region)
            }
            SuccessPredicate::LatchEquals { instrument, latch, value } => {
                let inst = self
                    .instruments
                    .iter()
                    .find(|i| &i.id == instrument)
                    .ok_or_else(|| {
                        ConfigError::invalid("instrument", format!("unknown id `{instrument}`"))
                    })?;
                let spec = inst.latches.get(latch).ok_or_else(|| {
                    ConfigError::invalid("latch", format!("unknown latch `{latch}`"))
                })?;
                if !spec.values.contains(value) {
                    return Err(ConfigError::invalid(
                        "value",
                        format!("`{value}` not among declared values"),
                    ));
                }
                Ok(())
            }
            SuccessPredicate::EffectorInRegion { region } => self.check_region("region", region),
        }
    }
}
