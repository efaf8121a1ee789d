//! Scene documents: JSON with units spelled out in the field names.

use std::path::Path;

use contactdiff::dantzig::MaxStepRule;
use contactdiff::flow::DEFAULT_SUBSTEP_CAP;
use contactdiff::{DantzigOptions, Fixture, FlowOptions, LinkSpec, Material, MechanismModel, Shape, SystemState};
use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub gravity_mps2: [f64; 2],
    pub dt_s: f64,
    pub steps: usize,
    #[serde(default)]
    pub bodies: Vec<BodyConfig>,
    #[serde(default)]
    pub chains: Vec<ChainConfig>,
    #[serde(default)]
    pub fixtures: Vec<FixtureConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Constant generalized forces, one per coordinate; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restitution_override: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub friction_override: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeConfig {
    Circle { radius_m: f64 },
    /// Counter-clockwise vertices in the body frame.
    Polygon { vertices_m: Vec<[f64; 2]> },
    Box { half_extents_m: [f64; 2] },
    Halfplane { normal: [f64; 2], offset_m: f64 },
}

impl ShapeConfig {
    pub fn to_shape(&self) -> Shape {
        match self {
            ShapeConfig::Circle { radius_m } => Shape::circle(*radius_m),
            ShapeConfig::Polygon { vertices_m } => Shape::Polygon {
                vertices: vertices_m.iter().map(|v| Vector2::new(v[0], v[1])).collect(),
            },
            ShapeConfig::Box { half_extents_m } => Shape::rectangle(half_extents_m[0], half_extents_m[1]),
            ShapeConfig::Halfplane { normal, offset_m } => Shape::Halfplane {
                normal: Vector2::new(normal[0], normal[1]),
                offset: *offset_m,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub restitution: f64,
    pub friction: f64,
}

impl From<MaterialConfig> for Material {
    fn from(m: MaterialConfig) -> Self {
        Material::new(m.restitution, m.friction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyConfig {
    pub name: String,
    pub mass_kg: f64,
    pub inertia_kgm2: f64,
    pub shape: ShapeConfig,
    pub material: MaterialConfig,
    pub position_m: [f64; 2],
    #[serde(default)]
    pub angle_rad: f64,
    #[serde(default)]
    pub velocity_mps: [f64; 2],
    #[serde(default)]
    pub angular_velocity_radps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub name: String,
    pub length_m: f64,
    pub com_offset_m: f64,
    pub mass_kg: f64,
    pub inertia_kgm2: f64,
    pub shape: ShapeConfig,
    pub material: MaterialConfig,
    /// Joint angle relative to the previous link.
    #[serde(default)]
    pub angle_rad: f64,
    #[serde(default)]
    pub angular_velocity_radps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub name: String,
    pub base_m: [f64; 2],
    pub links: Vec<LinkConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureConfig {
    pub name: String,
    pub shape: ShapeConfig,
    #[serde(default)]
    pub position_m: [f64; 2],
    #[serde(default)]
    pub angle_rad: f64,
    pub material: MaterialConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxStepConfig {
    #[default]
    Corrected,
    Legacy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "yes")]
    pub ccd: bool,
    #[serde(default = "default_cap")]
    pub substep_cap: usize,
    #[serde(default = "default_slop")]
    pub slop_m: f64,
    #[serde(default)]
    pub max_step: MaxStepConfig,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn yes() -> bool {
    true
}

fn default_cap() -> usize {
    DEFAULT_SUBSTEP_CAP
}

fn default_slop() -> f64 {
    contactdiff::collision::DEFAULT_SLOP
}

fn default_tolerance() -> f64 {
    1e-8
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            ccd: true,
            substep_cap: DEFAULT_SUBSTEP_CAP,
            slop_m: default_slop(),
            max_step: MaxStepConfig::Corrected,
            tolerance: default_tolerance(),
        }
    }
}

impl SolverConfig {
    pub fn flow_options(&self) -> FlowOptions {
        FlowOptions {
            ccd: self.ccd,
            substep_cap: self.substep_cap,
            slop: self.slop_m,
            solver: DantzigOptions {
                max_step_rule: match self.max_step {
                    MaxStepConfig::Corrected => MaxStepRule::Corrected,
                    MaxStepConfig::Legacy => MaxStepRule::Legacy,
                },
                iteration_cap: None,
                tolerance: self.tolerance,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    TwoBall(TwoBallConfig),
    Slide(SlideConfig),
    Push(PushConfig),
    Gradcheck(GradcheckConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoBallConfig {
    /// Body whose initial velocity is optimized.
    pub striker: String,
    /// Body whose final position is scored.
    pub target_body: String,
    pub target_m: [f64; 2],
    pub learning_rate: f64,
    pub epochs: usize,
    pub loss_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlideConfig {
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PushConfig {
    pub pusher: String,
    pub pushed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LossConfig {
    /// `Σ wᵢ xᵢ²` over the final `(q, q̇)`.
    WeightedSquare,
    /// A single final coordinate `q[index]`.
    Coordinate { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    pub loss: LossConfig,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-6
}

/// Everything a run needs, built from a scene.
#[derive(Debug, Clone)]
pub struct Built {
    pub model: MechanismModel,
    pub state: SystemState,
    pub tau: DVector<f64>,
    pub opts: FlowOptions,
}

impl SceneConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let scene: SceneConfig = serde_json::from_str(text).map_err(|e| CliError::Parse {
            path: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        scene.check()?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    fn invalid(&self, field: &str, msg: impl std::fmt::Display) -> CliError {
        CliError::Invalid {
            scene: self.name.clone(),
            field: field.to_string(),
            message: msg.to_string(),
        }
    }

    /// Checks names, references and dimensions; physical invariants are
    /// left to the model's own validation in [`SceneConfig::build`].
    pub fn check(&self) -> Result<()> {
        if !(self.dt_s >= 0.0) {
            return Err(self.invalid("dt_s", "must be non-negative"));
        }
        let mut names: Vec<&str> = self.bodies.iter().map(|b| b.name.as_str()).collect();
        names.extend(self.chains.iter().flat_map(|c| c.links.iter().map(|l| l.name.as_str())));
        let mut sorted = names.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(self.invalid("bodies", format!("duplicate body name `{}`", w[0])));
        }
        if let Some(tau) = &self.tau {
            if tau.len() != self.dofs() {
                return Err(self.invalid("tau", format!("expected {} entries, found {}", self.dofs(), tau.len())));
            }
        }
        let exists = |n: &str| names.contains(&n);
        let referenced: Vec<(&str, &str)> = match &self.experiment {
            Some(Experiment::TwoBall(t)) => vec![("experiment.two_ball.striker", &t.striker), ("experiment.two_ball.target_body", &t.target_body)],
            Some(Experiment::Slide(s)) => vec![("experiment.slide.body", &s.body)],
            Some(Experiment::Push(p)) => vec![("experiment.push.pusher", &p.pusher), ("experiment.push.pushed", &p.pushed)],
            Some(Experiment::Gradcheck(g)) => {
                if let LossConfig::Coordinate { index } = g.loss {
                    if index >= self.dofs() {
                        return Err(self.invalid("experiment.gradcheck.loss.coordinate.index", format!("{index} is out of range")));
                    }
                }
                Vec::new()
            }
            None => Vec::new(),
        };
        for (field, name) in referenced {
            if !exists(name) {
                return Err(self.invalid(field, format!("no body named `{name}`")));
            }
        }
        Ok(())
    }

    pub fn dofs(&self) -> usize {
        3 * self.bodies.len() + self.chains.iter().map(|c| c.links.len()).sum::<usize>()
    }

    /// Body index of a free body in the built model.
    pub fn body_index(&self, name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.name == name)
    }

    pub fn build(&self) -> Result<Built> {
        self.check()?;
        let g = self.gravity_mps2;
        let mut model = MechanismModel::new(Vector2::new(g[0], g[1]));
        model.restitution_override = self.restitution_override;
        model.friction_override = self.friction_override;
        let mut q = Vec::with_capacity(self.dofs());
        let mut qd = Vec::with_capacity(self.dofs());
        for b in &self.bodies {
            model.add_free_body(b.mass_kg, b.inertia_kgm2, b.shape.to_shape(), b.material.into());
            q.extend([b.position_m[0], b.position_m[1], b.angle_rad]);
            qd.extend([b.velocity_mps[0], b.velocity_mps[1], b.angular_velocity_radps]);
        }
        for c in &self.chains {
            let links = c
                .links
                .iter()
                .map(|l| LinkSpec {
                    length: l.length_m,
                    com_offset: l.com_offset_m,
                    mass: l.mass_kg,
                    inertia: l.inertia_kgm2,
                    shape: l.shape.to_shape(),
                    material: l.material.into(),
                })
                .collect();
            model.add_chain(Vector2::new(c.base_m[0], c.base_m[1]), links);
            q.extend(c.links.iter().map(|l| l.angle_rad));
            qd.extend(c.links.iter().map(|l| l.angular_velocity_radps));
        }
        for f in &self.fixtures {
            model.add_fixture(Fixture {
                shape: f.shape.to_shape(),
                position: Vector2::new(f.position_m[0], f.position_m[1]),
                angle: f.angle_rad,
                material: f.material.into(),
            });
        }
        model.validate().map_err(|e| self.invalid("bodies", e))?;
        let tau = self
            .tau
            .as_ref()
            .map(|t| DVector::from_row_slice(t))
            .unwrap_or_else(|| DVector::zeros(self.dofs()));
        Ok(Built {
            model,
            state: SystemState::new(DVector::from_vec(q), DVector::from_vec(qd)),
            tau,
            opts: self.solver.flow_options(),
        })
    }
}
