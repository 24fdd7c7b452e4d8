//! The TOML problem file: units from the storage/thermal family or a
//! quadratic instance, a noise model (explicit or generated), and solver
//! settings. Unknown keys are rejected.
//!
//! ```toml
//! version = 1
//! horizon = 10
//! seed = 7
//!
//! [noise]
//! demand = "demand"
//! [[noise.component]]
//! name = "demand"
//! mean = { base = 10.0, amplitude = 2.0, period = 12.0 }
//! spread = 2.0
//! atoms = 3
//!
//! [[unit]]
//! name = "thermal"
//! control = [0.0, 40.0]
//! cost = { quadratic = 1.0, linear = 1.0 }
//! slack = true
//! ```

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dadp::DadpConfig;
use crate::dp::JointOptions;
use crate::error::{Error, Result};
use crate::model::{LinearQuadratic, NoiseModel, NoiseStage, ProblemSpec, Storage};
use crate::model::{TerminalQuadratic, UnitParams};
use crate::quadratic::QuadraticSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    pub noise: NoiseConfig,
    #[serde(default, rename = "unit")]
    pub units: Vec<UnitConfig>,
    pub quadratic: Option<QuadraticConfig>,
    #[serde(default)]
    pub joint: JointConfig,
    #[serde(default)]
    pub dadp: DadpSection,
    #[serde(default)]
    pub simulate: SimulateConfig,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Component holding the demand, if any.
    pub demand: Option<String>,
    /// Generated noise: independent components combined by product.
    #[serde(default, rename = "component")]
    pub components: Vec<ComponentConfig>,
    /// Explicit noise, one entry per `t = 0..=horizon`.
    #[serde(default, rename = "stage")]
    pub stages: Vec<StageConfig>,
    /// Coordinate names of explicit atoms.
    #[serde(default)]
    pub coordinates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub name: String,
    pub mean: MeanProfile,
    /// Half-width of the support around the mean.
    #[serde(default)]
    pub spread: f64,
    #[serde(default = "one")]
    pub atoms: usize,
    /// Atoms below this are raised to it.
    pub floor: Option<f64>,
}

/// Per-`t` mean: a list, a constant, or `base + amplitude sin(2 pi (t + phase) / period)`.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum MeanProfile {
    Constant(f64),
    List(Vec<f64>),
    Sine(SineProfile),
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SineProfile {
    pub base: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "twelve")]
    pub period: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub atoms: Vec<Vec<f64>>,
    /// Uniform when omitted.
    pub weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct UnitConfig {
    pub name: String,
    pub control: [f64; 2],
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default = "one_f")]
    pub coupling: f64,
    #[serde(default)]
    pub slack: bool,
    pub storage: Option<StorageConfig>,
    pub grid_points: Option<usize>,
    pub mesh_points: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default)]
    pub quadratic: f64,
    #[serde(default)]
    pub linear: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StorageConfig {
    pub bounds: [f64; 2],
    pub initial: f64,
    pub inflow: Option<String>,
    #[serde(default)]
    pub terminal: TerminalConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalConfig {
    #[serde(default)]
    pub quadratic: f64,
    #[serde(default)]
    pub linear: f64,
    #[serde(default)]
    pub constant: f64,
}

/// A quadratic instance; noise coordinates must be `(d, a^1, .., a^N)`.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticConfig {
    pub c: Vec<f64>,
    pub gamma: Vec<f64>,
    pub x0: Vec<f64>,
    /// Boxes used when the instance is solved by DP.
    pub state_bounds: Vec<[f64; 2]>,
    pub control_bounds: Vec<[f64; 2]>,
    /// Atom of `xi_0` at the root of the verification tree.
    #[serde(default)]
    pub root_atom: usize,
    /// Last unit acts as slack for primal estimates.
    #[serde(default)]
    pub slack_last: bool,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct JointConfig {
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    #[serde(default = "default_mesh")]
    pub mesh_points: usize,
    #[serde(default = "default_cap")]
    pub dimension_cap: usize,
    pub coupling_tolerance: Option<f64>,
    /// Central-difference step for marginal prices.
    #[serde(default = "default_price_step")]
    pub price_step: f64,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            grid_points: default_grid(),
            mesh_points: default_mesh(),
            dimension_cap: default_cap(),
            coupling_tolerance: None,
            price_step: default_price_step(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialModel {
    #[default]
    Zero,
    /// Closed-form multipliers of a quadratic instance, regressed onto the family.
    Warm,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DadpSection {
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Overrides `rho` per time step.
    pub step_sizes: Option<Vec<f64>>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid_size: usize,
    #[serde(default = "default_margin")]
    pub support_margin: f64,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    #[serde(default = "default_mesh")]
    pub mesh_points: usize,
    #[serde(default)]
    pub init: InitialModel,
}

impl Default for DadpSection {
    fn default() -> Self {
        Self {
            rho: default_rho(),
            step_sizes: None,
            samples: default_samples(),
            stop_tol: default_stop_tol(),
            max_iters: default_iters(),
            lambda_grid_size: default_lambda_grid(),
            support_margin: default_margin(),
            grid_points: default_grid(),
            mesh_points: default_mesh(),
            init: InitialModel::Zero,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_sim_samples")]
    pub samples: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            samples: default_sim_samples(),
        }
    }
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn twelve() -> f64 {
    12.0
}
fn default_grid() -> usize {
    41
}
fn default_mesh() -> usize {
    13
}
fn default_cap() -> usize {
    3
}
fn default_price_step() -> f64 {
    0.5
}
fn default_rho() -> f64 {
    0.5
}
fn default_samples() -> usize {
    1000
}
fn default_stop_tol() -> f64 {
    1e-3
}
fn default_iters() -> usize {
    100
}
fn default_lambda_grid() -> usize {
    21
}
fn default_margin() -> f64 {
    0.1
}
fn default_sim_samples() -> usize {
    100
}

fn config_err(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let key = e
                .message()
                .split('`')
                .nth(1)
                .filter(|_| e.message().starts_with("unknown field"))
                .map_or_else(|| "<document>".to_string(), str::to_string);
            config_err(key, e.to_string().trim().replace('\n', " "))
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn check(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(config_err(
                "version",
                format!(
                    "unsupported schema version {} (expected {SCHEMA_VERSION})",
                    self.version
                ),
            ));
        }
        if self.horizon == 0 {
            return Err(config_err("horizon", "must be at least 1"));
        }
        match (&self.quadratic, self.units.is_empty()) {
            (Some(_), false) => {
                return Err(config_err(
                    "unit",
                    "a quadratic instance cannot also declare units",
                ))
            }
            (None, true) => return Err(config_err("unit", "at least one unit is required")),
            _ => {}
        }
        let mut names = BTreeSet::new();
        for (i, u) in self.units.iter().enumerate() {
            if !names.insert(u.name.as_str()) {
                return Err(config_err(
                    format!("unit[{i}].name"),
                    format!("duplicate unit `{}`", u.name),
                ));
            }
        }
        if self.units.iter().filter(|u| u.slack).count() > 1 {
            return Err(config_err("unit.slack", "at most one slack unit"));
        }
        let d = &self.dadp;
        if let Some(s) = &d.step_sizes {
            if s.len() != self.horizon {
                return Err(config_err(
                    "dadp.step_sizes",
                    format!("{} entries for a horizon of {}", s.len(), self.horizon),
                ));
            }
        }
        for (key, ok) in [
            ("dadp.rho", d.rho >= 0.0 && d.rho.is_finite()),
            ("dadp.samples", d.samples >= 1),
            ("dadp.stop_tol", d.stop_tol > 0.0),
            ("dadp.max_iters", d.max_iters >= 1),
            ("dadp.lambda_grid_size", d.lambda_grid_size >= 2),
            ("dadp.support_margin", d.support_margin >= 0.0),
            ("dadp.grid_points", d.grid_points >= 2),
            ("dadp.mesh_points", d.mesh_points >= 1),
            ("joint.grid_points", self.joint.grid_points >= 2),
            ("joint.mesh_points", self.joint.mesh_points >= 1),
            ("joint.price_step", self.joint.price_step > 0.0),
        ] {
            if !ok {
                return Err(config_err(key, "out of range"));
            }
        }
        Ok(())
    }

    /// Coordinate names of the noise vector.
    pub fn coordinates(&self) -> Vec<String> {
        if self.noise.components.is_empty() {
            self.noise.coordinates.clone()
        } else {
            self.noise
                .components
                .iter()
                .map(|c| c.name.clone())
                .collect()
        }
    }

    fn coordinate(&self, key: &str, name: &str) -> Result<usize> {
        self.coordinates()
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| config_err(key, format!("no noise coordinate named `{name}`")))
    }

    pub fn noise_model(&self) -> Result<NoiseModel<f64>> {
        let n = &self.noise;
        match (n.components.is_empty(), n.stages.is_empty()) {
            (false, false) => Err(config_err(
                "noise",
                "declare either components or stages, not both",
            )),
            (true, true) => Err(config_err("noise", "no noise declared")),
            (false, true) => generate_noise(&n.components, self.horizon),
            (true, false) => {
                if n.stages.len() != self.horizon + 1 {
                    return Err(config_err(
                        "noise.stage",
                        format!(
                            "{} stages, expected horizon + 1 = {}",
                            n.stages.len(),
                            self.horizon + 1
                        ),
                    ));
                }
                let stages = n
                    .stages
                    .iter()
                    .enumerate()
                    .map(|(t, s)| {
                        if s.atoms.iter().any(|a| a.len() != n.coordinates.len()) {
                            return Err(config_err(
                                format!("noise.stage[{t}].atoms"),
                                format!("atoms must have {} coordinates", n.coordinates.len()),
                            ));
                        }
                        Ok(match &s.weights {
                            Some(w) => NoiseStage {
                                atoms: s.atoms.clone(),
                                weights: w.clone(),
                            },
                            None => NoiseStage::uniform(s.atoms.clone()),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(NoiseModel::new(stages))
            }
        }
    }

    /// The unit family problem, or the quadratic instance as storage units.
    pub fn problem(&self) -> Result<ProblemSpec<f64>> {
        let noise = self.noise_model()?;
        let demand = match &self.noise.demand {
            Some(name) => self.coordinate("noise.demand", name)?,
            None if self.quadratic.is_some() => 0,
            None => {
                return Err(config_err(
                    "noise.demand",
                    "a demand coordinate is required",
                ))
            }
        };
        if let Some(q) = &self.quadratic {
            let spec = self.quadratic_spec()?;
            let boxes = |v: &[[f64; 2]]| v.iter().map(|b| (b[0], b[1])).collect::<Vec<_>>();
            let p = spec.problem(&boxes(&q.state_bounds), &boxes(&q.control_bounds))?;
            return Ok(if q.slack_last {
                p.with_slack(spec.units() - 1)
            } else {
                p
            });
        }
        let mut units = Vec::with_capacity(self.units.len());
        let mut slack = None;
        for (i, u) in self.units.iter().enumerate() {
            let storage = match &u.storage {
                Some(s) => Some(Storage {
                    lower: s.bounds[0],
                    upper: s.bounds[1],
                    initial: s.initial,
                    inflow_coordinate: match &s.inflow {
                        Some(name) => {
                            Some(self.coordinate(&format!("unit[{i}].storage.inflow"), name)?)
                        }
                        None => None,
                    },
                    terminal: TerminalQuadratic {
                        quadratic: s.terminal.quadratic,
                        linear: s.terminal.linear,
                        constant: s.terminal.constant,
                    },
                }),
                None => None,
            };
            if u.slack {
                slack = Some(i);
            }
            units.push(
                UnitParams {
                    name: u.name.clone(),
                    storage,
                    control_lower: u.control[0],
                    control_upper: u.control[1],
                    cost: LinearQuadratic {
                        quadratic: u.cost.quadratic,
                        linear: u.cost.linear,
                    },
                    coupling: u.coupling,
                }
                .build(self.horizon),
            );
        }
        let p = ProblemSpec::with_demand(units, noise, demand);
        Ok(match slack {
            Some(s) => p.with_slack(s),
            None => p,
        })
    }

    pub fn quadratic_spec(&self) -> Result<QuadraticSpec<f64>> {
        let q = self.quadratic.as_ref().ok_or_else(|| {
            config_err(
                "quadratic",
                "the config does not declare a quadratic instance",
            )
        })?;
        let n = q.c.len();
        for (key, len) in [
            ("quadratic.gamma", q.gamma.len()),
            ("quadratic.x0", q.x0.len()),
            ("quadratic.state_bounds", q.state_bounds.len()),
            ("quadratic.control_bounds", q.control_bounds.len()),
        ] {
            if len != n {
                return Err(config_err(key, format!("{len} entries for {n} units")));
            }
        }
        let noise = self.noise_model()?;
        if noise.dim() != n + 1 {
            return Err(config_err(
                "noise",
                format!("a quadratic instance needs {} noise coordinates (demand, then one inflow per unit)", n + 1),
            ));
        }
        if q.root_atom >= noise.stage(0).len() {
            return Err(config_err(
                "quadratic.root_atom",
                "not an atom of the t=0 noise",
            ));
        }
        Ok(QuadraticSpec {
            c: q.c.clone(),
            gamma: q.gamma.clone(),
            x0: q.x0.clone(),
            noise,
        })
    }

    fn unit_points(
        &self,
        problem: &ProblemSpec<f64>,
        default: usize,
        pick: fn(&UnitConfig) -> Option<usize>,
        state: bool,
    ) -> Vec<Vec<usize>> {
        problem
            .subsystems
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let k = self.units.get(i).and_then(pick).unwrap_or(default);
                vec![k; if state { s.state_dim } else { s.control_dim }]
            })
            .collect()
    }

    pub fn joint_options(&self, problem: &ProblemSpec<f64>) -> JointOptions<f64> {
        JointOptions {
            grid_points: self.unit_points(problem, self.joint.grid_points, |u| u.grid_points, true),
            mesh_points: self.unit_points(
                problem,
                self.joint.mesh_points,
                |u| u.mesh_points,
                false,
            ),
            dimension_cap: self.joint.dimension_cap,
            coupling_tolerance: self.joint.coupling_tolerance,
        }
    }

    pub fn dadp_config(&self, problem: &ProblemSpec<f64>) -> DadpConfig<f64> {
        let d = &self.dadp;
        DadpConfig {
            step_sizes: d
                .step_sizes
                .clone()
                .unwrap_or_else(|| vec![d.rho; self.horizon]),
            samples: d.samples,
            stop_tol: d.stop_tol,
            max_iters: d.max_iters,
            lambda_grid_size: d.lambda_grid_size,
            support_margin: d.support_margin,
            seed: self.seed,
            grid_points: self.unit_points(problem, d.grid_points, |u| u.grid_points, true),
            mesh_points: self.unit_points(problem, d.mesh_points, |u| u.mesh_points, false),
        }
    }
}

fn mean_at(profile: &MeanProfile, t: usize) -> Option<f64> {
    match profile {
        MeanProfile::Constant(c) => Some(*c),
        MeanProfile::List(v) => v.get(t).copied(),
        MeanProfile::Sine(s) => {
            Some(s.base + s.amplitude * (2.0 * PI * (t as f64 + s.phase) / s.period).sin())
        }
    }
}

/// Product of independent components, each with `atoms` equally likely
/// points spread evenly over `mean +- spread`.
fn generate_noise(components: &[ComponentConfig], horizon: usize) -> Result<NoiseModel<f64>> {
    let mut stages = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let mut per_component = Vec::with_capacity(components.len());
        for (c, comp) in components.iter().enumerate() {
            let key = |f: &str| format!("noise.component[{c}].{f}");
            if comp.atoms == 0 {
                return Err(config_err(key("atoms"), "must be at least 1"));
            }
            if !(comp.spread >= 0.0) {
                return Err(config_err(key("spread"), "must be nonnegative"));
            }
            let mean = mean_at(&comp.mean, t)
                .ok_or_else(|| config_err(key("mean"), format!("no mean given for t={t}")))?;
            let points: Vec<f64> = (0..comp.atoms)
                .map(|k| {
                    let z = if comp.atoms == 1 {
                        0.0
                    } else {
                        -1.0 + 2.0 * k as f64 / (comp.atoms - 1) as f64
                    };
                    let v = mean + comp.spread * z;
                    comp.floor.map_or(v, |f| v.max(f))
                })
                .collect();
            per_component.push(points);
        }
        let mut atoms: Vec<Vec<f64>> = vec![Vec::new()];
        for points in &per_component {
            atoms = atoms
                .iter()
                .flat_map(|prefix| {
                    points.iter().map(move |&p| {
                        let mut a = prefix.clone();
                        a.push(p);
                        a
                    })
                })
                .collect();
        }
        stages.push(NoiseStage::uniform(atoms));
    }
    Ok(NoiseModel::new(stages))
}

#[cfg(test)]
mod tests;
