//! Scenario files: a TOML document with `system`, `density`, `controller`,
//! `sim`, optional `tracking`/`disturbance`, and `output` sections. The
//! schema is strict (unknown keys are rejected) and every field has a
//! concrete default, so a parsed scenario serializes back to a complete,
//! re-runnable document.

use cdf_core::cbf::{CbfConfig, ScalarFn};
use cdf_core::controller::{ControllerConfig, ControllerMode};
use cdf_core::density::{DensityConfig, ObstacleSpec};
use cdf_core::dynamics::{
    lk_matrices, make_bicycle, make_double_gyre, make_lane_keeping, make_single_integrator,
    LkParams,
};
use cdf_core::sim::{ControllerSpec, DisturbanceSpec, Integrator, Pipeline, RunSpec, SimConfig};
use cdf_core::tracking::BicycleTrackingConfig;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub system: SystemSection,
    pub density: DensitySection,
    pub controller: ControllerSection,
    pub sim: SimSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    /// Bicycle geometry.
    #[serde(default = "default_l_r")]
    pub l_r: f64,
    #[serde(default = "default_length")]
    pub length: f64,
    /// Lane-keeping parameters (defaults follow the shipped vehicle set).
    #[serde(default = "default_v0")]
    pub v0: f64,
    #[serde(default)]
    pub r_d: f64,
    #[serde(default = "default_mass")]
    pub mass: f64,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "default_look_ahead")]
    pub look_ahead: f64,
    #[serde(default = "default_c_f")]
    pub c_f: f64,
    #[serde(default = "default_c_r")]
    pub c_r: f64,
    #[serde(default = "default_i_z")]
    pub i_z: f64,
    #[serde(default = "default_a_max")]
    pub a_max: f64,
}

fn default_l_r() -> f64 {
    1.0
}
fn default_length() -> f64 {
    2.0
}
fn default_v0() -> f64 {
    24.0
}
fn default_mass() -> f64 {
    1589.0
}
fn default_a() -> f64 {
    1.57
}
fn default_b() -> f64 {
    1.05
}
fn default_look_ahead() -> f64 {
    20.0
}
fn default_c_f() -> f64 {
    90_000.0
}
fn default_c_r() -> f64 {
    60_000.0
}
fn default_i_z() -> f64 {
    1765.0
}
fn default_a_max() -> f64 {
    0.3 * 9.8
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub target: Vec<f64>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Rows of the symmetric positive-definite distance weight; identity
    /// when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSection>,
}

fn default_alpha() -> f64 {
    0.2
}
fn default_eta() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSection {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    pub r1: f64,
    pub r2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta_floor: Option<f64>,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub margin_relax: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub n_samples: usize,
    #[serde(default = "default_radius")]
    pub initial_set_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal: Option<NominalSection>,
    /// Barrier/Lyapunov comparison gains (`mode = "cbf"`).
    #[serde(default = "default_e1")]
    pub e1: f64,
    #[serde(default = "default_e2")]
    pub e2: f64,
    #[serde(default = "default_relaxation")]
    pub relaxation: Option<f64>,
}

fn default_mode() -> String {
    "basic".into()
}
fn default_lambda() -> f64 {
    1e-3
}
fn default_radius() -> f64 {
    f64::INFINITY
}
fn default_e1() -> f64 {
    0.5
}
fn default_e2() -> f64 {
    0.5
}
fn default_relaxation() -> Option<f64> {
    Some(1e3)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NominalSection {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrackingSection {
    #[serde(default = "default_sigma1")]
    pub sigma1: f64,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    #[serde(default)]
    pub xi1: f64,
    #[serde(default)]
    pub xi2: f64,
    #[serde(default)]
    pub robust: bool,
    #[serde(default = "default_rate_limit")]
    pub ref_rate_limit: f64,
}

fn default_sigma1() -> f64 {
    2.0
}
fn default_sigma2() -> f64 {
    30.0
}
fn default_rate_limit() -> f64 {
    3.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub max_steps: usize,
    #[serde(default = "default_integrator")]
    pub integrator: String,
    pub x0: Vec<f64>,
    pub convergence_radius: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceSection>,
}

fn default_integrator() -> String {
    "euler".into()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    pub mode: String,
    #[serde(default = "default_basis")]
    pub basis: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bounds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq_hz: Option<f64>,
}

fn default_basis() -> String {
    "identity".into()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub directory: String,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_out_dir() -> String {
    "out".into()
}
fn default_record_every() -> usize {
    1
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_out_dir(),
            record_every: default_record_every(),
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioFile, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioFile, ScenarioError> {
    toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
}

pub fn to_toml_string(s: &ScenarioFile) -> Result<String, ScenarioError> {
    toml::to_string_pretty(s).map_err(|e| ScenarioError::Parse(e.to_string()))
}

/// Apply `key=value` overrides on the raw TOML (dotted paths, values parsed
/// as TOML literals), returning the patched document text.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String, ScenarioError> {
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
    for ov in overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| ScenarioError::Invalid(format!("override `{ov}` is not key=value")))?;
        let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
            Ok(t) => t["v"].clone(),
            Err(_) => toml::Value::String(value.to_string()),
        };
        let mut node = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            node = node
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| {
                    ScenarioError::Invalid(format!("override path `{key}` crosses a non-table"))
                })?;
        }
        node.insert(parts[parts.len() - 1].to_string(), parsed);
    }
    toml::to_string(&doc).map_err(|e| ScenarioError::Parse(e.to_string()))
}

/// A scenario resolved into something the simulator can run.
pub struct Resolved {
    pub spec: RunSpec,
    pub output: OutputSection,
    pub file: ScenarioFile,
}

pub fn resolve(file: &ScenarioFile) -> Result<Resolved, ScenarioError> {
    let bad = ScenarioError::Invalid;

    // Density.
    let dim = file.density.target.len();
    let mut obstacles = Vec::new();
    for o in &file.density.obstacles {
        match o.kind.as_str() {
            "circle" => {
                let center = o
                    .center
                    .as_ref()
                    .ok_or_else(|| bad("circle obstacle needs a center".into()))?;
                obstacles.push(ObstacleSpec::circle(center, o.r1, o.r2));
            }
            "lane_band" => obstacles.push(ObstacleSpec::LkBand {
                r1: o.r1,
                r2: o.r2,
                a_max: o
                    .a_max
                    .ok_or_else(|| bad("lane_band obstacle needs a_max".into()))?,
            }),
            other => return Err(bad(format!("unknown obstacle kind `{other}`"))),
        }
    }
    let p = match &file.density.p {
        None => DMatrix::identity(dim, dim),
        Some(rows) => {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(bad(format!("density.p must be {dim}x{dim}")));
            }
            DMatrix::from_fn(dim, dim, |i, j| rows[i][j])
        }
    };
    let density = DensityConfig::new(
        obstacles,
        file.density.alpha,
        p,
        DVector::from_row_slice(&file.density.target),
        file.density.eta,
    )
    .map_err(|e| bad(e.to_string()))?;

    // Plant and pipeline.
    let sys = &file.system;
    let (plant, pipeline) = match sys.name.as_str() {
        "single_integrator" => (make_single_integrator(), Pipeline::Direct),
        "double_gyre" => (make_double_gyre(), Pipeline::Direct),
        "bicycle" => {
            let plant = make_bicycle(sys.l_r, sys.length).map_err(|e| bad(e.to_string()))?;
            let t = file
                .tracking
                .as_ref()
                .ok_or_else(|| bad("bicycle scenarios need a [tracking] section".into()))?;
            let tracking = BicycleTrackingConfig {
                sigma1: t.sigma1,
                sigma2: t.sigma2,
                xi1: t.xi1,
                xi2: t.xi2,
                l_r: sys.l_r,
                length: sys.length,
                robust: t.robust,
                ref_rate_limit: t.ref_rate_limit,
            };
            tracking.validate().map_err(bad)?;
            (plant, Pipeline::Bicycle { tracking })
        }
        "lane_keeping" => {
            let params = lk_params(sys);
            let plant =
                make_lane_keeping(&params, sys.v0, sys.r_d).map_err(|e| bad(e.to_string()))?;
            (
                plant,
                Pipeline::LkClamp {
                    params,
                    v0: sys.v0,
                    r_d: sys.r_d,
                },
            )
        }
        other => return Err(bad(format!("unknown system `{other}`"))),
    };

    // Controller.
    let nominal = build_nominal(file, &density)?;
    let controller = match file.controller.mode.as_str() {
        "cbf" => ControllerSpec::Cbf(build_cbf(file, &density)?),
        mode_name => {
            let mode = match mode_name {
                "basic" | "nominal_tracking" => ControllerMode::Basic,
                "alg1" => ControllerMode::Alg1,
                "robust_gamma" => ControllerMode::RobustGamma,
                "scenario" => ControllerMode::Scenario,
                other => return Err(bad(format!("unknown controller mode `{other}`"))),
            };
            if mode_name == "nominal_tracking" && nominal.is_none() {
                return Err(bad(
                    "nominal_tracking mode needs [controller.nominal]".into()
                ));
            }
            let cfg = ControllerConfig {
                mode,
                lambda: file.controller.lambda,
                dt: file.sim.dt,
                zeta_floor: file.controller.zeta_floor,
                nominal,
                cost: None,
                gamma: file.controller.gamma,
                margin_relax: file.controller.margin_relax,
                beta: file.controller.beta,
                n_samples: file.controller.n_samples,
                seed: file.sim.seed,
                initial_set_radius: file.controller.initial_set_radius,
                x0: None,
            };
            cfg.validate().map_err(|e| bad(e.to_string()))?;
            ControllerSpec::Cdf(cfg)
        }
    };

    // Simulation.
    let integrator = match file.sim.integrator.as_str() {
        "euler" => Integrator::Euler,
        "rk4" => Integrator::Rk4,
        other => return Err(bad(format!("unknown integrator `{other}`"))),
    };
    let disturbance = match &file.sim.disturbance {
        None => None,
        Some(d) => Some(build_disturbance(d, &plant, sys)?),
    };
    if file.output.record_every < 1 {
        return Err(bad("output.record_every must be >= 1".into()));
    }
    let sim = SimConfig {
        dt: file.sim.dt,
        max_steps: file.sim.max_steps,
        integrator,
        x0: DVector::from_row_slice(&file.sim.x0),
        convergence_radius: file.sim.convergence_radius,
        disturbance,
        record_every: file.output.record_every,
        seed: file.sim.seed,
    };

    Ok(Resolved {
        spec: RunSpec {
            plant,
            density,
            controller,
            pipeline,
            sim,
        },
        output: file.output.clone(),
        file: file.clone(),
    })
}

fn lk_params(sys: &SystemSection) -> LkParams {
    LkParams {
        mass: sys.mass,
        a: sys.a,
        b: sys.b,
        look_ahead: sys.look_ahead,
        c_f: sys.c_f,
        c_r: sys.c_r,
        i_z: sys.i_z,
        a_max: sys.a_max,
        ..LkParams::default()
    }
}

fn build_nominal(
    file: &ScenarioFile,
    density: &DensityConfig,
) -> Result<Option<cdf_core::controller::NominalControl>, ScenarioError> {
    let Some(n) = &file.controller.nominal else {
        return Ok(None);
    };
    match n.kind.as_str() {
        "target_gain" => {
            let gain = n
                .gain
                .ok_or_else(|| ScenarioError::Invalid("target_gain nominal needs `gain`".into()))?;
            let target = density.target().clone();
            Ok(Some(Arc::new(move |x: &DVector<f64>| (&target - x) * gain)))
        }
        "state_feedback" => {
            let gains = n
                .gains
                .clone()
                .ok_or_else(|| ScenarioError::Invalid("state_feedback needs `gains`".into()))?;
            let k = DVector::from_row_slice(&gains);
            Ok(Some(Arc::new(move |x: &DVector<f64>| {
                DVector::from_row_slice(&[-k.dot(x)])
            })))
        }
        other => Err(ScenarioError::Invalid(format!(
            "unknown nominal control kind `{other}`"
        ))),
    }
}

fn build_cbf(file: &ScenarioFile, density: &DensityConfig) -> Result<CbfConfig, ScenarioError> {
    let first = density.obstacles().first().ok_or_else(|| {
        ScenarioError::Invalid("cbf mode needs at least one circular obstacle".into())
    })?;
    let barrier = match first {
        ObstacleSpec::Circle { center, r1, .. } => {
            let c: Vec<f64> = center.iter().cloned().collect();
            ScalarFn::disk_exterior(&c, *r1)
        }
        _ => {
            return Err(ScenarioError::Invalid(
                "cbf mode expects a circular obstacle".into(),
            ))
        }
    };
    let t: Vec<f64> = density.target().iter().cloned().collect();
    Ok(CbfConfig {
        e1: file.controller.e1,
        e2: file.controller.e2,
        barrier,
        lyapunov: ScalarFn::squared_distance(&t),
        relaxation: file.controller.relaxation,
    })
}

fn build_disturbance(
    d: &DisturbanceSection,
    plant: &cdf_core::dynamics::ControlAffineModel,
    sys: &SystemSection,
) -> Result<DisturbanceSpec, ScenarioError> {
    let n = plant.state_dim();
    let columns: Vec<DVector<f64>> = match d.basis.as_str() {
        "identity" => (0..n)
            .map(|i| {
                let mut c = DVector::zeros(n);
                c[i] = 1.0;
                c
            })
            .collect(),
        "lk_force_moment" => {
            let m = lk_matrices(&lk_params(sys), sys.v0)
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            vec![m.d1, m.d2]
        }
        other => {
            return Err(ScenarioError::Invalid(format!(
                "unknown disturbance basis `{other}`"
            )))
        }
    };
    match d.mode.as_str() {
        "constant" => {
            if d.values.len() != columns.len() {
                return Err(ScenarioError::Invalid(
                    "constant disturbance needs one value per basis column".into(),
                ));
            }
            let mut v = DVector::zeros(n);
            for (col, &c) in columns.iter().zip(&d.values) {
                v += col * c;
            }
            Ok(DisturbanceSpec::Constant { value: v })
        }
        "sinusoidal" => {
            if d.values.len() != columns.len() {
                return Err(ScenarioError::Invalid(
                    "sinusoidal disturbance needs one amplitude per basis column".into(),
                ));
            }
            let mut v = DVector::zeros(n);
            for (col, &c) in columns.iter().zip(&d.values) {
                v += col * c;
            }
            Ok(DisturbanceSpec::Sinusoidal {
                amplitude: v,
                freq_hz: d.freq_hz.ok_or_else(|| {
                    ScenarioError::Invalid("sinusoidal disturbance needs freq_hz".into())
                })?,
            })
        }
        "seeded_constant" => {
            if d.bounds.len() != columns.len() {
                return Err(ScenarioError::Invalid(
                    "seeded_constant disturbance needs one bound per basis column".into(),
                ));
            }
            Ok(DisturbanceSpec::SeededConstant {
                columns,
                bounds: d.bounds.clone(),
            })
        }
        other => Err(ScenarioError::Invalid(format!(
            "unknown disturbance mode `{other}`"
        ))),
    }
}
