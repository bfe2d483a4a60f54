//! Closed-loop integration of a plant under a per-step safety controller,
//! with disturbance injection, batch running, trajectory verification,
//! and CSV export.

use crate::cbf::{step_cbf, CbfConfig};
use crate::controller::{
    step_alg1, step_basic, step_robust_gamma, step_scenario, ControlError, ControllerConfig,
    ControllerMode, StepResult,
};
use crate::density::DensityConfig;
use crate::dynamics::LkParams;
use crate::dynamics::{ControlAffineModel, PerturbationSpec};
use crate::tracking::{
    accel_law, extract_reference, lk_input_clamp, steer_rate_law, BicycleTrackingConfig,
    RateTracker, TrackingError,
};
use nalgebra::DVector;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Euler,
    Rk4,
}

/// Disturbance blueprint; seeded draws happen at run start so batch runs
/// can derive independent fields from one master seed.
#[derive(Debug, Clone)]
pub enum DisturbanceSpec {
    Constant {
        value: DVector<f64>,
    },
    Sinusoidal {
        amplitude: DVector<f64>,
        freq_hz: f64,
    },
    SeededConstant {
        columns: Vec<DVector<f64>>,
        bounds: Vec<f64>,
    },
}

impl DisturbanceSpec {
    pub fn build(&self, seed: u64) -> PerturbationSpec {
        match self {
            DisturbanceSpec::Constant { value } => PerturbationSpec::constant(value.clone()),
            DisturbanceSpec::Sinusoidal { amplitude, freq_hz } => {
                PerturbationSpec::sinusoidal(amplitude.clone(), *freq_hz)
            }
            DisturbanceSpec::SeededConstant { columns, bounds } => {
                PerturbationSpec::seeded_random_constant(columns, bounds, seed)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    pub max_steps: usize,
    pub integrator: Integrator,
    pub x0: DVector<f64>,
    /// Reaching this P-weighted distance from the target terminates the run.
    pub convergence_radius: f64,
    pub disturbance: Option<DisturbanceSpec>,
    pub record_every: usize,
    pub seed: u64,
}

/// How controller commands become plant inputs.
#[derive(Debug, Clone)]
pub enum Pipeline {
    /// Controller output applied directly.
    Direct,
    /// Scalar steering command clamped into the acceleration-feasible
    /// interval before application.
    LkClamp { params: LkParams, v0: f64, r_d: f64 },
    /// Velocity commands on the position substate converted to steering
    /// rate and acceleration by the tracking laws.
    Bicycle { tracking: BicycleTrackingConfig },
}

#[derive(Clone)]
pub enum ControllerSpec {
    Cdf(ControllerConfig),
    Cbf(CbfConfig),
}

impl std::fmt::Debug for ControllerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControllerSpec::Cdf(c) => write!(f, "Cdf({c:?})"),
            ControllerSpec::Cbf(c) => write!(f, "Cbf({c:?})"),
        }
    }
}

/// Everything one closed-loop run needs.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub plant: ControlAffineModel,
    pub density: DensityConfig,
    pub controller: ControllerSpec,
    pub pipeline: Pipeline,
    pub sim: SimConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    MaxSteps,
    Infeasible,
    EnteredObstacle,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Converged => "converged",
            Outcome::MaxSteps => "max-steps",
            Outcome::Infeasible => "infeasible",
            Outcome::EnteredObstacle => "entered-obstacle",
        }
    }
}

/// Per-recorded-step diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct Diagnostics {
    pub rho: f64,
    pub min_clearance: f64,
    pub zeta: f64,
    pub qp_residual: f64,
}

/// Time-indexed states, applied controls, and diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub diagnostics: Vec<Diagnostics>,
    pub outcome: Outcome,
    /// Number of controller steps taken before termination.
    pub steps_taken: usize,
    /// P-weighted distance to the target at the final state.
    pub final_p_distance: f64,
    /// Human-readable reason when the outcome is `Infeasible`.
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn min_clearance(&self) -> f64 {
        self.diagnostics
            .iter()
            .map(|d| d.min_clearance)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_u_norm(&self) -> f64 {
        self.controls.iter().map(|u| u.norm()).fold(0.0, f64::max)
    }

    pub fn path_length(&self) -> f64 {
        self.states.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }
}

fn validate(spec: &RunSpec) -> Result<(), SimError> {
    let sim = &spec.sim;
    if !(sim.dt > 0.0) {
        return Err(SimError::Config(format!("dt must be > 0, got {}", sim.dt)));
    }
    if sim.max_steps < 1 {
        return Err(SimError::Config("max_steps must be >= 1".into()));
    }
    if sim.record_every < 1 {
        return Err(SimError::Config("record_every must be >= 1".into()));
    }
    if sim.x0.len() != spec.plant.state_dim() {
        return Err(SimError::Config(format!(
            "x0 has dimension {}, plant expects {}",
            sim.x0.len(),
            spec.plant.state_dim()
        )));
    }
    if spec.density.dim() > spec.plant.state_dim() {
        return Err(SimError::Config(format!(
            "density dimension {} exceeds plant dimension {}",
            spec.density.dim(),
            spec.plant.state_dim()
        )));
    }
    if sim.convergence_radius < spec.density.eta() {
        return Err(SimError::Config(format!(
            "convergence radius {} below density eta {}",
            sim.convergence_radius,
            spec.density.eta()
        )));
    }
    match &spec.pipeline {
        Pipeline::Direct => {
            if spec.density.dim() != spec.plant.state_dim() {
                return Err(SimError::Config(
                    "direct pipeline requires the density over the full plant state".into(),
                ));
            }
        }
        Pipeline::LkClamp { .. } => {
            if spec.plant.input_dim() != 1 || spec.plant.state_dim() != 4 {
                return Err(SimError::Config(
                    "steering clamp pipeline expects the 4-state single-input plant".into(),
                ));
            }
        }
        Pipeline::Bicycle { tracking } => {
            tracking.validate().map_err(SimError::Config)?;
            if spec.plant.state_dim() != 5 || spec.plant.input_dim() != 2 {
                return Err(SimError::Config(
                    "bicycle pipeline expects the 5-state two-input plant".into(),
                ));
            }
            if spec.density.dim() != 2 {
                return Err(SimError::Config(
                    "bicycle pipeline controls the 2-state position reduction".into(),
                ));
            }
        }
    }
    if let ControllerSpec::Cdf(cfg) = &spec.controller {
        cfg.validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
    }
    Ok(())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for run `i` of a batch keyed on `master`.
pub fn derive_run_seed(master: u64, run_index: usize) -> u64 {
    splitmix64(master ^ splitmix64(run_index as u64 + 1))
}

const TAG_CONTROLLER: u64 = 0x636f_6e74_726f_6c6c;
const TAG_DISTURBANCE: u64 = 0x6469_7374_7572_6221;

/// Integrate one closed-loop run. Controller failures after start become
/// trajectory outcomes; only configuration errors abort.
pub fn run(spec: &RunSpec) -> Result<Trajectory, SimError> {
    validate(spec)?;
    let sim = &spec.sim;
    let n_ctrl = spec.density.dim();
    let disturbance = sim
        .disturbance
        .as_ref()
        .map(|d| d.build(splitmix64(sim.seed ^ TAG_DISTURBANCE)));

    // Resolve the controller for this run: anchor the initial set at the
    // controller-space start and key the sampling stream on the run seed.
    let mut controller = spec.controller.clone();
    if let ControllerSpec::Cdf(cfg) = &mut controller {
        cfg.dt = sim.dt;
        cfg.x0 = Some(sim.x0.rows(0, n_ctrl).into_owned());
        cfg.seed = splitmix64(sim.seed ^ splitmix64(cfg.seed ^ TAG_CONTROLLER));
    }

    let mut bridge = BicycleBridge::new(spec, &sim.x0);
    let mut x = sim.x0.clone();
    let mut t = 0.0;
    let mut prev_u_ctrl = DVector::zeros(ctrl_input_dim(spec));

    let mut traj = Trajectory {
        steps: Vec::new(),
        times: Vec::new(),
        states: Vec::new(),
        controls: Vec::new(),
        diagnostics: Vec::new(),
        outcome: Outcome::MaxSteps,
        steps_taken: 0,
        final_p_distance: f64::NAN,
        failure: None,
    };

    for k in 0..=sim.max_steps {
        let x_ctrl = x.rows(0, n_ctrl).into_owned();
        let clearance = spec.density.min_clearance(&x_ctrl);
        let pdist = spec.density.p_distance(&x_ctrl);
        let rho = spec
            .density
            .eval(&x_ctrl)
            .map(|e| e.rho)
            .unwrap_or(f64::INFINITY);

        if clearance <= 0.0 {
            record(
                &mut traj,
                k,
                t,
                &x,
                &DVector::zeros(spec.plant.input_dim()),
                rho,
                clearance,
                0.0,
                0.0,
            );
            traj.outcome = Outcome::EnteredObstacle;
            traj.steps_taken = k;
            traj.final_p_distance = pdist;
            return Ok(traj);
        }
        if pdist <= sim.convergence_radius {
            record(
                &mut traj,
                k,
                t,
                &x,
                &DVector::zeros(spec.plant.input_dim()),
                rho,
                clearance,
                0.0,
                0.0,
            );
            traj.outcome = Outcome::Converged;
            traj.steps_taken = k;
            traj.final_p_distance = pdist;
            return Ok(traj);
        }
        if k == sim.max_steps {
            record(
                &mut traj,
                k,
                t,
                &x,
                &DVector::zeros(spec.plant.input_dim()),
                rho,
                clearance,
                0.0,
                0.0,
            );
            traj.outcome = Outcome::MaxSteps;
            traj.steps_taken = k;
            traj.final_p_distance = pdist;
            return Ok(traj);
        }

        let step = match controller_step(spec, &controller, &x_ctrl, &prev_u_ctrl) {
            Ok(s) => s,
            Err(e) => {
                record(
                    &mut traj,
                    k,
                    t,
                    &x,
                    &DVector::zeros(spec.plant.input_dim()),
                    rho,
                    clearance,
                    0.0,
                    0.0,
                );
                traj.outcome = Outcome::Infeasible;
                traj.steps_taken = k;
                traj.final_p_distance = pdist;
                traj.failure = Some(e.to_string());
                return Ok(traj);
            }
        };
        prev_u_ctrl = step.u.clone();

        let u_plant = match apply_pipeline(spec, &mut bridge, &x, &step.u) {
            Ok(u) => u,
            Err(e) => {
                record(
                    &mut traj,
                    k,
                    t,
                    &x,
                    &DVector::zeros(spec.plant.input_dim()),
                    rho,
                    clearance,
                    0.0,
                    0.0,
                );
                traj.outcome = Outcome::Infeasible;
                traj.steps_taken = k;
                traj.final_p_distance = pdist;
                traj.failure = Some(e.to_string());
                return Ok(traj);
            }
        };

        if k % sim.record_every == 0 {
            record(
                &mut traj,
                k,
                t,
                &x,
                &u_plant,
                rho,
                clearance,
                step.zeta.unwrap_or(0.0),
                step.max_violation,
            );
        }

        x = integrate(spec, &x, &u_plant, t, disturbance.as_ref());
        t += sim.dt;
    }
    unreachable!("loop always returns through a termination branch");
}

fn ctrl_input_dim(spec: &RunSpec) -> usize {
    match spec.pipeline {
        Pipeline::Bicycle { .. } => 2,
        _ => spec.plant.input_dim(),
    }
}

fn controller_step(
    spec: &RunSpec,
    controller: &ControllerSpec,
    x_ctrl: &DVector<f64>,
    prev_u: &DVector<f64>,
) -> Result<StepResult, ControlError> {
    let model = match spec.pipeline {
        Pipeline::Bicycle { .. } => crate::dynamics::make_single_integrator(),
        _ => spec.plant.clone(),
    };
    match controller {
        ControllerSpec::Cdf(cfg) => match cfg.mode {
            ControllerMode::Basic => step_basic(&model, &spec.density, cfg, x_ctrl),
            ControllerMode::RobustGamma => step_robust_gamma(&model, &spec.density, cfg, x_ctrl),
            ControllerMode::Scenario => step_scenario(&model, &spec.density, cfg, x_ctrl),
            ControllerMode::Alg1 => {
                let m = model.input_dim();
                let parts = spec.density.eval_parts(x_ctrl)?;
                // Nominal controls at x and at each flowed point; fall back
                // to the previous applied control when no nominal is set.
                let u0_x = match &cfg.nominal {
                    Some(f) => f(x_ctrl),
                    None => prev_u.clone(),
                };
                let mut u0_z = Vec::with_capacity(m);
                for j in 0..m {
                    let zj = x_ctrl + model.input_column(j, x_ctrl) * (cfg.dt * parts.rho);
                    u0_z.push(match &cfg.nominal {
                        Some(f) => f(&zj),
                        None => prev_u.clone(),
                    });
                }
                step_alg1(&model, &spec.density, cfg, x_ctrl, &u0_x, &u0_z)
            }
        },
        ControllerSpec::Cbf(cfg) => {
            let u = step_cbf(&model, cfg, x_ctrl)?;
            Ok(StepResult {
                u,
                u_bar: None,
                zeta: None,
                constraint_values: vec![],
                constraint_margins: vec![],
                feasible: true,
                max_violation: 0.0,
            })
        }
    }
}

/// Reference state carried across steps by the bicycle bridge.
struct BicycleBridge {
    rate: RateTracker,
    last_heading_ref: f64,
}

impl BicycleBridge {
    fn new(spec: &RunSpec, x0: &DVector<f64>) -> Self {
        let last_heading_ref = match &spec.pipeline {
            Pipeline::Bicycle { tracking } => {
                x0[2] + crate::dynamics::bicycle_slip(tracking.l_r, tracking.length, x0[3])
            }
            _ => 0.0,
        };
        Self {
            rate: RateTracker::new(),
            last_heading_ref,
        }
    }
}

fn apply_pipeline(
    spec: &RunSpec,
    bridge: &mut BicycleBridge,
    x: &DVector<f64>,
    u_ctrl: &DVector<f64>,
) -> Result<DVector<f64>, TrackingError> {
    match &spec.pipeline {
        Pipeline::Direct => Ok(u_ctrl.clone()),
        Pipeline::LkClamp { params, v0, r_d } => {
            let clamped = lk_input_clamp(params, *v0, x, *r_d, u_ctrl[0]);
            Ok(DVector::from_row_slice(&[clamped]))
        }
        Pipeline::Bicycle { tracking } => {
            let (v_ref, heading_ref) = match extract_reference(u_ctrl) {
                Ok(r) => r,
                // Hold the previous heading reference on a zero command.
                Err(TrackingError::ZeroCommand) => (0.0, bridge.last_heading_ref),
                Err(e) => return Err(e),
            };
            bridge.last_heading_ref = heading_ref;
            let (v_ref_dot, mut heading_ref_dot) =
                bridge.rate.rates(v_ref, heading_ref, spec.sim.dt);
            heading_ref_dot =
                heading_ref_dot.clamp(-tracking.ref_rate_limit, tracking.ref_rate_limit);
            let a = accel_law(tracking, x[4], v_ref, v_ref_dot);
            let w = steer_rate_law(tracking, x[2], x[3], x[4], heading_ref, heading_ref_dot)?;
            Ok(DVector::from_row_slice(&[w, a]))
        }
    }
}

fn integrate(
    spec: &RunSpec,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    disturbance: Option<&PerturbationSpec>,
) -> DVector<f64> {
    step_state(
        &spec.plant,
        spec.sim.integrator,
        x,
        u,
        t,
        spec.sim.dt,
        disturbance,
    )
}

/// Advance the plant one step under a zero-order-hold control and an
/// optional disturbance field.
pub fn step_state(
    plant: &ControlAffineModel,
    integrator: Integrator,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    dt: f64,
    disturbance: Option<&PerturbationSpec>,
) -> DVector<f64> {
    let field = |x: &DVector<f64>, t: f64| -> DVector<f64> {
        let mut v = plant.vector_field(x, u);
        if let Some(d) = disturbance {
            v += d.eval(x, t);
        }
        v
    };
    match integrator {
        Integrator::Euler => x + field(x, t) * dt,
        Integrator::Rk4 => {
            let k1 = field(x, t);
            let k2 = field(&(x + &k1 * (dt / 2.0)), t + dt / 2.0);
            let k3 = field(&(x + &k2 * (dt / 2.0)), t + dt / 2.0);
            let k4 = field(&(x + &k3 * dt), t + dt);
            x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn record(
    traj: &mut Trajectory,
    step: usize,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    rho: f64,
    clearance: f64,
    zeta: f64,
    residual: f64,
) {
    traj.steps.push(step);
    traj.times.push(t);
    traj.states.push(x.clone());
    traj.controls.push(u.clone());
    traj.diagnostics.push(Diagnostics {
        rho,
        min_clearance: clearance,
        zeta,
        qp_residual: residual,
    });
}

/// Per-run batch summary row.
#[derive(Debug, Clone)]
pub struct BatchRow {
    pub run: usize,
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: usize,
    pub sim_time: f64,
    pub min_clearance: f64,
    pub final_p_distance: f64,
    /// Max |second state derivative| over recorded steps (the lateral
    /// acceleration for the lane-keeping plant).
    pub max_abs_accel: f64,
    pub max_u_norm: f64,
}

/// Independent runs with per-run derived seeds.
pub fn run_batch(
    spec: &RunSpec,
    n_runs: usize,
    master_seed: u64,
) -> Result<(Vec<Trajectory>, Vec<BatchRow>), SimError> {
    if n_runs < 1 {
        return Err(SimError::Config("n_runs must be >= 1".into()));
    }
    let mut trajectories = Vec::with_capacity(n_runs);
    let mut rows = Vec::with_capacity(n_runs);
    for i in 0..n_runs {
        let seed = derive_run_seed(master_seed, i);
        let mut s = spec.clone();
        s.sim.seed = seed;
        let traj = run(&s)?;
        let disturbance = s
            .sim
            .disturbance
            .as_ref()
            .map(|d| d.build(splitmix64(seed ^ TAG_DISTURBANCE)));
        let max_abs_accel = traj
            .states
            .iter()
            .zip(&traj.controls)
            .zip(&traj.times)
            .map(|((x, u), t)| {
                let mut v = s.plant.vector_field(x, u);
                if let Some(d) = &disturbance {
                    v += d.eval(x, *t);
                }
                if v.len() > 1 {
                    v[1].abs()
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        rows.push(BatchRow {
            run: i,
            seed,
            outcome: traj.outcome,
            steps: traj.steps_taken,
            sim_time: traj.final_time(),
            min_clearance: traj.min_clearance(),
            final_p_distance: traj.final_p_distance,
            max_abs_accel,
            max_u_norm: traj.max_u_norm(),
        });
        trajectories.push(traj);
    }
    Ok((trajectories, rows))
}

/// Tolerances for the independent trajectory recheck.
#[derive(Debug, Clone, Copy)]
pub struct VerifyTolerances {
    pub convergence_radius: f64,
    pub qp_residual: f64,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        Self {
            convergence_radius: 0.1,
            qp_residual: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Violation {
    ObstacleEntry { step_index: usize, clearance: f64 },
    ConvergenceMismatch { final_distance: f64 },
    ResidualExceeded { step_index: usize, value: f64 },
    OutcomeFailure { outcome: Outcome },
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Recheck a trajectory against the environment without trusting recorded
/// diagnostics: obstacle clearance recomputed from states, convergence
/// recomputed from the final state, residuals bounded.
pub fn verify_trajectory(
    traj: &Trajectory,
    density: &DensityConfig,
    tol: &VerifyTolerances,
) -> VerifyReport {
    let mut report = VerifyReport::default();
    let n = density.dim();
    for (idx, x) in traj.states.iter().enumerate() {
        let c = density.min_clearance(&x.rows(0, n).into_owned());
        if c <= 0.0 {
            report.violations.push(Violation::ObstacleEntry {
                step_index: traj.steps[idx],
                clearance: c,
            });
            break;
        }
    }
    if traj.outcome == Outcome::Converged {
        if let Some(x) = traj.states.last() {
            let d = density.p_distance(&x.rows(0, n).into_owned());
            if d > tol.convergence_radius {
                report
                    .violations
                    .push(Violation::ConvergenceMismatch { final_distance: d });
            }
        }
    }
    for (idx, d) in traj.diagnostics.iter().enumerate() {
        if d.qp_residual > tol.qp_residual {
            report.violations.push(Violation::ResidualExceeded {
                step_index: traj.steps[idx],
                value: d.qp_residual,
            });
        }
    }
    if matches!(traj.outcome, Outcome::Infeasible | Outcome::EnteredObstacle) {
        report.violations.push(Violation::OutcomeFailure {
            outcome: traj.outcome,
        });
    }
    report
}

/// Independent flux-nonnegativity recheck for direct-pipeline density
/// controllers: re-evaluates `div((f + g u) rho) >= -tol` at every recorded
/// step from states and controls alone.
pub fn verify_flux_nonnegativity(
    traj: &Trajectory,
    model: &ControlAffineModel,
    density: &DensityConfig,
    tol: f64,
) -> Vec<usize> {
    let mut bad = Vec::new();
    for (idx, (x, u)) in traj.states.iter().zip(&traj.controls).enumerate() {
        // Terminal rows carry a zero placeholder control; skip them.
        if u.norm() == 0.0 {
            continue;
        }
        match crate::dynamics::divergence_of_density_flux(model, density, x, u) {
            Ok(v) if v < -tol => bad.push(traj.steps[idx]),
            _ => {}
        }
    }
    bad
}

/// CSV export: header `step,t,x1..xn,u1..um,rho,min_clearance,zeta,
/// qp_residual`, 17 significant digits, LF line endings.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, w: &mut W) -> std::io::Result<()> {
    let n = traj.states.first().map_or(0, |x| x.len());
    let m = traj.controls.first().map_or(0, |u| u.len());
    let mut header = String::from("step,t");
    for i in 1..=n {
        header.push_str(&format!(",x{i}"));
    }
    for i in 1..=m {
        header.push_str(&format!(",u{i}"));
    }
    header.push_str(",rho,min_clearance,zeta,qp_residual");
    writeln!(w, "{header}")?;
    for idx in 0..traj.steps.len() {
        let mut row = format!("{},{:.16e}", traj.steps[idx], traj.times[idx]);
        for v in traj.states[idx].iter() {
            row.push_str(&format!(",{v:.16e}"));
        }
        for v in traj.controls[idx].iter() {
            row.push_str(&format!(",{v:.16e}"));
        }
        let d = &traj.diagnostics[idx];
        row.push_str(&format!(
            ",{:.16e},{:.16e},{:.16e},{:.16e}",
            d.rho, d.min_clearance, d.zeta, d.qp_residual
        ));
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Batch summary CSV.
pub fn write_batch_csv<W: Write>(rows: &[BatchRow], w: &mut W) -> std::io::Result<()> {
    writeln!(
        w,
        "run,seed,outcome,steps,sim_time,min_clearance,final_p_distance,max_abs_accel,max_u_norm"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.run,
            r.seed,
            r.outcome.as_str(),
            r.steps,
            r.sim_time,
            r.min_clearance,
            r.final_p_distance,
            r.max_abs_accel,
            r.max_u_norm
        )?;
    }
    Ok(())
}
