//! Per-timestep density-based QP controllers.
//!
//! Every mode assembles linear lower-bound constraints on the control from
//! the divergence of the density flux and solves a strictly convex QP:
//!
//! * `step_basic` / nominal tracking: one constraint at the current state;
//! * `step_robust_gamma`: the same constraint with its right side tightened
//!   by `gamma * rho` to absorb bounded dynamics perturbations;
//! * `step_scenario`: one constraint per state sampled from an uncertainty
//!   ball around the nominal state;
//! * `step_alg1`: the discrete stepper that also constrains the controls at
//!   flowed points `z_j`, coupling them through a shared slack.

use crate::density::{DensityConfig, DensityError};
use crate::dynamics::{flux_divergence_terms, ControlAffineModel};
use crate::qp::{
    solve_active_set, solve_single_constraint_closed_form, QpError, QpProblem, QpSolution,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("state is inside an obstacle (rho = 0)")]
    StuckInObstacle,
    #[error("no instantaneous safe direction: {0}")]
    Infeasible(String),
    #[error("scenario sample {index} lies inside an obstacle")]
    SampleInObstacle { index: usize },
    #[error("no sample with positive bump value")]
    EmptySample,
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error("qp failure: {0}")]
    Qp(QpError),
}

fn map_qp(e: QpError) -> ControlError {
    match e {
        QpError::Infeasible {
            worst_index,
            violation,
        } => ControlError::Infeasible(format!(
            "constraint {worst_index} unsatisfiable (violation {violation:.3e})"
        )),
        other => ControlError::Qp(other),
    }
}

/// Controller flavor selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerMode {
    Basic,
    Alg1,
    RobustGamma,
    Scenario,
}

pub type NominalControl = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Explicit quadratic cost `u' H u + J . u`.
#[derive(Debug, Clone)]
pub struct QuadCost {
    pub h: DMatrix<f64>,
    pub j: DVector<f64>,
}

/// Parameters shared by all controller modes. `x0` is the run's initial
/// state; the strict margin `lambda` applies while the state stays within
/// `initial_set_radius` of it (infinite radius keeps it active everywhere).
#[derive(Clone)]
pub struct ControllerConfig {
    pub mode: ControllerMode,
    pub lambda: f64,
    pub dt: f64,
    /// Lower bound on the shared slack in the discrete stepper; defaults
    /// to `lambda` so strict positivity is preserved.
    pub zeta_floor: Option<f64>,
    pub nominal: Option<NominalControl>,
    pub cost: Option<QuadCost>,
    pub gamma: f64,
    /// Admissible density-decay rate: relaxes the divergence right side by
    /// `margin_relax * rho`. Zero keeps the exact condition. Plants whose
    /// drift contracts volume faster than the bounded input can counter
    /// (the lane-keeping lateral dynamics) need this to avoid demanding
    /// unattainable margins in the interior while the sensing band keeps
    /// its full braking force.
    pub margin_relax: f64,
    pub beta: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub initial_set_radius: f64,
    pub x0: Option<DVector<f64>>,
}

impl fmt::Debug for ControllerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControllerConfig")
            .field("mode", &self.mode)
            .field("lambda", &self.lambda)
            .field("dt", &self.dt)
            .field("gamma", &self.gamma)
            .field("beta", &self.beta)
            .field("n_samples", &self.n_samples)
            .field("seed", &self.seed)
            .field("initial_set_radius", &self.initial_set_radius)
            .field("has_nominal", &self.nominal.is_some())
            .finish()
    }
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            mode: ControllerMode::Basic,
            lambda: 1e-3,
            dt: 0.01,
            zeta_floor: None,
            nominal: None,
            cost: None,
            gamma: 0.0,
            margin_relax: 0.0,
            beta: 0.0,
            n_samples: 0,
            seed: 0,
            initial_set_radius: f64::INFINITY,
            x0: None,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.lambda > 0.0) {
            return Err(ControlError::Domain(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if !(self.dt > 0.0) {
            return Err(ControlError::Domain(format!(
                "dt must be > 0, got {}",
                self.dt
            )));
        }
        if !(self.margin_relax >= 0.0) {
            return Err(ControlError::Domain(format!(
                "margin_relax must be >= 0, got {}",
                self.margin_relax
            )));
        }
        if self.mode == ControllerMode::RobustGamma && !(self.gamma >= 0.0) {
            return Err(ControlError::Domain(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if self.mode == ControllerMode::Scenario {
            if !(self.beta >= 0.0) {
                return Err(ControlError::Domain(format!(
                    "beta must be >= 0, got {}",
                    self.beta
                )));
            }
            if self.n_samples < 1 {
                return Err(ControlError::Domain(
                    "scenario mode needs n_samples >= 1".into(),
                ));
            }
        }
        Ok(())
    }

    fn zeta_floor(&self) -> f64 {
        self.zeta_floor.unwrap_or(self.lambda)
    }

    /// Whether the strict-margin constraint applies at `x`.
    pub fn in_initial_region(&self, x: &DVector<f64>) -> bool {
        match &self.x0 {
            Some(x0) => (x - x0).norm() <= self.initial_set_radius,
            None => false,
        }
    }

    /// Cost for an m-input decision: explicit (H, J) if set, otherwise
    /// `|u - u0(x)|^2` against the nominal control, otherwise `|u|^2`.
    fn cost_at(&self, x: &DVector<f64>, m: usize) -> (DMatrix<f64>, DVector<f64>) {
        if let Some(c) = &self.cost {
            return (c.h.clone(), c.j.clone());
        }
        let h = DMatrix::identity(m, m);
        let j = match &self.nominal {
            Some(f) => -2.0 * f(x),
            None => DVector::zeros(m),
        };
        (h, j)
    }
}

/// One controller step: the applied control plus diagnostics.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub u: DVector<f64>,
    /// Auxiliary controls at the flowed points (discrete stepper only).
    pub u_bar: Option<DVector<f64>>,
    /// Slack value (discrete stepper only).
    pub zeta: Option<f64>,
    /// Left-hand sides of the assembled constraints at the solution.
    pub constraint_values: Vec<f64>,
    /// Margins `lhs - rhs`; nonnegative up to solver tolerance.
    pub constraint_margins: Vec<f64>,
    pub feasible: bool,
    pub max_violation: f64,
}

fn step_result_from(sol: QpSolution, rows: &[(DVector<f64>, f64)], m: usize) -> StepResult {
    let values: Vec<f64> = rows.iter().map(|(a, _)| a.dot(&sol.u_star)).collect();
    let margins: Vec<f64> = rows.iter().zip(&values).map(|((_, b), v)| v - b).collect();
    let dim = sol.u_star.len();
    let (u, u_bar, zeta) = if dim == m {
        (sol.u_star, None, None)
    } else {
        // Layout: [u, u_bar, zeta].
        let u = sol.u_star.rows(0, m).into_owned();
        let ub = sol.u_star.rows(m, m).into_owned();
        let z = sol.u_star[2 * m];
        (u, Some(ub), Some(z))
    };
    StepResult {
        u,
        u_bar,
        zeta,
        constraint_values: values,
        constraint_margins: margins,
        feasible: true,
        max_violation: sol.max_violation,
    }
}

/// Basic (and nominal-tracking) mode: a single divergence constraint with
/// right side `lambda` inside the initial region and `0` elsewhere.
pub fn step_basic(
    model: &ControlAffineModel,
    density: &DensityConfig,
    cfg: &ControllerConfig,
    x: &DVector<f64>,
) -> Result<StepResult, ControlError> {
    step_with_margin(model, density, cfg, x, 0.0)
}

/// Robust mode: right sides tightened to `gamma * rho` (plus `lambda` in
/// the initial region). With `gamma = 0` this is exactly the basic step.
pub fn step_robust_gamma(
    model: &ControlAffineModel,
    density: &DensityConfig,
    cfg: &ControllerConfig,
    x: &DVector<f64>,
) -> Result<StepResult, ControlError> {
    step_with_margin(model, density, cfg, x, cfg.gamma)
}

fn step_with_margin(
    model: &ControlAffineModel,
    density: &DensityConfig,
    cfg: &ControllerConfig,
    x: &DVector<f64>,
    gamma: f64,
) -> Result<StepResult, ControlError> {
    cfg.validate()?;
    let parts = density.eval_parts(x)?;
    if parts.rho == 0.0 {
        return Err(ControlError::StuckInObstacle);
    }
    let (cf, arow) = flux_divergence_terms(model, &parts, x);
    let mut rhs = (gamma - cfg.margin_relax) * parts.rho;
    if cfg.in_initial_region(x) {
        rhs += cfg.lambda;
    }
    let b = rhs - cf;
    let m = model.input_dim();
    let (h, j) = cfg.cost_at(x, m);
    let sol = match solve_single_constraint_closed_form(&h, &j, &arow, b) {
        Ok(s) => s,
        Err(QpError::DegenerateConstraint(_)) => {
            // The divergence row vanished. The constraint reads `0 >= b`.
            if b <= 0.0 {
                let p = QpProblem::new(h, j, vec![]).map_err(map_qp)?;
                solve_active_set(&p).map_err(map_qp)?
            } else {
                return Err(ControlError::Infeasible(format!(
                    "flux-divergence row vanished while a margin of {b:.3e} is required"
                )));
            }
        }
        Err(e) => return Err(map_qp(e)),
    };
    Ok(step_result_from(sol, &[(arow, b)], m))
}

/// Discrete stepper with the spatial-gradient surrogate: decision variables
/// `(u(x), u_bar, zeta)` where `u_bar_j` is the j-th control at the flowed
/// point `z_j = x + dt rho(x) g_j(x)`. Nominal controls at `x` and at each
/// `z_j` are supplied by the caller.
pub fn step_alg1(
    model: &ControlAffineModel,
    density: &DensityConfig,
    cfg: &ControllerConfig,
    x: &DVector<f64>,
    u0_at_x: &DVector<f64>,
    u0_at_z: &[DVector<f64>],
) -> Result<StepResult, ControlError> {
    cfg.validate()?;
    let m = model.input_dim();
    if u0_at_x.len() != m || u0_at_z.len() != m {
        return Err(ControlError::Domain(format!(
            "nominal controls must have {m} entries"
        )));
    }
    let p = alg1_problem(model, density, cfg, x, u0_at_x, u0_at_z)?;
    let rows = p.constraints().to_vec();
    let sol = solve_active_set(&p).map_err(map_qp)?;
    Ok(step_result_from(sol, &rows, m))
}

/// The full decision problem the discrete stepper solves at `x`.
fn alg1_problem(
    model: &ControlAffineModel,
    density: &DensityConfig,
    cfg: &ControllerConfig,
    x: &DVector<f64>,
    u0_at_x: &DVector<f64>,
    u0_at_z: &[DVector<f64>],
) -> Result<QpProblem, ControlError> {
    let m = model.input_dim();
    let parts = density.eval_parts(x)?;
    if parts.rho == 0.0 {
        return Err(ControlError::StuckInObstacle);
    }
    let dim = 2 * m + 1;
    let (cf_x, arow_x) = flux_divergence_terms(model, &parts, x);

    let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(m + 3);
    // (i) divergence at x, with the slack on the right side.
    let mut r0 = DVector::zeros(dim);
    r0.rows_mut(0, m).copy_from(&arow_x);
    r0[2 * m] = -1.0;
    rows.push((r0, -cf_x));
    // (ii) divergence at each flowed point, with the j-th control free and
    // the others pinned to their nominal values.
    for j in 0..m {
        let zj = x + model.input_column(j, x) * (cfg.dt * parts.rho);
        let parts_z = density.eval_parts(&zj)?;
        let (cf_z, arow_z) = flux_divergence_terms(model, &parts_z, &zj);
        let mut pinned = 0.0;
        for i in 0..m {
            if i != j {
                pinned += arow_z[i] * u0_at_z[j][i];
            }
        }
        let mut row = DVector::zeros(dim);
        row[m + j] = arow_z[j];
        row[2 * m] = -1.0;
        rows.push((row, -cf_z - pinned));
    }
    // (iii) coupling: sum_j (u_bar_j - u_j) + zeta dt >= 0.
    let mut cpl = DVector::zeros(dim);
    for j in 0..m {
        cpl[j] = -1.0;
        cpl[m + j] = 1.0;
    }
    cpl[2 * m] = cfg.dt;
    rows.push((cpl, 0.0));
    // (iv) slack floor.
    let mut zrow = DVector::zeros(dim);
    zrow[2 * m] = 1.0;
    rows.push((zrow, cfg.zeta_floor()));

    // Cost |u - u0|^2 + |u_bar - u_bar0|^2 + zeta^2.
    let h = DMatrix::identity(dim, dim);
    let mut j_cost = DVector::zeros(dim);
    for i in 0..m {
        j_cost[i] = -2.0 * u0_at_x[i];
        j_cost[m + i] = -2.0 * u0_at_z[i][i];
    }
    QpProblem::new(h, j_cost, rows).map_err(map_qp)
}

/// Assemble (without solving) the decision problem the configured mode
/// would pose at `x`; the debug-dump path. The discrete stepper's nominal
/// inputs come from the configured nominal control (zero when absent).
pub fn assemble_problem(
    model: &ControlAffineModel,
    density: &DensityConfig,
    cfg: &ControllerConfig,
    x: &DVector<f64>,
) -> Result<QpProblem, ControlError> {
    cfg.validate()?;
    let m = model.input_dim();
    match cfg.mode {
        ControllerMode::Basic | ControllerMode::RobustGamma => {
            let gamma = if cfg.mode == ControllerMode::RobustGamma {
                cfg.gamma
            } else {
                0.0
            };
            let parts = density.eval_parts(x)?;
            if parts.rho == 0.0 {
                return Err(ControlError::StuckInObstacle);
            }
            let (cf, arow) = flux_divergence_terms(model, &parts, x);
            let mut rhs = (gamma - cfg.margin_relax) * parts.rho;
            if cfg.in_initial_region(x) {
                rhs += cfg.lambda;
            }
            let (h, j) = cfg.cost_at(x, m);
            QpProblem::new(h, j, vec![(arow, rhs - cf)]).map_err(map_qp)
        }
        ControllerMode::Scenario => {
            let rows = scenario_rows(model, density, cfg, x)?;
            let (h, j) = cfg.cost_at(x, m);
            QpProblem::new(h, j, rows).map_err(map_qp)
        }
        ControllerMode::Alg1 => {
            let nominal_at = |p: &DVector<f64>| match &cfg.nominal {
                Some(f) => f(p),
                None => DVector::zeros(m),
            };
            let u0_x = nominal_at(x);
            let parts = density.eval_parts(x)?;
            let u0_z: Vec<DVector<f64>> = (0..m)
                .map(|j| nominal_at(&(x + model.input_column(j, x) * (cfg.dt * parts.rho))))
                .collect();
            alg1_problem(model, density, cfg, x, &u0_x, &u0_z)
        }
    }
}

/// Scenario mode: one divergence constraint per point drawn uniformly from
/// the `beta`-ball around the nominal state (plus the nominal point itself),
/// without the strict margin. Samples are drawn by rejection from the
/// bounding cube with a ChaCha12 generator keyed on the seed alone, so the
/// offsets are fixed for a given configuration and sweep smoothly with the
/// nominal state along a trajectory; a step is a pure function of
/// (config, state).
pub fn step_scenario(
    model: &ControlAffineModel,
    density: &DensityConfig,
    cfg: &ControllerConfig,
    x_nominal: &DVector<f64>,
) -> Result<StepResult, ControlError> {
    cfg.validate()?;
    let m = model.input_dim();
    let rows = scenario_rows(model, density, cfg, x_nominal)?;
    let (h, j) = cfg.cost_at(x_nominal, m);
    let p = QpProblem::new(h, j, rows.clone()).map_err(map_qp)?;
    let sol = solve_active_set(&p).map_err(map_qp)?;
    Ok(step_result_from(sol, &rows, m))
}

fn scenario_rows(
    model: &ControlAffineModel,
    density: &DensityConfig,
    cfg: &ControllerConfig,
    x_nominal: &DVector<f64>,
) -> Result<Vec<(DVector<f64>, f64)>, ControlError> {
    let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x7363_656e_6172_696f));
    let mut points = Vec::with_capacity(cfg.n_samples + 1);
    points.push(x_nominal.clone());
    for _ in 0..cfg.n_samples {
        points.push(x_nominal + ball_sample(&mut rng, x_nominal.len(), cfg.beta));
    }
    let mut rows = Vec::with_capacity(points.len());
    for (idx, xp) in points.iter().enumerate() {
        let parts = density.eval_parts(xp)?;
        if parts.rho == 0.0 {
            if idx == 0 {
                return Err(ControlError::StuckInObstacle);
            }
            return Err(ControlError::SampleInObstacle { index: idx });
        }
        let (cf, arow) = flux_divergence_terms(model, &parts, xp);
        rows.push((arow, -cf));
    }
    Ok(rows)
}

/// Robustness margin `gamma = c_d2 + alpha c_d1 c_dD + c_d1 c_Psi`.
pub fn compute_gamma(c_delta1: f64, c_delta2: f64, c_dd: f64, c_psi: f64, alpha: f64) -> f64 {
    c_delta2 + alpha * c_delta1 * c_dd + c_delta1 * c_psi
}

/// Empirical bound constants over a sample box: the maxima of
/// `|grad D| / D` and of `|grad Psi| / Psi` (over samples with positive
/// bump value), each inflated by a 1.25 safety factor. Samples inside the
/// convergence neighborhood are skipped since `grad D / D` is unbounded
/// there.
pub fn estimate_bound_constants(
    density: &DensityConfig,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64), ControlError> {
    if lo.len() != density.dim() || hi.len() != density.dim() {
        return Err(ControlError::Domain("sample box dimension mismatch".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut c_dd: f64 = 0.0;
    let mut c_psi: f64 = 0.0;
    let mut psi_count = 0usize;
    for _ in 0..n_samples {
        let x = DVector::from_fn(lo.len(), |i, _| rng.random_range(lo[i]..=hi[i]));
        let parts = match density.eval_parts(&x) {
            Ok(p) => p,
            Err(DensityError::Singular) => continue,
            Err(e) => return Err(e.into()),
        };
        if density.p_distance(&x) <= density.eta() {
            continue;
        }
        c_dd = c_dd.max(parts.grad_dist.norm() / parts.dist);
        if parts.psi > 1e-9 {
            psi_count += 1;
            c_psi = c_psi.max(parts.grad_psi.norm() / parts.psi);
        }
    }
    if psi_count == 0 {
        return Err(ControlError::EmptySample);
    }
    Ok((1.25 * c_dd, 1.25 * c_psi))
}

/// Inputs to the scenario sample-count bound.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioBoundQuery {
    /// Violation level in (0, 1).
    pub epsilon: f64,
    /// Confidence (risk) parameter in (0, 1).
    pub sigma: f64,
    /// Number of control inputs.
    pub m_inputs: usize,
}

/// Smallest sample count `N >= ceil((2/eps) ln(1/sigma) + 2m
/// + (2m/eps) ln(2/eps))` guaranteeing an epsilon-level solution with
/// confidence `1 - sigma`.
pub fn scenario_sample_count(q: &ScenarioBoundQuery) -> Result<usize, ControlError> {
    if !(q.epsilon > 0.0 && q.epsilon < 1.0) {
        return Err(ControlError::Domain(format!(
            "epsilon must be in (0, 1), got {}",
            q.epsilon
        )));
    }
    if !(q.sigma > 0.0 && q.sigma < 1.0) {
        return Err(ControlError::Domain(format!(
            "sigma must be in (0, 1), got {}",
            q.sigma
        )));
    }
    if q.m_inputs < 1 {
        return Err(ControlError::Domain("m_inputs must be >= 1".into()));
    }
    let m = q.m_inputs as f64;
    let bound = 2.0 / q.epsilon * (1.0 / q.sigma).ln()
        + 2.0 * m
        + 2.0 * m / q.epsilon * (2.0 / q.epsilon).ln();
    Ok(bound.ceil() as usize)
}

/// Monte Carlo estimate of the violation probability of a fixed control:
/// the fraction of states in the `beta`-ball where the flux divergence is
/// negative.
pub fn estimate_violation_probability(
    model: &ControlAffineModel,
    density: &DensityConfig,
    u: &DVector<f64>,
    x_nominal: &DVector<f64>,
    beta: f64,
    n_mc: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    for _ in 0..n_mc {
        let xp = x_nominal + ball_sample(&mut rng, x_nominal.len(), beta);
        let ok = match density.eval_parts(&xp) {
            Ok(parts) => {
                let (cf, arow) = flux_divergence_terms(model, &parts, &xp);
                cf + arow.dot(u) >= 0.0
            }
            Err(_) => true,
        };
        if !ok {
            violations += 1;
        }
    }
    violations as f64 / n_mc as f64
}

/// Uniform draw from the closed ball of radius `beta` by rejection from the
/// bounding cube.
fn ball_sample(rng: &mut ChaCha12Rng, dim: usize, beta: f64) -> DVector<f64> {
    if beta == 0.0 {
        return DVector::zeros(dim);
    }
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.random_range(-beta..=beta));
        if v.norm() <= beta {
            return v;
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
