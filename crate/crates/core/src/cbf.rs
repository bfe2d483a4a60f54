//! Barrier/Lyapunov QP baseline used for comparison on the planar
//! integrator: `min |u|^2` subject to a barrier decay condition
//! `hdot >= -e1 h` and a convergence condition `Vdot <= -e2 V`, the latter
//! softened by an optional weighted slack so the pair stays feasible.

use crate::controller::ControlError;
use crate::dynamics::ControlAffineModel;
use crate::qp::{solve_active_set, QpError, QpProblem};
use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::sync::Arc;

type ScalarField = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type GradField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A differentiable scalar field with its gradient.
#[derive(Clone)]
pub struct ScalarFn {
    value: ScalarField,
    grad: GradField,
}

impl ScalarFn {
    pub fn new(value: ScalarField, grad: GradField) -> Self {
        Self { value, grad }
    }

    /// `|x - center|^2 - r^2`: positive outside the disk.
    pub fn disk_exterior(center: &[f64], r: f64) -> Self {
        let c = DVector::from_row_slice(center);
        let c2 = c.clone();
        Self {
            value: Arc::new(move |x| {
                let d = x - &c;
                d.dot(&d) - r * r
            }),
            grad: Arc::new(move |x| 2.0 * (x - &c2)),
        }
    }

    /// `|x - target|^2`.
    pub fn squared_distance(target: &[f64]) -> Self {
        let t = DVector::from_row_slice(target);
        let t2 = t.clone();
        Self {
            value: Arc::new(move |x| {
                let d = x - &t;
                d.dot(&d)
            }),
            grad: Arc::new(move |x| 2.0 * (x - &t2)),
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }
    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.grad)(x)
    }
}

/// Barrier/Lyapunov filter parameters.
///
/// The shipped barrier keeps the obstacle *exterior* invariant (positive
/// outside the disk); gains keep their printed roles: `e1` scales the
/// barrier decay, `e2` the convergence rate.
#[derive(Clone)]
pub struct CbfConfig {
    pub e1: f64,
    pub e2: f64,
    pub barrier: ScalarFn,
    pub lyapunov: ScalarFn,
    /// Slack weight on the convergence condition; `None` leaves it hard.
    pub relaxation: Option<f64>,
}

impl fmt::Debug for CbfConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CbfConfig")
            .field("e1", &self.e1)
            .field("e2", &self.e2)
            .field("relaxation", &self.relaxation)
            .finish()
    }
}

impl CbfConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.e1 > 0.0 && self.e2 > 0.0) {
            return Err(ControlError::Domain(format!(
                "cbf gains must be positive, got e1={}, e2={}",
                self.e1, self.e2
            )));
        }
        Ok(())
    }
}

/// One filter step.
pub fn step_cbf(
    model: &ControlAffineModel,
    cfg: &CbfConfig,
    x: &DVector<f64>,
) -> Result<DVector<f64>, ControlError> {
    cfg.validate()?;
    let m = model.input_dim();
    let f = model.drift(x);
    let h = cfg.barrier.value(x);
    let gh = cfg.barrier.grad(x);
    let v = cfg.lyapunov.value(x);
    let gv = cfg.lyapunov.grad(x);

    let mut gh_g = DVector::zeros(m);
    let mut gv_g = DVector::zeros(m);
    for j in 0..m {
        let gj = model.input_column(j, x);
        gh_g[j] = gh.dot(&gj);
        gv_g[j] = gv.dot(&gj);
    }

    let dim = if cfg.relaxation.is_some() { m + 1 } else { m };
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(3);

    // Barrier: gh.(f + g u) >= -e1 h.
    let mut barrier_row = DVector::zeros(dim);
    barrier_row.rows_mut(0, m).copy_from(&gh_g);
    rows.push((barrier_row, -cfg.e1 * h - gh.dot(&f)));

    // Convergence: gv.(f + g u) <= -e2 V (+ slack), flipped to a lower bound.
    let mut clf_row = DVector::zeros(dim);
    clf_row.rows_mut(0, m).copy_from(&(-&gv_g));
    if cfg.relaxation.is_some() {
        clf_row[m] = 1.0;
    }
    rows.push((clf_row, cfg.e2 * v + gv.dot(&f)));

    let mut h_cost = DMatrix::identity(dim, dim);
    if let Some(w) = cfg.relaxation {
        h_cost[(m, m)] = w;
        let mut slack_row = DVector::zeros(dim);
        slack_row[m] = 1.0;
        rows.push((slack_row, 0.0));
    }

    let p = QpProblem::new(h_cost, DVector::zeros(dim), rows).map_err(map_qp)?;
    let sol = solve_active_set(&p).map_err(map_qp)?;
    Ok(sol.u_star.rows(0, m).into_owned())
}

fn map_qp(e: QpError) -> ControlError {
    match e {
        QpError::Infeasible {
            worst_index,
            violation,
        } => ControlError::Infeasible(format!(
            "barrier and convergence conditions conflict (row {worst_index}, violation {violation:.3e})"
        )),
        other => ControlError::Qp(other),
    }
}
