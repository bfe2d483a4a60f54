//! Small dense strictly convex quadratic programs
//! `min u' H u + J . u  s.t.  a_i . u >= b_i`.
//!
//! Two solution paths: a closed form for the single-constraint case (an
//! H-metric projection of the unconstrained minimizer onto the constraint
//! halfspace) and a dual active-set method for the general case: start at
//! the unconstrained minimizer, repeatedly pick a violated constraint and
//! take exact primal/dual steps until it joins the active set or exposes
//! infeasibility. Problems here stay tiny (a dozen variables, a couple
//! dozen constraints), so every factorization is recomputed from scratch.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Minimum eigenvalue admitted for the cost matrix.
const EIG_FLOOR: f64 = 1e-10;
/// Relative feasibility tolerance on reported solutions.
const FEAS_TOL: f64 = 1e-8;
/// Relative violation threshold that pulls a constraint into the working
/// set; tighter than the reporting tolerance so solutions come out clean.
const VIOL_TOL: f64 = 1e-11;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("infeasible: constraint {worst_index} violated by {violation:.3e} at the least-violating point")]
    Infeasible { worst_index: usize, violation: f64 },
    #[error("ill-conditioned problem: {0}")]
    IllConditioned(String),
    #[error("degenerate constraint: a' H^-1 a = {0:.3e}")]
    DegenerateConstraint(f64),
}

/// Strictly convex QP with lower-bound linear constraints `a . u >= b`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    h: DMatrix<f64>,
    j: DVector<f64>,
    constraints: Vec<(DVector<f64>, f64)>,
}

impl QpProblem {
    /// Checks symmetry, the eigenvalue floor, and constraint finiteness.
    /// Duplicate constraint rows are permitted.
    pub fn new(
        h: DMatrix<f64>,
        j: DVector<f64>,
        constraints: Vec<(DVector<f64>, f64)>,
    ) -> Result<Self, QpError> {
        let d = j.len();
        if h.nrows() != d || h.ncols() != d {
            return Err(QpError::IllConditioned(format!(
                "cost matrix is {}x{} but J has length {d}",
                h.nrows(),
                h.ncols()
            )));
        }
        let asym = (&h - h.transpose()).abs().max();
        if asym > 1e-10 * (1.0 + h.abs().max()) {
            return Err(QpError::IllConditioned("H must be symmetric".into()));
        }
        let min_eig = h
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < EIG_FLOOR {
            return Err(QpError::IllConditioned(format!(
                "H minimum eigenvalue {min_eig:.3e} below floor {EIG_FLOOR:.0e}"
            )));
        }
        for (i, (a, b)) in constraints.iter().enumerate() {
            if a.len() != d {
                return Err(QpError::IllConditioned(format!(
                    "constraint {i} has dimension {} (expected {d})",
                    a.len()
                )));
            }
            if !a.iter().all(|v| v.is_finite()) || !b.is_finite() {
                return Err(QpError::IllConditioned(format!(
                    "constraint {i} not finite"
                )));
            }
        }
        Ok(Self { h, j, constraints })
    }

    pub fn dim(&self) -> usize {
        self.j.len()
    }
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn j(&self) -> &DVector<f64> {
        &self.j
    }
    pub fn constraints(&self) -> &[(DVector<f64>, f64)] {
        &self.constraints
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        (&self.h * u).dot(u) + self.j.dot(u)
    }

    /// Worst constraint violation at `u` (0 when feasible).
    pub fn max_violation(&self, u: &DVector<f64>) -> f64 {
        self.constraints
            .iter()
            .map(|(a, b)| (b - a.dot(u)).max(0.0))
            .fold(0.0, f64::max)
    }

    fn tight_set(&self, u: &DVector<f64>) -> Vec<usize> {
        self.constraints
            .iter()
            .enumerate()
            .filter(|(_, (a, b))| (a.dot(u) - b).abs() <= FEAS_TOL * (1.0 + b.abs()))
            .map(|(i, _)| i)
            .collect()
    }

    /// Debug CSV dump: one row per constraint after the H and J rows.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        let fmt_row = |row: &[f64]| {
            row.iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        for r in 0..self.h.nrows() {
            let row: Vec<f64> = self.h.row(r).iter().cloned().collect();
            writeln!(w, "H,{}", fmt_row(&row))?;
        }
        let jrow: Vec<f64> = self.j.iter().cloned().collect();
        writeln!(w, "J,{}", fmt_row(&jrow))?;
        for (a, b) in &self.constraints {
            let arow: Vec<f64> = a.iter().cloned().collect();
            writeln!(w, "C,{},{:.16e}", fmt_row(&arow), b)?;
        }
        Ok(())
    }
}

/// Minimizer with the tight constraints and duals found at it.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u_star: DVector<f64>,
    /// Indices of constraints tight at the solution, ascending.
    pub active_set: Vec<usize>,
    /// Multipliers aligned with `active_set` (zero for tight-but-inactive).
    pub duals: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
}

/// Solve by the dual active-set method: start at the unconstrained
/// minimizer and repeatedly bring the most violated constraint (ties broken
/// by lowest index) into the active set through exact primal and dual
/// steps. Deterministic given the problem.
pub fn solve_active_set(p: &QpProblem) -> Result<QpSolution, QpError> {
    let d = p.dim();
    let chol = (2.0 * &p.h)
        .cholesky()
        .ok_or_else(|| QpError::IllConditioned("H not positive definite".into()))?;
    let ginv = |v: &DVector<f64>| chol.solve(v);

    let mut u = ginv(&(-&p.j));
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();

    // Zero constraint rows are either vacuous or outright infeasible.
    for (i, (a, b)) in p.constraints.iter().enumerate() {
        if a.abs().max() == 0.0 && *b > 0.0 {
            return Err(QpError::Infeasible {
                worst_index: i,
                violation: *b,
            });
        }
    }

    let max_outer = 100 * (p.constraints.len() + 1);
    for _ in 0..max_outer {
        // Most violated constraint, scaled; lowest index wins ties.
        let mut worst: Option<(usize, f64)> = None;
        for (i, (a, b)) in p.constraints.iter().enumerate() {
            let slack = (a.dot(&u) - b) / (1.0 + b.abs());
            if slack < -VIOL_TOL && worst.map_or(true, |(_, w)| slack < w) {
                worst = Some((i, slack));
            }
        }
        let (pick, _) = match worst {
            None => break,
            Some(w) => w,
        };
        let n_plus = &p.constraints[pick].0;
        let b_plus = p.constraints[pick].1;

        // Inner loop: take steps until `pick` joins the active set or the
        // problem proves infeasible. Each dual-blocking step removes an
        // active constraint, so this terminates.
        let mut lambda_plus = 0.0;
        loop {
            let k = active.len();
            // r = M^-1 N' G^-1 n+, z = G^-1 n+ - G^-1 N r  (M = N' G^-1 N).
            let ginv_np = ginv(n_plus);
            let ginv_np_norm = ginv_np.norm();
            let (z, r) = if k == 0 {
                (ginv_np, Vec::new())
            } else {
                let mut nmat = DMatrix::zeros(d, k);
                for (c, &i) in active.iter().enumerate() {
                    nmat.column_mut(c).copy_from(&p.constraints[i].0);
                }
                let ginv_n = {
                    let mut m = DMatrix::zeros(d, k);
                    for c in 0..k {
                        m.column_mut(c)
                            .copy_from(&ginv(&nmat.column(c).into_owned()));
                    }
                    m
                };
                let mmat = nmat.transpose() * &ginv_n;
                let rhs = nmat.transpose() * &ginv_np;
                // Nearly dependent active normals make the metric singular;
                // the pseudo-solve spreads the dual direction across them
                // and later dual-blocking steps clear the redundancy.
                let r = match mmat.clone().cholesky() {
                    Some(c) => c.solve(&rhs),
                    None => mmat
                        .clone()
                        .full_piv_lu()
                        .solve(&rhs)
                        .or_else(|| mmat.svd(true, true).solve(&rhs, 1e-13).ok())
                        .ok_or_else(|| {
                            QpError::IllConditioned("singular active-set metric".into())
                        })?,
                };
                let z = &ginv_np - &ginv_n * &r;
                (z, r.iter().cloned().collect())
            };

            let slack = n_plus.dot(&u) - b_plus;
            let curvature = z.dot(n_plus);
            // Scale-free test: curvature/(|G^-1 n||n|) measures how far the
            // candidate normal is from the span of the active set.
            let curv_floor = 1e-12 * (1.0 + ginv_np_norm * n_plus.norm());
            let t2 = if curvature > curv_floor {
                Some(-slack / curvature)
            } else {
                None
            };
            let mut t1: Option<(usize, f64)> = None;
            for (idx, &rj) in r.iter().enumerate() {
                if rj > 1e-12 {
                    let step = lambda[idx] / rj;
                    if t1.map_or(true, |(_, best)| step < best) {
                        t1 = Some((idx, step));
                    }
                }
            }

            match (t1, t2) {
                (None, None) => {
                    return Err(QpError::Infeasible {
                        worst_index: pick,
                        violation: -slack,
                    });
                }
                (Some((drop_idx, step1)), t2_opt) if t2_opt.map_or(true, |step2| step1 < step2) => {
                    // Dual-blocking step: constraint `drop_idx` leaves. The
                    // primal point only moves when a primal direction exists.
                    if t2_opt.is_some() {
                        u += &z * step1;
                    }
                    for (idx, rj) in r.iter().enumerate() {
                        lambda[idx] -= step1 * rj;
                    }
                    lambda_plus += step1;
                    active.remove(drop_idx);
                    lambda.remove(drop_idx);
                }
                (_, Some(step2)) => {
                    // Full step: `pick` becomes active.
                    u += &z * step2;
                    for (idx, rj) in r.iter().enumerate() {
                        lambda[idx] -= step2 * rj;
                    }
                    lambda_plus += step2;
                    active.push(pick);
                    lambda.push(lambda_plus);
                    break;
                }
                // A dual-blocking candidate with no primal direction always
                // satisfies the guard above.
                (Some(_), None) => unreachable!(),
            }
        }
    }

    let max_violation = p.max_violation(&u);
    if max_violation > FEAS_TOL * (1.0 + problem_scale(p)) {
        return Err(QpError::IllConditioned(format!(
            "dual iteration stalled with violation {max_violation:.3e}"
        )));
    }
    // Report every tight constraint, not just active-set members.
    let tight = p.tight_set(&u);
    let duals_full: Vec<f64> = tight
        .iter()
        .map(|i| {
            active
                .iter()
                .position(|w| w == i)
                .map_or(0.0, |k| lambda[k].max(0.0))
        })
        .collect();
    Ok(QpSolution {
        objective: p.objective(&u),
        u_star: u,
        active_set: tight,
        duals: duals_full,
        max_violation,
    })
}

/// Closed form for `min u' H u + J . u  s.t.  a . u >= b`: take the
/// unconstrained minimizer `u_hat = -H^-1 J / 2`; if it violates the
/// halfspace, shift along `H^-1 a` onto the hyperplane. The piecewise ramp
/// in the shift is stated for upper-bound constraints in the source
/// derivation; our rows are lower bounds, so the projection direction
/// flips sign (covered by the cross-solver equivalence tests).
pub fn solve_single_constraint_closed_form(
    h: &DMatrix<f64>,
    j: &DVector<f64>,
    a: &DVector<f64>,
    b: f64,
) -> Result<QpSolution, QpError> {
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| QpError::IllConditioned("H not positive definite".into()))?;
    let u_hat = chol.solve(&(-0.5 * j));
    let hinv_a = chol.solve(a);
    let quad = a.dot(&hinv_a);
    if quad <= 1e-14 {
        return Err(QpError::DegenerateConstraint(quad));
    }
    let r = a.dot(&u_hat) - b;
    let (u, dual) = if r > 0.0 {
        (u_hat, 0.0)
    } else {
        let t = -r / quad;
        (&u_hat + &hinv_a * t, 2.0 * t)
    };
    let margin = a.dot(&u) - b;
    let tight = margin.abs() <= FEAS_TOL * (1.0 + b.abs());
    let (active_set, duals) = if tight {
        (vec![0], vec![dual])
    } else {
        (vec![], vec![])
    };
    Ok(QpSolution {
        objective: (h * &u).dot(&u) + j.dot(&u),
        max_violation: (b - a.dot(&u)).max(0.0),
        u_star: u,
        active_set,
        duals,
    })
}

/// KKT residuals of a reported solution: stationarity
/// `|2 H u + J - A' mu|_inf`, feasibility `max(0, b - a.u)`, and
/// complementarity `max |mu_i (a_i.u - b_i)|`. Success requires each to be
/// at most `1e-8 * (1 + problem scale)`.
pub fn kkt_residuals(p: &QpProblem, s: &QpSolution) -> (f64, f64, f64) {
    let mut grad = 2.0 * &p.h * &s.u_star + &p.j;
    for (k, &i) in s.active_set.iter().enumerate() {
        grad -= &p.constraints[i].0 * s.duals[k];
    }
    let stationarity = grad.abs().max();
    let feasibility = p.max_violation(&s.u_star);
    let complementarity = s
        .active_set
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let (a, b) = &p.constraints[i];
            (s.duals[k] * (a.dot(&s.u_star) - b)).abs()
        })
        .fold(0.0, f64::max);
    (stationarity, feasibility, complementarity)
}

/// Characteristic scale used to normalize residual checks.
pub fn problem_scale(p: &QpProblem) -> f64 {
    let hmax = p.h.abs().max();
    let jmax = p.j.abs().max();
    let cmax = p
        .constraints
        .iter()
        .map(|(a, b)| a.abs().max().max(b.abs()))
        .fold(0.0, f64::max);
    hmax.max(jmax).max(cmax).max(1.0)
}
