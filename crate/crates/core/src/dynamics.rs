//! Control-affine models `xdot = f(x) + g(x) u`, their analytic divergences,
//! and bounded perturbation fields `xdot = f + g u + f_delta(x, t)`.

use crate::density::{DensityConfig, DensityError, DensityParts};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

type FieldFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type ColumnFn = Arc<dyn Fn(usize, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type ColumnScalarFn = Arc<dyn Fn(usize, &DVector<f64>) -> f64 + Send + Sync>;

/// A control-affine model with analytic divergences of the drift and of each
/// input column. Immutable after construction; evaluation is pure.
#[derive(Clone)]
pub struct ControlAffineModel {
    name: String,
    n: usize,
    m: usize,
    drift: FieldFn,
    input_col: ColumnFn,
    div_drift: ScalarFn,
    div_input_col: ColumnScalarFn,
}

impl fmt::Debug for ControlAffineModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlAffineModel")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .finish()
    }
}

impl ControlAffineModel {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        m: usize,
        drift: FieldFn,
        input_col: ColumnFn,
        div_drift: ScalarFn,
        div_input_col: ColumnScalarFn,
    ) -> Self {
        Self {
            name: name.into(),
            n,
            m,
            drift,
            input_col,
            div_drift,
            div_input_col,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn state_dim(&self) -> usize {
        self.n
    }
    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x)
    }

    pub fn input_column(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        assert!(j < self.m, "input column {j} out of range");
        (self.input_col)(j, x)
    }

    pub fn div_drift(&self, x: &DVector<f64>) -> f64 {
        (self.div_drift)(x)
    }

    pub fn div_input_column(&self, j: usize, x: &DVector<f64>) -> f64 {
        assert!(j < self.m, "input column {j} out of range");
        (self.div_input_col)(j, x)
    }

    /// `f(x) + g(x) u`.
    pub fn vector_field(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut v = self.drift(x);
        for j in 0..self.m {
            v += self.input_column(j, x) * u[j];
        }
        v
    }
}

/// Planar system with velocity inputs on each axis.
pub fn make_single_integrator() -> ControlAffineModel {
    ControlAffineModel::new(
        "single_integrator",
        2,
        2,
        Arc::new(|x: &DVector<f64>| DVector::zeros(x.len())),
        Arc::new(|j, x: &DVector<f64>| {
            let mut g = DVector::zeros(x.len());
            g[j] = 1.0;
            g
        }),
        Arc::new(|_x: &DVector<f64>| 0.0),
        Arc::new(|_j, _x: &DVector<f64>| 0.0),
    )
}

/// Planar gyre pair flow with velocity inputs; the drift is divergence free
/// (the two partials cancel exactly), so `div_drift` returns 0 symbolically.
pub fn make_double_gyre() -> ControlAffineModel {
    use std::f64::consts::PI;
    ControlAffineModel::new(
        "double_gyre",
        2,
        2,
        Arc::new(|x: &DVector<f64>| {
            DVector::from_row_slice(&[
                -PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
                PI * (PI * x[1]).sin() * (PI * x[0]).cos(),
            ])
        }),
        Arc::new(|j, x: &DVector<f64>| {
            let mut g = DVector::zeros(x.len());
            g[j] = 1.0;
            g
        }),
        Arc::new(|_x: &DVector<f64>| 0.0),
        Arc::new(|_j, _x: &DVector<f64>| 0.0),
    )
}

/// Vehicle and tire parameters for the lane-keeping lateral model.
#[derive(Debug, Clone, Copy)]
pub struct LkParams {
    /// Vehicle mass (kg).
    pub mass: f64,
    /// Distance from the center of gravity to the front axle (m).
    pub a: f64,
    /// Distance from the center of gravity to the rear axle (m).
    pub b: f64,
    /// Look-ahead distance (m).
    pub look_ahead: f64,
    /// Front tire stiffness (N/rad).
    pub c_f: f64,
    /// Rear tire stiffness (N/rad).
    pub c_r: f64,
    /// Yaw moment of inertia (kg m^2).
    pub i_z: f64,
    /// Lane half-width / hard lateral bound (m).
    pub r1: f64,
    /// Sensing boundary on the lateral offset (m).
    pub r2: f64,
    /// Lateral acceleration limit (m/s^2).
    pub a_max: f64,
}

impl Default for LkParams {
    fn default() -> Self {
        Self {
            mass: 1589.0,
            a: 1.57,
            b: 1.05,
            look_ahead: 20.0,
            c_f: 90_000.0,
            c_r: 60_000.0,
            i_z: 1765.0,
            r1: 0.9,
            r2: 0.7,
            a_max: 0.3 * 9.8,
        }
    }
}

impl LkParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("mass", self.mass),
            ("a", self.a),
            ("b", self.b),
            ("look_ahead", self.look_ahead),
            ("c_f", self.c_f),
            ("c_r", self.c_r),
            ("i_z", self.i_z),
            ("r1", self.r1),
            ("r2", self.r2),
            ("a_max", self.a_max),
        ] {
            if !(v > 0.0) {
                return Err(ModelError::Parameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// State-space matrices of the lane-keeping model
/// `xdot = A x + B u + C r_d (+ D1 d_F + D2 d_M)`.
#[derive(Debug, Clone)]
pub struct LkMatrices {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d1: DVector<f64>,
    pub d2: DVector<f64>,
}

pub fn lk_matrices(p: &LkParams, v0: f64) -> Result<LkMatrices, ModelError> {
    p.validate()?;
    if !(v0 > 0.0) {
        return Err(ModelError::Parameter(format!(
            "v0 must be positive, got {v0}"
        )));
    }
    let LkParams {
        mass,
        a,
        b,
        look_ahead,
        c_f,
        c_r,
        i_z,
        ..
    } = *p;
    let a_mat = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0,
            1.0,
            0.0,
            -look_ahead,
            0.0,
            -2.0 * (c_f + c_r) / (mass * v0),
            2.0 * (c_f + c_r) / mass,
            2.0 * (b * c_r - a * c_f) / (mass * v0) - 2.0 * v0,
            0.0,
            0.0,
            0.0,
            -1.0,
            0.0,
            2.0 * (b * c_r - a * c_f) / (i_z * v0),
            -2.0 * (b * c_r - a * c_f) / i_z,
            -2.0 * (a * a * c_f + b * b * c_r) / (i_z * v0),
        ],
    );
    let b_vec = DVector::from_row_slice(&[0.0, 2.0 * c_f / mass, 0.0, 2.0 * a * c_f / i_z]);
    let c_vec = DVector::from_row_slice(&[look_ahead, v0, 1.0, 0.0]);
    let d1 = DVector::from_row_slice(&[0.0, 1.0 / mass, 0.0, 0.0]);
    let d2 = DVector::from_row_slice(&[0.0, 0.0, 0.0, 1.0 / i_z]);
    Ok(LkMatrices {
        a: a_mat,
        b: b_vec,
        c: c_vec,
        d1,
        d2,
    })
}

/// Linear lateral-dynamics model with the steering angle as the single
/// input and desired yaw rate `r_d` folded into the drift as a constant.
pub fn make_lane_keeping(
    params: &LkParams,
    v0: f64,
    r_d: f64,
) -> Result<ControlAffineModel, ModelError> {
    let m = lk_matrices(params, v0)?;
    let trace_a = m.a.trace();
    let a = m.a.clone();
    let c = m.c.clone();
    let b = m.b.clone();
    Ok(ControlAffineModel::new(
        "lane_keeping",
        4,
        1,
        Arc::new(move |x: &DVector<f64>| &a * x + &c * r_d),
        Arc::new(move |_j, _x: &DVector<f64>| b.clone()),
        Arc::new(move |_x: &DVector<f64>| trace_a),
        Arc::new(|_j, _x: &DVector<f64>| 0.0),
    ))
}

/// Steering geometry ratio for the kinematic bicycle: the velocity vector
/// leads the heading by `phi = atan(l_r tan(steer) / length)`.
pub fn bicycle_slip(l_r: f64, length: f64, steer: f64) -> f64 {
    (l_r * steer.tan() / length).atan()
}

/// Kinematic bicycle plant: state `(x1, x2, heading, steer, speed)`, inputs
/// `(steer rate, acceleration)`. Obstacles live in the position states; the
/// controller acts on an integrator reduction that the tracking layer
/// bridges back to these inputs.
pub fn make_bicycle(l_r: f64, length: f64) -> Result<ControlAffineModel, ModelError> {
    if !(l_r > 0.0 && length > l_r) {
        return Err(ModelError::Parameter(format!(
            "bicycle requires 0 < l_r < length, got l_r={l_r}, length={length}"
        )));
    }
    Ok(ControlAffineModel::new(
        "bicycle",
        5,
        2,
        Arc::new(move |x: &DVector<f64>| {
            let (theta, steer, v) = (x[2], x[3], x[4]);
            let phi = bicycle_slip(l_r, length, steer);
            DVector::from_row_slice(&[
                v * (theta + phi).cos(),
                v * (theta + phi).sin(),
                v / length * phi.cos() * steer.tan(),
                0.0,
                0.0,
            ])
        }),
        Arc::new(|j, x: &DVector<f64>| {
            let mut g = DVector::zeros(x.len());
            // column 0 drives the steering rate, column 1 the acceleration
            g[3 + j] = 1.0;
            g
        }),
        // No drift component depends on its own state coordinate.
        Arc::new(|_x: &DVector<f64>| 0.0),
        Arc::new(|_j, _x: &DVector<f64>| 0.0),
    ))
}

/// Affine-in-u divergence terms of the density flux at `x`:
/// returns `(cf, a)` with `div((f + g u) rho) = cf + a . u` when `u` is
/// held constant in the differentiation.
pub fn flux_divergence_terms(
    model: &ControlAffineModel,
    parts: &DensityParts,
    x: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let f = model.drift(x);
    let cf = parts.rho * model.div_drift(x) + parts.grad_rho.dot(&f);
    let mut a = DVector::zeros(model.input_dim());
    for j in 0..model.input_dim() {
        let gj = model.input_column(j, x);
        a[j] = parts.rho * model.div_input_column(j, x) + parts.grad_rho.dot(&gj);
    }
    (cf, a)
}

/// `div(f rho) + sum_j div(g_j rho) u_j` with the product rule
/// `div(w rho) = rho div(w) + grad(rho) . w`; the value of the divergence
/// condition without any spatial-gradient-of-u term.
pub fn divergence_of_density_flux(
    model: &ControlAffineModel,
    density: &DensityConfig,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64, DensityError> {
    let parts = density.eval_parts(x)?;
    let (cf, a) = flux_divergence_terms(model, &parts, x);
    Ok(cf + a.dot(u))
}

/// How a perturbation field varies over a run.
#[derive(Debug, Clone)]
pub enum PerturbationMode {
    Constant,
    Sinusoidal,
    SeededRandomConstant { seed: u64 },
}

/// Bounded perturbation `f_delta(x, t)` with declared norm and divergence
/// bounds. All shipped modes are constant in `x`, so the divergence bound
/// is zero; the field bound is checked by sampling in tests.
#[derive(Clone)]
pub struct PerturbationSpec {
    field: Arc<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync>,
    bound_value: f64,
    bound_div: f64,
    mode: PerturbationMode,
}

impl fmt::Debug for PerturbationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PerturbationSpec")
            .field("bound_value", &self.bound_value)
            .field("bound_div", &self.bound_div)
            .field("mode", &self.mode)
            .finish()
    }
}

impl PerturbationSpec {
    /// Fixed disturbance vector.
    pub fn constant(value: DVector<f64>) -> Self {
        let norm = value.norm();
        Self {
            field: Arc::new(move |_x, _t| value.clone()),
            bound_value: norm,
            bound_div: 0.0,
            mode: PerturbationMode::Constant,
        }
    }

    /// Time-sinusoidal disturbance `amplitude * sin(2 pi freq t)`.
    pub fn sinusoidal(amplitude: DVector<f64>, freq_hz: f64) -> Self {
        let norm = amplitude.norm();
        Self {
            field: Arc::new(move |_x, t| {
                &amplitude * (2.0 * std::f64::consts::PI * freq_hz * t).sin()
            }),
            bound_value: norm,
            bound_div: 0.0,
            mode: PerturbationMode::Sinusoidal,
        }
    }

    /// Constant disturbance drawn at construction: `sum_i columns_i * c_i`
    /// with each `c_i` uniform in `[-bounds_i, bounds_i]`. The declared norm
    /// bound is the worst case `sum_i |bounds_i| * |columns_i|`.
    pub fn seeded_random_constant(columns: &[DVector<f64>], bounds: &[f64], seed: u64) -> Self {
        assert_eq!(columns.len(), bounds.len());
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let dim = columns.first().map_or(0, |c| c.len());
        let mut value = DVector::zeros(dim);
        for (col, &b) in columns.iter().zip(bounds) {
            let c: f64 = rng.random_range(-b..=b);
            value += col * c;
        }
        let worst: f64 = columns
            .iter()
            .zip(bounds)
            .map(|(col, &b)| b.abs() * col.norm())
            .sum();
        Self {
            field: Arc::new(move |_x, _t| value.clone()),
            bound_value: worst,
            bound_div: 0.0,
            mode: PerturbationMode::SeededRandomConstant { seed },
        }
    }

    pub fn eval(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        (self.field)(x, t)
    }

    /// Declared field-norm bound.
    pub fn bound_value(&self) -> f64 {
        self.bound_value
    }

    /// Declared divergence bound.
    pub fn bound_div(&self) -> f64 {
        self.bound_div
    }

    pub fn mode(&self) -> &PerturbationMode {
        &self.mode
    }
}
