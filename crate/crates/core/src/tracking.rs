//! Bridges from integrator-level velocity commands to vehicle inputs:
//! reference extraction and Lyapunov tracking laws for the kinematic
//! bicycle (with optional sign-term robustification), plus the
//! lane-keeping steering clamp that enforces the lateral acceleration
//! limit exactly.

use crate::dynamics::{bicycle_slip, LkParams};
use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("velocity command is zero; heading reference undefined")]
    ZeroCommand,
    #[error("steering angle at the kinematic singularity")]
    SteeringSingular,
}

/// Gains and geometry for the bicycle tracking laws. In robust mode the
/// sign terms require `xi1 >= sup |speed disturbance|` and
/// `xi2 >= max(sup |heading disturbance|, sup |steer disturbance|)`.
#[derive(Debug, Clone, Copy)]
pub struct BicycleTrackingConfig {
    pub sigma1: f64,
    pub sigma2: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub l_r: f64,
    pub length: f64,
    pub robust: bool,
    /// Command filter: cap on the heading-reference rate fed to the
    /// steering law (rad/s). The per-step QP direction can turn sharply
    /// when constraints activate; an unfiltered backward difference would
    /// whip the steering loop through its kinematic singularity.
    pub ref_rate_limit: f64,
}

impl BicycleTrackingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) {
            return Err(format!(
                "tracking gains must be positive, got sigma1={}, sigma2={}",
                self.sigma1, self.sigma2
            ));
        }
        if !(self.xi1 >= 0.0 && self.xi2 >= 0.0) {
            return Err("robust gains must be nonnegative".into());
        }
        if self.robust && !(self.xi1 > 0.0 && self.xi2 > 0.0) {
            return Err("robust mode requires positive xi1 and xi2".into());
        }
        if !(self.l_r > 0.0 && self.length > self.l_r) {
            return Err(format!(
                "geometry requires 0 < l_r < length, got {} and {}",
                self.l_r, self.length
            ));
        }
        if !(self.ref_rate_limit > 0.0) {
            return Err("ref_rate_limit must be positive (use infinity to disable)".into());
        }
        Ok(())
    }
}

/// Split a planar velocity command into a speed reference and a combined
/// heading reference, quadrant-correct.
pub fn extract_reference(u: &DVector<f64>) -> Result<(f64, f64), TrackingError> {
    let speed = u.norm();
    if speed <= 1e-9 {
        return Err(TrackingError::ZeroCommand);
    }
    Ok((speed, u[1].atan2(u[0])))
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Acceleration law `a = v_ref_dot - sigma1 (v - v_ref)`, minus
/// `xi1 sgn(v - v_ref)` in robust mode.
pub fn accel_law(cfg: &BicycleTrackingConfig, v: f64, v_ref: f64, v_ref_dot: f64) -> f64 {
    let mut a = v_ref_dot - cfg.sigma1 * (v - v_ref);
    if cfg.robust {
        a -= cfg.xi1 * sgn(v - v_ref);
    }
    a
}

/// Steering-rate law: inverts the slip kinematics and drives the combined
/// heading `theta + phi` toward the reference through a sine of the error,
/// minus `xi2 sgn(sin(error))` in robust mode.
pub fn steer_rate_law(
    cfg: &BicycleTrackingConfig,
    theta: f64,
    steer: f64,
    v: f64,
    heading_ref: f64,
    heading_ref_dot: f64,
) -> Result<f64, TrackingError> {
    if steer.abs() >= std::f64::consts::FRAC_PI_2 - 1e-6 {
        return Err(TrackingError::SteeringSingular);
    }
    let phi = bicycle_slip(cfg.l_r, cfg.length, steer);
    let ratio = cfg.l_r * steer.tan() / cfg.length;
    let sec2 = 1.0 / steer.cos().powi(2);
    let prefactor = (1.0 + ratio * ratio) / (cfg.l_r * sec2 / cfg.length);
    let err_sin = (theta + phi - heading_ref).sin();
    let mut bracket =
        -v / cfg.length * phi.cos() * steer.tan() + heading_ref_dot - cfg.sigma2 * err_sin;
    if cfg.robust {
        bracket -= cfg.xi2 * sgn(err_sin);
    }
    Ok(prefactor * bracket)
}

/// Backward-difference rates of the reference signals, with angle
/// unwrapping on the heading channel. One tracker per trajectory.
#[derive(Debug, Clone, Default)]
pub struct RateTracker {
    last: Option<(f64, f64)>,
}

impl RateTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Push the current references; returns `(v_ref_dot, heading_ref_dot)`,
    /// zero at the first step.
    pub fn rates(&mut self, v_ref: f64, heading_ref: f64, dt: f64) -> (f64, f64) {
        let out = match self.last {
            None => (0.0, 0.0),
            Some((pv, ph)) => ((v_ref - pv) / dt, wrap_angle(heading_ref - ph) / dt),
        };
        self.last = Some((v_ref, heading_ref));
        out
    }
}

/// Wrap an angle difference into (-pi, pi].
pub fn wrap_angle(d: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = (d + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        w = PI;
    }
    w
}

/// Steering interval that keeps the lateral acceleration within `a_max`:
/// `u` is clamped into `[(-M a_max + F0) / (2 C_f), (M a_max + F0) / (2 C_f)]`
/// where `F0` collects the state- and road-dependent force terms.
pub fn lk_input_clamp(p: &LkParams, v0: f64, x: &DVector<f64>, r_d: f64, u_raw: f64) -> f64 {
    let f0 = lk_f0(p, v0, x, r_d);
    let lo = (-p.mass * p.a_max + f0) / (2.0 * p.c_f);
    let hi = (p.mass * p.a_max + f0) / (2.0 * p.c_f);
    u_raw.clamp(lo, hi)
}

/// `F0 = 2 C_f ((x2 + a x4)/v0 - x3) + 2 C_r ((x2 - b x4)/v0 - x3)
///  + 2 M v0 x4 - M v0 r_d`.
pub fn lk_f0(p: &LkParams, v0: f64, x: &DVector<f64>, r_d: f64) -> f64 {
    2.0 * p.c_f * ((x[1] + p.a * x[3]) / v0 - x[2])
        + 2.0 * p.c_r * ((x[1] - p.b * x[3]) / v0 - x[2])
        + 2.0 * p.mass * v0 * x[3]
        - p.mass * v0 * r_d
}

/// Lateral acceleration realized by steering `u` at state `x` (the per-mass
/// force balance the clamp is derived from).
pub fn lk_lateral_accel(p: &LkParams, v0: f64, x: &DVector<f64>, r_d: f64, u: f64) -> f64 {
    (2.0 * p.c_f * u - lk_f0(p, v0, x, r_d)) / p.mass
}
