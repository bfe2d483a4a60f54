//! Analytic density fields over obstacle environments.
//!
//! A density field is the product of smooth inverse bump functions, one per
//! obstacle, divided by a power of the weighted squared distance to the
//! target: `rho(x) = Psi(x) / D(x)^alpha`. The field vanishes on obstacle
//! interiors, transitions smoothly through each sensing band, and peaks at
//! the target. Controllers consume `rho` and its analytic gradient.

use nalgebra::{DMatrix, DVector};
use std::io::Write;
use thiserror::Error;

/// Smallest value a density is allowed to take outside obstacle interiors.
/// Deep in a transition band the bump underflows f64; clamping to the
/// smallest positive value preserves "rho = 0 iff inside an obstacle".
const RHO_FLOOR: f64 = f64::MIN_POSITIVE;

/// Clamp band for the bump argument; branch selection happens on sign tests
/// first, so this only guards round-off at the band edges.
const BUMP_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("bump argument {0} outside (0, 1)")]
    BumpDomain(f64),
    #[error("density singular: query coincides with the target point")]
    Singular,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Which piece of the piecewise density a point falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    InsideObstacle,
    Transition,
    Free,
}

/// Obstacle geometry with its sensing band.
///
/// `boundary` (c) is negative inside the obstacle, `sensing` (b) is negative
/// inside the sensing region. Both must share gradients that keep
/// `c - b` constant and nonzero so the transition is well posed.
#[derive(Debug, Clone)]
pub enum ObstacleSpec {
    /// Disk of radius `r1` with sensing radius `r2 > r1`, in the full
    /// density state (positions for the systems shipped here).
    Circle {
        center: DVector<f64>,
        r1: f64,
        r2: f64,
    },
    /// Lane-edge band for the lane-keeping system: unsafe when the lateral
    /// offset plus the stopping distance `0.5*sgn(x2)*x2^2/a_max` exceeds
    /// `r1`; the sensing boundary sits at `r2 < r1`.
    LkBand { r1: f64, r2: f64, a_max: f64 },
}

impl ObstacleSpec {
    pub fn circle(center: &[f64], r1: f64, r2: f64) -> Self {
        ObstacleSpec::Circle {
            center: DVector::from_row_slice(center),
            r1,
            r2,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), DensityError> {
        match self {
            ObstacleSpec::Circle { center, r1, r2 } => {
                if center.len() != dim {
                    return Err(DensityError::Dimension {
                        expected: dim,
                        got: center.len(),
                    });
                }
                if !(*r1 > 0.0 && *r2 > *r1) {
                    return Err(DensityError::Geometry(format!(
                        "circle requires r2 > r1 > 0, got r1={r1}, r2={r2}"
                    )));
                }
                Ok(())
            }
            ObstacleSpec::LkBand { r1, r2, a_max } => {
                if dim < 2 {
                    return Err(DensityError::Dimension {
                        expected: 2,
                        got: dim,
                    });
                }
                if !(*r1 > 0.0 && *r2 > 0.0 && *r2 < *r1) {
                    return Err(DensityError::Geometry(format!(
                        "lane band requires 0 < r2 < r1, got r1={r1}, r2={r2}"
                    )));
                }
                if !(*a_max > 0.0) {
                    return Err(DensityError::Geometry(format!(
                        "lane band requires a_max > 0, got {a_max}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// c(x): nonpositive inside the obstacle. Also the clearance diagnostic.
    pub fn boundary(&self, x: &DVector<f64>) -> f64 {
        match self {
            ObstacleSpec::Circle { center, r1, .. } => {
                let d = x - center;
                d.dot(&d) - r1 * r1
            }
            ObstacleSpec::LkBand { r1, a_max, .. } => {
                r1 - x[0] - 0.5 * sgn(x[1]) * x[1] * x[1] / a_max
            }
        }
    }

    /// b(x): nonpositive inside the sensing region.
    pub fn sensing(&self, x: &DVector<f64>) -> f64 {
        match self {
            ObstacleSpec::Circle { center, r2, .. } => {
                let d = x - center;
                d.dot(&d) - r2 * r2
            }
            ObstacleSpec::LkBand { r2, a_max, .. } => {
                r2 - x[0] - 0.5 * sgn(x[1]) * x[1] * x[1] / a_max
            }
        }
    }

    /// Gradient of c (identical to the gradient of b for both shapes).
    pub fn boundary_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ObstacleSpec::Circle { center, .. } => 2.0 * (x - center),
            ObstacleSpec::LkBand { a_max, .. } => {
                let mut g = DVector::zeros(x.len());
                g[0] = -1.0;
                // d/dx1 of sgn(x1)*x1^2 is 2|x1|, C1 across x1 = 0.
                g[1] = -x[1].abs() / a_max;
                g
            }
        }
    }

    pub fn sensing_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        self.boundary_grad(x)
    }
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

/// Environment + shaping parameters defining one density field.
#[derive(Debug, Clone)]
pub struct DensityConfig {
    obstacles: Vec<ObstacleSpec>,
    alpha: f64,
    p: DMatrix<f64>,
    target: DVector<f64>,
    eta: f64,
}

impl DensityConfig {
    /// Validates geometry: `alpha > 0`, `eta > 0`, `P` symmetric positive
    /// definite, and the target outside every sensing region.
    pub fn new(
        obstacles: Vec<ObstacleSpec>,
        alpha: f64,
        p: DMatrix<f64>,
        target: DVector<f64>,
        eta: f64,
    ) -> Result<Self, DensityError> {
        let dim = target.len();
        if !(alpha > 0.0) {
            return Err(DensityError::Geometry(format!(
                "alpha must be > 0, got {alpha}"
            )));
        }
        if !(eta > 0.0) {
            return Err(DensityError::Geometry(format!(
                "eta must be > 0, got {eta}"
            )));
        }
        if p.nrows() != dim || p.ncols() != dim {
            return Err(DensityError::Dimension {
                expected: dim,
                got: p.nrows(),
            });
        }
        let asym = (&p - p.transpose()).abs().max();
        if asym > 1e-10 * (1.0 + p.abs().max()) {
            return Err(DensityError::Geometry("P must be symmetric".into()));
        }
        let min_eig = p
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if !(min_eig > 0.0) {
            return Err(DensityError::Geometry(format!(
                "P must be positive definite (min eigenvalue {min_eig})"
            )));
        }
        for obs in &obstacles {
            obs.validate(dim)?;
            if obs.sensing(&target) <= 0.0 {
                return Err(DensityError::Geometry(
                    "target lies inside a sensing region".into(),
                ));
            }
        }
        Ok(Self {
            obstacles,
            alpha,
            p,
            target,
            eta,
        })
    }

    /// Identity-P convenience constructor.
    pub fn with_identity_p(
        obstacles: Vec<ObstacleSpec>,
        alpha: f64,
        target: &[f64],
        eta: f64,
    ) -> Result<Self, DensityError> {
        let dim = target.len();
        Self::new(
            obstacles,
            alpha,
            DMatrix::identity(dim, dim),
            DVector::from_row_slice(target),
            eta,
        )
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }
    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }
    pub fn obstacles(&self) -> &[ObstacleSpec] {
        &self.obstacles
    }

    /// Weighted squared distance to the target, `(x - x_T)' P (x - x_T)`.
    pub fn dist(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.target;
        (&self.p * &d).dot(&d)
    }

    /// P-weighted distance (square root of `dist`); the convergence metric.
    pub fn p_distance(&self, x: &DVector<f64>) -> f64 {
        self.dist(x).sqrt()
    }

    /// Smallest obstacle clearance `min_k c_k(x)`; positive means safe.
    pub fn min_clearance(&self, x: &DVector<f64>) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.boundary(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Full evaluation with the pieces controllers need.
    pub fn eval_parts(&self, x: &DVector<f64>) -> Result<DensityParts, DensityError> {
        let dim = self.dim();
        if x.len() != dim {
            return Err(DensityError::Dimension {
                expected: dim,
                got: x.len(),
            });
        }
        let dist = self.dist(x);
        if dist == 0.0 {
            return Err(DensityError::Singular);
        }
        let grad_dist = 2.0 * (&self.p * (x - &self.target));

        // Regions are decided by sign tests before any bump evaluation.
        let mut region = Region::Free;
        let mut psis = Vec::with_capacity(self.obstacles.len());
        let mut grad_psis = Vec::with_capacity(self.obstacles.len());
        for obs in &self.obstacles {
            let c = obs.boundary(x);
            if c <= 0.0 {
                return Ok(DensityParts {
                    rho: 0.0,
                    grad_rho: DVector::zeros(dim),
                    psi: 0.0,
                    grad_psi: DVector::zeros(dim),
                    dist,
                    grad_dist,
                    region: Region::InsideObstacle,
                });
            }
            let b = obs.sensing(x);
            if b <= 0.0 {
                region = Region::Transition;
                let m = (c / (c - b)).clamp(BUMP_CLAMP, 1.0 - BUMP_CLAMP);
                let (psi_k, dpsi_dm) = bump_with_slope(m);
                let gc = obs.boundary_grad(x);
                let gb = obs.sensing_grad(x);
                let denom = (c - b) * (c - b);
                let grad_m = (c * gb - b * gc) / denom;
                psis.push(psi_k.max(RHO_FLOOR));
                grad_psis.push(grad_m * dpsi_dm);
            } else {
                psis.push(1.0);
                grad_psis.push(DVector::zeros(dim));
            }
        }

        let psi: f64 = psis.iter().product();
        // Product rule over obstacles; K is small so the O(K^2) loop is fine.
        let mut grad_psi = DVector::zeros(dim);
        for k in 0..psis.len() {
            let mut others = 1.0;
            for (j, pj) in psis.iter().enumerate() {
                if j != k {
                    others *= pj;
                }
            }
            grad_psi += &grad_psis[k] * others;
        }

        let d_alpha = dist.powf(self.alpha);
        let mut rho = psi / d_alpha;
        let grad_rho =
            &grad_psi / d_alpha - &grad_dist * (self.alpha * psi / dist.powf(self.alpha + 1.0));
        if rho < RHO_FLOOR {
            rho = RHO_FLOOR;
        }
        Ok(DensityParts {
            rho,
            grad_rho,
            psi,
            grad_psi,
            dist,
            grad_dist,
            region,
        })
    }

    /// Evaluation in the public shape most callers want.
    pub fn eval(&self, x: &DVector<f64>) -> Result<DensityEval, DensityError> {
        let parts = self.eval_parts(x)?;
        Ok(DensityEval {
            rho: parts.rho,
            grad_rho: parts.grad_rho,
            psi: parts.psi,
            dist: parts.dist,
            region: parts.region,
        })
    }

    /// Row-major grid of density samples over a 2-D state box, for export.
    /// Cells that coincide with the target emit `inf` as a sentinel.
    pub fn grid(
        &self,
        bounds: ((f64, f64), (f64, f64)),
        resolution: (usize, usize),
    ) -> Result<Vec<GridSample>, DensityError> {
        if self.dim() != 2 {
            return Err(DensityError::Dimension {
                expected: 2,
                got: self.dim(),
            });
        }
        let (rx, ry) = resolution;
        if rx < 2 || ry < 2 {
            return Err(DensityError::Geometry(format!(
                "grid resolution must be at least 2 per axis, got {rx}x{ry}"
            )));
        }
        let ((x0, x1), (y0, y1)) = bounds;
        if !(x1 > x0 && y1 > y0) {
            return Err(DensityError::Geometry(
                "grid bounds must be increasing".into(),
            ));
        }
        let mut out = Vec::with_capacity(rx * ry);
        for i in 0..rx {
            let x = x0 + (x1 - x0) * (i as f64) / ((rx - 1) as f64);
            for j in 0..ry {
                let y = y0 + (y1 - y0) * (j as f64) / ((ry - 1) as f64);
                let p = DVector::from_row_slice(&[x, y]);
                let rho = match self.eval_parts(&p) {
                    Ok(parts) => parts.rho,
                    Err(DensityError::Singular) => f64::INFINITY,
                    Err(e) => return Err(e),
                };
                out.push(GridSample { x1: x, x2: y, rho });
            }
        }
        Ok(out)
    }
}

/// Everything `eval_parts` computes; `grad_psi`/`grad_dist` feed the
/// robustness bound estimator.
#[derive(Debug, Clone)]
pub struct DensityParts {
    pub rho: f64,
    pub grad_rho: DVector<f64>,
    pub psi: f64,
    pub grad_psi: DVector<f64>,
    pub dist: f64,
    pub grad_dist: DVector<f64>,
    pub region: Region,
}

/// Density value with gradient and region tag.
#[derive(Debug, Clone)]
pub struct DensityEval {
    pub rho: f64,
    pub grad_rho: DVector<f64>,
    pub psi: f64,
    pub dist: f64,
    pub region: Region,
}

#[derive(Debug, Clone, Copy)]
pub struct GridSample {
    pub x1: f64,
    pub x2: f64,
    pub rho: f64,
}

/// Scalar inverse-bump transition `exp(-1/m) / (exp(-1/m) + exp(-1/(1-m)))`.
///
/// Strictly increasing on (0, 1) with limits 0 and 1. Callers route points
/// outside the band to the piecewise branches before calling this.
pub fn bump(m: f64) -> Result<f64, DensityError> {
    if !(m > 0.0 && m < 1.0) {
        return Err(DensityError::BumpDomain(m));
    }
    Ok(bump_with_slope(m).0)
}

/// Bump value and its derivative in m, both in closed form.
///
/// Rewriting as a logistic of `t = 1/(1-m) - 1/m` avoids overflow of the
/// raw exponentials near the band edges.
pub(crate) fn bump_with_slope(m: f64) -> (f64, f64) {
    let t = 1.0 / (1.0 - m) - 1.0 / m;
    let psi = if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    };
    let dpsi = psi * (1.0 - psi) * (1.0 / (m * m) + 1.0 / ((1.0 - m) * (1.0 - m)));
    (psi, dpsi)
}

/// CSV export with header `x1,x2,rho`, row-major, 17 significant digits.
pub fn write_grid_csv<W: Write>(samples: &[GridSample], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "x1,x2,rho")?;
    for s in samples {
        writeln!(w, "{:.16e},{:.16e},{:.16e}", s.x1, s.x2, s.rho)?;
    }
    Ok(())
}
