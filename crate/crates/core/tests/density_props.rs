//! Property suites for the density field: bump symmetry, analytic-gradient
//! consistency against finite differences, boundary continuity, and
//! monotonicity in the sensing radius.

use cdf_core::density::{bump, DensityConfig, ObstacleSpec, Region};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn env(r2: f64) -> DensityConfig {
    DensityConfig::with_identity_p(
        vec![ObstacleSpec::circle(&[0.0, 0.0], 1.0, r2)],
        1.0,
        &[5.0, 0.0],
        0.1,
    )
    .unwrap()
}

fn two_obstacle_env() -> DensityConfig {
    DensityConfig::with_identity_p(
        vec![
            ObstacleSpec::circle(&[-2.0, 0.5], 1.3, 1.8),
            ObstacleSpec::circle(&[1.7, -0.8], 1.3, 1.8),
        ],
        0.2,
        &[4.0, 1.0],
        0.1,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn bump_symmetry_to_1e12(m in 1e-9f64..1.0) {
        prop_assume!(m < 1.0 - 1e-9);
        let s = bump(m).unwrap() + bump(1.0 - m).unwrap();
        prop_assert!((s - 1.0).abs() <= 1e-12, "psi(m)+psi(1-m) = {s}");
    }

    #[test]
    fn bump_is_increasing(m in 1e-6f64..0.999) {
        prop_assume!(m + 1e-6 < 1.0);
        prop_assert!(bump(m + 1e-6).unwrap() >= bump(m).unwrap());
    }

    #[test]
    fn density_nonnegative_and_psi_bounded(x in -8.0f64..8.0, y in -8.0f64..8.0) {
        let cfg = env(3.0);
        let p = DVector::from_row_slice(&[x, y]);
        if let Ok(e) = cfg.eval(&p) {
            prop_assert!(e.rho >= 0.0);
            prop_assert!((0.0..=1.0).contains(&e.psi));
            if e.region == Region::InsideObstacle {
                prop_assert_eq!(e.rho, 0.0);
            } else {
                prop_assert!(e.rho > 0.0);
            }
        }
    }
}

/// 1000 random free/transition points: analytic gradient matches central
/// finite differences with step `1e-6 (1 + |x|)` to 1e-5 relative.
#[test]
fn gradient_consistency_1000_points() {
    let envs = [env(3.0), two_obstacle_env()];
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 1000 {
        let cfg = &envs[checked % envs.len()];
        let x =
            DVector::from_row_slice(&[rng.random_range(-7.0..7.0), rng.random_range(-7.0..7.0)]);
        let parts = match cfg.eval_parts(&x) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if parts.region == Region::InsideObstacle {
            continue;
        }
        // Skip the deep transition tail where the density underflows and
        // finite differences lose all significance.
        if parts.rho < 1e-30 {
            continue;
        }
        let h = 1e-6 * (1.0 + x.norm());
        let mut fd = DVector::zeros(2);
        let mut ok = true;
        for i in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            match (cfg.eval(&xp), cfg.eval(&xm)) {
                (Ok(a), Ok(b)) => fd[i] = (a.rho - b.rho) / (2.0 * h),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let denom = parts.grad_rho.norm().max(fd.norm()).max(1e-12);
        let rel = (&parts.grad_rho - &fd).norm() / denom;
        assert!(
            rel <= 1e-5,
            "gradient mismatch {rel:.3e} at {x:?} (analytic {:?}, fd {:?})",
            parts.grad_rho,
            fd
        );
        checked += 1;
    }
}

/// No discontinuity across the obstacle and sensing level sets: for point
/// pairs 1e-6 apart straddling each boundary, the density difference minus
/// the first-order smooth drift stays below 1e-8.
#[test]
fn continuity_across_level_sets() {
    let cfg = env(3.0);
    let mut rng = ChaCha12Rng::seed_from_u64(77);
    for _ in 0..200 {
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = DVector::from_row_slice(&[angle.cos(), angle.sin()]);
        for &r in &[1.0, 3.0] {
            let inner = &dir * (r - 5e-7);
            let outer = &dir * (r + 5e-7);
            let ri = cfg.eval(&inner).unwrap().rho;
            let ro = cfg.eval(&outer).unwrap().rho;
            // Smooth variation over the gap, from the outer-side gradient
            // (zero on the obstacle side, where the density is flat).
            let drift = cfg.eval(&outer).unwrap();
            let drift = if ri == 0.0 {
                0.0
            } else {
                drift.grad_rho.dot(&(&outer - &inner))
            };
            let jump = ((ro - ri) - drift).abs();
            assert!(
                jump <= 1e-8,
                "discontinuity {jump:.3e} at radius {r}, angle {angle}"
            );
        }
    }
}

/// Growing the sensing radius leaves far-field densities untouched and
/// weakly lowers the density between the old and the new boundary.
#[test]
fn monotone_in_sensing_radius_many_points() {
    let narrow = env(2.0);
    let wide = env(3.0);
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    for _ in 0..300 {
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = DVector::from_row_slice(&[angle.cos(), angle.sin()]);
        // Between old and new sensing boundary.
        let r_mid: f64 = rng.random_range(2.05..2.95);
        let p = &dir * r_mid;
        if narrow.dist(&p) == 0.0 {
            continue;
        }
        let rho_n = narrow.eval(&p).unwrap().rho;
        let rho_w = wide.eval(&p).unwrap().rho;
        assert!(
            rho_w <= rho_n + 1e-15,
            "at radius {r_mid}: {rho_w} > {rho_n}"
        );
        // Outside both sensing regions.
        let r_far: f64 = rng.random_range(3.1..6.0);
        let q = &dir * r_far;
        if (q[0] - 5.0).abs() < 0.3 && q[1].abs() < 0.3 {
            continue; // too close to the target for a meaningful compare
        }
        let rho_n = narrow.eval(&q).unwrap().rho;
        let rho_w = wide.eval(&q).unwrap().rho;
        assert_eq!(rho_n, rho_w);
    }
}

/// Lane-band density: same invariants hold in the 4-state geometry.
#[test]
fn lane_band_density_gradient_consistency() {
    let cfg = DensityConfig::new(
        vec![ObstacleSpec::LkBand {
            r1: 0.9,
            r2: 0.7,
            a_max: 2.94,
        }],
        0.2,
        nalgebra::DMatrix::identity(4, 4),
        DVector::zeros(4),
        0.01,
    )
    .unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(13);
    let mut checked = 0;
    while checked < 300 {
        let x = DVector::from_fn(4, |i, _| {
            if i == 0 {
                rng.random_range(-0.85..0.85)
            } else {
                rng.random_range(-0.5..0.5)
            }
        });
        let parts = match cfg.eval_parts(&x) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if parts.region == Region::InsideObstacle || parts.rho < 1e-30 {
            continue;
        }
        // Finite differences across the sgn kink at x2 = 0 are invalid.
        if x[1].abs() < 1e-4 {
            continue;
        }
        let h = 1e-6 * (1.0 + x.norm());
        let mut fd = DVector::zeros(4);
        for i in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            fd[i] = (cfg.eval(&xp).unwrap().rho - cfg.eval(&xm).unwrap().rho) / (2.0 * h);
        }
        let denom = parts.grad_rho.norm().max(fd.norm()).max(1e-12);
        let rel = (&parts.grad_rho - &fd).norm() / denom;
        assert!(rel <= 1e-5, "gradient mismatch {rel:.3e} at {x:?}");
        checked += 1;
    }
}
