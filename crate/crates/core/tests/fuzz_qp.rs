//! Heavy randomized differential check of the QP solver, including badly
//! scaled and quasi-degenerate instances. Slow by design; run with
//! `cargo test -p cdf-core --test fuzz_qp -- --ignored`.

use cdf_core::qp::{
    kkt_residuals, problem_scale, solve_active_set, solve_single_constraint_closed_form, QpProblem,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[test]
#[ignore]
fn fuzz_100k() {
    let mut rng = ChaCha12Rng::seed_from_u64(20260808);
    let mut infeasible = 0usize;
    let mut solved = 0usize;
    let mut conditioning_limited = 0usize;
    for trial in 0..100_000u64 {
        let d = rng.random_range(1..=8);
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let h =
            (&m * m.transpose() + DMatrix::identity(d, d) * rng.random_range(0.01..1.0)) * scale;
        let j = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0)) * scale;
        let n_cons = rng.random_range(0..=12);
        // Mix feasible-by-construction rows with free rows so a fraction of
        // the problems are genuinely infeasible or quasi-degenerate.
        let u_feas = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let cons: Vec<(DVector<f64>, f64)> = (0..n_cons)
            .map(|_| {
                let mut a = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
                if a.norm() < 0.05 {
                    a[0] += 0.5;
                }
                let b = if rng.random_range(0.0..1.0) < 0.7 {
                    a.dot(&u_feas) - rng.random_range(0.0..2.0)
                } else {
                    rng.random_range(-3.0..3.0)
                };
                (a, b)
            })
            .collect();
        let p = QpProblem::new(h.clone(), j.clone(), cons.clone()).unwrap();
        match solve_active_set(&p) {
            Ok(s) => {
                solved += 1;
                let ps = problem_scale(&p);
                let (st, fe, co) = kkt_residuals(&p, &s);
                assert!(
                    fe <= 1e-8 * (1.0 + ps),
                    "trial {trial}: feasibility {fe:.3e}"
                );
                // If the known interior point is feasible, the solver must
                // do at least as well (holds at any conditioning).
                if p.max_violation(&u_feas) == 0.0 {
                    assert!(
                        s.objective <= p.objective(&u_feas) + 1e-8 * (1.0 + ps),
                        "trial {trial}: objective {} beaten by reference {}",
                        s.objective,
                        p.objective(&u_feas)
                    );
                }
                // Stationarity and complementarity are meaningful when the
                // optimum is not a quasi-degenerate wedge apex (there the
                // duals blow up and f64 cannot localize the apex tighter
                // than its conditioning allows).
                let dual_scale = s.duals.iter().cloned().fold(0.0f64, f64::max);
                if dual_scale <= 1e6 * (1.0 + ps) {
                    assert!(
                        st <= 1e-7 * (1.0 + ps) * (1.0 + dual_scale),
                        "trial {trial}: stationarity {st:.3e} (duals {dual_scale:.3e})"
                    );
                    assert!(
                        co <= 1e-6 * (1.0 + ps) * (1.0 + dual_scale),
                        "trial {trial}: complementarity {co:.3e}"
                    );
                } else {
                    conditioning_limited += 1;
                }
                if cons.len() == 1 {
                    let cf =
                        solve_single_constraint_closed_form(&h, &j, &cons[0].0, cons[0].1).unwrap();
                    let diff = (&cf.u_star - &s.u_star).norm();
                    assert!(
                        diff <= 1e-8 * (1.0 + s.u_star.norm()),
                        "trial {trial}: closed form differs by {diff:.3e}"
                    );
                }
            }
            Err(cdf_core::qp::QpError::Infeasible { .. }) => {
                infeasible += 1;
                // A declared-infeasible problem must reject the generator's
                // interior point too.
                let viol = cons
                    .iter()
                    .map(|(a, b)| (b - a.dot(&u_feas)).max(0.0))
                    .fold(0.0, f64::max);
                assert!(
                    viol > 0.0,
                    "trial {trial}: declared infeasible but the reference point is feasible"
                );
            }
            Err(e) => panic!("trial {trial}: unexpected failure {e}"),
        }
    }
    println!(
        "fuzz: {solved} solved ({conditioning_limited} conditioning-limited), {infeasible} infeasible"
    );
    assert!(
        infeasible > 1000,
        "generator never produced infeasible problems"
    );
}
