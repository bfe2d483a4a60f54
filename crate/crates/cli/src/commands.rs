//! Subcommand implementations. Each returns a process exit code:
//! 0 converged/ok, 2 safety violation, 3 infeasible or not converged,
//! 4 configuration error.

use crate::scenario::{
    apply_overrides, parse_scenario, resolve, to_toml_string, Resolved, ScenarioError,
};
use cdf_core::controller::{scenario_sample_count, ScenarioBoundQuery};
use cdf_core::density::write_grid_csv;
use cdf_core::sim::{run, run_batch, write_batch_csv, write_trajectory_csv, Outcome, Trajectory};
use std::fs;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNSAFE: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

/// Environment variable overriding the default output directory.
pub const OUT_DIR_ENV: &str = "CDF_SIM_OUT_DIR";

fn outcome_code(outcome: Outcome) -> i32 {
    match outcome {
        Outcome::Converged => EXIT_OK,
        Outcome::EnteredObstacle => EXIT_UNSAFE,
        Outcome::Infeasible | Outcome::MaxSteps => EXIT_NOT_CONVERGED,
    }
}

fn config_err(e: impl std::fmt::Display) -> i32 {
    eprintln!("error: {e}");
    EXIT_CONFIG
}

/// Load a scenario with overrides applied; `--seed`/`--out` act as
/// shorthand overrides.
fn load(
    path: &Path,
    overrides: &[String],
    seed: Option<u64>,
    out: Option<&str>,
) -> Result<Resolved, ScenarioError> {
    let text = fs::read_to_string(path)?;
    let mut all = overrides.to_vec();
    if let Some(s) = seed {
        all.push(format!("sim.seed={s}"));
    }
    if let Some(dir) = out {
        all.push(format!("output.directory=\"{dir}\""));
    } else if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        all.push(format!("output.directory=\"{dir}\""));
    }
    let patched = apply_overrides(&text, &all)?;
    let file = parse_scenario(&patched)?;
    resolve(&file)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

/// Dump the step-0 decision problem of a density-controller scenario.
fn dump_first_qp(resolved: &Resolved, dir: &Path, name: &str) -> Result<(), String> {
    let spec = &resolved.spec;
    let n_ctrl = spec.density.dim();
    let x0 = spec.sim.x0.rows(0, n_ctrl).into_owned();
    let model = match spec.pipeline {
        cdf_core::sim::Pipeline::Bicycle { .. } => cdf_core::dynamics::make_single_integrator(),
        _ => spec.plant.clone(),
    };
    let cfg = match &spec.controller {
        cdf_core::sim::ControllerSpec::Cdf(c) => {
            let mut c = c.clone();
            c.x0 = Some(x0.clone());
            c
        }
        cdf_core::sim::ControllerSpec::Cbf(_) => {
            return Err("the qp dump covers density-controller modes only".into())
        }
    };
    let p = cdf_core::controller::assemble_problem(&model, &spec.density, &cfg, &x0)
        .map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    p.write_csv(&mut buf).map_err(|e| e.to_string())?;
    fs::write(dir.join(format!("{name}_qp0.csv")), buf).map_err(|e| e.to_string())?;
    Ok(())
}

/// Write the resolved scenario and a metadata record next to the outputs.
fn write_run_metadata(
    resolved: &Resolved,
    dir: &Path,
    name: &str,
    outcomes: &[(u64, Outcome)],
) -> std::io::Result<()> {
    let resolved_text =
        to_toml_string(&resolved.file).unwrap_or_else(|e| format!("# serialization failed: {e}"));
    fs::write(dir.join(format!("{name}_resolved.scenario")), resolved_text)?;
    let mut meta = String::new();
    meta.push_str("[meta]\n");
    meta.push_str(&format!("version = \"{}\"\n", env!("CARGO_PKG_VERSION")));
    meta.push_str("rng = \"chacha12\"\n");
    meta.push_str(&format!("master_seed = {}\n", resolved.spec.sim.seed));
    for (seed, outcome) in outcomes {
        meta.push_str(&format!(
            "\n[[meta.runs]]\nseed = {seed}\noutcome = \"{}\"\n",
            outcome.as_str()
        ));
    }
    fs::write(dir.join(format!("{name}_meta.toml")), meta)
}

pub fn simulate(
    path: &Path,
    overrides: &[String],
    seed: Option<u64>,
    out: Option<&str>,
    dump_qp: bool,
) -> i32 {
    let resolved = match load(path, overrides, seed, out) {
        Ok(r) => r,
        Err(e) => return config_err(e),
    };
    let traj = match run(&resolved.spec) {
        Ok(t) => t,
        Err(e) => return config_err(e),
    };
    let dir = PathBuf::from(&resolved.output.directory);
    if let Err(e) = fs::create_dir_all(&dir) {
        return config_err(e);
    }
    let name = stem(path);
    if dump_qp {
        if let Err(e) = dump_first_qp(&resolved, &dir, &name) {
            return config_err(e);
        }
    }
    let mut buf = Vec::new();
    if write_trajectory_csv(&traj, &mut buf).is_err()
        || fs::write(dir.join(format!("{name}.csv")), &buf).is_err()
    {
        return config_err("cannot write trajectory CSV");
    }
    if let Err(e) = write_run_metadata(
        &resolved,
        &dir,
        &name,
        &[(resolved.spec.sim.seed, traj.outcome)],
    ) {
        return config_err(e);
    }
    println!(
        "{}: {} after {} steps ({:.2} s), min clearance {:.4}, final distance {:.4}",
        name,
        traj.outcome.as_str(),
        traj.steps_taken,
        traj.final_time(),
        traj.min_clearance(),
        traj.final_p_distance
    );
    if let Some(reason) = &traj.failure {
        eprintln!("failure: {reason}");
    }
    outcome_code(traj.outcome)
}

pub fn batch(
    path: &Path,
    runs: usize,
    overrides: &[String],
    seed: Option<u64>,
    out: Option<&str>,
) -> i32 {
    let resolved = match load(path, overrides, seed, out) {
        Ok(r) => r,
        Err(e) => return config_err(e),
    };
    let (trajs, rows) = match run_batch(&resolved.spec, runs, resolved.spec.sim.seed) {
        Ok(r) => r,
        Err(e) => return config_err(e),
    };
    let dir = PathBuf::from(&resolved.output.directory);
    if let Err(e) = fs::create_dir_all(&dir) {
        return config_err(e);
    }
    let name = stem(path);
    for (i, traj) in trajs.iter().enumerate() {
        let mut buf = Vec::new();
        if write_trajectory_csv(traj, &mut buf).is_err()
            || fs::write(dir.join(format!("{name}_run{i}.csv")), &buf).is_err()
        {
            return config_err("cannot write trajectory CSV");
        }
    }
    let mut buf = Vec::new();
    if write_batch_csv(&rows, &mut buf).is_err()
        || fs::write(dir.join(format!("{name}_summary.csv")), &buf).is_err()
    {
        return config_err("cannot write batch summary");
    }
    let outcomes: Vec<(u64, Outcome)> = rows.iter().map(|r| (r.seed, r.outcome)).collect();
    if let Err(e) = write_run_metadata(&resolved, &dir, &name, &outcomes) {
        return config_err(e);
    }
    for r in &rows {
        println!(
            "run {:>3}: {} steps {:>6} min_clearance {:.4}",
            r.run,
            r.outcome.as_str(),
            r.steps,
            r.min_clearance
        );
    }
    rows.iter()
        .map(|r| outcome_code(r.outcome))
        .max()
        .unwrap_or(EXIT_OK)
}

pub fn density_grid(
    path: &Path,
    bounds: &str,
    resolution: &str,
    overrides: &[String],
    out: Option<&str>,
) -> i32 {
    let resolved = match load(path, overrides, None, out) {
        Ok(r) => r,
        Err(e) => return config_err(e),
    };
    let parts: Vec<f64> = bounds
        .split(',')
        .filter_map(|s| s.trim().parse().ok())
        .collect();
    if parts.len() != 4 {
        return config_err("bounds must be `x1min,x1max,x2min,x2max`");
    }
    let res: Vec<usize> = resolution
        .split(|c| c == ',' || c == 'x')
        .filter_map(|s| s.trim().parse().ok())
        .collect();
    if res.len() != 2 {
        return config_err("resolution must be `n1,n2`");
    }
    let samples = match resolved.spec.density.grid(
        ((parts[0], parts[1]), (parts[2], parts[3])),
        (res[0], res[1]),
    ) {
        Ok(s) => s,
        Err(e) => return config_err(e),
    };
    let dir = PathBuf::from(&resolved.output.directory);
    if let Err(e) = fs::create_dir_all(&dir) {
        return config_err(e);
    }
    let name = stem(path);
    let mut buf = Vec::new();
    if write_grid_csv(&samples, &mut buf).is_err()
        || fs::write(dir.join(format!("{name}_grid.csv")), &buf).is_err()
    {
        return config_err("cannot write grid CSV");
    }
    println!("wrote {} samples", samples.len());
    EXIT_OK
}

pub fn scenario_bound(epsilon: f64, sigma: f64, m_inputs: usize) -> i32 {
    match scenario_sample_count(&ScenarioBoundQuery {
        epsilon,
        sigma,
        m_inputs,
    }) {
        Ok(n) => {
            println!("{n}");
            EXIT_OK
        }
        Err(e) => config_err(e),
    }
}

/// Comparison quantities for one completed run.
fn compare_row(name: &str, traj: &Trajectory) -> String {
    format!(
        "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
        name,
        traj.outcome.as_str(),
        traj.min_clearance(),
        traj.path_length(),
        traj.final_time(),
        traj.max_u_norm()
    )
}

pub fn compare(paths: &[PathBuf], overrides: &[String], out: Option<&str>) -> i32 {
    if paths.len() < 2 {
        return config_err("compare needs at least two scenarios");
    }
    let mut resolved = Vec::new();
    for p in paths {
        match load(p, overrides, None, out) {
            Ok(r) => resolved.push((stem(p), r)),
            Err(e) => return config_err(format!("{}: {e}", p.display())),
        }
    }
    // All scenarios must share the system and the physical environment
    // (obstacle bodies and goal); density shaping such as the sensing
    // radius may differ per scenario.
    let env_key = |r: &Resolved| {
        let d = &r.file.density;
        let obstacles: Vec<(String, Option<Vec<String>>, String)> = d
            .obstacles
            .iter()
            .map(|o| {
                (
                    o.kind.clone(),
                    o.center
                        .as_ref()
                        .map(|c| c.iter().map(|v| format!("{v:.12e}")).collect()),
                    format!("{:.12e}", o.r1),
                )
            })
            .collect();
        let target: Vec<String> = d.target.iter().map(|v| format!("{v:.12e}")).collect();
        (r.file.system.clone(), obstacles, target)
    };
    let first_key = env_key(&resolved[0].1);
    for (name, r) in &resolved[1..] {
        if env_key(r) != first_key {
            return config_err(format!(
                "{name}: system/environment differs from the first scenario"
            ));
        }
    }
    let mut rows =
        vec!["scenario,outcome,min_clearance,path_length,convergence_time,max_u_norm".to_string()];
    let mut worst = EXIT_OK;
    for (name, r) in &resolved {
        let traj = match run(&r.spec) {
            Ok(t) => t,
            Err(e) => return config_err(e),
        };
        worst = worst.max(outcome_code(traj.outcome));
        rows.push(compare_row(name, &traj));
    }
    let dir = PathBuf::from(
        out.map(str::to_string)
            .or_else(|| std::env::var(OUT_DIR_ENV).ok())
            .unwrap_or_else(|| resolved[0].1.output.directory.clone()),
    );
    if let Err(e) = fs::create_dir_all(&dir) {
        return config_err(e);
    }
    let text = rows.join("\n") + "\n";
    if let Err(e) = fs::write(dir.join("comparison.csv"), text.as_bytes()) {
        return config_err(e);
    }
    for line in &rows {
        println!("{line}");
    }
    worst
}
