use cdf_sim::commands;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

/// Safe-navigation scenario runner: density-based QP controllers with CSV
/// trajectory output.
#[derive(Parser)]
#[command(name = "cdf-sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop scenario and write its trajectory CSV.
    Simulate {
        scenario: PathBuf,
        /// Override scenario keys, e.g. `--override sim.max_steps=100`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Master seed (shorthand for `--override sim.seed=N`).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the scenario and the environment).
        #[arg(long)]
        out: Option<String>,
        /// Also dump the first step's assembled decision problem as CSV.
        #[arg(long)]
        dump_qp: bool,
    },
    /// Run independent seeded repetitions and write a summary CSV.
    Batch {
        scenario: PathBuf,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Sample the scenario's density over a 2-D box and write it as CSV.
    DensityGrid {
        scenario: PathBuf,
        /// `x1min,x1max,x2min,x2max`
        #[arg(long, allow_hyphen_values = true)]
        bounds: String,
        /// `n1,n2` (at least 2 per axis)
        #[arg(long)]
        resolution: String,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Print the scenario-optimization sample count for the given levels.
    ScenarioBound {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        sigma: f64,
        /// Number of control inputs.
        #[arg(long, default_value_t = 2)]
        inputs: usize,
    },
    /// Run several scenarios sharing one environment and tabulate
    /// clearance, path length, convergence time, and control effort.
    Compare {
        scenarios: Vec<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<String>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate {
            scenario,
            overrides,
            seed,
            out,
            dump_qp,
        } => commands::simulate(&scenario, &overrides, seed, out.as_deref(), dump_qp),
        Command::Batch {
            scenario,
            runs,
            overrides,
            seed,
            out,
        } => commands::batch(&scenario, runs, &overrides, seed, out.as_deref()),
        Command::DensityGrid {
            scenario,
            bounds,
            resolution,
            overrides,
            out,
        } => commands::density_grid(&scenario, &bounds, &resolution, &overrides, out.as_deref()),
        Command::ScenarioBound {
            epsilon,
            sigma,
            inputs,
        } => commands::scenario_bound(epsilon, sigma, inputs),
        Command::Compare {
            scenarios,
            overrides,
            out,
        } => commands::compare(&scenarios, &overrides, out.as_deref()),
    };
    std::process::exit(code);
}
