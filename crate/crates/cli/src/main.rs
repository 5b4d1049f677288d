use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pollsys::analysis::{solve_first_order, solve_second_order};
use pollsys::fluid;
use pollsys::model::{validate, Policy};
use pollsys::pgf;
use pollsys::sim;
use pollsys_cli::experiment::{run_experiment, ExperimentSpec};
use pollsys_cli::output;
use pollsys_cli::{config, CliError, CliResult};

/// Moment analysis and simulation of single-server polling systems.
#[derive(Parser)]
#[command(name = "pollsys", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model/policy configuration for admissibility.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve the buffer-occupancy equations and print the moment CSV.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Moment order: 1 for the q matrix, 2 to add the cross-moment
        /// matrices.
        #[arg(long, default_value_t = 1)]
        order: u32,
        /// Directory for q.csv (and f.csv at order 2) instead of stdout
        /// only.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generating-function utilities.
    Pgf {
        #[command(subcommand)]
        command: PgfCommand,
    },
    /// Fluid-model utilities.
    Fluid {
        #[command(subcommand)]
        command: FluidCommand,
    },
    /// Simulation utilities.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Compare solver, asymptotic, and simulated moments across switchover
    /// scales; persists the comparison table as CSV.
    Experiment(ExperimentArgs),
}

#[derive(Subcommand)]
enum PgfCommand {
    /// Evaluate the joint generating function at one point.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Stage whose polling epoch is evaluated (1-based).
        #[arg(long, default_value_t = 1)]
        stage: usize,
        /// Comma-separated coordinates in [0, 1], one per queue.
        #[arg(long)]
        z: String,
        #[arg(long, default_value_t = pgf::DEFAULT_TAIL_TOL)]
        tail_tol: f64,
    },
}

#[derive(Subcommand)]
enum FluidCommand {
    /// Compute the periodic equilibrium and print its trajectory and
    /// summary.
    Pe {
        #[arg(long)]
        config: PathBuf,
        /// Directory for trajectory.csv and pe_summary.csv instead of
        /// stdout only.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run replications and print batch-means moment estimates.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cycles: u64,
        /// Cycles to discard; defaults to 10% of cycles, or 0 with
        /// --init-fluid.
        #[arg(long)]
        warmup: Option<u64>,
        #[arg(long, default_value_t = 1)]
        reps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Moment orders for the summary.
        #[arg(long, default_value = "1,2")]
        orders: String,
        /// Start at the equilibrium queue lengths instead of empty queues.
        #[arg(long)]
        init_fluid: bool,
        /// Directory for samples.csv and summary.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Switchover scale ladder.
    #[arg(long, default_value = "1,10,100")]
    scales: String,
    /// Moment orders to compare.
    #[arg(long, default_value = "1,2,3")]
    orders: String,
    #[arg(long, default_value_t = 2000)]
    cycles: u64,
    #[arg(long, default_value_t = 0)]
    warmup: u64,
    #[arg(long, default_value_t = 1)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for comparison.csv.
    #[arg(long)]
    out: PathBuf,
}

fn parse_f64_list(text: &str, what: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Config(format!("invalid {what} entry '{s}'")))
        })
        .collect()
}

fn parse_u32_list(text: &str, what: &str) -> CliResult<Vec<u32>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u32>()
                .map_err(|_| CliError::Config(format!("invalid {what} entry '{s}'")))
        })
        .collect()
}

fn reduction_of(policy: &Policy, context: &str) -> CliResult<Vec<f64>> {
    match policy {
        Policy::BinomialExhaustive { reduction } => Ok(reduction.clone()),
        _ => Err(CliError::Config(format!(
            "{context} applies to the binomial-exhaustive policy; configure kind = \"bep\""
        ))),
    }
}

fn require_valid(model: &pollsys::model::SystemModel, policy: &Policy) -> CliResult<()> {
    let report = validate(model, policy);
    if report.is_admissible() {
        Ok(())
    } else {
        Err(CliError::Validation(report))
    }
}

fn write_out(dir: &Path, name: &str, content: &str) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), content)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Validate { config } => {
            let (model, policy) = config::load(&config)?;
            let report = validate(&model, &policy);
            if report.is_admissible() {
                println!("admissible");
                Ok(())
            } else {
                for violation in report.violations() {
                    println!("violation: {violation}");
                }
                Err(CliError::Validation(report))
            }
        }
        Command::Solve { config, order, out } => {
            let (model, policy) = config::load(&config)?;
            require_valid(&model, &policy)?;
            match order {
                1 | 2 => {}
                _ => {
                    return Err(CliError::Config(format!(
                        "order {order} is not available: the buffer-occupancy solvers stop at \
                         second order"
                    )))
                }
            }
            let (q_csv, f_csv) = match (&policy, order) {
                (Policy::BinomialExhaustive { reduction }, 1) => {
                    let first = solve_first_order(&model, reduction)?;
                    (output::first_moment_csv(&first), None)
                }
                (Policy::BinomialExhaustive { reduction }, _) => {
                    let first = solve_first_order(&model, reduction)?;
                    let second = solve_second_order(&model, reduction, &first)?;
                    (
                        output::first_moment_csv(&first),
                        Some(output::second_moment_csv(&second)),
                    )
                }
                (Policy::BinomialGated { reduction }, 1) => {
                    let pe = fluid::fluid_pe_bgp(&model, reduction)?;
                    let mut csv = String::from("stage,queue,q\n");
                    for i in 0..pe.stage_count() {
                        for k in 0..pe.queue_count() {
                            csv.push_str(&format!(
                                "{},{},{}\n",
                                i + 1,
                                k + 1,
                                output::sig15(pe.q(i, k))
                            ));
                        }
                    }
                    (csv, None)
                }
                (Policy::BinomialGated { .. }, _) => {
                    return Err(CliError::Config(
                        "second moments are only available for the binomial-exhaustive policy"
                            .into(),
                    ))
                }
                (Policy::BaseStock { .. }, _) => {
                    return Err(CliError::Config(
                        "the buffer-occupancy solvers do not cover the base-stock policy; use \
                         `fluid pe` for its equilibrium"
                            .into(),
                    ))
                }
            };
            print!("{q_csv}");
            if let Some(f) = &f_csv {
                println!();
                print!("{f}");
            }
            if let Some(dir) = out {
                write_out(&dir, "q.csv", &q_csv)?;
                if let Some(f) = &f_csv {
                    write_out(&dir, "f.csv", f)?;
                }
            }
            Ok(())
        }
        Command::Pgf { command } => match command {
            PgfCommand::Eval { config, stage, z, tail_tol } => {
                let (model, policy) = config::load(&config)?;
                require_valid(&model, &policy)?;
                let reduction = reduction_of(&policy, "pgf eval")?;
                let z = parse_f64_list(&z, "z")?;
                if stage == 0 || stage > model.stage_count() {
                    return Err(CliError::Config(format!(
                        "stage {stage} outside 1..={}",
                        model.stage_count()
                    )));
                }
                let value = pgf::evaluate_pgf(&model, &reduction, stage - 1, &z, tail_tol)?;
                println!("{}", output::sig15(value));
                Ok(())
            }
        },
        Command::Fluid { command } => match command {
            FluidCommand::Pe { config, out } => {
                let (model, policy) = config::load(&config)?;
                require_valid(&model, &policy)?;
                let pe = fluid::fluid_pe(&model, &policy)?;
                let trajectory = output::trajectory_csv(&pe);
                let summary = output::pe_summary_csv(&pe);
                print!("{trajectory}");
                println!();
                print!("{summary}");
                if let Some(dir) = out {
                    write_out(&dir, "trajectory.csv", &trajectory)?;
                    write_out(&dir, "pe_summary.csv", &summary)?;
                }
                Ok(())
            }
        },
        Command::Sim { command } => match command {
            SimCommand::Run { config, cycles, warmup, reps, seed, orders, init_fluid, out } => {
                let (model, policy) = config::load(&config)?;
                require_valid(&model, &policy)?;
                let orders = parse_u32_list(&orders, "orders")?;
                let warmup = warmup.unwrap_or(if init_fluid { 0 } else { cycles / 10 });
                let initial = if init_fluid {
                    Some(sim::initial_state(&model, &policy, 1.0)?)
                } else {
                    None
                };
                let replications =
                    sim::run_replications(&model, &policy, reps, cycles, warmup, seed, initial)?;
                let merged = sim::StageSampleSet::merge(&replications)?;
                let summaries = orders
                    .iter()
                    .map(|&p| sim::estimate_moments(&merged, p))
                    .collect::<pollsys::Result<Vec<_>>>()?;
                let summary_csv = output::summary_csv(&summaries);
                print!("{summary_csv}");
                if let Some(dir) = out {
                    write_out(&dir, "samples.csv", &output::samples_csv(&replications))?;
                    write_out(&dir, "summary.csv", &summary_csv)?;
                }
                Ok(())
            }
        },
        Command::Experiment(args) => {
            let (model, policy) = config::load(&args.config)?;
            let spec = ExperimentSpec {
                model,
                policy,
                scales: parse_f64_list(&args.scales, "scales")?,
                orders: parse_u32_list(&args.orders, "orders")?,
                cycles: args.cycles,
                warmup: args.warmup,
                reps: args.reps,
                seed: args.seed,
            };
            let table = run_experiment(&spec)?;
            let csv = table.to_csv();
            print!("{csv}");
            write_out(&args.out, "comparison.csv", &csv)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
