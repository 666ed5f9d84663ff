use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use cellfree_dab::central::ModeTag;
use cellfree_dab::experiment::{beam_patterns, mean_rate, parse_values, run_experiment, ExperimentConfig, ExperimentSpec, Sweep, SweepVar};
use cellfree_dab::metrics::{complexity_estimate, overhead_central, overhead_ring, overhead_star, Topology};
use cellfree_dab::scenario::SystemConfig;
use cellfree_dab::validation::run_all;
use cellfree_dab::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cellfree-dab", version, about = "Distortion-aware cell-free beamforming experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config JSON (scenario, solver, star, central).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; trial t uses seed + t.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Comma-separated subset of ring, star, central.
    #[arg(long, global = true, value_delimiter = ',')]
    solver: Vec<String>,
    /// Comma-separated subset of DAB, DUB, IDEAL.
    #[arg(long, global = true, value_delimiter = ',')]
    mode: Vec<String>,
    /// Scenario profile used when no config file is given.
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Profile {
    /// B=2, Nt=4, K=2.
    Desk,
    /// B=4, Nt=16, K=6 (long-running).
    Full,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sum-rate traces of the distributed solvers.
    Convergence,
    /// Sweep transmit power, BS count or antenna count.
    Sweep {
        #[arg(long)]
        var: String,
        /// `start:step:stop` or a comma-separated list.
        #[arg(long)]
        values: String,
    },
    /// Radiation patterns of one drop in each mode.
    Beampattern {
        #[arg(long, default_value_t = 721)]
        angles: usize,
    },
    /// Backhaul overhead and complexity formulas.
    Overhead {
        #[arg(long = "K")]
        k: usize,
        #[arg(long = "B", default_value_t = 4)]
        b: usize,
        #[arg(long, default_value_t = 1)]
        iters: usize,
        #[arg(long = "Nt", default_value_t = 16)]
        nt: usize,
    },
    /// Run the oracle suites.
    Validate,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::Json(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
            Error::Io(io) => Failure::Usage(format!("cannot read {}: {io}", path.display())),
            other => other.into(),
        })?,
        None => ExperimentConfig::default(),
    };
    if common.config.is_none() {
        if let Profile::Full = common.profile {
            cfg.scenario = SystemConfig::full_scale();
        }
    }
    if let Some(seed) = common.seed {
        cfg.scenario.rng_seed = seed;
    }
    Ok(cfg)
}

fn build_spec(common: &Common, name: &str, solvers: &[Topology], modes: &[ModeTag]) -> Result<ExperimentSpec, Failure> {
    let config = load_config(common)?;
    let mut spec = ExperimentSpec::new(name, config, common.out.join(name));
    spec.solvers = if common.solver.is_empty() {
        solvers.to_vec()
    } else {
        common.solver.iter().map(|s| s.parse()).collect::<Result<_, _>>()?
    };
    spec.modes = if common.mode.is_empty() {
        modes.to_vec()
    } else {
        common.mode.iter().map(|s| s.parse()).collect::<Result<_, _>>()?
    };
    if let Some(t) = common.trials {
        spec.trials = t;
    }
    Ok(spec)
}

fn fmt_value(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_else(|| "-".into())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = &cli.common;
    match cli.command {
        Command::Convergence => {
            let spec = build_spec(common, "convergence", &[Topology::Ring, Topology::Star], &[ModeTag::Dab])?;
            spec.validate()?;
            let outcome = run_experiment(&spec)?;
            for &solver in &spec.solvers {
                for &mode in &spec.modes {
                    let rows: Vec<_> = outcome.rows.iter().filter(|r| r.solver == solver && r.mode == mode).collect();
                    let ok = rows.iter().filter(|r| r.error.is_none()).count();
                    let conv = rows.iter().filter(|r| r.converged).count();
                    let iters = rows.iter().map(|r| r.outer_iterations).max().unwrap_or(0);
                    let drop = rows.iter().map(|r| r.max_trace_drop).filter(|d| d.is_finite()).fold(0.0, f64::max);
                    println!(
                        "{solver} {mode}: converged {conv}/{} (max {iters} iterations), max trace drop {drop:.2e}, mean rate {:.4}, failures {}",
                        rows.len(),
                        mean_rate(&outcome.rows, solver, mode, None),
                        rows.len() - ok
                    );
                }
            }
            println!("wrote {}", spec.output_dir.display());
        }
        Command::Sweep { var, values } => {
            let mut spec = build_spec(common, "sweep", &[Topology::Central, Topology::Star, Topology::Ring], &ModeTag::ALL)?;
            let var: SweepVar = var.parse()?;
            spec.sweep = Some(Sweep {
                var,
                values: parse_values(&values)?,
            });
            spec.output_dir = common.out.join(format!("sweep_{}", var.to_string().to_lowercase()));
            spec.validate()?;
            let outcome = run_experiment(&spec)?;
            let values = spec.sweep.as_ref().map(|s| s.values.clone()).unwrap_or_default();
            println!("{var} solver mode mean_sum_rate");
            for v in values {
                for &solver in &spec.solvers {
                    for &mode in &spec.modes {
                        println!("{} {solver} {mode} {:.4}", fmt_value(Some(v)), mean_rate(&outcome.rows, solver, mode, Some(v)));
                    }
                }
            }
            println!("wrote {}", spec.output_dir.display());
        }
        Command::Beampattern { angles } => {
            let config = load_config(common)?;
            let solver: Topology = match common.solver.as_slice() {
                [] => Topology::Ring,
                [one] => one.parse()?,
                _ => return Err(Failure::Usage("beampattern takes a single --solver".into())),
            };
            let modes: Vec<ModeTag> = if common.mode.is_empty() {
                ModeTag::ALL.to_vec()
            } else {
                common.mode.iter().map(|s| s.parse()).collect::<Result<_, _>>()?
            };
            if angles < 2 {
                return Err(Failure::Usage("angles must be at least 2".into()));
            }
            let dir = common.out.join("beampattern");
            let studies = beam_patterns(&config, solver, &modes, angles)?;
            fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(e.to_string()))?;
            for s in &studies {
                let path = dir.join(format!("pattern_{}.csv", s.mode.to_string().to_lowercase()));
                let file = fs::File::create(&path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
                s.pattern.write_csv(file)?;
                println!("{} {}: sum rate {:.4}, sidelobe/mainlobe {:.4e}", solver, s.mode, s.sum_rate, s.sidelobe_ratio);
            }
            println!("wrote {}", dir.display());
        }
        Command::Overhead { k, b, iters, nt } => {
            if k == 0 || b == 0 {
                return Err(Failure::Usage("K and B must be positive".into()));
            }
            let star = overhead_star(b, k, iters);
            println!("ring {}", overhead_ring(k, iters));
            println!("star {} (download {}, upload {})", star.total, star.download, star.upload);
            println!("central {}", overhead_central(b, nt, k));
            for t in [Topology::Ring, Topology::Star, Topology::Central] {
                println!("complexity {t} {:.6e}", complexity_estimate(nt, k, b, iters, t));
            }
        }
        Command::Validate => {
            let reports = run_all(common.seed.unwrap_or(1))?;
            for r in &reports {
                println!("{}", r.line());
            }
            if reports.iter().any(|r| !r.passed) {
                return Err(Failure::Runtime("oracle suite failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
