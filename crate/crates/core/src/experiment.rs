//! Experiment driver: runs every (sweep value, trial, solver, mode)
//! combination of an [`ExperimentSpec`] on a worker pool and writes plot-ready
//! CSVs plus a JSON manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::central::{run_central, CentralOptions, ModeTag, SolveMode};
use crate::error::{Error, Result};
use crate::metrics::{angle_grid, evaluate, radiated_power, sidelobe_ratio, BeamPattern, Topology};
use crate::pa::PaModel;
use crate::ring::run_ring;
use crate::scenario::{dbm_to_watt, Scenario, SystemConfig};
use crate::solution::{DesignProblem, SolutionReport, SolverOptions};
use crate::star::{run_star, StarOptions};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "CELLFREE_DAB_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVar {
    /// Per-BS power budget in dBm.
    Pt,
    /// Number of BSs.
    Bs,
    /// Antennas per BS.
    Nt,
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepVar::Pt => "pt_dbm",
            SweepVar::Bs => "num_bs",
            SweepVar::Nt => "num_antennas",
        })
    }
}

impl FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pt" | "pt_dbm" => Ok(SweepVar::Pt),
            "bs" | "b" | "num_bs" => Ok(SweepVar::Bs),
            "nt" | "num_antennas" => Ok(SweepVar::Nt),
            other => Err(Error::InvalidConfig(format!("unknown sweep variable '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub var: SweepVar,
    pub values: Vec<f64>,
}

impl Sweep {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidConfig("sweep needs at least one value".into()));
        }
        if self.values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("sweep values must be strictly increasing".into()));
        }
        if self.var != SweepVar::Pt && self.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
            return Err(Error::InvalidConfig(format!("{} values must be positive integers", self.var)));
        }
        Ok(())
    }

    /// `config` with the swept variable set to `value`.
    pub fn apply(&self, config: &SystemConfig, value: f64) -> SystemConfig {
        let mut cfg = config.clone();
        match self.var {
            SweepVar::Pt => cfg.power_budget = dbm_to_watt(value),
            SweepVar::Bs => {
                cfg.num_bs = value as usize;
                cfg.bs_positions = None;
            }
            SweepVar::Nt => cfg.num_antennas = value as usize,
        }
        cfg
    }
}

/// Parse `a:step:b` (inclusive) or a comma-separated list.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("cannot parse values '{text}'"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [a, step, b] => {
            let (a, step, b) = (num(a)?, num(step)?, num(b)?);
            if !(step > 0.0) || b < a || !a.is_finite() || !b.is_finite() {
                return Err(bad());
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| a + step * i as f64).collect())
        }
        [_] => text.split(',').map(num).collect(),
        _ => Err(bad()),
    }
}

/// Scenario and solver settings; every field has a default, so partial
/// JSON files are accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: SystemConfig,
    pub solver: SolverOptions,
    pub star: StarOptions,
    pub central: CentralOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: SystemConfig::desk(),
            solver: SolverOptions::default(),
            star: StarOptions::default(),
            central: CentralOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.scenario.validate()?;
        cfg.solver.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub config: ExperimentConfig,
    pub solvers: Vec<Topology>,
    pub modes: Vec<ModeTag>,
    pub sweep: Option<Sweep>,
    pub trials: usize,
    /// Trial `t` uses seed `base_seed + t`.
    pub base_seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn new(name: &str, config: ExperimentConfig, output_dir: impl Into<PathBuf>) -> Self {
        let base_seed = config.scenario.rng_seed;
        Self {
            name: name.to_string(),
            config,
            solvers: vec![Topology::Central, Topology::Star, Topology::Ring],
            modes: ModeTag::ALL.to_vec(),
            sweep: None,
            trials: 20,
            base_seed,
            output_dir: output_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.solvers.is_empty() || self.modes.is_empty() {
            return Err(Error::InvalidConfig("at least one solver and one mode are required".into()));
        }
        if let Some(sweep) = &self.sweep {
            sweep.validate()?;
        }
        self.config.scenario.validate()?;
        self.config.solver.validate()
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.trials as u64).map(|t| self.base_seed.wrapping_add(t)).collect()
    }

    /// SHA-256 of the spec without its output directory.
    pub fn config_hash(&self) -> Result<String> {
        let mut spec = self.clone();
        spec.output_dir = PathBuf::new();
        let digest = Sha256::digest(serde_json::to_vec(&spec)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// `(sweep value, config)` pairs; a single `None` without a sweep.
    fn points(&self) -> Vec<(Option<f64>, SystemConfig)> {
        match &self.sweep {
            Some(s) => s.values.iter().map(|&v| (Some(v), s.apply(&self.config.scenario, v))).collect(),
            None => vec![(None, self.config.scenario.clone())],
        }
    }
}

/// One `results.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub sweep_var: String,
    pub sweep_value: Option<f64>,
    pub solver: Topology,
    pub mode: ModeTag,
    pub trial: usize,
    pub seed: u64,
    /// Sum rate under the evaluation PA, bit/s/Hz.
    pub sum_rate: f64,
    /// Sum rate under the design PA.
    pub design_rate: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    pub max_trace_drop: f64,
    pub exchanged_total: u64,
    pub consensus_residual: Option<f64>,
    pub distortion_power: f64,
    pub interference_power: f64,
    pub max_tx_power: f64,
    pub error: Option<String>,
}

/// One `traces.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub sweep_value: Option<f64>,
    pub solver: Topology,
    pub mode: ModeTag,
    pub trial: usize,
    pub iteration: usize,
    pub sum_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub files: Vec<String>,
    pub rows: usize,
    pub failures: usize,
    pub threads: usize,
    pub created_unix: u64,
    pub spec: ExperimentSpec,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<TrialRow>,
    pub traces: Vec<TraceRow>,
    pub manifest: Manifest,
}

/// Worker count: rayon's default, capped by [`THREADS_ENV`] when set.
pub fn worker_count() -> usize {
    let default = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n >= 1 => n.min(default),
        _ => default,
    }
}

/// Run one solver on `problem`.
pub fn solve(solver: Topology, problem: DesignProblem, config: &ExperimentConfig) -> Result<SolutionReport> {
    match solver {
        Topology::Ring => run_ring(problem, config.solver),
        Topology::Star => run_star(problem, config.solver, config.star),
        Topology::Central => run_central(problem, config.solver, config.central),
    }
}

struct Job {
    sweep_value: Option<f64>,
    scenario: SystemConfig,
    trial: usize,
    seed: u64,
}

fn run_job(job: &Job, spec: &ExperimentSpec, true_pa: PaModel) -> (Vec<TrialRow>, Vec<TraceRow>) {
    let sweep_var = spec.sweep.as_ref().map(|s| s.var.to_string()).unwrap_or_default();
    let cfg = job.scenario.clone().with_seed(job.seed);
    let scenario = Scenario::generate(&cfg);
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for &solver in &spec.solvers {
        for &tag in &spec.modes {
            let mode = SolveMode::new(tag, true_pa);
            let mut row = TrialRow {
                sweep_var: sweep_var.clone(),
                sweep_value: job.sweep_value,
                solver,
                mode: tag,
                trial: job.trial,
                seed: job.seed,
                sum_rate: f64::NAN,
                design_rate: f64::NAN,
                outer_iterations: 0,
                converged: false,
                max_trace_drop: f64::NAN,
                exchanged_total: 0,
                consensus_residual: None,
                distortion_power: f64::NAN,
                interference_power: f64::NAN,
                max_tx_power: f64::NAN,
                error: None,
            };
            let result = scenario.as_ref().map_err(|e| Error::InvalidConfig(e.to_string())).and_then(|sc| {
                let h = &sc.channels.h;
                let problem = DesignProblem::new(h, &cfg.noise_power, cfg.power_budget, mode.design_pa)?;
                let report = solve(solver, problem, &spec.config)?;
                let eval = evaluate(h, &report.beamformers, &mode.eval_pa, &cfg.noise_power)?;
                Ok((report, eval))
            });
            match result {
                Ok((report, eval)) => {
                    row.sum_rate = eval.sum_rate;
                    row.design_rate = report.sum_rate;
                    row.outer_iterations = report.outer_iterations;
                    row.converged = report.converged;
                    row.max_trace_drop = report.max_trace_drop();
                    row.exchanged_total = report.exchanged.total();
                    row.consensus_residual = report.final_consensus_residual;
                    row.distortion_power = eval.distortion_power.iter().sum();
                    row.interference_power = eval.interference_power.iter().sum();
                    row.max_tx_power = eval.per_bs_tx_power.iter().cloned().fold(0.0, f64::max);
                    traces.extend(report.trace.iter().enumerate().map(|(i, &r)| TraceRow {
                        sweep_value: job.sweep_value,
                        solver,
                        mode: tag,
                        trial: job.trial,
                        iteration: i,
                        sum_rate: r,
                    }));
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            rows.push(row);
        }
    }
    (rows, traces)
}

/// Run all trials without touching the file system.
pub fn collect(spec: &ExperimentSpec) -> Result<(Vec<TrialRow>, Vec<TraceRow>)> {
    spec.validate()?;
    let true_pa = PaModel::reference();
    let seeds = spec.seeds();
    let jobs: Vec<Job> = spec
        .points()
        .into_iter()
        .flat_map(|(v, cfg)| {
            seeds.iter().enumerate().map(move |(t, &seed)| Job {
                sweep_value: v,
                scenario: cfg.clone(),
                trial: t,
                seed,
            })
        })
        .collect();
    for (_, cfg) in spec.points() {
        cfg.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<(Vec<TrialRow>, Vec<TraceRow>)> = pool.install(|| jobs.par_iter().map(|j| run_job(j, spec, true_pa)).collect());
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (r, t) in results {
        rows.extend(r);
        traces.extend(t);
    }
    Ok((rows, traces))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Run the experiment and write `results.csv`, `traces.csv` and
/// `manifest.json` into the output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let (rows, traces) = collect(spec)?;
    fs::create_dir_all(&spec.output_dir)?;
    write_csv(&spec.output_dir.join("results.csv"), &rows)?;
    write_csv(&spec.output_dir.join("traces.csv"), &traces)?;
    let manifest = Manifest {
        name: spec.name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: spec.config_hash()?,
        seeds: spec.seeds(),
        files: vec!["results.csv".into(), "traces.csv".into()],
        rows: rows.len(),
        failures: rows.iter().filter(|r| r.error.is_some()).count(),
        threads: worker_count(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        spec: spec.clone(),
    };
    fs::write(spec.output_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(ExperimentOutcome { rows, traces, manifest })
}

/// Mean of `sum_rate` over successful rows matching `solver`, `mode` and
/// `sweep_value`.
pub fn mean_rate(rows: &[TrialRow], solver: Topology, mode: ModeTag, sweep_value: Option<f64>) -> f64 {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.solver == solver && r.mode == mode && r.sweep_value == sweep_value && r.error.is_none())
        .map(|r| r.sum_rate)
        .collect();
    if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Radiation patterns of one solver's designs in every mode on one drop.
#[derive(Debug, Clone)]
pub struct PatternStudy {
    pub mode: ModeTag,
    pub pattern: BeamPattern,
    /// Mean over BSs of the sidelobe-to-mainlobe power ratio, with the
    /// line-of-sight UE directions as mainlobe targets.
    pub sidelobe_ratio: f64,
    pub sum_rate: f64,
}

pub fn beam_patterns(config: &ExperimentConfig, solver: Topology, modes: &[ModeTag], angles: usize) -> Result<Vec<PatternStudy>> {
    let cfg = &config.scenario;
    let sc = Scenario::generate(cfg)?;
    let h = &sc.channels.h;
    let grid = angle_grid(angles);
    let true_pa = PaModel::reference();
    let mut out = Vec::with_capacity(modes.len());
    for &tag in modes {
        let mode = SolveMode::new(tag, true_pa);
        let problem = DesignProblem::new(h, &cfg.noise_power, cfg.power_budget, mode.design_pa)?;
        let report = solve(solver, problem, config)?;
        let eval = evaluate(h, &report.beamformers, &mode.eval_pa, &cfg.noise_power)?;
        let pattern = BeamPattern::compute(&report.beamformers, &mode.eval_pa, &grid, cfg.carrier_freq, cfg.antenna_spacing);
        let ratios: Vec<f64> = report
            .beamformers
            .iter()
            .enumerate()
            .map(|(b, w)| {
                let power = radiated_power(w, &mode.eval_pa, &grid, cfg.carrier_freq, cfg.antenna_spacing);
                let targets: Vec<f64> = sc.geometry.path_angles[b].iter().map(|paths| paths[0]).collect();
                sidelobe_ratio(&power, &grid, &targets, cfg.num_antennas)
            })
            .collect();
        out.push(PatternStudy {
            mode: tag,
            pattern,
            sidelobe_ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
            sum_rate: eval.sum_rate,
        });
    }
    Ok(out)
}
