//! Centralized baseline: global μ/ζ refresh followed by a cycle of per-BS
//! penalty-MM blocks, each seeing the exact current aggregate of the other
//! BSs. Also hosts the design/evaluation PA pairing of the DAB, DUB and
//! IDEAL modes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp::{bs_contribution, fixed_point_residual, FpState};
use crate::linalg::{cr, CMat};
use crate::local::{LocalContext, LocalProblem, LocalSolverState};
use crate::pa::PaModel;
use crate::solution::{backoff, guarded_step, minimize_scale, relative_change, DesignProblem, SolutionReport, SolverOptions, VisitRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModeTag {
    /// Distortion-aware design with the true PA.
    Dab,
    /// Designed for an ideal PA, evaluated with the true PA.
    Dub,
    /// Ideal PA throughout.
    Ideal,
}

impl ModeTag {
    pub const ALL: [ModeTag; 3] = [ModeTag::Dab, ModeTag::Dub, ModeTag::Ideal];
}

impl fmt::Display for ModeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeTag::Dab => "DAB",
            ModeTag::Dub => "DUB",
            ModeTag::Ideal => "IDEAL",
        })
    }
}

impl FromStr for ModeTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DAB" => Ok(ModeTag::Dab),
            "DUB" => Ok(ModeTag::Dub),
            "IDEAL" => Ok(ModeTag::Ideal),
            other => Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

/// Design-time and evaluation-time PA for one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveMode {
    pub tag: ModeTag,
    pub design_pa: PaModel,
    pub eval_pa: PaModel,
}

impl SolveMode {
    pub fn new(tag: ModeTag, true_pa: PaModel) -> Self {
        let (design_pa, eval_pa) = match tag {
            ModeTag::Dab => (true_pa, true_pa),
            ModeTag::Dub => (true_pa.linearized(), true_pa),
            ModeTag::Ideal => (true_pa.linearized(), true_pa.linearized()),
        };
        Self {
            tag,
            design_pa,
            eval_pa,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CentralOptions {
    /// Penalty-MM sweeps per block.
    pub block_sweeps: usize,
    /// Refresh μ/ζ after every block instead of once per outer iteration.
    pub refresh_per_block: bool,
    /// Restart each block from `R = wwᴴ` and the initial penalty.
    pub reset_per_block: bool,
}

impl Default for CentralOptions {
    fn default() -> Self {
        Self {
            block_sweeps: 5,
            refresh_per_block: true,
            reset_per_block: true,
        }
    }
}

impl CentralOptions {
    /// One sweep per block without restarts: with a single BS this is
    /// step for step the ring algorithm.
    pub fn ring_equivalent(inner_sweeps: usize) -> Self {
        Self {
            block_sweeps: inner_sweeps,
            refresh_per_block: true,
            reset_per_block: false,
        }
    }
}

/// Run the centralized block-coordinate design on `problem` (whose PA is the
/// design PA).
pub fn run_central(problem: DesignProblem, options: SolverOptions, central: CentralOptions) -> Result<SolutionReport> {
    options.validate()?;
    if central.block_sweeps == 0 {
        return Err(Error::InvalidConfig("block_sweeps must be at least 1".into()));
    }
    let pa = problem.pa;
    let nb = problem.num_bs();
    let mut beamformers = problem.initial_beamformers()?;
    let mut states: Vec<LocalSolverState> = beamformers
        .iter()
        .map(|w| LocalSolverState::from_beamformer(w, options.schedule.initial))
        .collect();
    let mut report = SolutionReport::new("central", beamformers.clone(), problem.sum_rate(&beamformers)?);
    let mut contributions = Vec::with_capacity(nb);
    for (h, w) in problem.channels.iter().zip(&beamformers) {
        contributions.push(bs_contribution(h, w, &pa)?.0);
    }
    let sweeps = central.block_sweeps;
    let mut fp = FpState::optimal(&problem.inputs(&beamformers)?);
    let mut pass_start = fp.clone();
    for iter in 0..options.max_outer {
        pass_start = fp.clone();
        if !central.refresh_per_block {
            fp = FpState::optimal(&problem.inputs(&beamformers)?);
        }
        for b in 0..nb {
            let mut q_hat = CMat::zeros(problem.num_ues(), problem.num_ues());
            for (l, q) in contributions.iter().enumerate() {
                if l != b {
                    q_hat += q;
                }
            }
            let ctx = LocalContext::Ring { q_hat };
            let local = LocalProblem::new(&problem.channels[b], &fp, &ctx, &pa, problem.power_budget, options.schedule)?;
            let st = &mut states[b];
            if central.reset_per_block {
                *st = LocalSolverState::from_beamformer(&beamformers[b], options.schedule.initial);
            }
            let mut last = None;
            for _ in 0..sweeps {
                last = Some(local.sweep(st).map_err(|e| match e {
                    Error::NonFinite { stage, .. } => Error::NonFinite { stage, iter },
                    other => other,
                })?);
            }
            let record = last.expect("at least one sweep");
            let candidate = st.beamformer();
            let (accepted, step) = if options.monotone_guard {
                guarded_step(&local, &beamformers[b], &candidate, options.backtrack_steps)
            } else {
                (candidate, 1.0)
            };
            let accepted = backoff(&local, accepted, st, &options);
            contributions[b] = bs_contribution(&problem.channels[b], &accepted, &pa)?.0;
            beamformers[b] = accepted;
            if central.refresh_per_block {
                fp = FpState::optimal(&problem.inputs(&beamformers)?);
            }
            report.local_iterations += 1;
            report.visits.push(VisitRecord {
                visit: report.local_iterations,
                bs: b,
                surrogate_objective: record.objective,
                sum_rate: problem.sum_rate(&beamformers)?,
                penalty_residual: record.penalty_residual,
                step,
                exchanged_complex_values_cum: 0,
            });
        }
        if options.power_backoff {
            let scaled = |c: f64| -> Vec<CMat> { beamformers.iter().map(|w| w * cr(c)).collect() };
            let (c, _) = minimize_scale(|c| problem.sum_rate(&scaled(c)).map(|r| -r).unwrap_or(f64::INFINITY));
            if c < 1.0 {
                beamformers = scaled(c);
                for b in 0..nb {
                    contributions[b] = bs_contribution(&problem.channels[b], &beamformers[b], &pa)?.0;
                    states[b] = LocalSolverState::from_beamformer(&beamformers[b], states[b].rho);
                }
                fp = FpState::optimal(&problem.inputs(&beamformers)?);
            }
        }
        let rate = problem.sum_rate(&beamformers)?;
        if !rate.is_finite() {
            return Err(Error::NonFinite {
                stage: "central sum rate".into(),
                iter,
            });
        }
        let prev = *report.trace.last().expect("trace starts non-empty");
        report.trace.push(rate);
        report.outer_iterations += 1;
        if relative_change(prev, rate) < options.tol {
            report.converged = true;
            break;
        }
    }
    report.sum_rate = *report.trace.last().expect("non-empty");
    report.fp_residual = Some(fixed_point_residual(&problem.inputs(&beamformers)?, &pass_start));
    report.beamformers = beamformers;
    Ok(report)
}
