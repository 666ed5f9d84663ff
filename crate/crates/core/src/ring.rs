//! Ring topology: a single token carrying the global `(Q, p)` pair visits the
//! BSs in ascending order. Each BS removes its own cached contribution,
//! re-optimizes its beamformer against the rest, adds the new contribution
//! back and refreshes the FP auxiliaries before passing the token on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp::{bs_contribution, update_mu, update_zeta, FpState, MetricsInputs};
use crate::linalg::{rel_frob, CMat, CVec};
use crate::local::{LocalContext, LocalProblem, LocalSolverState};
use crate::pa::PaModel;
use crate::solution::{backoff, guarded_step, relative_change, DesignProblem, SolutionReport, SolverOptions, VisitRecord};

/// The message passed around the ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingGlobalState {
    /// `Q(k, j) = Σ_l h_{l,k}ᴴ G_l w_{l,j}`.
    pub q: CMat,
    /// `p(k) = Σ_l h_{l,k}ᴴ C_{d,l} h_{l,k}`.
    pub p: CVec,
}

impl RingGlobalState {
    pub fn zeros(k: usize) -> Self {
        Self {
            q: CMat::zeros(k, k),
            p: CVec::zeros(k),
        }
    }

    /// From-scratch sum over all BSs.
    pub fn recompute(h: &[CMat], w: &[CMat], pa: &PaModel) -> Result<Self> {
        let k = h.first().map(|m| m.ncols()).unwrap_or(0);
        let mut state = Self::zeros(k);
        for (hb, wb) in h.iter().zip(w) {
            let (q, p) = bs_contribution(hb, wb, pa)?;
            state.q += q;
            state.p += p;
        }
        Ok(state)
    }

    /// Number of complex values in one message.
    pub fn message_size(&self) -> usize {
        self.q.len() + self.p.len()
    }

    pub fn inputs(&self, sigma2: nalgebra::DVector<f64>) -> Result<MetricsInputs> {
        MetricsInputs::from_complex(self.q.clone(), &self.p, sigma2)
    }

    /// Relative deviation of `(Q, p)` from `other`.
    pub fn deviation(&self, other: &Self) -> f64 {
        let pa = CMat::from_column_slice(self.p.len(), 1, self.p.as_slice());
        let pb = CMat::from_column_slice(other.p.len(), 1, other.p.as_slice());
        rel_frob(&self.q, &other.q).max(rel_frob(&pa, &pb))
    }
}

/// A BS's own contribution, kept locally between visits.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionCache {
    pub q: CMat,
    pub p: CVec,
}

/// What a BS sees while holding the token.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalView {
    pub q_hat: CMat,
    pub p_hat: CVec,
    pub cached_q: CMat,
    pub cached_p: CVec,
}

pub fn extract_local(global: &RingGlobalState, cache: &ContributionCache) -> LocalView {
    LocalView {
        q_hat: &global.q - &cache.q,
        p_hat: &global.p - &cache.p,
        cached_q: cache.q.clone(),
        cached_p: cache.p.clone(),
    }
}

/// Add the new contribution of `w_new` back onto the view.
pub fn write_back(view: &LocalView, h: &CMat, w_new: &CMat, pa: &PaModel) -> Result<(RingGlobalState, ContributionCache)> {
    let (q, p) = bs_contribution(h, w_new, pa)?;
    let global = RingGlobalState {
        q: &view.q_hat + &q,
        p: &view.p_hat + &p,
    };
    Ok((global, ContributionCache { q, p }))
}

/// Algorithm state between visits; exposed so that callers can step the
/// ring one visit at a time.
#[derive(Debug, Clone)]
pub struct RingRun {
    pub problem: DesignProblem,
    pub options: SolverOptions,
    pub global: RingGlobalState,
    pub caches: Vec<ContributionCache>,
    pub states: Vec<LocalSolverState>,
    pub beamformers: Vec<CMat>,
    pub fp: FpState,
    pub visits: usize,
    pub exchanged: u64,
}

impl RingRun {
    pub fn new(problem: DesignProblem, options: SolverOptions) -> Result<Self> {
        options.validate()?;
        let beamformers = problem.initial_beamformers()?;
        Self::with_beamformers(problem, options, beamformers)
    }

    pub fn with_beamformers(problem: DesignProblem, options: SolverOptions, beamformers: Vec<CMat>) -> Result<Self> {
        options.validate()?;
        if beamformers.len() != problem.num_bs() {
            return Err(Error::Dimension("one beamformer per BS is required".into()));
        }
        let mut caches = Vec::with_capacity(problem.num_bs());
        for (h, w) in problem.channels.iter().zip(&beamformers) {
            let (q, p) = bs_contribution(h, w, &problem.pa)?;
            caches.push(ContributionCache { q, p });
        }
        let global = RingGlobalState::recompute(&problem.channels, &beamformers, &problem.pa)?;
        let fp = FpState::optimal(&global.inputs(problem.unit_noise())?);
        let states = beamformers
            .iter()
            .map(|w| LocalSolverState::from_beamformer(w, options.schedule.initial))
            .collect();
        Ok(Self {
            problem,
            options,
            global,
            caches,
            states,
            beamformers,
            fp,
            visits: 0,
            exchanged: 0,
        })
    }

    pub fn sum_rate(&self) -> Result<f64> {
        Ok(crate::fp::sum_rate(&self.global.inputs(self.problem.unit_noise())?))
    }

    /// One token visit at BS `b`.
    pub fn visit(&mut self, b: usize) -> Result<VisitRecord> {
        let pa = self.problem.pa;
        let h = &self.problem.channels[b];
        let view = extract_local(&self.global, &self.caches[b]);
        let ctx = LocalContext::Ring {
            q_hat: view.q_hat.clone(),
        };
        let local = LocalProblem::new(h, &self.fp, &ctx, &pa, self.problem.power_budget, self.options.schedule)?;
        let state = &mut self.states[b];
        let mut last = None;
        for _ in 0..self.options.inner_sweeps {
            last = Some(local.sweep(state).map_err(|e| tag(e, self.visits))?);
        }
        let record = last.expect("at least one sweep");
        let candidate = state.beamformer();
        let (accepted, step) = if self.options.monotone_guard {
            guarded_step(&local, &self.beamformers[b], &candidate, self.options.backtrack_steps)
        } else {
            (candidate, 1.0)
        };
        let accepted = backoff(&local, accepted, state, &self.options);
        let (global, cache) = write_back(&view, h, &accepted, &pa)?;
        self.global = global;
        self.caches[b] = cache;
        self.beamformers[b] = accepted;

        let inputs = self.global.inputs(self.problem.unit_noise())?;
        let mu = update_mu(&inputs);
        let zeta = update_zeta(&inputs, &mu);
        self.fp = FpState { mu, zeta };
        let rate = crate::fp::sum_rate(&inputs);
        if !rate.is_finite() {
            return Err(Error::NonFinite {
                stage: "ring sum rate".into(),
                iter: self.visits,
            });
        }
        self.visits += 1;
        self.exchanged += self.global.message_size() as u64;
        Ok(VisitRecord {
            visit: self.visits,
            bs: b,
            surrogate_objective: record.objective,
            sum_rate: rate,
            penalty_residual: record.penalty_residual,
            step,
            exchanged_complex_values_cum: self.exchanged,
        })
    }

    /// From-scratch `(Q, p)` deviation of the token state.
    pub fn consistency_error(&self) -> Result<f64> {
        let fresh = RingGlobalState::recompute(&self.problem.channels, &self.beamformers, &self.problem.pa)?;
        Ok(self.global.deviation(&fresh))
    }
}

fn tag(err: Error, visit: usize) -> Error {
    match err {
        Error::NonFinite { stage, .. } => Error::NonFinite { stage, iter: visit },
        other => other,
    }
}

/// Run the ring algorithm from scaled matched-filter beamformers.
pub fn run_ring(problem: DesignProblem, options: SolverOptions) -> Result<SolutionReport> {
    let mut run = RingRun::new(problem, options)?;
    let mut report = SolutionReport::new("ring", run.beamformers.clone(), run.sum_rate()?);
    let nb = run.problem.num_bs();
    let mut worst_consistency: f64 = 0.0;
    for _ in 0..options.max_outer {
        for b in 0..nb {
            let rec = run.visit(b)?;
            report.visits.push(rec);
            if options.check_consistency {
                worst_consistency = worst_consistency.max(run.consistency_error()?);
            }
        }
        let rate = run.sum_rate()?;
        let prev = *report.trace.last().expect("trace starts non-empty");
        report.trace.push(rate);
        report.outer_iterations += 1;
        if relative_change(prev, rate) < options.tol {
            report.converged = true;
            break;
        }
    }
    report.sum_rate = *report.trace.last().expect("non-empty");
    report.beamformers = run.beamformers.clone();
    report.local_iterations = run.visits;
    report.exchanged.upload = run.exchanged;
    if options.check_consistency {
        report.consistency_error = Some(worst_consistency);
    }
    Ok(report)
}
