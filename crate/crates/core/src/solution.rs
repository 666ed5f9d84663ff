//! Pieces shared by the ring, star and centralized solvers.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp::{sum_rate, MetricsInputs};
use crate::linalg::{cr, vec_of, CMat};
use crate::local::{matched_filter, LocalProblem, LocalSolverState, RhoSchedule};
use crate::pa::PaModel;

/// Channels scaled per UE by `1/σ_k`, so every solver works with unit noise
/// power. Beamformers are unaffected by the scaling.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub channels: Vec<CMat>,
    pub pa: PaModel,
    pub power_budget: f64,
}

impl DesignProblem {
    pub fn new(channels: &[CMat], sigma2: &[f64], power_budget: f64, pa: PaModel) -> Result<Self> {
        let Some(first) = channels.first() else {
            return Err(Error::InvalidConfig("at least one BS is required".into()));
        };
        let (nt, k) = first.shape();
        if channels.iter().any(|h| h.shape() != (nt, k)) {
            return Err(Error::Dimension("all channel matrices must share one shape".into()));
        }
        if sigma2.len() != k || sigma2.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidConfig(format!("need {k} positive noise powers")));
        }
        if !(power_budget > 0.0) {
            return Err(Error::InvalidConfig("power budget must be positive".into()));
        }
        let scaled = channels
            .iter()
            .map(|h| {
                let mut h = h.clone();
                for (j, mut col) in h.column_iter_mut().enumerate() {
                    col /= cr(sigma2[j].sqrt());
                }
                h
            })
            .collect();
        Ok(Self {
            channels: scaled,
            pa,
            power_budget,
        })
    }

    pub fn num_bs(&self) -> usize {
        self.channels.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.channels[0].nrows()
    }

    pub fn num_ues(&self) -> usize {
        self.channels[0].ncols()
    }

    pub fn inputs(&self, w: &[CMat]) -> Result<MetricsInputs> {
        MetricsInputs::from_beamformers(&self.channels, w, &self.pa, &vec![1.0; self.num_ues()])
    }

    pub fn sum_rate(&self, w: &[CMat]) -> Result<f64> {
        Ok(sum_rate(&self.inputs(w)?))
    }

    pub fn matched_filter(&self) -> Vec<CMat> {
        self.channels.iter().map(|h| matched_filter(h, self.power_budget)).collect()
    }

    /// Full-power matched filters, jointly scaled to the best sum rate.
    pub fn initial_beamformers(&self) -> Result<Vec<CMat>> {
        let mrt = self.matched_filter();
        let scaled = |c: f64| -> Vec<CMat> { mrt.iter().map(|w| w * cr(c)).collect() };
        let (c, _) = minimize_scale(|c| self.sum_rate(&scaled(c)).map(|r| -r).unwrap_or(f64::INFINITY));
        Ok(scaled(c))
    }

    pub fn unit_noise(&self) -> DVector<f64> {
        DVector::from_element(self.num_ues(), 1.0)
    }
}

/// Options common to all three solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Ring passes, star iterations or centralized outer iterations.
    pub max_outer: usize,
    /// Relative sum-rate change that counts as converged.
    pub tol: f64,
    /// Penalty-MM sweeps per BS visit.
    pub inner_sweeps: usize,
    pub schedule: RhoSchedule,
    /// Only accept a local update (possibly shortened) if it does not lower
    /// the true local FP objective.
    pub monotone_guard: bool,
    pub backtrack_steps: usize,
    /// After each local update, also try `c·W_b` for `c ∈ (0, 1]`.
    pub power_backoff: bool,
    /// Recompute (Q, p) from scratch after every ring visit.
    pub check_consistency: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer: 30,
            tol: 1e-4,
            inner_sweeps: 1,
            schedule: RhoSchedule::default(),
            monotone_guard: true,
            backtrack_steps: 30,
            power_backoff: true,
            check_consistency: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer == 0 || self.inner_sweeps == 0 {
            return Err(Error::InvalidConfig("max_outer and inner_sweeps must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig("tolerance must be non-negative".into()));
        }
        let s = &self.schedule;
        if !(s.initial > 0.0 && s.growth >= 1.0 && s.max >= s.initial) {
            return Err(Error::InvalidConfig("invalid penalty schedule".into()));
        }
        Ok(())
    }
}

/// Relative change used by every convergence test.
pub fn relative_change(prev: f64, next: f64) -> f64 {
    (next - prev).abs() / prev.abs().max(1e-12)
}

/// Pick `W_old + τ(W_new − W_old)` with the largest `τ ∈ {1, ½, ¼, …}` whose
/// true local objective is not worse than at `W_old`; `τ = 0` if none is.
/// The power budget holds for every τ because it is convex.
pub fn guarded_step(problem: &LocalProblem, w_old: &CMat, w_new: &CMat, steps: usize) -> (CMat, f64) {
    let base = problem.true_objective(&vec_of(w_old));
    let mut tau = 1.0;
    for _ in 0..=steps {
        let cand = w_old + (w_new - w_old) * cr(tau);
        if problem.true_objective(&vec_of(&cand)) <= base {
            return (cand, tau);
        }
        tau *= 0.5;
    }
    (w_old.clone(), 0.0)
}

const BACKOFF_GRID: usize = 24;
const BACKOFF_REFINE: usize = 40;

/// Best scaling `c·w` with `c ∈ (0, 1]` of the true local objective: a
/// log-spaced grid down to `1e-3` followed by golden-section refinement
/// around the best grid point. Returns `w` unchanged unless some `c`
/// strictly improves on it.
/// Minimize `f(c)` over `c ∈ [1e-3, 1]`: log grid, then golden section in
/// the bracket around the best grid point. Returns `(1, f(1))` unless some
/// `c < 1` is strictly better.
pub fn minimize_scale(f: impl Fn(f64) -> f64) -> (f64, f64) {
    let grid: Vec<f64> = (0..BACKOFF_GRID).map(|i| 10f64.powf(-3.0 * i as f64 / (BACKOFF_GRID - 1) as f64)).collect();
    let vals: Vec<f64> = grid.iter().map(|&c| f(c)).collect();
    let base = vals[0];
    let mut best_i = 0;
    for i in 1..BACKOFF_GRID {
        if vals[i] < vals[best_i] {
            best_i = i;
        }
    }
    let mut lo = grid[(best_i + 1).min(BACKOFF_GRID - 1)];
    let mut hi = grid[best_i.saturating_sub(1)];
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..BACKOFF_REFINE {
        if fa < fb {
            lo = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            hi = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    let (mut c, mut v) = if fa < fb { (a, fa) } else { (b, fb) };
    if vals[best_i] <= v {
        c = grid[best_i];
        v = vals[best_i];
    }
    if v < base && c < 1.0 {
        (c, v)
    } else {
        (1.0, base)
    }
}

/// Scale `w` down if that lowers the true local objective.
pub fn power_backoff(problem: &LocalProblem, w: &CMat) -> (CMat, f64) {
    let (c, _) = minimize_scale(|c| problem.true_objective(&vec_of(&(w * cr(c)))));
    if c < 1.0 {
        (w * cr(c), c)
    } else {
        (w.clone(), 1.0)
    }
}

/// Apply [`power_backoff`] if enabled and hand the result to the local
/// state, which restarts from `R = wwᴴ` when the scale changed.
pub fn backoff(problem: &LocalProblem, w: CMat, state: &mut LocalSolverState, options: &SolverOptions) -> CMat {
    let (w, c) = if options.power_backoff {
        power_backoff(problem, &w)
    } else {
        (w, 1.0)
    };
    if c < 1.0 {
        *state = LocalSolverState::from_beamformer(&w, state.rho);
    } else {
        state.set_beamformer(&w);
    }
    w
}

/// Per-visit trace row (ring and centralized solvers).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub visit: usize,
    pub bs: usize,
    pub surrogate_objective: f64,
    pub sum_rate: f64,
    pub penalty_residual: f64,
    pub step: f64,
    pub exchanged_complex_values_cum: u64,
}

/// Per-iteration trace row of the star solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarRecord {
    pub iter: usize,
    pub sum_rate: f64,
    pub consensus_residual: f64,
    pub download_cum: u64,
    pub upload_cum: u64,
}

/// Backhaul values exchanged, counted in complex numbers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeCounter {
    pub download: u64,
    pub upload: u64,
}

impl ExchangeCounter {
    pub fn total(&self) -> u64 {
        self.download + self.upload
    }
}

/// Result of one solver run.
#[derive(Debug, Clone, Serialize)]
pub struct SolutionReport {
    pub solver: String,
    pub beamformers: Vec<CMat>,
    /// Sum rate under the design PA, bit/s/Hz.
    pub sum_rate: f64,
    /// Sum rate before the first iteration and after each outer iteration.
    pub trace: Vec<f64>,
    pub visits: Vec<VisitRecord>,
    pub star: Vec<StarRecord>,
    pub outer_iterations: usize,
    /// Local solves performed (ring visits, star local solves, central blocks).
    pub local_iterations: usize,
    pub converged: bool,
    pub exchanged: ExchangeCounter,
    /// Worst relative (Q, p) deviation from a from-scratch recomputation.
    pub consistency_error: Option<f64>,
    pub final_consensus_residual: Option<f64>,
    /// Fixed-point residual of the last auxiliaries against the final beamformers.
    pub fp_residual: Option<f64>,
}

impl SolutionReport {
    pub fn new(solver: &str, beamformers: Vec<CMat>, initial_rate: f64) -> Self {
        Self {
            solver: solver.to_string(),
            beamformers,
            sum_rate: initial_rate,
            trace: vec![initial_rate],
            visits: Vec::new(),
            star: Vec::new(),
            outer_iterations: 0,
            local_iterations: 0,
            converged: false,
            exchanged: ExchangeCounter::default(),
            consistency_error: None,
            final_consensus_residual: None,
            fp_residual: None,
        }
    }

    /// Largest drop between consecutive trace entries (0 if monotone).
    pub fn max_trace_drop(&self) -> f64 {
        self.trace.windows(2).map(|p| (p[0] - p[1]).max(0.0)).fold(0.0, f64::max)
    }

    /// Visit-level CSV: `visit,bs,surrogate_objective,sum_rate,penalty_residual,step,exchanged_complex_values_cum`.
    pub fn write_visits_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        for row in &self.visits {
            wtr.serialize(row)?;
        }
        if self.visits.is_empty() {
            wtr.write_record([
                "visit",
                "bs",
                "surrogate_objective",
                "sum_rate",
                "penalty_residual",
                "step",
                "exchanged_complex_values_cum",
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Star CSV: `iter,sum_rate,consensus_residual,download_cum,upload_cum`.
    pub fn write_star_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        for row in &self.star {
            wtr.serialize(row)?;
        }
        if self.star.is_empty() {
            wtr.write_record(["iter", "sum_rate", "consensus_residual", "download_cum", "upload_cum"])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
