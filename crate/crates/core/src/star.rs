//! Star topology: BSs report local aggregates to a central processor, which
//! solves a consensus-ADMM aggregation step, refreshes the FP auxiliaries
//! and sends each BS its consensus target and the other-BS interference. The
//! BSs then solve their local problems in parallel and update their duals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp::{bs_contribution, update_mu, update_zeta, FpState, MetricsInputs};
use crate::linalg::{cr, rel_frob, CMat, CVec};
use crate::local::{LocalContext, LocalProblem, LocalSolverState};
use crate::pa::PaModel;
use crate::solution::{backoff, guarded_step, relative_change, DesignProblem, SolutionReport, SolverOptions, StarRecord};

/// Dual step size rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DualStep {
    /// `λ += (ϱ/2)·residual`.
    #[default]
    Half,
    /// `λ += ϱ·residual`.
    Full,
}

impl DualStep {
    fn factor(self) -> f64 {
        match self {
            DualStep::Half => 0.5,
            DualStep::Full => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StarOptions {
    /// ADMM penalty in units of the mean `|ζ_k|²` at the start.
    pub varrho: f64,
    pub dual_step: DualStep,
    /// Relative consensus residual required for convergence.
    pub consensus_tol: f64,
    /// Let the center accept only the BS updates that do not lower the
    /// sum rate, judged from the uploaded reports.
    pub center_safeguard: bool,
    /// Aggregation/auxiliary rounds the center alternates before
    /// distributing; 1 is a single aggregation and auxiliary update.
    pub center_rounds: usize,
    /// Factor applied to ϱ after an iteration that did not raise the sum
    /// rate; 1 keeps ϱ fixed.
    pub stall_growth: f64,
    /// Penalty-MM sweeps per local solve.
    pub local_sweeps: usize,
    /// Start every local solve from `R = wwᴴ` and the initial penalty.
    pub restart_local: bool,
}

impl Default for StarOptions {
    fn default() -> Self {
        Self {
            varrho: 10.0,
            dual_step: DualStep::Half,
            consensus_tol: 1e-3,
            center_safeguard: true,
            center_rounds: 50,
            stall_growth: 10.0,
            local_sweeps: 10,
            restart_local: true,
        }
    }
}

/// Everything the center and the BSs keep between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct StarState {
    pub q_local: Vec<CMat>,
    pub p_local: Vec<CVec>,
    pub q_central: Vec<CMat>,
    pub q_tilde: Vec<CMat>,
    /// Duals stored as K×K matrices (`λ_b = vec` of these).
    pub lambda: Vec<CMat>,
    pub varrho: f64,
}

/// `(HᴴGW, diag(HᴴC_dH))` computed at the BS.
pub fn local_report(h: &CMat, w: &CMat, pa: &PaModel) -> Result<(CMat, CVec)> {
    bs_contribution(h, w, pa)
}

/// Minimize `−δ_c({Q_C}) + (ϱ/2)Σ_b ‖Q_C,b − Q_L,b + λ_b/ϱ‖²` over the
/// central copies. Separates over entries (k, j); each is a B-dimensional
/// quadratic with a rank-one coupling through `Σ_b Q_C,b(k, j)`.
pub fn aggregate(q_local: &[CMat], lambda: &[CMat], fp: &FpState, varrho: f64) -> Result<Vec<CMat>> {
    if !(varrho > 0.0) {
        return Err(Error::InvalidConfig("varrho must be positive".into()));
    }
    if q_local.len() != lambda.len() || q_local.is_empty() {
        return Err(Error::Dimension("one dual per local report is required".into()));
    }
    let nb = q_local.len() as f64;
    let k = q_local[0].nrows();
    let y: Vec<CMat> = q_local.iter().zip(lambda).map(|(q, l)| q - l / cr(varrho)).collect();
    let mut sum_y = CMat::zeros(k, k);
    for yb in &y {
        sum_y += yb;
    }
    let half = 0.5 * varrho;
    let sig = fp.signal_weights();
    let mut shift = CMat::zeros(k, k);
    for row in 0..k {
        let z2 = fp.zeta[row].norm_sqr();
        for col in 0..k {
            let a = if row == col { sig[row] } else { cr(0.0) };
            let s = (sum_y[(row, col)] * half + a * nb) / (half + nb * z2);
            shift[(row, col)] = (s * z2 - a) / half;
        }
    }
    Ok(y.into_iter().map(|yb| yb - &shift).collect())
}

/// `Q̃_b = Σ_{l≠b} Q_C,l`.
pub fn interference_share(q_central: &[CMat]) -> Vec<CMat> {
    let Some(first) = q_central.first() else {
        return Vec::new();
    };
    let mut total = CMat::zeros(first.nrows(), first.ncols());
    for q in q_central {
        total += q;
    }
    q_central.iter().map(|q| &total - q).collect()
}

/// `λ_b += factor·ϱ·(Q_C,b − Q_L,b)`.
pub fn dual_update(lambda: &CMat, q_central: &CMat, q_local: &CMat, varrho: f64, step: DualStep) -> CMat {
    lambda + (q_central - q_local) * cr(step.factor() * varrho)
}

/// `max_b ‖Q_C,b − Q_L,b‖ / (1 + ‖Q_L,b‖)`.
pub fn consensus_residual(q_central: &[CMat], q_local: &[CMat]) -> f64 {
    q_central
        .iter()
        .zip(q_local)
        .map(|(c, l)| (c - l).norm() / (1.0 + l.norm()))
        .fold(0.0, f64::max)
}

/// Values sent per BS per iteration: `(Q_C, Q̃, μ, ζ)` down and
/// `(Q_L, p_L, λ)` up.
pub fn message_sizes(k: usize) -> (u64, u64) {
    let k = k as u64;
    (2 * k * k + 2 * k, 2 * k * k + k)
}

struct Proposal {
    w: CMat,
    st: LocalSolverState,
    q: CMat,
    p: CVec,
    lambda: CMat,
}

const CENTER_ROUND_TOL: f64 = 1e-10;

/// Largest subset size enumerated exhaustively; above it the center
/// accepts greedily.
const EXHAUSTIVE_BS: usize = 10;

/// Which BS updates the center accepts: the combination of old and new
/// reports with the highest sum rate, preferring more acceptances on ties.
fn best_subset<F>(state: &StarState, props: &[Proposal], exact: &F) -> Result<Vec<bool>>
where
    F: Fn(&[CMat], &[CVec]) -> Result<MetricsInputs>,
{
    let nb = props.len();
    let rate_of = |mask: &[bool]| -> Result<f64> {
        let q: Vec<CMat> = (0..nb).map(|b| if mask[b] { props[b].q.clone() } else { state.q_local[b].clone() }).collect();
        let p: Vec<CVec> = (0..nb).map(|b| if mask[b] { props[b].p.clone() } else { state.p_local[b].clone() }).collect();
        Ok(crate::fp::sum_rate(&exact(&q, &p)?))
    };
    let mut best = vec![false; nb];
    let mut best_rate = rate_of(&best)?;
    if nb <= EXHAUSTIVE_BS {
        for bits in 1u32..(1 << nb) {
            let mask: Vec<bool> = (0..nb).map(|b| bits >> b & 1 == 1).collect();
            let rate = rate_of(&mask)?;
            let more = mask.iter().filter(|m| **m).count() > best.iter().filter(|m| **m).count();
            if rate > best_rate || (rate == best_rate && more) {
                best = mask;
                best_rate = rate;
            }
        }
    } else {
        loop {
            let mut step = None;
            for b in (0..nb).filter(|b| !best[*b]) {
                let mut mask = best.clone();
                mask[b] = true;
                let rate = rate_of(&mask)?;
                if rate >= best_rate && step.is_none_or(|(_, r)| rate > r) {
                    step = Some((b, rate));
                }
            }
            match step {
                Some((b, rate)) => {
                    best[b] = true;
                    best_rate = rate;
                }
                None => break,
            }
        }
    }
    Ok(best)
}

/// Mean `|ζ_k|²`, the curvature of the FP objective in `Q`. The ADMM
/// penalty is specified relative to it.
pub fn curvature_scale(fp: &FpState) -> f64 {
    let k = fp.zeta.len().max(1) as f64;
    let s = fp.zeta.iter().map(|z| z.norm_sqr()).sum::<f64>() / k;
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Run the star algorithm from scaled matched-filter beamformers.
pub fn run_star(problem: DesignProblem, options: SolverOptions, star: StarOptions) -> Result<SolutionReport> {
    options.validate()?;
    if !(star.varrho > 0.0) {
        return Err(Error::InvalidConfig("varrho must be positive".into()));
    }
    if star.local_sweeps == 0 || !(star.stall_growth >= 1.0) {
        return Err(Error::InvalidConfig("local_sweeps must be at least 1 and stall_growth at least 1".into()));
    }
    let pa = problem.pa;
    let nb = problem.num_bs();
    let k = problem.num_ues();
    let noise = problem.unit_noise();
    let mut beamformers = problem.initial_beamformers()?;
    let mut local_states: Vec<LocalSolverState> = beamformers
        .iter()
        .map(|w| LocalSolverState::from_beamformer(w, options.schedule.initial))
        .collect();
    let mut q_local = Vec::with_capacity(nb);
    let mut p_local = Vec::with_capacity(nb);
    for (h, w) in problem.channels.iter().zip(&beamformers) {
        let (q, p) = local_report(h, w, &pa)?;
        q_local.push(q);
        p_local.push(p);
    }
    let exact = |q_local: &[CMat], p_local: &[CVec]| -> Result<MetricsInputs> {
        let mut q = CMat::zeros(k, k);
        let mut p = CVec::zeros(k);
        for (qb, pb) in q_local.iter().zip(p_local) {
            q += qb;
            p += pb;
        }
        MetricsInputs::from_complex(q, &p, noise.clone())
    };
    let initial = exact(&q_local, &p_local)?;
    let mut fp = FpState::optimal(&initial);
    let mut state = StarState {
        q_local,
        p_local,
        q_central: Vec::new(),
        q_tilde: Vec::new(),
        lambda: vec![CMat::zeros(k, k); nb],
        varrho: star.varrho * curvature_scale(&fp),
    };
    let mut report = SolutionReport::new("star", beamformers.clone(), crate::fp::sum_rate(&initial));
    let (down, up) = message_sizes(k);

    for iter in 0..options.max_outer {
        for _ in 0..star.center_rounds.max(1) {
            let previous = std::mem::take(&mut state.q_central);
            state.q_central = aggregate(&state.q_local, &state.lambda, &fp, state.varrho)?;
            let mut p_sum = CVec::zeros(k);
            let mut q_sum = CMat::zeros(k, k);
            for (qc, pl) in state.q_central.iter().zip(&state.p_local) {
                q_sum += qc;
                p_sum += pl;
            }
            let central = MetricsInputs::from_complex(q_sum, &p_sum, noise.clone())?;
            let mu = update_mu(&central);
            let zeta = update_zeta(&central, &mu);
            fp = FpState { mu, zeta };
            let moved = previous
                .iter()
                .zip(&state.q_central)
                .map(|(a, b)| rel_frob(b, a))
                .fold(0.0, f64::max);
            if previous.len() == nb && moved <= CENTER_ROUND_TOL {
                break;
            }
        }
        state.q_tilde = interference_share(&state.q_central);
        report.exchanged.download += down * nb as u64;

        let results: Vec<Result<(CMat, LocalSolverState)>> = (0..nb)
            .into_par_iter()
            .map(|b| {
                let target = &state.q_central[b] + &state.lambda[b] / cr(state.varrho);
                let ctx = LocalContext::Star {
                    q_tilde: state.q_tilde[b].clone(),
                    target,
                    varrho: state.varrho,
                };
                let h = &problem.channels[b];
                let local = LocalProblem::new(h, &fp, &ctx, &pa, problem.power_budget, options.schedule)?;
                let mut st = if star.restart_local {
                    LocalSolverState::from_beamformer(&beamformers[b], options.schedule.initial)
                } else {
                    local_states[b].clone()
                };
                for _ in 0..star.local_sweeps {
                    local.sweep(&mut st).map_err(|e| match e {
                        Error::NonFinite { stage, .. } => Error::NonFinite { stage, iter },
                        other => other,
                    })?;
                }
                let candidate = st.beamformer();
                let accepted = if options.monotone_guard {
                    guarded_step(&local, &beamformers[b], &candidate, options.backtrack_steps).0
                } else {
                    candidate
                };
                let accepted = backoff(&local, accepted, &mut st, &options);
                Ok((accepted, st))
            })
            .collect();
        let mut proposals = Vec::with_capacity(nb);
        for (b, res) in results.into_iter().enumerate() {
            let (w, st) = res?;
            let (q, p) = local_report(&problem.channels[b], &w, &pa)?;
            let lambda = dual_update(&state.lambda[b], &state.q_central[b], &q, state.varrho, star.dual_step);
            proposals.push(Proposal { w, st, q, p, lambda });
        }
        let accept = if star.center_safeguard {
            best_subset(&state, &proposals, &exact)?
        } else {
            vec![true; nb]
        };
        for (b, (prop, ok)) in proposals.into_iter().zip(accept).enumerate() {
            if ok {
                beamformers[b] = prop.w;
                local_states[b] = prop.st;
                state.lambda[b] = prop.lambda;
                state.q_local[b] = prop.q;
                state.p_local[b] = prop.p;
            } else {
                let mut st = prop.st;
                st.set_beamformer(&beamformers[b]);
                local_states[b] = st;
                state.lambda[b] = dual_update(&state.lambda[b], &state.q_central[b], &state.q_local[b], state.varrho, star.dual_step);
            }
        }
        report.exchanged.upload += up * nb as u64;
        report.local_iterations += nb;

        let rate = crate::fp::sum_rate(&exact(&state.q_local, &state.p_local)?);
        if !rate.is_finite() {
            return Err(Error::NonFinite {
                stage: "star sum rate".into(),
                iter,
            });
        }
        let prev = *report.trace.last().expect("trace starts non-empty");
        if rate <= prev {
            state.varrho *= star.stall_growth;
        }
        let residual = consensus_residual(&state.q_central, &state.q_local);
        report.trace.push(rate);
        report.outer_iterations += 1;
        report.star.push(StarRecord {
            iter: iter + 1,
            sum_rate: rate,
            consensus_residual: residual,
            download_cum: report.exchanged.download,
            upload_cum: report.exchanged.upload,
        });
        report.final_consensus_residual = Some(residual);
        if relative_change(prev, rate) < options.tol && residual <= star.consensus_tol {
            report.converged = true;
            break;
        }
    }
    report.sum_rate = *report.trace.last().expect("non-empty");
    report.beamformers = beamformers;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fp::central_objective_star;
    use crate::linalg::{c, solve};
    use crate::validation::{gaussian, gaussian_mat};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fp(rng: &mut ChaCha8Rng, k: usize) -> FpState {
        FpState {
            mu: DVector::from_fn(k, |_, _| rng.random_range(0.0..3.0)),
            zeta: CVec::from_fn(k, |_, _| gaussian(rng)),
        }
    }

    fn al_objective(qc: &[CMat], ql: &[CMat], lambda: &[CMat], fp: &FpState, varrho: f64) -> f64 {
        let pen: f64 = qc
            .iter()
            .zip(ql)
            .zip(lambda)
            .map(|((c, l), lam)| (c - l + lam / cr(varrho)).norm_squared())
            .sum();
        -central_objective_star(qc, fp) + 0.5 * varrho * pen
    }

    #[test]
    fn aggregate_zero_zeta_is_proximal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ql: Vec<CMat> = (0..3).map(|_| gaussian_mat(&mut rng, 2, 2)).collect();
        let lam: Vec<CMat> = (0..3).map(|_| gaussian_mat(&mut rng, 2, 2)).collect();
        let fp = FpState::zeros(2);
        let qc = aggregate(&ql, &lam, &fp, 4.0).unwrap();
        for b in 0..3 {
            assert!((&qc[b] - (&ql[b] - &lam[b] / cr(4.0))).norm() < 1e-14);
        }
        assert!(aggregate(&ql, &lam, &fp, 0.0).is_err());
    }

    #[test]
    fn aggregate_matches_dense_solve_and_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (nb, k) = (2, 2);
        for _ in 0..5 {
            let ql: Vec<CMat> = (0..nb).map(|_| gaussian_mat(&mut rng, k, k)).collect();
            let lam: Vec<CMat> = (0..nb).map(|_| gaussian_mat(&mut rng, k, k)).collect();
            let fp = random_fp(&mut rng, k);
            let varrho = rng.random_range(0.5..20.0);
            let qc = aggregate(&ql, &lam, &fp, varrho).unwrap();
            // Dense Wirtinger system over x = [vec Q_C,1; …; vec Q_C,B].
            let n = nb * k * k;
            let mut a = CMat::zeros(n, n);
            let mut rhs = CVec::zeros(n);
            let sig = fp.signal_weights();
            for b in 0..nb {
                for e in 0..k * k {
                    let (row, col) = (e % k, e / k);
                    let i = b * k * k + e;
                    a[(i, i)] += cr(0.5 * varrho);
                    for l in 0..nb {
                        a[(i, l * k * k + e)] += cr(fp.zeta[row].norm_sqr());
                    }
                    rhs[i] = (ql[b][(row, col)] - lam[b][(row, col)] / cr(varrho)) * (0.5 * varrho)
                        + if row == col { sig[row] } else { c(0.0, 0.0) };
                }
            }
            let x = solve(&a, &rhs).unwrap();
            for b in 0..nb {
                for e in 0..k * k {
                    let z = qc[b][(e % k, e / k)];
                    assert!((z - x[b * k * k + e]).norm() < 1e-8 * (1.0 + z.norm()));
                }
            }
            // Finite-difference gradient of the AL objective.
            let h = 1e-6;
            let mut grad: f64 = 0.0;
            for b in 0..nb {
                for e in 0..k * k {
                    for dir in [c(h, 0.0), c(0.0, h)] {
                        let mut plus = qc.clone();
                        let mut minus = qc.clone();
                        plus[b][(e % k, e / k)] += dir;
                        minus[b][(e % k, e / k)] -= dir;
                        let d = (al_objective(&plus, &ql, &lam, &fp, varrho) - al_objective(&minus, &ql, &lam, &fp, varrho)) / (2.0 * h);
                        grad = grad.max(d.abs());
                    }
                }
            }
            assert!(grad < 1e-6, "gradient {grad}");
        }
    }

    #[test]
    fn interference_share_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let one = vec![gaussian_mat(&mut rng, 2, 2)];
        assert_eq!(interference_share(&one)[0], CMat::zeros(2, 2));
        let qc: Vec<CMat> = (0..3).map(|_| gaussian_mat(&mut rng, 2, 2)).collect();
        let share = interference_share(&qc);
        assert!((&share[0] - (&qc[1] + &qc[2])).norm() < 1e-14);
        let total: CMat = qc.iter().fold(CMat::zeros(2, 2), |acc, q| acc + q);
        let share_total: CMat = share.iter().fold(CMat::zeros(2, 2), |acc, q| acc + q);
        assert!((share_total - total * cr(2.0)).norm() < 1e-12);
    }

    #[test]
    fn dual_update_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = gaussian_mat(&mut rng, 2, 2);
        let lam = gaussian_mat(&mut rng, 2, 2);
        assert_eq!(dual_update(&lam, &q, &q, 3.0, DualStep::Half), lam);
        let ql = gaussian_mat(&mut rng, 2, 2);
        let step = dual_update(&CMat::zeros(2, 2), &q, &ql, 3.0, DualStep::Half);
        assert!((step - (&q - &ql) * cr(1.5)).norm() < 1e-14);
        let full = dual_update(&CMat::zeros(2, 2), &q, &ql, 3.0, DualStep::Full);
        assert!((full - (&q - &ql) * cr(3.0)).norm() < 1e-14);
    }

    #[test]
    fn local_report_cases() {
        let h = gaussian_mat(&mut ChaCha8Rng::seed_from_u64(5), 3, 2);
        let (q, p) = local_report(&h, &CMat::zeros(3, 2), &PaModel::ideal()).unwrap();
        assert_eq!(q, CMat::zeros(2, 2));
        assert_eq!(p, CVec::zeros(2));
        let w = gaussian_mat(&mut ChaCha8Rng::seed_from_u64(6), 3, 2);
        let (_, p) = local_report(&h, &w, &PaModel::reference()).unwrap();
        assert!(p.iter().all(|z| z.re >= -1e-10 && z.im.abs() <= 1e-10 * (1.0 + z.norm())));
    }

    #[test]
    fn star_counts_messages_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h: Vec<CMat> = (0..2).map(|_| gaussian_mat(&mut rng, 3, 2) * cr(3.0)).collect();
        let prob = DesignProblem::new(&h, &[1.0, 1.0], 2.0, PaModel::reference()).unwrap();
        let opts = SolverOptions {
            max_outer: 6,
            tol: 0.0,
            ..SolverOptions::default()
        };
        let rep = run_star(prob, opts, StarOptions::default()).unwrap();
        let n = rep.outer_iterations as u64;
        assert_eq!(n, 6);
        assert_eq!(rep.exchanged.download, n * 2 * (2 * 4 + 2 * 2));
        assert_eq!(rep.exchanged.upload, n * 2 * (2 * 4 + 2));
        assert_eq!(rep.exchanged.total(), n * 2 * (4 * 4 + 3 * 2));
    }
}
