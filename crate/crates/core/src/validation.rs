//! Independent oracles for the closed-form pieces of the solvers.
//!
//! Each check draws its own random instances from a seed and reports the
//! worst observed error against a fixed tolerance.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::fp::{sum_rate, transformed_objective, FpState, MetricsInputs};
use crate::linalg::{c, cr, kron, rel_frob, vec_of, CMat, CVec, RMat};
use crate::local::{gain_from_r, lag_from_r, lifting_matrix, LocalContext, LocalProblem, LocalSolverState, RhoSchedule};
use crate::pa::PaModel;

/// Outcome of one oracle suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
    pub instances: usize,
    #[serde(skip)]
    pub elapsed: Duration,
    pub detail: String,
}

impl OracleReport {
    fn new(name: &str, worst: f64, tolerance: f64, instances: usize, started: Instant, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: worst <= tolerance && worst.is_finite(),
            worst,
            tolerance,
            instances,
            elapsed: started.elapsed(),
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {}: worst {:.3e} (tol {:.1e}, {} instances, {:.2}s){}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.instances,
            self.elapsed.as_secs_f64(),
            if self.detail.is_empty() { String::new() } else { format!(" {}", self.detail) }
        )
    }
}

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> num_complex::Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn gaussian_mat<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| gaussian(rng))
}

/// A random local subproblem with a state away from `R = wwᴴ`.
pub struct LocalInstance {
    pub problem: LocalProblem,
    pub state: LocalSolverState,
}

pub fn random_local_instance<R: Rng + ?Sized>(rng: &mut R, nt: usize, k: usize, star: bool) -> Result<LocalInstance> {
    let h = gaussian_mat(rng, nt, k);
    let fp = FpState {
        mu: nalgebra::DVector::from_fn(k, |_, _| rng.random_range(0.0..2.0)),
        zeta: CVec::from_fn(k, |_, _| gaussian(rng) * 0.8),
    };
    let q_ref = gaussian_mat(rng, k, k);
    let context = if star {
        LocalContext::Star {
            q_tilde: q_ref,
            target: gaussian_mat(rng, k, k),
            varrho: rng.random_range(1.0..10.0),
        }
    } else {
        LocalContext::Ring { q_hat: q_ref }
    };
    let pt = rng.random_range(0.3..3.0);
    let problem = LocalProblem::new(&h, &fp, &context, &PaModel::reference(), pt, RhoSchedule::default())?;
    let mut w = gaussian_mat(rng, nt, k);
    let scale = (pt * rng.random_range(0.2..1.0)).sqrt() / w.norm();
    w *= cr(scale);
    let mut state = LocalSolverState::from_beamformer(&w, rng.random_range(0.5..5.0));
    let wv = state.w.clone();
    let a = &wv * wv.adjoint();
    let noise = gaussian_mat(rng, nt * k, nt * k) * cr(0.05 * a.norm() / (nt * k) as f64);
    state.r = a + noise;
    state.lag = lag_from_r(&state.r, nt, k);
    Ok(LocalInstance { problem, state })
}

/// Monte-Carlo check of the Bussgang gain and distortion covariance.
///
/// The gain is estimated per antenna as `E[z_n x_n*] / E[|x_n|²]`, since the
/// input covariance `WWᴴ` is rank-deficient when `Nt > K`.
pub fn check_bussgang(seed: u64, trials: usize, samples: usize, nt: usize, k: usize) -> (OracleReport, OracleReport) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pa = PaModel::reference();
    let mut worst_gain: f64 = 0.0;
    let mut worst_cov: f64 = 0.0;
    for _ in 0..trials {
        let mut w = gaussian_mat(&mut rng, nt, k);
        let target = rng.random_range(0.2..1.0);
        w *= cr((target * nt as f64).sqrt() / w.norm());
        let g = pa.bussgang_gain(&w);
        let mut cross = CVec::zeros(nt);
        let mut power = vec![0.0; nt];
        let mut cov = CMat::zeros(nt, nt);
        for _ in 0..samples {
            let s = CVec::from_fn(k, |_, _| gaussian(&mut rng));
            let x = &w * s;
            let z = pa.amplify(&x);
            let d = &z - &g * &x;
            for n in 0..nt {
                cross[n] += z[n] * x[n].conj();
                power[n] += x[n].norm_sqr();
            }
            cov.gerc(cr(1.0), &d, &d, cr(1.0));
        }
        let g_hat = CMat::from_diagonal(&CVec::from_fn(nt, |n, _| cross[n] / power[n]));
        let cov_hat = cov / cr(samples as f64);
        worst_gain = worst_gain.max(rel_frob(&g_hat, &g));
        worst_cov = worst_cov.max(rel_frob(&cov_hat, &pa.distortion_cov(&w)));
    }
    (
        OracleReport::new("bussgang gain", worst_gain, 0.02, trials, started, String::new()),
        OracleReport::new("bussgang covariance", worst_cov, 0.05, trials, started, String::new()),
    )
}

/// Accelerated projected gradient on `min wᴴCw + 2Re{cᴴw}`, `‖w‖² ≤ Pt`.
pub fn projected_gradient(cw: &CMat, cvec: &CVec, pt: f64, max_iter: usize) -> CVec {
    let eig = crate::linalg::hermitian_part(cw).symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
    let step = 1.0 / (2.0 * lmax);
    let kappa = (lmax / lmin.max(1e-300)).sqrt();
    let momentum = if lmin > 0.0 { (kappa - 1.0) / (kappa + 1.0) } else { 0.9 };
    let project = |v: CVec| {
        let n2 = v.norm_squared();
        if n2 > pt {
            v * cr((pt / n2).sqrt())
        } else {
            v
        }
    };
    let mut w = CVec::zeros(cvec.len());
    let mut y = w.clone();
    for _ in 0..max_iter {
        let grad = (cw * &y + cvec) * cr(2.0);
        let next = project(&y - grad * cr(step));
        let change = (&next - &w).norm();
        y = &next + (&next - &w) * cr(momentum);
        w = next;
        if change <= 1e-15 * (1.0 + w.norm()) {
            break;
        }
    }
    w
}

fn quad_value(cw: &CMat, cvec: &CVec, w: &CVec) -> f64 {
    w.dotc(&(cw * w)).re + 2.0 * cvec.dotc(w).re
}

/// Closed-form w-update against projected gradient and the power budget.
pub fn check_w_update(seed: u64, instances: usize) -> Result<(OracleReport, OracleReport)> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_obj: f64 = 0.0;
    let mut worst_power: f64 = 0.0;
    let mut active = 0;
    for i in 0..instances {
        let (nt, k) = [(2, 2), (3, 2), (4, 2), (2, 3)][i % 4];
        let inst = random_local_instance(&mut rng, nt, k, i % 3 == 2)?;
        let mut state = inst.state;
        // Vary the penalty so both the interior and the boundary case occur.
        state.rho = [1e-3, 0.1, 1.0, 30.0][i % 4];
        let (cw, cvec) = inst.problem.w_subproblem(&state);
        let upd = inst.problem.update_w(&state)?;
        let pt = inst.problem.power_budget();
        if upd.eta > 0.0 {
            active += 1;
        }
        let oracle = projected_gradient(&cw, &cvec, pt, 200_000);
        let f_cf = quad_value(&cw, &cvec, &upd.w);
        let f_pg = quad_value(&cw, &cvec, &oracle);
        worst_obj = worst_obj.max((f_cf - f_pg).abs() / f_pg.abs().max(1.0));
        worst_power = worst_power.max((upd.w.norm_squared() / pt - 1.0).max(0.0));
    }
    Ok((
        OracleReport::new(
            "w-update vs projected gradient",
            worst_obj,
            1e-6,
            instances,
            started,
            format!("({active} with active power constraint)"),
        ),
        OracleReport::new("w-update power feasibility", worst_power, 1e-9, instances, started, String::new()),
    ))
}

/// Central finite-difference gradient of the penalized objective in `R`,
/// arranged as `∂/∂Re + j∂/∂Im` per entry.
pub fn r_gradient_fd(problem: &LocalProblem, w: &CVec, r: &CMat, lag: &RMat, rho: f64, step: f64) -> CMat {
    let n = r.nrows();
    let mut grad = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let dir = |delta: num_complex::Complex64| {
                let mut rp = r.clone();
                let mut rm = r.clone();
                rp[(i, j)] += delta;
                rm[(i, j)] -= delta;
                (problem.penalized_objective(w, &rp, lag, rho) - problem.penalized_objective(w, &rm, lag, rho)) / (2.0 * step)
            };
            let gr = dir(cr(step));
            let gi = dir(c(0.0, step));
            grad[(i, j)] = c(gr, gi);
        }
    }
    grad
}

/// Closed-form R-update: stationarity by finite differences and agreement
/// with a dense generic solve of the Kronecker-form system.
pub fn check_r_update(seed: u64, instances: usize, nt: usize, k: usize) -> Result<(OracleReport, OracleReport)> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_grad: f64 = 0.0;
    let mut worst_dense: f64 = 0.0;
    for i in 0..instances {
        let inst = random_local_instance(&mut rng, nt, k, i % 2 == 1)?;
        let st = &inst.state;
        let r = inst.problem.update_r(&st.w, &st.lag, st.rho)?;
        let (_, c_r) = inst.problem.r_system_dense(&st.w, &st.lag, st.rho);
        let grad = r_gradient_fd(&inst.problem, &st.w, &r, &st.lag, st.rho, 1e-6);
        worst_grad = worst_grad.max(grad.norm() / (1.0 + c_r.norm()));
        let dense = inst.problem.update_r_dense(&st.w, &st.lag, st.rho)?;
        worst_dense = worst_dense.max(rel_frob(&r, &dense));
    }
    Ok((
        OracleReport::new("R-update stationarity (|grad|/(1+|c_R|))", worst_grad, 1e-5, instances, started, String::new()),
        OracleReport::new("R-update vs dense solve", worst_dense, 1e-8, instances, started, String::new()),
    ))
}

/// `vec(I_K ⊗ G(R))` as a function of `vec(R)`.
fn lifted_gain(r: &CMat, pa: &PaModel, nt: usize, k: usize) -> CVec {
    vec_of(&kron(&CMat::identity(k, k), &gain_from_r(r, pa, nt, k)))
}

/// Chain rule through the lifting matrix against a finite-difference
/// Jacobian of `vec(I_K ⊗ G(R))`.
pub fn check_lifting(seed: u64) -> OracleReport {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pa = PaModel::reference();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut binary = true;
    for nt in 2..=3 {
        for k in 1..=2 {
            cases += 1;
            let nk = nt * k;
            let br = lifting_matrix(nt, k);
            binary &= br.iter().all(|&v| v == 0.0 || v == 1.0);
            // ∂vec(G)/∂vec(R) = 2β₃(E₁ᵀ ⊗ E₁ᵀ)diag(vec I).
            let e1 = crate::local::selector_e1(nt, k);
            let e1t = crate::linalg::to_complex(&crate::linalg::kron_real(&e1.transpose(), &e1.transpose()));
            let mask = CMat::from_diagonal(&vec_of(&CMat::identity(nk, nk)));
            let analytic = crate::linalg::to_complex(&br) * (e1t * mask * (pa.beta3 * 2.0));
            let r = gaussian_mat(&mut rng, nk, nk);
            let step = 1e-6;
            let mut fd = CMat::zeros(nk * nk, nk * nk);
            for col in 0..nk * nk {
                let mut rp = r.clone();
                let mut rm = r.clone();
                rp[(col % nk, col / nk)] += cr(step);
                rm[(col % nk, col / nk)] -= cr(step);
                let diff = (lifted_gain(&rp, &pa, nt, k) - lifted_gain(&rm, &pa, nt, k)) / cr(2.0 * step);
                fd.set_column(col, &diff);
            }
            worst = worst.max(rel_frob(&analytic, &fd));
        }
    }
    if !binary {
        worst = f64::INFINITY;
    }
    OracleReport::new("lifting matrix chain rule", worst, 1e-6, cases, started, String::new())
}

/// Transformed objective at the optimal auxiliaries equals the sum rate.
pub fn check_fp_equivalence(seed: u64, instances: usize) -> Result<OracleReport> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let k = rng.random_range(1..=5);
        let q = gaussian_mat(&mut rng, k, k) * cr(rng.random_range(0.1..10.0));
        let p = nalgebra::DVector::from_fn(k, |_, _| rng.random_range(0.0..2.0));
        let sigma2 = nalgebra::DVector::from_fn(k, |_, _| rng.random_range(0.05..2.0));
        let inputs = MetricsInputs::new(q, p, sigma2)?;
        let fp = FpState::optimal(&inputs);
        worst = worst.max((transformed_objective(&inputs, &fp) - sum_rate(&inputs)).abs());
    }
    Ok(OracleReport::new("FP equivalence at optimal auxiliaries", worst, 1e-9, instances, started, String::new()))
}

/// Star aggregation against a dense solve of its stationarity system over
/// all stacked central copies.
pub fn check_aggregate(seed: u64, instances: usize) -> Result<OracleReport> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let nb = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let ql: Vec<CMat> = (0..nb).map(|_| gaussian_mat(&mut rng, k, k)).collect();
        let lam: Vec<CMat> = (0..nb).map(|_| gaussian_mat(&mut rng, k, k)).collect();
        let fp = FpState {
            mu: nalgebra::DVector::from_fn(k, |_, _| rng.random_range(0.0..3.0)),
            zeta: CVec::from_fn(k, |_, _| gaussian(&mut rng)),
        };
        let varrho = rng.random_range(0.5..20.0);
        let qc = crate::star::aggregate(&ql, &lam, &fp, varrho)?;
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
                rhs[i] = (ql[b][(row, col)] - lam[b][(row, col)] / cr(varrho)) * (0.5 * varrho) + if row == col { sig[row] } else { c(0.0, 0.0) };
            }
        }
        let x = crate::linalg::solve(&a, &rhs)?;
        for b in 0..nb {
            for e in 0..k * k {
                let z = qc[b][(e % k, e / k)];
                worst = worst.max((z - x[b * k * k + e]).norm() / (1.0 + z.norm()));
            }
        }
    }
    Ok(OracleReport::new("star aggregation vs dense solve", worst, 1e-8, instances, started, String::new()))
}

/// Every oracle suite at its acceptance size.
pub fn run_all(seed: u64) -> Result<Vec<OracleReport>> {
    let (gain, cov) = check_bussgang(seed, 10, 100_000, 4, 2);
    let (w_obj, w_power) = check_w_update(seed, 20)?;
    let (r_grad, r_dense) = check_r_update(seed, 10, 2, 2)?;
    Ok(vec![
        gain,
        cov,
        w_obj,
        w_power,
        r_grad,
        r_dense,
        check_lifting(seed),
        check_fp_equivalence(seed, 50)?,
        check_aggregate(seed, 20)?,
    ])
}
