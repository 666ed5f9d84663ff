//! Per-BS penalty majorization-minimization solver.
//!
//! The BS beamformer `w = vec(W)` is coupled to an auxiliary matrix
//! `R ≈ wwᴴ` through a penalty `ρ‖R − wwᴴ‖²`. The Bussgang gain and the
//! distortion covariance are expressed through `R` (the latter with a lagged
//! `|F̄|²` factor), so each block update is a convex quadratic problem:
//!
//! * the `w` block is a norm-constrained least-squares problem solved in
//!   closed form with a bisection on the Lagrange multiplier;
//! * the `R` block is an unconstrained quadratic whose minimizer only moves
//!   the diagonal Nt×Nt blocks of `wwᴴ`, so it reduces to one Nt×Nt Hermitian
//!   solve. A dense Kronecker-form assembly of the same stationarity system
//!   ([`LocalProblem::r_system_dense`]) is kept as a cross-check.
//!
//! The penalty is scaled internally as `ρ/Pt²` so that `ρ` is dimensionless.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp::FpState;
use crate::linalg::{
    all_finite, all_finite_vec, cr, hermitian_part, kron, kron_real, solve, solve_hpd, to_complex, unvec, vec_of, CMat, CVec,
    RMat,
};
use crate::pa::PaModel;

/// Interference context a BS optimizes against.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalContext {
    /// Ring: other-BS aggregate `Q̂_b`.
    Ring { q_hat: CMat },
    /// Star: other-BS aggregate `Q̃_C,b`, the consensus target
    /// `Q_C,b + Λ_b/ϱ` (K×K) and the ADMM penalty ϱ.
    Star { q_tilde: CMat, target: CMat, varrho: f64 },
}

impl LocalContext {
    pub fn interference(&self) -> &CMat {
        match self {
            LocalContext::Ring { q_hat } => q_hat,
            LocalContext::Star { q_tilde, .. } => q_tilde,
        }
    }

    fn consensus(&self) -> Option<(&CMat, f64)> {
        match self {
            LocalContext::Ring { .. } => None,
            LocalContext::Star { target, varrho, .. } => Some((target, *varrho)),
        }
    }
}

/// Dense constant matrices of the vectorized local problem.
///
/// `negated_objective` evaluates
/// `w̄ᴴḠᴴE₃Ḡw̄ − 2Re{hᴴE₂Ḡw̄} + 2Re{eᴴḠw̄} + hᴴE₄ᴴC̄_dE₄h` with
/// `Ḡ = I_K ⊗ G`, `C̄_d = I_K ⊗ C_d` and `h = vec(H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantWorkspace {
    /// `1_K ⊗ I_Nt`.
    pub e1: RMat,
    /// `(I + diag μ ⊗ I)^½ (diag ζ* ⊗ I)`.
    pub e2: CMat,
    /// `I_K ⊗ H diag|ζ|² Hᴴ`.
    pub e3: CMat,
    /// `diag ζ ⊗ I_Nt`.
    pub e4: CMat,
    /// Stacked `e_j = Σ_k |ζ_k|² Q̂(k,j) h_k`.
    pub e: CVec,
    pub h: CVec,
    pub br: RMat,
}

impl ConstantWorkspace {
    pub fn build(h: &CMat, fp: &FpState, q_hat: &CMat) -> Result<Self> {
        let nt = h.nrows();
        let k = h.ncols();
        if fp.num_ues() != k || q_hat.shape() != (k, k) {
            return Err(Error::Dimension(format!(
                "workspace: H is {nt}x{k}, fp has {} UEs, interference is {}x{}",
                fp.num_ues(),
                q_hat.nrows(),
                q_hat.ncols()
            )));
        }
        let eye = CMat::identity(nt, nt);
        let sig = fp.signal_weights();
        let wts = fp.zeta_weights();
        let e2 = kron(&CMat::from_diagonal(&sig.map(|z| z.conj())), &eye);
        let hz = CMat::from_fn(nt, k, |n, j| h[(n, j)] * wts[j]);
        let e3 = kron(&CMat::identity(k, k), &(&hz * h.adjoint()));
        let e4 = kron(&CMat::from_diagonal(&fp.zeta), &eye);
        let e = vec_of(&(&hz * q_hat));
        Ok(Self {
            e1: selector_e1(nt, k),
            e2,
            e3,
            e4,
            e,
            h: vec_of(h),
            br: lifting_matrix(nt, k),
        })
    }

    pub fn negated_objective(&self, w: &CVec, gain: &CMat, cd: &CMat) -> f64 {
        let k = self.e1.nrows() / self.e1.ncols();
        let eye = CMat::identity(k, k);
        let gl = kron(&eye, gain);
        let cdl = kron(&eye, cd);
        let gw = &gl * w;
        let quad = gw.dotc(&(&self.e3 * &gw)).re;
        let signal = self.h.dotc(&(&self.e2 * &gw)).re;
        let interference = self.e.dotc(&gw).re;
        let e4h = &self.e4 * &self.h;
        let dist = e4h.dotc(&(&cdl * &e4h)).re;
        quad - 2.0 * signal + 2.0 * interference + dist
    }
}

/// Penalty schedule: grow by `growth` whenever the relative residual fails to
/// drop by `min_decrease` over a sweep, up to `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RhoSchedule {
    pub initial: f64,
    pub growth: f64,
    pub min_decrease: f64,
    pub max: f64,
    /// Residual above which `R` is reset to `wwᴴ` and ρ grown.
    pub reset_residual: f64,
}

impl Default for RhoSchedule {
    fn default() -> Self {
        Self {
            initial: 1.0,
            growth: 1.5,
            min_decrease: 0.1,
            max: 1e6,
            reset_residual: 1.0,
        }
    }
}

/// Per-BS solver state.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolverState {
    /// `vec(W_b)`, length Nt·K.
    pub w: CVec,
    /// Auxiliary Nt·K × Nt·K matrix.
    pub r: CMat,
    /// Lagged `|F̄|²`, Nt×Nt.
    pub lag: RMat,
    pub eta: f64,
    /// Dimensionless penalty; the objective uses `rho / Pt²`.
    pub rho: f64,
    pub last_residual: Option<f64>,
    pub num_antennas: usize,
    pub num_ues: usize,
}

impl LocalSolverState {
    /// Start from `W` with `R = wwᴴ`.
    pub fn from_beamformer(w: &CMat, rho: f64) -> Self {
        let nt = w.nrows();
        let k = w.ncols();
        let wv = vec_of(w);
        let r = &wv * wv.adjoint();
        let lag = lag_from_r(&r, nt, k);
        Self {
            w: wv,
            r,
            lag,
            eta: 0.0,
            rho,
            last_residual: None,
            num_antennas: nt,
            num_ues: k,
        }
    }

    /// Matched filter `√(Pt/K)·h_k/‖h_k‖` per column.
    pub fn matched_filter(h: &CMat, power_budget: f64, rho: f64) -> Self {
        Self::from_beamformer(&matched_filter(h, power_budget), rho)
    }

    pub fn beamformer(&self) -> CMat {
        unvec(&self.w, self.num_antennas, self.num_ues)
    }

    pub fn set_beamformer(&mut self, w: &CMat) {
        self.w = vec_of(w);
    }

    /// `‖R − wwᴴ‖_F / ‖wwᴴ‖_F`.
    pub fn penalty_residual(&self) -> f64 {
        let a = &self.w * self.w.adjoint();
        let n = a.norm();
        if n == 0.0 {
            return self.r.norm();
        }
        (&self.r - a).norm() / n
    }

    /// `‖R − Rᴴ‖_F / ‖R‖_F`.
    pub fn hermitian_deviation(&self) -> f64 {
        crate::linalg::hermitian_deviation(&self.r)
    }
}

/// Column-normalized matched filter scaled to use the full budget.
pub fn matched_filter(h: &CMat, power_budget: f64) -> CMat {
    let k = h.ncols();
    let scale = (power_budget / k as f64).sqrt();
    let mut w = h.clone();
    for mut col in w.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= cr(n);
            col *= cr(scale);
        }
    }
    w
}

/// `F̄ = Σ_k R_kk`, the sum of the K diagonal Nt×Nt blocks.
pub fn f_bar(r: &CMat, nt: usize, k: usize) -> CMat {
    let mut f = CMat::zeros(nt, nt);
    for b in 0..k {
        f += r.view((b * nt, b * nt), (nt, nt));
    }
    f
}

/// `|F̄|²` element-wise.
pub fn lag_from_r(r: &CMat, nt: usize, k: usize) -> RMat {
    f_bar(r, nt, k).map(|z| z.norm_sqr())
}

/// `s_n = Σ_k R_(kn,kn)`.
fn diag_sums(r: &CMat, nt: usize, k: usize) -> CVec {
    CVec::from_fn(nt, |n, _| (0..k).map(|b| r[(b * nt + n, b * nt + n)]).sum())
}

/// `G(R) = β₁I + 2β₃E₁ᵀ(R ⊙ I)E₁`.
pub fn gain_from_r(r: &CMat, pa: &PaModel, nt: usize, k: usize) -> CMat {
    let s = diag_sums(r, nt, k);
    CMat::from_diagonal(&s.map(|sn| pa.beta1 + pa.beta3 * 2.0 * sn))
}

/// `C_d(R) = 2|β₃|²·(F̄(R) ⊙ lag)`; linear in `R` for a fixed lag.
pub fn distortion_from_r(r: &CMat, lag: &RMat, pa: &PaModel, nt: usize, k: usize) -> CMat {
    let scale = 2.0 * pa.beta3.norm_sqr();
    let f = f_bar(r, nt, k);
    CMat::from_fn(nt, nt, |i, j| f[(i, j)] * (scale * lag[(i, j)]))
}

/// Outcome of one `w` update.
#[derive(Debug, Clone, PartialEq)]
pub struct WUpdate {
    pub w: CVec,
    pub eta: f64,
    /// A tiny ridge had to be added because the system was singular at η = 0.
    pub ridge: bool,
}

/// One row of the inner-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub objective: f64,
    pub penalty_residual: f64,
    pub eta: f64,
    pub rho: f64,
    pub hermitian_deviation: f64,
    pub ridge: bool,
}

pub fn write_sweep_trace<W: Write>(rows: &[SweepRecord], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["sweep", "objective", "penalty_residual", "eta", "rho", "hermitian_deviation", "ridge"])?;
    for (i, r) in rows.iter().enumerate() {
        wtr.write_record(&[
            i.to_string(),
            format!("{:e}", r.objective),
            format!("{:e}", r.penalty_residual),
            format!("{:e}", r.eta),
            format!("{:e}", r.rho),
            format!("{:e}", r.hermitian_deviation),
            r.ridge.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Compact data of one local subproblem.
///
/// With `G` diagonal, the negated local objective (plus the consensus term in
/// star mode) is
/// `Σ_j (Gw_j)ᴴ M (Gw_j) + 2Re Σ_j ℓ_jᴴ G w_j + Re Σ_mn X_mn C_d(m,n) + const`.
#[derive(Debug, Clone)]
pub struct LocalProblem {
    h: CMat,
    pa: PaModel,
    power_budget: f64,
    schedule: RhoSchedule,
    /// `H diag|ζ|² Hᴴ` (+ `ϱ/2·HHᴴ`).
    m: CMat,
    /// Columns `ℓ_j`.
    lin: CMat,
    /// `Σ_k |ζ_k|² conj(h_k) h_kᵀ`.
    x: CMat,
    constant: f64,
}

impl LocalProblem {
    pub fn new(
        h: &CMat,
        fp: &FpState,
        context: &LocalContext,
        pa: &PaModel,
        power_budget: f64,
        schedule: RhoSchedule,
    ) -> Result<Self> {
        let nt = h.nrows();
        let k = h.ncols();
        let q_ref = context.interference();
        if fp.num_ues() != k || q_ref.nrows() != k || q_ref.ncols() != k {
            return Err(Error::Dimension(format!(
                "local problem: K = {k}, fp has {}, context is {}x{}",
                fp.num_ues(),
                q_ref.nrows(),
                q_ref.ncols()
            )));
        }
        if !(power_budget > 0.0) {
            return Err(Error::InvalidConfig("power budget must be positive".into()));
        }
        let wts = fp.zeta_weights();
        let hz = CMat::from_fn(nt, k, |n, j| h[(n, j)] * wts[j]);
        let mut m = &hz * h.adjoint();
        let mut lin = &hz * q_ref - CMat::from_fn(nt, k, |n, j| h[(n, j)] * fp.signal_weights()[j]);
        let mut constant = 0.0;
        if let Some((target, varrho)) = context.consensus() {
            if target.nrows() != k || target.ncols() != k || !(varrho > 0.0) {
                return Err(Error::InvalidConfig("consensus target must be KxK with varrho > 0".into()));
            }
            m += (h * h.adjoint()) * cr(0.5 * varrho);
            lin -= (h * target) * cr(0.5 * varrho);
            constant = 0.5 * varrho * target.norm_squared();
        }
        let x = CMat::from_fn(nt, nt, |a, b| (0..k).map(|j| h[(a, j)].conj() * h[(b, j)] * wts[j]).sum());
        Ok(Self {
            h: h.clone(),
            pa: *pa,
            power_budget,
            schedule,
            m,
            lin,
            x,
            constant,
        })
    }

    pub fn num_antennas(&self) -> usize {
        self.h.nrows()
    }

    pub fn num_ues(&self) -> usize {
        self.h.ncols()
    }

    pub fn power_budget(&self) -> f64 {
        self.power_budget
    }

    pub fn pa(&self) -> &PaModel {
        &self.pa
    }

    fn rho_eff(&self, rho: f64) -> f64 {
        rho / (self.power_budget * self.power_budget)
    }

    /// Negated local objective (`−δ̂_b`, or `−δ̃_b` plus the consensus term)
    /// for a beamformer `w` with given diagonal gain and distortion matrix.
    pub fn objective_with(&self, w: &CVec, gain: &CMat, cd: &CMat) -> f64 {
        let nt = self.num_antennas();
        let k = self.num_ues();
        let wm = unvec(w, nt, k);
        let gw = gain * &wm;
        let quad = (gw.adjoint() * &self.m * &gw).trace().re;
        let linear = 2.0 * (self.lin.adjoint() * &gw).trace().re;
        let dist: f64 = self.x.iter().zip(cd.iter()).map(|(a, b)| (a * b).re).sum();
        quad + linear + dist + self.constant
    }

    /// Negated local objective at the true Bussgang quantities of `w`.
    pub fn true_objective(&self, w: &CVec) -> f64 {
        let wm = unvec(w, self.num_antennas(), self.num_ues());
        self.objective_with(w, &self.pa.bussgang_gain(&wm), &self.pa.distortion_cov(&wm))
    }

    /// `objective(w, G(R), C_d(R; lag)) + (ρ/Pt²)‖R − wwᴴ‖²`.
    pub fn penalized_objective(&self, w: &CVec, r: &CMat, lag: &RMat, rho: f64) -> f64 {
        let nt = self.num_antennas();
        let k = self.num_ues();
        let g = gain_from_r(r, &self.pa, nt, k);
        let cd = distortion_from_r(r, lag, &self.pa, nt, k);
        let pen = (r - w * w.adjoint()).norm_squared();
        self.objective_with(w, &g, &cd) + self.rho_eff(rho) * pen
    }

    /// Penalized objective with `‖w‖⁴` replaced by its upper bound
    /// `Pt‖w‖²`; the w-update minimizes a tangent majorizer of this.
    pub fn majorized_objective(&self, w: &CVec, r: &CMat, lag: &RMat, rho: f64) -> f64 {
        let nt = self.num_antennas();
        let k = self.num_ues();
        let g = gain_from_r(r, &self.pa, nt, k);
        let cd = distortion_from_r(r, lag, &self.pa, nt, k);
        let w2 = w.norm_squared();
        let pen = r.norm_squared() - 2.0 * w.dotc(&(r * w)).re + self.power_budget * w2;
        self.objective_with(w, &g, &cd) + self.rho_eff(rho) * pen
    }

    /// `(C_w at η = 0, c_w)` of the w-subproblem
    /// `min wᴴC_w w + 2Re{c_wᴴw}` s.t. `‖w‖² ≤ Pt`, linearized at `state.w`.
    pub fn w_subproblem(&self, state: &LocalSolverState) -> (CMat, CVec) {
        let nt = self.num_antennas();
        let k = self.num_ues();
        let g = gain_from_r(&state.r, &self.pa, nt, k);
        let block = g.adjoint() * &self.m * &g;
        let rho = self.rho_eff(state.rho);
        let mut cw = kron(&CMat::identity(k, k), &block);
        for i in 0..nt * k {
            cw[(i, i)] += cr(rho * self.power_budget);
        }
        (cw, self.w_linear(state, &g))
    }

    fn w_linear(&self, state: &LocalSolverState, g: &CMat) -> CVec {
        let rh = hermitian_part(&state.r);
        vec_of(&(g.adjoint() * &self.lin)) - (&rh * &state.w) * cr(2.0 * self.rho_eff(state.rho))
    }

    /// Closed-form w-update with bisection on the power multiplier.
    pub fn update_w(&self, state: &LocalSolverState) -> Result<WUpdate> {
        let nt = self.num_antennas();
        let k = self.num_ues();
        let g = gain_from_r(&state.r, &self.pa, nt, k);
        let block = hermitian_part(&(g.adjoint() * &self.m * &g));
        let eig = block.symmetric_eigen();
        let u = eig.eigenvectors;
        let lam = eig.eigenvalues;
        let cvec = self.w_linear(state, &g);
        let cm = unvec(&cvec, nt, k);
        // Coefficients of c in the eigenbasis, one column per UE block.
        let d = u.adjoint() * &cm;
        let base = self.rho_eff(state.rho) * self.power_budget;
        let scale = lam.iter().fold(base, |acc, l| acc.max(l.abs()));
        let mut ridge = false;
        let mut shift = base;
        let lam_min = lam.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(lam_min + shift > 1e-14 * scale) {
            shift = -lam_min + 1e-12 * scale.max(1.0);
            ridge = true;
        }
        let norm_sq = |eta: f64| -> f64 {
            let mut s = 0.0;
            for j in 0..k {
                for i in 0..nt {
                    let den = lam[i] + shift + eta;
                    s += d[(i, j)].norm_sqr() / (den * den);
                }
            }
            s
        };
        let pt = self.power_budget;
        let eta = if norm_sq(0.0) <= pt {
            0.0
        } else {
            let mut hi = 1.0_f64.max(1e-12 * scale);
            let mut guard = 0;
            while norm_sq(hi) >= pt {
                hi *= 2.0;
                guard += 1;
                if guard > 2000 || !hi.is_finite() {
                    return Err(Error::NonFinite {
                        stage: "w-update bracket".into(),
                        iter: guard,
                    });
                }
            }
            let mut lo = 0.0;
            for _ in 0..300 {
                let mid = 0.5 * (lo + hi);
                if norm_sq(mid) > pt {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if (pt - norm_sq(hi)).abs() <= 1e-8 * pt || hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            hi
        };
        let coef = CMat::from_fn(nt, k, |i, j| -d[(i, j)] / (lam[i] + shift + eta));
        let w = vec_of(&(&u * coef));
        if !all_finite_vec(&w) {
            return Err(Error::NonFinite {
                stage: "w-update".into(),
                iter: 0,
            });
        }
        Ok(WUpdate { w, eta, ridge })
    }

    /// Quantities of the R-subproblem at fixed `w` and lag:
    /// `P = M ⊙ Σ_j conj(w_j)w_jᵀ`, `v_n = Σ_j conj(ℓ_jn)w_jn`, and the
    /// distortion weights `c_mn = 2|β₃|²X_mn·lag_mn`.
    fn r_pieces(&self, w: &CVec, lag: &RMat) -> (CMat, CVec, CMat) {
        let nt = self.num_antennas();
        let k = self.num_ues();
        let wm = unvec(w, nt, k);
        let aw = wm.map(|z| z.conj()) * wm.transpose();
        let p = self.m.component_mul(&aw);
        let v = CVec::from_fn(nt, |n, _| (0..k).map(|j| self.lin[(n, j)].conj() * wm[(n, j)]).sum());
        let scale = 2.0 * self.pa.beta3.norm_sqr();
        let cmat = CMat::from_fn(nt, nt, |a, b| self.x[(a, b)] * (scale * lag[(a, b)]));
        (p, v, cmat)
    }

    /// Closed-form R-update: exact minimizer of
    /// [`penalized_objective`](Self::penalized_objective) over `R` for fixed
    /// `w` and lag.
    ///
    /// Entries outside the diagonal blocks stay at `wwᴴ`; off-diagonal
    /// entries inside a block shift by the distortion weight; the diagonal
    /// solves an Nt×Nt Hermitian system in `s = Σ_k diag(R_kk)`.
    pub fn update_r(&self, w: &CVec, lag: &RMat, rho: f64) -> Result<CMat> {
        match self.solve_r(w, lag, rho) {
            Err(Error::Singular(_)) => self.solve_r(w, lag, 10.0 * rho),
            other => other,
        }
    }

    fn solve_r(&self, w: &CVec, lag: &RMat, rho: f64) -> Result<CMat> {
        let nt = self.num_antennas();
        let k = self.num_ues();
        let rho = self.rho_eff(rho);
        let b1 = self.pa.beta1;
        let b3 = self.pa.beta3;
        let (p, v, cmat) = self.r_pieces(w, lag);
        let a = w * w.adjoint();
        let mut r = a.clone();
        for blk in 0..k {
            let o = blk * nt;
            for i in 0..nt {
                for j in 0..nt {
                    if i != j {
                        r[(o + i, o + j)] -= cmat[(i, j)].conj() / (2.0 * rho);
                    }
                }
            }
        }
        if b3.norm() == 0.0 {
            return Ok(r);
        }
        let ones = CVec::from_element(nt, cr(1.0));
        let p1 = &p * &ones;
        let sum_a = diag_sums(&a, nt, k);
        let lhs = {
            let mut m = &p * cr(4.0 * k as f64 * b3.norm_sqr());
            for i in 0..nt {
                m[(i, i)] += cr(rho);
            }
            m
        };
        let rhs = CVec::from_fn(nt, |n, _| {
            sum_a[n] * rho - b3.conj() * (2.0 * k as f64) * (b1 * p1[n] + v[n].conj()) - cmat[(n, n)].conj() * (0.5 * k as f64)
        });
        let s = match solve_hpd(&lhs, &rhs) {
            Ok(s) => s,
            Err(_) => solve(&lhs, &rhs)?,
        };
        let g = s.map(|sn| b1 + b3 * 2.0 * sn);
        let pg = &p * &g;
        for blk in 0..k {
            let o = blk * nt;
            for n in 0..nt {
                let corr = b3.conj() * 2.0 * (pg[n] + v[n].conj()) + cmat[(n, n)].conj() * 0.5;
                r[(o + n, o + n)] = a[(o + n, o + n)] - corr / rho;
            }
        }
        if !all_finite(&r) {
            return Err(Error::NonFinite {
                stage: "R-update".into(),
                iter: 0,
            });
        }
        Ok(r)
    }

    /// Dense Kronecker-form stationarity system `(C_R + ρI)·vec(R)* = −c_R`
    /// of the R-subproblem, assembled from the constant workspace.
    /// Size (Nt·K)²; meant for validation.
    pub fn r_system_dense(&self, w: &CVec, lag: &RMat, rho: f64) -> (CMat, CVec) {
        let nt = self.num_antennas();
        let k = self.num_ues();
        let nk = nt * k;
        let rho = self.rho_eff(rho);
        let b1 = self.pa.beta1;
        let b3 = self.pa.beta3;
        let e1 = selector_e1(nt, k);
        let e1t = to_complex(&kron_real(&e1.transpose(), &e1.transpose()));
        let mask = |m: &RMat| CMat::from_diagonal(&vec_of(&to_complex(m)));
        // vec(G) = β₁vec(I) + 2β₃(E₁ᵀ ⊗ E₁ᵀ)diag(vec I)·vec(R), lifted to I_K ⊗ G.
        let dg = &e1t * mask(&RMat::identity(nk, nk)) * (b3 * 2.0);
        let d = to_complex(&lifting_matrix(nt, k)) * dg;
        // vec(C_d) = 2|β₃|²·diag(vec lag)(E₁ᵀ ⊗ E₁ᵀ)diag(vec(I_K ⊗ 1))·vec(R).
        let blocks = kron_real(&RMat::identity(k, k), &RMat::from_element(nt, nt, 1.0));
        let jcd = mask(lag) * &e1t * mask(&blocks) * cr(2.0 * b3.norm_sqr());

        let e3 = kron(&CMat::identity(k, k), &self.m);
        let a = w * w.adjoint();
        let m1_conj = kron(&a, &e3.transpose());
        let gamma0_conj = vec_of(&CMat::identity(nk, nk)).map(|z| z * b1.conj());
        let f = vec_of(&(w * vec_of(&self.lin).adjoint()).transpose());
        let c3 = jcd.transpose() * vec_of(&self.x);

        let dt = d.transpose();
        let mut lhs = &dt * &m1_conj * d.map(|z| z.conj());
        let rhs = &dt * &m1_conj * gamma0_conj + &dt * f + c3 * cr(0.5) - vec_of(&a.transpose()) * cr(rho);
        for i in 0..nk * nk {
            lhs[(i, i)] += cr(rho);
        }
        (lhs, rhs)
    }

    /// Solve [`r_system_dense`](Self::r_system_dense) with a generic LU:
    /// `vec(R) = −((C_R + ρI)⁻¹c_R)*`.
    pub fn update_r_dense(&self, w: &CVec, lag: &RMat, rho: f64) -> Result<CMat> {
        let nk = self.num_antennas() * self.num_ues();
        let (lhs, rhs) = self.r_system_dense(w, lag, rho);
        let sol = solve(&lhs, &rhs)?;
        Ok(unvec(&sol.map(|z| -z.conj()), nk, nk))
    }

    /// One (w-update, lag refresh, R-update) sweep with the ρ schedule.
    pub fn sweep(&self, state: &mut LocalSolverState) -> Result<SweepRecord> {
        let wu = self.update_w(state)?;
        state.w = wu.w;
        state.eta = wu.eta;
        state.lag = lag_from_r(&state.r, self.num_antennas(), self.num_ues());
        let mut reset = false;
        match self.update_r(&state.w, &state.lag, state.rho) {
            Ok(r) => state.r = r,
            Err(Error::NonFinite { .. }) => reset = true,
            Err(e) => return Err(e),
        }
        if reset || state.penalty_residual() > self.schedule.reset_residual {
            // The lagged distortion factor ran away from the lifted point.
            state.r = &state.w * state.w.adjoint();
            state.lag = lag_from_r(&state.r, self.num_antennas(), self.num_ues());
            state.rho = (state.rho * self.schedule.growth).min(self.schedule.max);
            state.last_residual = None;
        }
        let residual = state.penalty_residual();
        let objective = self.penalized_objective(&state.w, &state.r, &state.lag, state.rho);
        if !objective.is_finite() {
            return Err(Error::NonFinite {
                stage: "local objective".into(),
                iter: 0,
            });
        }
        let record = SweepRecord {
            objective,
            penalty_residual: residual,
            eta: wu.eta,
            rho: state.rho,
            hermitian_deviation: state.hermitian_deviation(),
            ridge: wu.ridge,
        };
        if let Some(prev) = state.last_residual {
            if residual > (1.0 - self.schedule.min_decrease) * prev {
                state.rho = (state.rho * self.schedule.growth).min(self.schedule.max);
            }
        }
        state.last_residual = Some(residual);
        Ok(record)
    }
}

/// `E₁ = 1_K ⊗ I_Nt`.
pub fn selector_e1(nt: usize, k: usize) -> RMat {
    kron_real(&RMat::from_element(k, 1, 1.0), &RMat::identity(nt, nt))
}

/// The binary lifting matrix built from the selector chain
/// `A₁ = I ⊗ aᵀ`, `A₂ = [I, 0]ᵀ`, `B₁ = A_R ⊗ b`, `B₂ = 1_K ⊗ B₁`,
/// `B₃ = [I, 0]`, `B_R = B₃B₂`. Maps `vec(G)` to `vec(I_K ⊗ G)` for
/// diagonal `G`.
pub fn lifting_matrix(nt: usize, k: usize) -> RMat {
    let mut a = RMat::zeros(nt + 1, 1);
    a[(0, 0)] = 1.0;
    let mut b = RMat::zeros(nt * k + 1, 1);
    b[(0, 0)] = 1.0;
    let a1 = kron_real(&RMat::identity(nt, nt), &a.transpose());
    let mut a2 = RMat::zeros(nt * nt + nt, nt * nt);
    for i in 0..nt * nt {
        a2[(i, i)] = 1.0;
    }
    let ar = a1 * a2;
    let b1 = kron_real(&ar, &b);
    let b2 = kron_real(&RMat::from_element(k, 1, 1.0), &b1);
    let rows = nt * nt * k * k;
    let mut b3 = RMat::zeros(rows, rows + nt * k);
    for i in 0..rows {
        b3[(i, i)] = 1.0;
    }
    b3 * b2
}
