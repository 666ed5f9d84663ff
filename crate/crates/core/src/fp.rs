//! Fractional-programming auxiliaries and the transformed sum-rate
//! objectives.
//!
//! The transformed objective is evaluated with natural logarithms and then
//! scaled by `1/ln 2`, so that it is reported in bit/s/Hz, coincides with the
//! sum-rate at the optimal auxiliaries, and `μ* = γ` is the exact maximizer of
//! the Lagrangian-dual form.

use std::f64::consts::LN_2;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec};
use crate::pa::PaModel;

const DENOM_FLOOR: f64 = 1e-30;

/// Auxiliary variables μ (Lagrangian dual) and ζ (quadratic transform).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpState {
    pub mu: DVector<f64>,
    pub zeta: CVec,
}

impl FpState {
    pub fn zeros(k: usize) -> Self {
        Self {
            mu: DVector::zeros(k),
            zeta: CVec::zeros(k),
        }
    }

    /// μ then ζ, both at their optimal values for `inputs`.
    pub fn optimal(inputs: &MetricsInputs) -> Self {
        let mu = update_mu(inputs);
        let zeta = update_zeta(inputs, &mu);
        Self { mu, zeta }
    }

    pub fn num_ues(&self) -> usize {
        self.mu.len()
    }

    pub fn is_valid(&self) -> bool {
        self.mu.iter().all(|m| m.is_finite() && *m >= 0.0)
            && self.zeta.iter().all(|z| z.is_finite())
            && self.mu.len() == self.zeta.len()
    }

    /// `|ζ_k|²` as a real vector.
    pub fn zeta_weights(&self) -> DVector<f64> {
        self.zeta.map(|z| z.norm_sqr())
    }

    /// `√(1+μ_k)·ζ_k`.
    pub fn signal_weights(&self) -> CVec {
        CVec::from_iterator(
            self.mu.len(),
            self.mu.iter().zip(self.zeta.iter()).map(|(&m, &z)| z * (1.0 + m).sqrt()),
        )
    }
}

/// Aggregate signal/interference matrix, distortion vector and noise powers.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsInputs {
    /// `q(k, j) = Σ_b h_{b,k}ᴴ G_b w_{b,j}`.
    pub q: CMat,
    /// `p(k) = Σ_b h_{b,k}ᴴ C_{d,b} h_{b,k}`.
    pub p: DVector<f64>,
    pub sigma2: DVector<f64>,
}

impl MetricsInputs {
    pub fn new(q: CMat, p: DVector<f64>, sigma2: DVector<f64>) -> Result<Self> {
        let k = q.nrows();
        if q.ncols() != k || p.len() != k || sigma2.len() != k {
            return Err(Error::Dimension(format!(
                "metrics inputs: q is {}x{}, p has {}, sigma2 has {}",
                q.nrows(),
                q.ncols(),
                p.len(),
                sigma2.len()
            )));
        }
        Ok(Self { q, p, sigma2 })
    }

    /// From complex distortion sums; the (rounding-level) imaginary part is
    /// dropped.
    pub fn from_complex(q: CMat, p: &CVec, sigma2: DVector<f64>) -> Result<Self> {
        Self::new(q, p.map(|z| z.re), sigma2)
    }

    /// Assemble from per-BS channels `h[b]` (Nt×K) and beamformers `w[b]`.
    pub fn from_beamformers(h: &[CMat], w: &[CMat], pa: &PaModel, sigma2: &[f64]) -> Result<Self> {
        if h.len() != w.len() || h.is_empty() {
            return Err(Error::Dimension(format!(
                "{} channel matrices vs {} beamformers",
                h.len(),
                w.len()
            )));
        }
        let k = h[0].ncols();
        let mut q = CMat::zeros(k, k);
        let mut p = CVec::zeros(k);
        for (hb, wb) in h.iter().zip(w) {
            let (qb, pb) = bs_contribution(hb, wb, pa)?;
            q += qb;
            p += pb;
        }
        Self::from_complex(q, &p, DVector::from_column_slice(sigma2))
    }

    pub fn num_ues(&self) -> usize {
        self.q.nrows()
    }

    /// `D_k = Σ_j |q(k,j)|² + p(k) + σ_k²`.
    pub fn total_power(&self, k: usize) -> f64 {
        let row: f64 = (0..self.num_ues()).map(|j| self.q[(k, j)].norm_sqr()).sum();
        row + self.p[k] + self.sigma2[k]
    }
}

/// One BS's contribution `(HᴴGW, diag(HᴴC_dH))` under `pa`.
pub fn bs_contribution(h: &CMat, w: &CMat, pa: &PaModel) -> Result<(CMat, CVec)> {
    if h.nrows() != w.nrows() || h.ncols() != w.ncols() {
        return Err(Error::Dimension(format!(
            "channel is {}x{}, beamformer is {}x{}",
            h.nrows(),
            h.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let g = pa.bussgang_gain(w);
    let cd = pa.distortion_cov(w);
    Ok(contribution_with(h, w, &g, &cd))
}

/// `(HᴴGW, diag(HᴴC_dH))` for given gain and distortion matrices.
pub fn contribution_with(h: &CMat, w: &CMat, g: &CMat, cd: &CMat) -> (CMat, CVec) {
    let q = h.adjoint() * g * w;
    let cdh = cd * h;
    let p = CVec::from_iterator(h.ncols(), (0..h.ncols()).map(|k| h.column(k).dotc(&cdh.column(k))));
    (q, p)
}

/// γ_k = |q(k,k)|² / (Σ_{j≠k}|q(k,j)|² + p(k) + σ_k²).
pub fn sindr(inputs: &MetricsInputs) -> DVector<f64> {
    let k = inputs.num_ues();
    DVector::from_iterator(
        k,
        (0..k).map(|i| {
            let sig = inputs.q[(i, i)].norm_sqr();
            let denom = (inputs.total_power(i) - sig).max(DENOM_FLOOR);
            sig / denom
        }),
    )
}

/// Optimal μ, identical to the SINDR.
pub fn update_mu(inputs: &MetricsInputs) -> DVector<f64> {
    sindr(inputs)
}

/// ζ_k = √(1+μ_k)·q(k,k) / D_k.
pub fn update_zeta(inputs: &MetricsInputs, mu: &DVector<f64>) -> CVec {
    let k = inputs.num_ues();
    CVec::from_iterator(
        k,
        (0..k).map(|i| inputs.q[(i, i)] * ((1.0 + mu[i]).sqrt() / inputs.total_power(i).max(DENOM_FLOOR))),
    )
}

pub fn sum_rate(inputs: &MetricsInputs) -> f64 {
    sindr(inputs).iter().map(|g| (1.0 + g).log2()).sum()
}

/// δ: the part of the transformed objective that depends on the beamformers.
pub fn delta(inputs: &MetricsInputs, fp: &FpState) -> f64 {
    let k = inputs.num_ues();
    (0..k)
        .map(|i| {
            let z = fp.zeta[i];
            let w2 = z.norm_sqr();
            let useful = 2.0 * (1.0 + fp.mu[i]).sqrt() * (z.conj() * inputs.q[(i, i)]).re;
            let interf: f64 = (0..k).map(|j| inputs.q[(i, j)].norm_sqr()).sum();
            useful - w2 * interf - w2 * inputs.p[i]
        })
        .sum()
}

/// Transformed objective in bit/s/Hz.
pub fn transformed_objective(inputs: &MetricsInputs, fp: &FpState) -> f64 {
    let constant: f64 = (0..inputs.num_ues())
        .map(|i| (1.0 + fp.mu[i]).ln() - fp.mu[i] - fp.zeta[i].norm_sqr() * inputs.sigma2[i])
        .sum();
    (constant + delta(inputs, fp)) / LN_2
}

/// Lagrangian-dual form before the quadratic transform, in bit/s/Hz; its
/// maximizer over μ is the SINDR.
pub fn dual_objective(inputs: &MetricsInputs, mu: &DVector<f64>) -> f64 {
    let k = inputs.num_ues();
    (0..k)
        .map(|i| {
            let sig = inputs.q[(i, i)].norm_sqr();
            (1.0 + mu[i]).ln() - mu[i] + (1.0 + mu[i]) * sig / inputs.total_power(i).max(DENOM_FLOOR)
        })
        .sum::<f64>()
        / LN_2
}

/// δ̂_b: the terms of δ that depend on BS b's beamformer `w`, given the
/// other-BS aggregate `q_hat`.
pub fn local_objective_ring(q_hat: &CMat, h: &CMat, w: &CMat, pa: &PaModel, fp: &FpState) -> Result<f64> {
    let (qb, pb) = bs_contribution(h, w, pa)?;
    let k = qb.nrows();
    if q_hat.nrows() != k || q_hat.ncols() != k || fp.num_ues() != k {
        return Err(Error::Dimension("local objective: K mismatch".into()));
    }
    let val = (0..k)
        .map(|i| {
            let z = fp.zeta[i];
            let w2 = z.norm_sqr();
            let useful = 2.0 * (1.0 + fp.mu[i]).sqrt() * (z.conj() * qb[(i, i)]).re;
            let cross: f64 = (0..k)
                .map(|j| 2.0 * (q_hat[(i, j)].conj() * qb[(i, j)]).re + qb[(i, j)].norm_sqr())
                .sum();
            useful - w2 * pb[i].re - w2 * cross
        })
        .sum();
    Ok(val)
}

/// δ_c over the central copies `q_c[b]`.
pub fn central_objective_star(q_c: &[CMat], fp: &FpState) -> f64 {
    let Some(first) = q_c.first() else {
        return 0.0;
    };
    let k = first.nrows();
    let mut total = CMat::zeros(k, k);
    for q in q_c {
        total += q;
    }
    (0..k)
        .map(|i| {
            let z = fp.zeta[i];
            let useful = 2.0 * (1.0 + fp.mu[i]).sqrt() * (z.conj() * total[(i, i)]).re;
            let interf: f64 = (0..k).map(|j| total[(i, j)].norm_sqr()).sum();
            useful - z.norm_sqr() * interf
        })
        .sum()
}

/// Fixed-point residual `max_k |μ_k − γ_k| / (1 + γ_k)` plus the analogous
/// ζ residual.
pub fn fixed_point_residual(inputs: &MetricsInputs, fp: &FpState) -> f64 {
    let gamma = sindr(inputs);
    let zeta = update_zeta(inputs, &fp.mu);
    let mut worst: f64 = 0.0;
    for k in 0..gamma.len() {
        worst = worst.max((fp.mu[k] - gamma[k]).abs() / (1.0 + gamma[k]));
        worst = worst.max((fp.zeta[k] - zeta[k]).norm() / (DENOM_FLOOR + zeta[k].norm().max(fp.zeta[k].norm())));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, ZERO};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat<R: Rng>(rng: &mut R, r: usize, cols: usize, scale: f64) -> CMat {
        CMat::from_fn(r, cols, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale)
    }

    fn random_instance(seed: u64, b: usize, nt: usize, k: usize) -> (Vec<CMat>, Vec<CMat>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = (0..b).map(|_| random_mat(&mut rng, nt, k, 1.0)).collect();
        let w = (0..b).map(|_| random_mat(&mut rng, nt, k, 0.6)).collect();
        let sigma2 = (0..k).map(|_| rng.random_range(0.05..0.5)).collect();
        (h, w, sigma2)
    }

    #[test]
    fn single_ue_no_interference() {
        let a = c(1.5, -0.5);
        let inp = MetricsInputs::new(
            CMat::from_element(1, 1, a),
            DVector::zeros(1),
            DVector::from_element(1, 0.25),
        )
        .unwrap();
        assert!((sindr(&inp)[0] - a.norm_sqr() / 0.25).abs() < 1e-12);
        let mu = update_mu(&inp);
        let z = update_zeta(&inp, &mu)[0];
        let expect = a * ((1.0 + mu[0]).sqrt() / (a.norm_sqr() + 0.25));
        assert!((z - expect).norm() < 1e-12);
    }

    #[test]
    fn zero_signal_gives_zero() {
        let mut q = CMat::from_element(2, 2, c(0.3, 0.1));
        q[(0, 0)] = ZERO;
        q[(1, 1)] = ZERO;
        let inp = MetricsInputs::new(q, DVector::from_element(2, 0.1), DVector::from_element(2, 1.0)).unwrap();
        assert!(sindr(&inp).iter().all(|g| *g == 0.0));
        assert!(update_zeta(&inp, &update_mu(&inp)).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn zero_beamformers_give_zero_objective() {
        let (h, _, s2) = random_instance(1, 2, 3, 2);
        let w = vec![CMat::zeros(3, 2); 2];
        let inp = MetricsInputs::from_beamformers(&h, &w, &PaModel::reference(), &s2).unwrap();
        assert!(update_mu(&inp).iter().all(|m| *m == 0.0));
        assert_eq!(transformed_objective(&inp, &FpState::zeros(2)), 0.0);
    }

    #[test]
    fn sindr_matches_primitive_assembly() {
        let pa = PaModel::reference();
        let (h, w, s2) = random_instance(5, 2, 3, 2);
        let inp = MetricsInputs::from_beamformers(&h, &w, &pa, &s2).unwrap();
        let g = sindr(&inp);
        for k in 0..2 {
            let mut sig = ZERO;
            let mut interf = 0.0;
            let mut dist = 0.0;
            for j in 0..2 {
                let mut s = ZERO;
                for b in 0..2 {
                    let gb = pa.bussgang_gain(&w[b]);
                    s += (h[b].column(k).adjoint() * &gb * w[b].column(j))[(0, 0)];
                }
                if j == k {
                    sig = s;
                } else {
                    interf += s.norm_sqr();
                }
            }
            for b in 0..2 {
                let cd = pa.distortion_cov(&w[b]);
                dist += (h[b].column(k).adjoint() * &cd * h[b].column(k))[(0, 0)].re;
            }
            let expect = sig.norm_sqr() / (interf + dist + s2[k]);
            assert!((g[k] - expect).abs() < 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn local_objective_differences_match_delta() {
        let pa = PaModel::reference();
        let (h, w, s2) = random_instance(9, 3, 3, 2);
        let inp = MetricsInputs::from_beamformers(&h, &w, &pa, &s2).unwrap();
        let fp = FpState::optimal(&inp);
        let b = 1;
        let mut q_hat = CMat::zeros(2, 2);
        for l in [0, 2] {
            q_hat += bs_contribution(&h[l], &w[l], &pa).unwrap().0;
        }
        let mut w2 = w.clone();
        w2[b] = w[b].map(|z| z * c(0.7, 0.4));
        let inp2 = MetricsInputs::from_beamformers(&h, &w2, &pa, &s2).unwrap();
        let d_full = delta(&inp2, &fp) - delta(&inp, &fp);
        let d_loc = local_objective_ring(&q_hat, &h[b], &w2[b], &pa, &fp).unwrap()
            - local_objective_ring(&q_hat, &h[b], &w[b], &pa, &fp).unwrap();
        assert!((d_full - d_loc).abs() < 1e-10 * (1.0 + d_full.abs()), "{d_full} vs {d_loc}");

        let fp0 = FpState {
            mu: fp.mu.clone(),
            zeta: CVec::zeros(2),
        };
        assert_eq!(local_objective_ring(&q_hat, &h[b], &w[b], &pa, &fp0).unwrap(), 0.0);
    }

    #[test]
    fn central_objective_cases() {
        let fp = FpState {
            mu: DVector::from_vec(vec![0.5, 2.0]),
            zeta: CVec::from_vec(vec![c(0.2, -0.1), c(-0.3, 0.4)]),
        };
        assert_eq!(central_objective_star(&[CMat::zeros(2, 2), CMat::zeros(2, 2)], &fp), 0.0);
        let q1 = CMat::from_fn(2, 2, |i, j| c(i as f64 + 0.5, j as f64 - 0.25));
        let q2 = CMat::from_fn(2, 2, |i, j| c(0.1 * j as f64, 0.3 - i as f64));
        // Brute-force expansion.
        let mut expect = 0.0;
        for k in 0..2 {
            let s = q1[(k, k)] + q2[(k, k)];
            expect += 2.0 * (1.0 + fp.mu[k]).sqrt() * (fp.zeta[k].conj() * s).re;
            for j in 0..2 {
                expect -= fp.zeta[k].norm_sqr() * (q1[(k, j)] + q2[(k, j)]).norm_sqr();
            }
        }
        assert!((central_objective_star(&[q1.clone(), q2], &fp) - expect).abs() < 1e-12);
        // B = 1 reduces to δ without distortion.
        let inp = MetricsInputs::new(q1.clone(), DVector::zeros(2), DVector::from_element(2, 1.0)).unwrap();
        assert!((central_objective_star(&[q1], &fp) - delta(&inp, &fp)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn fp_equivalence_at_optimum(seed in 0u64..10_000) {
            let (h, w, s2) = random_instance(seed, 2, 3, 3);
            let inp = MetricsInputs::from_beamformers(&h, &w, &PaModel::reference(), &s2).unwrap();
            let fp = FpState::optimal(&inp);
            let rate = sum_rate(&inp);
            prop_assert!((transformed_objective(&inp, &fp) - rate).abs() <= 1e-9 * rate.max(1.0));
            prop_assert!((dual_objective(&inp, &fp.mu) - rate).abs() <= 1e-9 * rate.max(1.0));
        }

        #[test]
        fn auxiliary_updates_never_decrease(seed in 0u64..10_000, scale in 0.1f64..3.0) {
            let (h, w, s2) = random_instance(seed, 2, 3, 2);
            let inp = MetricsInputs::from_beamformers(&h, &w, &PaModel::reference(), &s2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let fp = FpState {
                mu: DVector::from_fn(2, |_, _| rng.random_range(0.0..5.0) * scale),
                zeta: CVec::from_fn(2, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))),
            };
            let base = transformed_objective(&inp, &fp);
            // ζ-update alone.
            let z_only = FpState { mu: fp.mu.clone(), zeta: update_zeta(&inp, &fp.mu) };
            prop_assert!(transformed_objective(&inp, &z_only) >= base - 1e-10);
            // μ-update on the dual form.
            let mu_star = update_mu(&inp);
            prop_assert!(dual_objective(&inp, &mu_star) >= dual_objective(&inp, &fp.mu) - 1e-10);
            // μ followed by ζ.
            let both = FpState::optimal(&inp);
            prop_assert!(transformed_objective(&inp, &both) >= base - 1e-10);
            prop_assert!(transformed_objective(&inp, &both) >= transformed_objective(&inp, &z_only) - 1e-10);
        }
    }
}
