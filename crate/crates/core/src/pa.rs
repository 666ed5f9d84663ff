//! Third-order memoryless power-amplifier model and its Bussgang
//! decomposition.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, cr, CMat, CVec};

/// Polynomial PA `z = β₁x + β₃x|x|²`, shared by every BS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaModel {
    pub beta1: Complex64,
    pub beta3: Complex64,
}

impl PaModel {
    pub fn new(beta1: Complex64, beta3: Complex64) -> Result<Self> {
        if beta1.norm() == 0.0 || !beta1.is_finite() || !beta3.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "PA coefficients must be finite with beta1 != 0 (got {beta1}, {beta3})"
            )));
        }
        Ok(Self { beta1, beta3 })
    }

    /// β₁ = 1, β₃ = −0.212·e^(−j2.816).
    pub fn reference() -> Self {
        let phase = -2.816_f64;
        Self {
            beta1: cr(1.0),
            beta3: c(-0.212 * phase.cos(), -0.212 * phase.sin()),
        }
    }

    pub fn ideal() -> Self {
        Self {
            beta1: cr(1.0),
            beta3: cr(0.0),
        }
    }

    pub fn is_linear(&self) -> bool {
        self.beta3.norm() == 0.0
    }

    /// Same linear gain, no third-order term.
    pub fn linearized(&self) -> Self {
        Self {
            beta1: self.beta1,
            beta3: cr(0.0),
        }
    }

    pub fn amplify_scalar(&self, x: Complex64) -> Complex64 {
        self.beta1 * x + self.beta3 * x * x.norm_sqr()
    }

    /// Element-wise PA output.
    pub fn amplify(&self, x: &CVec) -> CVec {
        x.map(|xn| self.amplify_scalar(xn))
    }

    /// Bussgang gain from the per-antenna transmit powers `diag{WWᴴ}`.
    pub fn gain_from_powers(&self, powers: &[f64]) -> CMat {
        let d = CVec::from_iterator(
            powers.len(),
            powers.iter().map(|&p| self.beta1 + self.beta3 * (2.0 * p)),
        );
        CMat::from_diagonal(&d)
    }

    /// `G = β₁I + 2β₃·diag{WWᴴ}`.
    pub fn bussgang_gain(&self, w: &CMat) -> CMat {
        self.gain_from_powers(&row_powers(w))
    }

    /// `Cd = 2|β₃|²·(WWᴴ ⊙ |WWᴴ|²)`.
    pub fn distortion_cov(&self, w: &CMat) -> CMat {
        let cov = w * w.adjoint();
        self.distortion_from_cov(&cov)
    }

    /// Distortion covariance for a given input covariance `C = WWᴴ`.
    pub fn distortion_from_cov(&self, cov: &CMat) -> CMat {
        let scale = 2.0 * self.beta3.norm_sqr();
        let mut cd = cov.map(|z| z * (scale * z.norm_sqr()));
        // Exact Hermitian symmetry regardless of rounding in `cov`.
        let n = cd.nrows();
        for i in 0..n {
            cd[(i, i)] = cr(cd[(i, i)].re);
            for j in (i + 1)..n {
                let avg = (cd[(i, j)] + cd[(j, i)].conj()) * 0.5;
                cd[(i, j)] = avg;
                cd[(j, i)] = avg.conj();
            }
        }
        cd
    }

    pub fn stats(&self, w: &CMat) -> DistortionStats {
        DistortionStats {
            gain: self.bussgang_gain(w),
            cov: self.distortion_cov(w),
        }
    }

    /// Split `x = Ws` into PA output, Bussgang gain and distortion residual.
    pub fn decompose(&self, x: &CVec, w: &CMat) -> Result<SignalBlock> {
        if x.len() != w.nrows() {
            return Err(Error::Dimension(format!(
                "signal length {} does not match {} antennas",
                x.len(),
                w.nrows()
            )));
        }
        let z = self.amplify(x);
        let g = self.bussgang_gain(w);
        let d = &z - &g * x;
        Ok(SignalBlock {
            x: x.clone(),
            z,
            d,
        })
    }
}

impl Default for PaModel {
    fn default() -> Self {
        Self::reference()
    }
}

/// Squared row norms of `W`, i.e. the diagonal of `WWᴴ`.
pub fn row_powers(w: &CMat) -> Vec<f64> {
    w.row_iter().map(|r| r.norm_squared()).collect()
}

/// Bussgang gain and distortion covariance for one BS.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionStats {
    pub gain: CMat,
    pub cov: CMat,
}

/// One transmitted block: input, PA output and distortion residual.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBlock {
    pub x: CVec,
    pub z: CVec,
    pub d: CVec,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frob, hermitian_deviation, min_eig_hermitian};
    use proptest::prelude::*;

    fn mat(rows: usize, cols: usize, vals: &[(f64, f64)]) -> CMat {
        CMat::from_fn(rows, cols, |i, j| {
            let (re, im) = vals[(i * cols + j) % vals.len()];
            c(re, im)
        })
    }

    #[test]
    fn reference_beta3_value() {
        let pa = PaModel::reference();
        assert!((pa.beta3.norm() - 0.212).abs() < 1e-15);
        assert!((pa.beta3.re - 0.20086).abs() < 1e-5);
        assert!((pa.beta3.im - 0.06781).abs() < 1e-5);
    }

    #[test]
    fn amplify_cases() {
        let pa = PaModel::reference();
        let zero = CVec::zeros(3);
        assert_eq!(pa.amplify(&zero), zero);
        let z = pa.amplify_scalar(cr(1.0));
        assert!((z.re - 1.2009).abs() < 1e-3 && (z.im - 0.0677).abs() < 1e-3, "{z}");
        let x = CVec::from_vec(vec![c(0.3, -1.2), c(2.0, 0.5)]);
        let lin = PaModel::new(c(0.9, 0.1), cr(0.0)).unwrap();
        assert_eq!(lin.amplify(&x), x.map(|v| v * c(0.9, 0.1)));
    }

    #[test]
    fn gain_and_cov_scalar_cases() {
        let pa = PaModel::reference();
        let pt = 2.5_f64;
        let w = CMat::from_element(1, 1, cr(pt.sqrt()));
        let g = pa.bussgang_gain(&w);
        assert!((g[(0, 0)] - (pa.beta1 + pa.beta3 * (2.0 * pt))).norm() < 1e-14);
        let cd = pa.distortion_cov(&w);
        let expect = 2.0 * pa.beta3.norm_sqr() * pt.powi(3);
        assert!((cd[(0, 0)] - cr(expect)).norm() < 1e-12);
        let zero = CMat::zeros(3, 2);
        assert_eq!(pa.bussgang_gain(&zero), CMat::identity(3, 3));
        assert_eq!(pa.distortion_cov(&zero), CMat::zeros(3, 3));
    }

    #[test]
    fn ideal_pa_has_no_distortion() {
        let pa = PaModel::ideal();
        let w = mat(4, 2, &[(0.3, 0.1), (-0.7, 0.4), (1.1, -0.2)]);
        assert_eq!(pa.bussgang_gain(&w), CMat::identity(4, 4));
        assert_eq!(frob(&pa.distortion_cov(&w)), 0.0);
        let x = &w * CVec::from_vec(vec![c(1.0, 0.5), c(-0.2, 0.3)]);
        let blk = pa.decompose(&x, &w).unwrap();
        assert!(blk.d.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn decompose_zero_input() {
        let pa = PaModel::reference();
        let w = mat(3, 2, &[(0.5, 0.5), (-0.1, 0.2)]);
        let blk = pa.decompose(&CVec::zeros(3), &w).unwrap();
        assert!(blk.z.iter().chain(blk.d.iter()).all(|z| z.norm() == 0.0));
        assert!(pa.decompose(&CVec::zeros(2), &w).is_err());
    }

    #[test]
    fn rejects_zero_beta1() {
        assert!(PaModel::new(cr(0.0), cr(0.1)).is_err());
    }

    proptest! {
        #[test]
        fn gain_diagonal_and_cov_psd(
            vals in proptest::collection::vec((-1.5f64..1.5, -1.5f64..1.5), 12),
        ) {
            let pa = PaModel::reference();
            let w = CMat::from_fn(4, 3, |i, j| {
                let (re, im) = vals[i * 3 + j];
                c(re, im)
            });
            let g = pa.bussgang_gain(&w);
            let gn = frob(&g);
            for i in 0..4 {
                for j in 0..4 {
                    if i != j {
                        prop_assert!(g[(i, j)].norm() < 1e-12 * gn);
                    }
                }
            }
            let cd = pa.distortion_cov(&w);
            let n = frob(&cd);
            prop_assert!(hermitian_deviation(&cd) < 1e-12);
            prop_assert!(min_eig_hermitian(&cd) >= -1e-10 * n.max(1e-300));
        }

        #[test]
        fn residual_is_exact(
            vals in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8),
            s in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2),
        ) {
            let pa = PaModel::reference();
            let w = CMat::from_fn(4, 2, |i, j| c(vals[i * 2 + j].0, vals[i * 2 + j].1));
            let sv = CVec::from_iterator(2, s.iter().map(|&(a, b)| c(a, b)));
            let x = &w * &sv;
            let blk = pa.decompose(&x, &w).unwrap();
            let rebuilt = &pa.bussgang_gain(&w) * &x + &blk.d;
            prop_assert!((rebuilt - &blk.z).norm() <= 1e-12 * (1.0 + blk.z.norm()));
        }
    }
}
