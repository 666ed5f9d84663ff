//! Evaluation: SINDR and sum rate under a chosen PA, radiated beam patterns,
//! and backhaul/complexity accounting.

use std::f64::consts::{FRAC_PI_2, SQRT_2};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp::{sindr, MetricsInputs};
use crate::linalg::CMat;
use crate::pa::PaModel;
use crate::scenario::steering_vector;

/// Per-UE and per-BS figures of one beamformer set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sindr: Vec<f64>,
    /// bit/s/Hz.
    pub sum_rate: f64,
    /// `‖W_b‖²_F`, watts.
    pub per_bs_tx_power: Vec<f64>,
    /// `Σ_b h_{b,k}ᴴ C_{d,b} h_{b,k}`, watts.
    pub distortion_power: Vec<f64>,
    /// `Σ_{j≠k} |q(k, j)|²`, watts.
    pub interference_power: Vec<f64>,
}

impl MetricsReport {
    pub fn rates(&self) -> Vec<f64> {
        self.sindr.iter().map(|g| (1.0 + g).log2()).collect()
    }

    /// One row per UE: `ue,sindr,sindr_db,rate,distortion_power,interference_power`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["ue", "sindr", "sindr_db", "rate", "distortion_power", "interference_power"])?;
        for (k, (g, r)) in self.sindr.iter().zip(self.rates()).enumerate() {
            wtr.write_record(&[
                k.to_string(),
                format!("{g:e}"),
                format!("{:.6}", 10.0 * g.log10()),
                format!("{r:.9}"),
                format!("{:e}", self.distortion_power[k]),
                format!("{:e}", self.interference_power[k]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// SINDR and sum rate of `beamformers` over the raw channels with `eval_pa`.
pub fn evaluate(channels: &[CMat], beamformers: &[CMat], eval_pa: &PaModel, sigma2: &[f64]) -> Result<MetricsReport> {
    let inputs = MetricsInputs::from_beamformers(channels, beamformers, eval_pa, sigma2)?;
    let gamma = sindr(&inputs);
    let sum_rate = gamma.iter().map(|g| (1.0 + g).log2()).sum();
    Ok(MetricsReport {
        sindr: gamma.iter().copied().collect(),
        sum_rate,
        per_bs_tx_power: beamformers.iter().map(|w| w.norm_squared()).collect(),
        distortion_power: inputs.p.iter().copied().collect(),
        interference_power: (0..inputs.q.nrows())
            .map(|k| (0..inputs.q.ncols()).filter(|j| *j != k).map(|j| inputs.q[(k, j)].norm_sqr()).sum())
            .collect(),
    })
}

/// `n` equally spaced angles over `[−π/2, π/2]`.
pub fn angle_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| -FRAC_PI_2 + std::f64::consts::PI * i as f64 / (n - 1) as f64).collect(),
    }
}

pub const DEFAULT_PATTERN_POINTS: usize = 721;

/// Mean radiated power `a(θ)ᴴ(GWWᴴGᴴ + C_d)a(θ)` of one BS, linear scale.
pub fn radiated_power(w: &CMat, pa: &PaModel, angles: &[f64], fc: f64, spacing: f64) -> Vec<f64> {
    let nt = w.nrows();
    let gw = pa.bussgang_gain(w) * w;
    let cov = &gw * gw.adjoint() + pa.distortion_cov(w);
    angles
        .iter()
        .map(|&theta| {
            let a = steering_vector(theta, nt, fc, spacing);
            a.dotc(&(&cov * &a)).re.max(0.0)
        })
        .collect()
}

/// Radiation pattern per BS in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamPattern {
    pub angles: Vec<f64>,
    /// `power_db[b][i]` at `angles[i]`.
    pub power_db: Vec<Vec<f64>>,
}

/// Floor for the dB conversion of an exactly zero power.
const POWER_FLOOR: f64 = 1e-300;

impl BeamPattern {
    pub fn compute(beamformers: &[CMat], pa: &PaModel, angles: &[f64], fc: f64, spacing: f64) -> Self {
        let power_db = beamformers
            .iter()
            .map(|w| radiated_power(w, pa, angles, fc, spacing).into_iter().map(|p| 10.0 * p.max(POWER_FLOOR).log10()).collect())
            .collect();
        Self {
            angles: angles.to_vec(),
            power_db,
        }
    }

    /// `angle_deg`, then `bs{b}_db` and `bs{b}_norm_db` (peak-normalized) per BS.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["angle_deg".to_string()];
        for b in 0..self.power_db.len() {
            header.push(format!("bs{b}_db"));
            header.push(format!("bs{b}_norm_db"));
        }
        wtr.write_record(&header)?;
        let peaks: Vec<f64> = self.power_db.iter().map(|p| p.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
        for (i, theta) in self.angles.iter().enumerate() {
            let mut row = vec![format!("{:.4}", theta.to_degrees())];
            for (b, p) in self.power_db.iter().enumerate() {
                row.push(format!("{:.6}", p[i]));
                row.push(format!("{:.6}", p[i] - peaks[b]));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Mean sidelobe power over peak mainlobe power (linear) for a pattern
/// aimed at `targets`: angles with `|sin θ − sin θ_k| ≤ 2/Nt` for some
/// target count as mainlobe.
pub fn sidelobe_ratio(power: &[f64], angles: &[f64], targets: &[f64], nt: usize) -> f64 {
    let width = 2.0 / nt as f64;
    let mut main_peak: f64 = 0.0;
    let mut side_sum = 0.0;
    let mut side_n = 0usize;
    for (&p, &theta) in power.iter().zip(angles) {
        let in_main = targets.iter().any(|&t| (theta.sin() - t.sin()).abs() <= width);
        if in_main {
            main_peak = main_peak.max(p);
        } else {
            side_sum += p;
            side_n += 1;
        }
    }
    if side_n == 0 || main_peak <= 0.0 {
        return f64::NAN;
    }
    side_sum / side_n as f64 / main_peak
}

/// Ring backhaul: `N_iter(K² + K)` values.
pub fn overhead_ring(k: usize, n_iter: usize) -> u64 {
    let k = k as u64;
    n_iter as u64 * (k * k + k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StarOverhead {
    pub download: u64,
    pub upload: u64,
    pub total: u64,
}

/// Star backhaul: `N_iter·B(2K² + 2K)` down, `N_iter·B(2K² + K)` up.
pub fn overhead_star(b: usize, k: usize, n_iter: usize) -> StarOverhead {
    let (b, k, n) = (b as u64, k as u64, n_iter as u64);
    let download = n * b * (2 * k * k + 2 * k);
    let upload = n * b * (2 * k * k + k);
    StarOverhead {
        download,
        upload,
        total: download + upload,
    }
}

/// Centralized design: all CSI up and all beamformers down, `2NtKB` values.
pub fn overhead_central(b: usize, nt: usize, k: usize) -> u64 {
    2 * (nt * k * b) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Ring,
    Star,
    Central,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Ring => "ring",
            Topology::Star => "star",
            Topology::Central => "central",
        })
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ring" => Ok(Topology::Ring),
            "star" => Ok(Topology::Star),
            "central" => Ok(Topology::Central),
            other => Err(Error::InvalidConfig(format!("unknown solver '{other}'"))),
        }
    }
}

/// Order-of-magnitude operation counts:
/// ring `N_iter(N⁴ + 2√2N³ + √2N)` with `N = NtK`; star adds a factor B on
/// the local terms and `K⁶` at the center; central uses `N = NtKB`.
pub fn complexity_estimate(nt: usize, k: usize, b: usize, n_iter: usize, topology: Topology) -> f64 {
    let local = |n: f64| n.powi(4) + 2.0 * SQRT_2 * n.powi(3) + SQRT_2 * n;
    let n = (nt * k) as f64;
    let per_iter = match topology {
        Topology::Ring => local(n),
        Topology::Star => b as f64 * local(n) + (k as f64).powi(6),
        Topology::Central => local(n * b as f64),
    };
    n_iter as f64 * per_iter
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cr, CVec};
    use crate::scenario::half_wavelength;
    use crate::validation::{gaussian, gaussian_mat};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const FC: f64 = 28e9;

    #[test]
    fn mrt_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = gaussian_mat(&mut rng, 4, 1);
        let pt: f64 = 3.0;
        let w = &h * cr(pt.sqrt() / h.norm());
        let rep = evaluate(std::slice::from_ref(&h), &[w], &PaModel::ideal(), &[0.5]).unwrap();
        let expected = pt * h.norm_squared() / 0.5;
        assert!((rep.sindr[0] - expected).abs() < 1e-10 * expected);
        assert!((rep.sum_rate - (1.0 + expected).log2()).abs() < 1e-12);
        assert!((rep.per_bs_tx_power[0] - pt).abs() < 1e-12);
    }

    #[test]
    fn evaluate_is_pure_and_matches_fp() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h: Vec<CMat> = (0..2).map(|_| gaussian_mat(&mut rng, 3, 2)).collect();
        let w: Vec<CMat> = (0..2).map(|_| gaussian_mat(&mut rng, 3, 2)).collect();
        let pa = PaModel::reference();
        let a = evaluate(&h, &w, &pa, &[1.0, 2.0]).unwrap();
        let b = evaluate(&h, &w, &pa, &[1.0, 2.0]).unwrap();
        assert_eq!(a, b);
        let inputs = MetricsInputs::from_beamformers(&h, &w, &pa, &[1.0, 2.0]).unwrap();
        assert!((a.sum_rate - crate::fp::sum_rate(&inputs)).abs() < 1e-14);
        assert!(a.distortion_power.iter().all(|&p| p >= 0.0));
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn pattern_peaks_at_steered_angle() {
        let nt = 8;
        let d = half_wavelength(FC);
        let theta0 = 0.4;
        let scale = 0.3;
        let w = CMat::from_column_slice(nt, 1, steering_vector(theta0, nt, FC, d).scale(scale).as_slice());
        let angles = angle_grid(DEFAULT_PATTERN_POINTS);
        let p = radiated_power(&w, &PaModel::ideal(), &angles, FC, d);
        let (imax, pmax) = p.iter().enumerate().fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert!((angles[imax] - theta0).abs() < 0.01);
        let at = radiated_power(&w, &PaModel::ideal(), &[theta0], FC, d)[0];
        assert!((at - (nt * nt) as f64 * scale * scale).abs() < 1e-10);
        assert!(pmax <= at * (1.0 + 1e-12));
    }

    #[test]
    fn ideal_pattern_is_plain_array_factor_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nt = 6;
        let d = half_wavelength(FC);
        let w = gaussian_mat(&mut rng, nt, 2);
        let angles = angle_grid(181);
        let p = radiated_power(&w, &PaModel::ideal(), &angles, FC, d);
        for (&theta, &v) in angles.iter().zip(&p) {
            let a = steering_vector(theta, nt, FC, d);
            let direct = (w.adjoint() * &a).norm_squared();
            assert!((v - direct).abs() < 1e-10 * (1.0 + direct));
        }
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        assert!(mean <= nt as f64 * w.norm_squared());
        let pat = BeamPattern::compute(&[w], &PaModel::reference(), &angles, FC, d);
        assert!(pat.power_db[0].iter().all(|v| v.is_finite()));
        assert_eq!(pat.angles.len(), pat.power_db[0].len());
    }

    #[test]
    fn pattern_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nt = 4;
        let d = half_wavelength(FC);
        let pa = PaModel::reference();
        let w = gaussian_mat(&mut rng, nt, 2) * cr(0.6);
        let angles = [-0.7, 0.0, 0.5];
        let formula = radiated_power(&w, &pa, &angles, FC, d);
        let steer: Vec<CVec> = angles.iter().map(|&t| steering_vector(t, nt, FC, d)).collect();
        let mut acc = [0.0; 3];
        let n = 100_000;
        for _ in 0..n {
            let s = CVec::from_fn(2, |_, _| gaussian(&mut rng));
            let z = pa.amplify(&(&w * s));
            for (i, a) in steer.iter().enumerate() {
                acc[i] += a.dotc(&z).norm_sqr();
            }
        }
        for i in 0..3 {
            let mc = acc[i] / n as f64;
            assert!((mc - formula[i]).abs() <= 0.03 * formula[i], "{mc} vs {}", formula[i]);
        }
    }

    #[test]
    fn overhead_formulas() {
        assert_eq!(overhead_ring(6, 1), 42);
        assert_eq!(overhead_star(4, 6, 1).total, 648);
        assert_eq!(overhead_ring(6, 10), 420);
        assert_eq!(overhead_star(4, 6, 10).total, 6480);
        assert_eq!(overhead_ring(6, 0), 0);
        assert_eq!(overhead_star(4, 6, 0).total, 0);
        assert_eq!(overhead_central(4, 16, 6), 768);
    }

    #[test]
    fn complexity_formulas() {
        let ring = complexity_estimate(16, 6, 4, 1, Topology::Ring);
        assert!(ring >= 84_934_656.0);
        assert!((ring - 84_934_656.0) / ring < 0.05);
        let star = complexity_estimate(16, 6, 4, 1, Topology::Star);
        assert!((star - 4.0 * ring - 6f64.powi(6)).abs() < 1e-6 * star);
        assert_eq!(complexity_estimate(16, 6, 4, 3, Topology::Ring), 3.0 * ring);
        assert_eq!("Star".parse::<Topology>().unwrap(), Topology::Star);
    }

    #[test]
    fn sidelobe_ratio_prefers_focused_beams() {
        let nt = 16;
        let d = half_wavelength(FC);
        let angles = angle_grid(DEFAULT_PATTERN_POINTS);
        let theta0 = 0.3;
        let focused = CMat::from_column_slice(nt, 1, steering_vector(theta0, nt, FC, d).as_slice());
        let mut spread = focused.clone();
        spread[(0, 0)] *= cr(4.0);
        let r1 = sidelobe_ratio(&radiated_power(&focused, &PaModel::ideal(), &angles, FC, d), &angles, &[theta0], nt);
        let r2 = sidelobe_ratio(&radiated_power(&spread, &PaModel::ideal(), &angles, FC, d), &angles, &[theta0], nt);
        assert!(r1 < r2);
    }
}
