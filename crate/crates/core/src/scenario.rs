//! Network geometry, sparse mmWave multipath channels, and system-level
//! configuration.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, CMat, CVec};

/// Speed of light used by the array model, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Radius of the circle carrying the default BS layout (the corners of the
/// 400 m square).
pub const DEFAULT_BS_RADIUS: f64 = 200.0 * SQRT_2;

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watt_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// How the path-loss value enters the channel coefficient.
///
/// `Amplitude` multiplies the steering vector by the path-loss value itself.
/// `Power` treats the path-loss value as a power gain and uses its square
/// root as the amplitude; with the default link budget (−70 dBm noise, tens of
/// dBm transmit power) this is the convention that yields non-degenerate SNRs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GainConvention {
    Amplitude,
    #[default]
    Power,
}

/// System-level configuration. Field names double as the JSON schema.
///
/// The array model uses `c = 2.998e8 m/s` ([`SPEED_OF_LIGHT`]); the default
/// builders set `antenna_spacing` to half the carrier wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    pub num_bs: usize,
    pub num_antennas: usize,
    pub num_ues: usize,
    /// Per-BS power budget in watts.
    pub power_budget: f64,
    /// Noise power per UE in watts (length `num_ues`).
    pub noise_power: Vec<f64>,
    pub carrier_freq: f64,
    pub antenna_spacing: f64,
    pub num_paths: usize,
    pub pathloss_ref_db: f64,
    pub ref_distance: f64,
    pub los_exponent: f64,
    pub nlos_exponent_range: [f64; 2],
    pub nlos_distance_range: [f64; 2],
    pub ue_area_radius: f64,
    pub rng_seed: u64,
    /// Fixed BS coordinates; `None` selects the default layout.
    pub bs_positions: Option<Vec<[f64; 2]>>,
    pub gain_convention: GainConvention,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl SystemConfig {
    /// B=4, Nt=16, K=6 at 28 GHz, 38 dBm per BS, −70 dBm noise.
    pub fn full_scale() -> Self {
        let fc = 28e9;
        Self {
            num_bs: 4,
            num_antennas: 16,
            num_ues: 6,
            power_budget: dbm_to_watt(38.0),
            noise_power: vec![dbm_to_watt(-70.0); 6],
            carrier_freq: fc,
            antenna_spacing: half_wavelength(fc),
            num_paths: 3,
            pathloss_ref_db: 30.0,
            ref_distance: 1.0,
            los_exponent: 2.5,
            nlos_exponent_range: [3.0, 3.5],
            nlos_distance_range: [200.0, 400.0],
            ue_area_radius: 200.0,
            rng_seed: 1,
            bs_positions: None,
            gain_convention: GainConvention::Power,
        }
    }

    /// Desk-scale profile: B=2, Nt=4, K=2.
    pub fn desk() -> Self {
        Self::full_scale().with_dims(2, 4, 2)
    }

    /// Change (B, Nt, K), resizing the noise vector with its first entry.
    pub fn with_dims(mut self, num_bs: usize, num_antennas: usize, num_ues: usize) -> Self {
        let sigma2 = self.noise_power.first().copied().unwrap_or(dbm_to_watt(-70.0));
        self.num_bs = num_bs;
        self.num_antennas = num_antennas;
        self.num_ues = num_ues;
        self.noise_power = vec![sigma2; num_ues];
        self
    }

    pub fn with_power_dbm(mut self, dbm: f64) -> Self {
        self.power_budget = dbm_to_watt(dbm);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.num_bs == 0 || self.num_antennas == 0 || self.num_ues == 0 || self.num_paths == 0 {
            return bad("num_bs, num_antennas, num_ues and num_paths must be >= 1");
        }
        if !(self.power_budget > 0.0) || !self.power_budget.is_finite() {
            return bad("power_budget must be positive");
        }
        if self.noise_power.len() != self.num_ues {
            return bad("noise_power must have one entry per UE");
        }
        if self.noise_power.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return bad("noise_power entries must be positive");
        }
        if !(self.ref_distance > 0.0) {
            return bad("ref_distance must be positive");
        }
        if !(self.carrier_freq > 0.0) || !(self.antenna_spacing > 0.0) {
            return bad("carrier_freq and antenna_spacing must be positive");
        }
        if self.ue_area_radius < 0.0 {
            return bad("ue_area_radius must be non-negative");
        }
        let [lo, hi] = self.nlos_exponent_range;
        if lo > hi {
            return bad("nlos_exponent_range must be [low, high]");
        }
        let [dlo, dhi] = self.nlos_distance_range;
        if !(dlo > 0.0) || dlo > dhi {
            return bad("nlos_distance_range must be positive and ordered");
        }
        if let Some(pos) = &self.bs_positions {
            if pos.len() != self.num_bs {
                return bad("bs_positions must list num_bs coordinates");
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn half_wavelength(fc: f64) -> f64 {
    SPEED_OF_LIGHT / fc / 2.0
}

/// BS/UE positions and per-path angles and distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGeometry {
    pub bs_positions: Vec<[f64; 2]>,
    pub ue_positions: Vec<[f64; 2]>,
    /// `path_angles[b][k][m]`, radians in [−π/2, π/2]; m = 0 is the LoS path.
    pub path_angles: Vec<Vec<Vec<f64>>>,
    /// `path_distances[b][k][m]`, meters.
    pub path_distances: Vec<Vec<Vec<f64>>>,
}

/// Per-BS channel matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// `h[b]` is Nt×K; column k is h_{b,k}.
    pub h: Vec<CMat>,
    /// Path gains `alpha[b][k][m]` as they multiply the steering vectors.
    pub alpha: Vec<Vec<Vec<Complex64>>>,
    /// Path-loss exponents `kappa[b][k][m]`.
    pub kappa: Vec<Vec<Vec<f64>>>,
}

impl ChannelSet {
    pub fn num_bs(&self) -> usize {
        self.h.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.h[0].nrows()
    }

    pub fn num_ues(&self) -> usize {
        self.h[0].ncols()
    }

    /// One row per (b, antenna, ue): `b,antenna,ue,re,im`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["b", "antenna", "ue", "re", "im"])?;
        for (b, hb) in self.h.iter().enumerate() {
            for n in 0..hb.nrows() {
                for k in 0..hb.ncols() {
                    let z = hb[(n, k)];
                    wtr.write_record(&[
                        b.to_string(),
                        n.to_string(),
                        k.to_string(),
                        format!("{:e}", z.re),
                        format!("{:e}", z.im),
                    ])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(f)
    }
}

/// Default BS layout: the four corners (±200, ±200) m for B = 4, otherwise
/// equally spaced on the 200√2 m circle starting from the (−200, 200) corner.
pub fn default_bs_positions(num_bs: usize) -> Vec<[f64; 2]> {
    if num_bs == 4 {
        return vec![[-200.0, 200.0], [200.0, 200.0], [200.0, -200.0], [-200.0, -200.0]];
    }
    (0..num_bs)
        .map(|b| {
            let phi = 0.75 * PI - 2.0 * PI * b as f64 / num_bs as f64;
            [DEFAULT_BS_RADIUS * phi.cos(), DEFAULT_BS_RADIUS * phi.sin()]
        })
        .collect()
}

/// Angle of `to` seen from `from`, folded into [−π/2, π/2] (the array cannot
/// distinguish front from back).
fn los_angle(from: [f64; 2], to: [f64; 2]) -> f64 {
    let dx = to[0] - from[0];
    let dy = to[1] - from[1];
    if dx == 0.0 {
        if dy == 0.0 {
            0.0
        } else {
            FRAC_PI_2.copysign(dy)
        }
    } else {
        (dy / dx).atan()
    }
}

/// Place BSs and UEs and draw the NLoS path geometry.
///
/// Draw order (fixed for reproducibility): K UE positions (radius then
/// angle), then for each (b, k) the M−1 NLoS (angle, distance) pairs.
pub fn place_network<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> Result<NetworkGeometry> {
    config.validate()?;
    let bs_positions = config
        .bs_positions
        .clone()
        .unwrap_or_else(|| default_bs_positions(config.num_bs));

    let ue_positions: Vec<[f64; 2]> = (0..config.num_ues)
        .map(|_| {
            let r = config.ue_area_radius * rng.random::<f64>().sqrt();
            let phi = 2.0 * PI * rng.random::<f64>();
            [r * phi.cos(), r * phi.sin()]
        })
        .collect();

    let [dlo, dhi] = config.nlos_distance_range;
    let mut path_angles = Vec::with_capacity(config.num_bs);
    let mut path_distances = Vec::with_capacity(config.num_bs);
    for bs in &bs_positions {
        let mut ang_b = Vec::with_capacity(config.num_ues);
        let mut dist_b = Vec::with_capacity(config.num_ues);
        for ue in &ue_positions {
            let mut ang = Vec::with_capacity(config.num_paths);
            let mut dist = Vec::with_capacity(config.num_paths);
            ang.push(los_angle(*bs, *ue));
            dist.push(((ue[0] - bs[0]).powi(2) + (ue[1] - bs[1]).powi(2)).sqrt());
            for _ in 1..config.num_paths {
                ang.push(rng.random_range(-FRAC_PI_2..=FRAC_PI_2));
                dist.push(if dhi > dlo { rng.random_range(dlo..=dhi) } else { dlo });
            }
            ang_b.push(ang);
            dist_b.push(dist);
        }
        path_angles.push(ang_b);
        path_distances.push(dist_b);
    }

    Ok(NetworkGeometry {
        bs_positions,
        ue_positions,
        path_angles,
        path_distances,
    })
}

/// Path loss `10^(−C0/10) · (r/D0)^(−κ)`.
pub fn path_loss(r: f64, kappa: f64, c0_db: f64, d0: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("path_loss: distance must be positive, got {r}")));
    }
    if !(d0 > 0.0) {
        return Err(Error::Domain(format!("path_loss: reference distance must be positive, got {d0}")));
    }
    Ok(10f64.powf(-c0_db / 10.0) * (r / d0).powf(-kappa))
}

/// ULA response: element n is `exp(−j 2π fc n d sin θ / c)`.
pub fn steering_vector(theta: f64, nt: usize, fc: f64, d: f64) -> CVec {
    let phase = 2.0 * PI * fc * d * theta.sin() / SPEED_OF_LIGHT;
    CVec::from_fn(nt, |n, _| {
        let p = -phase * n as f64;
        c(p.cos(), p.sin())
    })
}

/// Sparse multipath channel `h_{b,k} = Σ_m α_bkm a(θ_bkm)`.
///
/// The LoS path uses `los_exponent`; each NLoS path draws its exponent
/// uniformly from `nlos_exponent_range`, once per (b, k, m).
pub fn generate_channel<R: Rng + ?Sized>(
    geom: &NetworkGeometry,
    config: &SystemConfig,
    rng: &mut R,
) -> Result<ChannelSet> {
    config.validate()?;
    let nb = geom.bs_positions.len();
    let nk = geom.ue_positions.len();
    if nb != config.num_bs || nk != config.num_ues {
        return Err(Error::Dimension(format!(
            "geometry has {nb} BSs / {nk} UEs, config expects {} / {}",
            config.num_bs, config.num_ues
        )));
    }
    let nt = config.num_antennas;
    let [klo, khi] = config.nlos_exponent_range;
    let mut h = Vec::with_capacity(nb);
    let mut alpha = Vec::with_capacity(nb);
    let mut kappa = Vec::with_capacity(nb);
    for b in 0..nb {
        let mut hb = CMat::zeros(nt, nk);
        let mut alpha_b = Vec::with_capacity(nk);
        let mut kappa_b = Vec::with_capacity(nk);
        for k in 0..nk {
            let mut alpha_bk = Vec::new();
            let mut kappa_bk = Vec::new();
            for (m, (&theta, &r)) in geom.path_angles[b][k]
                .iter()
                .zip(&geom.path_distances[b][k])
                .enumerate()
            {
                let kap = if m == 0 {
                    config.los_exponent
                } else if khi > klo {
                    rng.random_range(klo..=khi)
                } else {
                    klo
                };
                let pl = path_loss(r, kap, config.pathloss_ref_db, config.ref_distance)?;
                let amp = match config.gain_convention {
                    GainConvention::Amplitude => pl,
                    GainConvention::Power => pl.sqrt(),
                };
                let a = steering_vector(theta, nt, config.carrier_freq, config.antenna_spacing);
                let mut col = hb.column_mut(k);
                col += a * c(amp, 0.0);
                alpha_bk.push(c(amp, 0.0));
                kappa_bk.push(kap);
            }
            alpha_b.push(alpha_bk);
            kappa_b.push(kappa_bk);
        }
        h.push(hb);
        alpha.push(alpha_b);
        kappa.push(kappa_b);
    }
    Ok(ChannelSet { h, alpha, kappa })
}

/// A generated geometry plus its channels.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: SystemConfig,
    pub geometry: NetworkGeometry,
    pub channels: ChannelSet,
}

impl Scenario {
    /// Deterministic in `config.rng_seed`.
    pub fn generate(config: &SystemConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let geometry = place_network(config, &mut rng)?;
        let channels = generate_channel(&geometry, config, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            geometry,
            channels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_is_the_four_corners() {
        let pos = default_bs_positions(4);
        assert_eq!(pos, vec![[-200.0, 200.0], [200.0, 200.0], [200.0, -200.0], [-200.0, -200.0]]);
        for p in default_bs_positions(3) {
            assert!(((p[0].powi(2) + p[1].powi(2)).sqrt() - DEFAULT_BS_RADIUS).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_radius_puts_ues_at_origin() {
        let mut cfg = SystemConfig::full_scale();
        cfg.ue_area_radius = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = place_network(&cfg, &mut rng).unwrap();
        for ue in &g.ue_positions {
            assert_eq!(ue[0].abs() + ue[1].abs(), 0.0);
        }
        for b in 0..4 {
            for k in 0..6 {
                assert!((g.path_distances[b][k][0] - 200.0 * SQRT_2).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn geometry_invariants() {
        let cfg = SystemConfig::full_scale();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = place_network(&cfg, &mut rng).unwrap();
        for b in 0..cfg.num_bs {
            for k in 0..cfg.num_ues {
                let bs = g.bs_positions[b];
                let ue = g.ue_positions[k];
                let los = ((ue[0] - bs[0]).powi(2) + (ue[1] - bs[1]).powi(2)).sqrt();
                assert_eq!(g.path_distances[b][k][0], los);
                for m in 0..cfg.num_paths {
                    assert!(g.path_distances[b][k][m] > 0.0);
                    assert!(g.path_angles[b][k][m].abs() <= FRAC_PI_2);
                }
            }
        }
    }

    #[test]
    fn path_loss_values() {
        assert!((path_loss(1.0, 2.5, 30.0, 1.0).unwrap() - 1e-3).abs() < 1e-18);
        let v = path_loss(100.0, 2.5, 30.0, 1.0).unwrap();
        assert!((v - 1e-8).abs() / 1e-8 < 1e-12);
        assert_eq!(path_loss(123.0, 0.0, 30.0, 1.0).unwrap(), 10f64.powf(-3.0));
        assert!(path_loss(0.0, 2.5, 30.0, 1.0).is_err());
        assert!(path_loss(-1.0, 2.5, 30.0, 1.0).is_err());
    }

    #[test]
    fn steering_vector_cases() {
        let fc = 28e9;
        let d = half_wavelength(fc);
        let a = steering_vector(0.0, 8, fc, d);
        assert!(a.iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-15));
        let a1 = steering_vector(0.7, 1, fc, d);
        assert_eq!(a1.len(), 1);
        assert_eq!(a1[0], c(1.0, 0.0));
        let ah = steering_vector(FRAC_PI_2, 6, fc, d);
        for n in 0..6 {
            let expect = if n % 2 == 0 { 1.0 } else { -1.0 };
            assert!((ah[n] - c(expect, 0.0)).norm() < 1e-12, "n={n}: {}", ah[n]);
        }
    }

    fn single_path_config(gain: GainConvention) -> SystemConfig {
        let mut cfg = SystemConfig::full_scale().with_dims(1, 8, 1);
        cfg.num_paths = 1;
        cfg.gain_convention = gain;
        cfg
    }

    fn single_path_geometry(r: f64, theta: f64) -> NetworkGeometry {
        NetworkGeometry {
            bs_positions: vec![[0.0, 0.0]],
            ue_positions: vec![[r, 0.0]],
            path_angles: vec![vec![vec![theta]]],
            path_distances: vec![vec![vec![r]]],
        }
    }

    #[test]
    fn broadside_single_path_is_constant() {
        let cfg = single_path_config(GainConvention::Amplitude);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ch = generate_channel(&single_path_geometry(50.0, 0.0), &cfg, &mut rng).unwrap();
        let alpha = path_loss(50.0, cfg.los_exponent, 30.0, 1.0).unwrap();
        for n in 0..8 {
            assert!((ch.h[0][(n, 0)] - c(alpha, 0.0)).norm() < 1e-20);
        }
    }

    #[test]
    fn channel_norm_follows_path_loss_law() {
        let theta = 0.3;
        for (gain, factor) in [(GainConvention::Amplitude, 1.0), (GainConvention::Power, 0.5)] {
            let cfg = single_path_config(gain);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let near = generate_channel(&single_path_geometry(40.0, theta), &cfg, &mut rng).unwrap();
            let far = generate_channel(&single_path_geometry(80.0, theta), &cfg, &mut rng).unwrap();
            let ratio = far.h[0].norm() / near.h[0].norm();
            let expect = 2f64.powf(-cfg.los_exponent * factor);
            assert!((ratio - expect).abs() / expect < 1e-12);
            // Single path: constant element magnitude.
            let m0 = far.h[0][(0, 0)].norm();
            assert!(far.h[0].iter().all(|z| (z.norm() - m0).abs() < 1e-12 * m0));
        }
    }

    #[test]
    fn scenario_is_deterministic() {
        let cfg = SystemConfig::desk().with_seed(42);
        let a = Scenario::generate(&cfg).unwrap();
        let b = Scenario::generate(&cfg).unwrap();
        assert_eq!(a.geometry, b.geometry);
        assert_eq!(a.channels, b.channels);
        let other = Scenario::generate(&cfg.clone().with_seed(43)).unwrap();
        assert_ne!(a.channels, other.channels);
    }

    #[test]
    fn config_json_round_trip_and_validation() {
        let cfg = SystemConfig::desk();
        let text = cfg.to_json().unwrap();
        assert!(text.contains("\"num_bs\""));
        assert!(text.contains("\"noise_power\""));
        assert_eq!(SystemConfig::from_json(&text).unwrap(), cfg);
        let mut bad = cfg.clone();
        bad.noise_power = vec![1e-10];
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.power_budget = 0.0;
        assert!(bad.validate().is_err());
        // Missing fields fall back to the full-scale profile.
        let partial = SystemConfig::from_json(r#"{"rng_seed": 9}"#).unwrap();
        assert_eq!(partial.rng_seed, 9);
        assert_eq!(partial.num_antennas, 16);
    }

    #[test]
    fn default_spacing_is_half_wavelength() {
        let cfg = SystemConfig::full_scale();
        assert!((cfg.antenna_spacing - cfg.wavelength() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn channel_csv_has_one_row_per_entry() {
        let sc = Scenario::generate(&SystemConfig::desk()).unwrap();
        let mut buf = Vec::new();
        sc.channels.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 4 * 2);
        assert!(text.starts_with("b,antenna,ue,re,im"));
    }
}
