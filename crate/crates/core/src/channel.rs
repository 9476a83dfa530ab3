//! Frequency-selective MIMO channel simulation.
//!
//! A realization is a tapped delay line with one independent circularly
//! symmetric Gaussian gain per (tap, rx, tx); its frequency response is
//! evaluated directly at every occupied subcarrier.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cmatrix::{CMatrix, C64};
use crate::rng::{self, Domain};

const MODEL_B: &str = include_str!("../data/model-b.tsv");

/// Delay tolerance for the on-grid FFT path.
pub const GRID_TOLERANCE_S: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("unknown channel profile `{0}`")]
    UnknownProfile(String),
    #[error("profile line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("profile has no taps")]
    EmptyProfile,
    #[error("tap delays must start at 0 and strictly increase (tap {index}: {delay_ns} ns)")]
    BadDelays { index: usize, delay_ns: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("tap delay {delay_ns} ns is not on the {sample_ns} ns sample grid")]
    OffGrid { delay_ns: f64, sample_ns: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("reading profile: {0}")]
    Io(#[from] std::io::Error),
}

/// The 802.11ac 80 MHz populated subcarriers: ±2 … ±122 (242 indices).
pub fn vht80_subcarriers() -> Vec<i32> {
    (-122..=-2).chain(2..=122).collect()
}

fn default_n() -> usize {
    2
}
fn default_carrier() -> f64 {
    5.25e9
}
fn default_bandwidth() -> f64 {
    80e6
}
fn default_fft() -> usize {
    256
}
fn default_samples() -> usize {
    10_000
}
fn default_seed() -> u64 {
    2021
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default = "default_n")]
    pub n_tx: usize,
    #[serde(default = "default_n")]
    pub n_rx: usize,
    #[serde(default = "default_carrier")]
    pub carrier_freq_hz: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default = "default_fft")]
    pub fft_size: usize,
    #[serde(default = "vht80_subcarriers")]
    pub occupied_subcarriers: Vec<i32>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Per-entry variance of additive measurement noise on the CSI. Zero
    /// (the default) generates noiseless CSI.
    #[serde(default)]
    pub csi_noise_var: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_tx: default_n(),
            n_rx: default_n(),
            carrier_freq_hz: default_carrier(),
            bandwidth_hz: default_bandwidth(),
            fft_size: default_fft(),
            occupied_subcarriers: vht80_subcarriers(),
            n_samples: default_samples(),
            seed: default_seed(),
            csi_noise_var: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: String| Err(ChannelError::InvalidConfig(m));
        if self.n_tx == 0 || self.n_rx == 0 {
            return bad("antenna counts must be at least 1".into());
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return bad("bandwidth must be positive".into());
        }
        if !(self.carrier_freq_hz > 0.0 && self.carrier_freq_hz.is_finite()) {
            return bad("carrier frequency must be positive".into());
        }
        if self.fft_size == 0 {
            return bad("fft_size must be positive".into());
        }
        if self.occupied_subcarriers.is_empty() {
            return bad("no occupied subcarriers".into());
        }
        let half = (self.fft_size / 2) as i64;
        let mut seen = std::collections::BTreeSet::new();
        for &k in &self.occupied_subcarriers {
            if (k as i64) < -half || (k as i64) >= half {
                return bad(format!("subcarrier {k} outside [-{half}, {half})"));
            }
            if !seen.insert(k) {
                return bad(format!("subcarrier {k} listed twice"));
            }
        }
        if !(self.csi_noise_var >= 0.0 && self.csi_noise_var.is_finite()) {
            return bad("csi_noise_var must be a nonnegative number".into());
        }
        Ok(())
    }

    pub fn subcarrier_spacing_hz(&self) -> f64 {
        self.bandwidth_hz / self.fft_size as f64
    }

    pub fn sample_period_s(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }

    pub fn n_subcarriers(&self) -> usize {
        self.occupied_subcarriers.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub delay_ns: f64,
    /// Normalized linear power.
    pub power: f64,
}

/// Power-delay profile with linear tap powers summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub name: String,
    pub taps: Vec<Tap>,
}

impl ChannelProfile {
    /// Build from `(delay_ns, power_db)` pairs, normalizing total power to one.
    pub fn from_db(name: &str, taps_db: &[(f64, f64)]) -> Result<Self, ChannelError> {
        if taps_db.is_empty() {
            return Err(ChannelError::EmptyProfile);
        }
        for (i, &(d, p)) in taps_db.iter().enumerate() {
            let ok_delay = d.is_finite() && if i == 0 { d == 0.0 } else { d > taps_db[i - 1].0 };
            if !ok_delay {
                return Err(ChannelError::BadDelays { index: i, delay_ns: d });
            }
            if !p.is_finite() {
                return Err(ChannelError::Parse { line: i + 1, msg: format!("power {p} dB is not finite") });
            }
        }
        let lin: Vec<f64> = taps_db.iter().map(|(_, p)| 10f64.powf(p / 10.0)).collect();
        let total: f64 = lin.iter().sum();
        let taps = taps_db.iter().zip(&lin).map(|(&(d, _), p)| Tap { delay_ns: d, power: p / total }).collect();
        Ok(ChannelProfile { name: name.to_string(), taps })
    }

    /// Parse the tab-separated `delay_ns<TAB>power_db` format; `#` starts a comment.
    pub fn parse(name: &str, text: &str) -> Result<Self, ChannelError> {
        let mut taps = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t').map(str::trim).filter(|f| !f.is_empty());
            let (d, p) = match (fields.next(), fields.next(), fields.next()) {
                (Some(d), Some(p), None) => (d, p),
                _ => return Err(ChannelError::Parse { line: n + 1, msg: "expected `delay_ns<TAB>power_db`".into() }),
            };
            let num = |s: &str| s.parse::<f64>().map_err(|e| ChannelError::Parse { line: n + 1, msg: format!("`{s}`: {e}") });
            taps.push((num(d)?, num(p)?));
        }
        Self::from_db(name, &taps)
    }

    pub fn n_taps(&self) -> usize {
        self.taps.len()
    }

    pub fn total_power(&self) -> f64 {
        self.taps.iter().map(|t| t.power).sum()
    }
}

/// Resolve a built-in profile name (`model-b`, `flat1`) or a profile file path.
pub fn load_profile(source: &str) -> Result<ChannelProfile, ChannelError> {
    match source.to_ascii_lowercase().as_str() {
        "model-b" | "modelb" | "tgac-b" => return ChannelProfile::parse("model-b", MODEL_B),
        "flat1" => return ChannelProfile::from_db("flat1", &[(0.0, 0.0)]),
        _ => {}
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(ChannelError::UnknownProfile(source.to_string()));
    }
    let text = std::fs::read_to_string(path)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or(source);
    ChannelProfile::parse(name, &text)
}

/// Tap gains of one realization, indexed `(tap, rx, tx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub n_rx: usize,
    pub n_tx: usize,
    pub delays_s: Vec<f64>,
    pub gains: Vec<C64>,
}

impl ChannelRealization {
    pub fn n_taps(&self) -> usize {
        self.delays_s.len()
    }

    pub fn gain(&self, tap: usize, i: usize, j: usize) -> C64 {
        self.gains[(tap * self.n_rx + i) * self.n_tx + j]
    }
}

/// Circularly symmetric complex Gaussian with the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// Realization `index` of the ensemble defined by `config.seed`.
pub fn draw_realization(profile: &ChannelProfile, config: &SimConfig, index: u64) -> ChannelRealization {
    let mut rng = rng::stream(config.seed, Domain::Realization, index);
    let mut gains = Vec::with_capacity(profile.n_taps() * config.n_rx * config.n_tx);
    for tap in &profile.taps {
        for _ in 0..config.n_rx * config.n_tx {
            gains.push(complex_gaussian(&mut rng, tap.power));
        }
    }
    ChannelRealization {
        n_rx: config.n_rx,
        n_tx: config.n_tx,
        delays_s: profile.taps.iter().map(|t| t.delay_ns * 1e-9).collect(),
        gains,
    }
}

/// CSI for every occupied subcarrier, indexed `(k, rx, tx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiTensor {
    pub n_rx: usize,
    pub n_tx: usize,
    pub subcarriers: Vec<i32>,
    pub h: Vec<C64>,
}

impl CsiTensor {
    pub fn n_subcarriers(&self) -> usize {
        self.subcarriers.len()
    }

    /// `H[k]` for the `k`-th occupied subcarrier (position, not index).
    pub fn matrix(&self, k: usize) -> CMatrix {
        let n = self.n_rx * self.n_tx;
        CMatrix::from_rows(self.n_rx, self.n_tx, self.h[k * n..(k + 1) * n].to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Self {
        CsiTensor { h: self.h.iter().map(|v| v * c).collect(), ..self.clone() }
    }
}

/// `H[k]_{ij} = Σ_t g_{t,ij} · exp(−j2π f_k τ_t)` with `f_k = k · Δf`.
pub fn to_frequency_response(r: &ChannelRealization, config: &SimConfig) -> CsiTensor {
    let df = config.subcarrier_spacing_hz();
    let pairs = r.n_rx * r.n_tx;
    let mut h = vec![C64::new(0.0, 0.0); config.n_subcarriers() * pairs];
    for (ki, &k) in config.occupied_subcarriers.iter().enumerate() {
        let fk = k as f64 * df;
        for (t, tau) in r.delays_s.iter().enumerate() {
            let phasor = C64::from_polar(1.0, -2.0 * PI * fk * tau);
            for p in 0..pairs {
                h[ki * pairs + p] += r.gains[t * pairs + p] * phasor;
            }
        }
    }
    CsiTensor { n_rx: r.n_rx, n_tx: r.n_tx, subcarriers: config.occupied_subcarriers.clone(), h }
}

/// FFT evaluation of the same response; every delay must sit on the
/// `1 / bandwidth` sample grid.
pub fn to_frequency_response_fft(r: &ChannelRealization, config: &SimConfig) -> Result<CsiTensor, ChannelError> {
    let n = config.fft_size;
    let ts = config.sample_period_s();
    let mut lags = Vec::with_capacity(r.n_taps());
    for &tau in &r.delays_s {
        let lag = (tau / ts).round();
        if (lag * ts - tau).abs() > GRID_TOLERANCE_S {
            return Err(ChannelError::OffGrid { delay_ns: tau * 1e9, sample_ns: ts * 1e9 });
        }
        if lag as usize >= n {
            return Err(ChannelError::OffGrid { delay_ns: tau * 1e9, sample_ns: ts * 1e9 });
        }
        lags.push(lag as usize);
    }
    let pairs = r.n_rx * r.n_tx;
    let mut planner = rustfft::FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut h = vec![C64::new(0.0, 0.0); config.n_subcarriers() * pairs];
    for p in 0..pairs {
        let mut buf = vec![C64::new(0.0, 0.0); n];
        for (t, &lag) in lags.iter().enumerate() {
            buf[lag] += r.gains[t * pairs + p];
        }
        fft.process(&mut buf);
        for (ki, &k) in config.occupied_subcarriers.iter().enumerate() {
            h[ki * pairs + p] = buf[k.rem_euclid(n as i32) as usize];
        }
    }
    Ok(CsiTensor { n_rx: r.n_rx, n_tx: r.n_tx, subcarriers: config.occupied_subcarriers.clone(), h })
}

/// Realization `index` as CSI, including optional measurement noise.
pub fn simulate_csi(profile: &ChannelProfile, config: &SimConfig, index: u64) -> CsiTensor {
    let mut csi = to_frequency_response(&draw_realization(profile, config, index), config);
    if config.csi_noise_var > 0.0 {
        let mut rng = rng::stream(config.seed, Domain::Noise, index);
        for v in &mut csi.h {
            *v += complex_gaussian(&mut rng, config.csi_noise_var);
        }
    }
    csi
}

/// Polar form of one CSI entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmplitudePhase {
    pub amplitude: f64,
    /// Radians in (−π, π].
    pub phase: f64,
}

pub fn amp_phase(h: C64) -> AmplitudePhase {
    if h.re == 0.0 && h.im == 0.0 {
        return AmplitudePhase { amplitude: 0.0, phase: 0.0 };
    }
    let mut phase = h.im.atan2(h.re);
    if phase <= -PI {
        phase += 2.0 * PI;
    }
    AmplitudePhase { amplitude: h.norm(), phase }
}

/// `y = H x + z` with `z` of per-entry variance `noise_var`.
pub fn apply_channel<R: Rng + ?Sized>(h: &CMatrix, x: &[C64], noise_var: f64, rng: &mut R) -> Result<Vec<C64>, ChannelError> {
    if x.len() != h.cols {
        return Err(ChannelError::Shape(format!("x has {} entries, H has {} columns", x.len(), h.cols)));
    }
    let mut y = h.matvec(x);
    if noise_var > 0.0 {
        for v in &mut y {
            *v += complex_gaussian(rng, noise_var);
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn flat_profile_is_single_unit_tap() {
        let p = load_profile("flat1").unwrap();
        assert_eq!(p.n_taps(), 1);
        assert_eq!(p.taps[0].power, 1.0);
        assert_eq!(p.taps[0].delay_ns, 0.0);
    }

    #[test]
    fn model_b_linear_powers_sum_matches_table() {
        // Sum of 10^(dB/10) over the nine combined taps, evaluated by hand.
        let raw: f64 = MODEL_B
            .lines()
            .filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
            .map(|l| 10f64.powf(l.split('\t').nth(1).unwrap().trim().parse::<f64>().unwrap() / 10.0))
            .sum();
        assert!(approx(raw, 2.334_073_833_680_951, 1e-12), "{raw}");
        let p = load_profile("model-b").unwrap();
        assert_eq!(p.n_taps(), 9);
        assert!(approx(p.total_power(), 1.0, 1e-9));
        assert!(approx(p.taps[0].power, 0.428_435_461_453_655_1, 1e-12));
        assert!(p.taps.windows(2).all(|w| w[1].delay_ns - w[0].delay_ns == 10.0));
    }

    #[test]
    fn two_tap_file_normalizes() {
        let p = ChannelProfile::parse("two", "# comment\n0\t0\n10\t-3\n").unwrap();
        assert!(approx(p.taps[0].power, 0.666_139_424_583_122_1, 1e-12));
        assert!(approx(p.taps[1].power, 0.333_860_575_416_877_9, 1e-12));
    }

    #[test]
    fn profile_errors() {
        assert!(matches!(load_profile("no-such-profile"), Err(ChannelError::UnknownProfile(_))));
        assert!(matches!(ChannelProfile::parse("e", "# only comments\n"), Err(ChannelError::EmptyProfile)));
        assert!(matches!(ChannelProfile::parse("d", "0\t0\n10\t-1\n10\t-2\n"), Err(ChannelError::BadDelays { index: 2, .. })));
        assert!(matches!(ChannelProfile::parse("s", "5\t0\n"), Err(ChannelError::BadDelays { index: 0, .. })));
        assert!(matches!(ChannelProfile::parse("x", "0 0\n"), Err(ChannelError::Parse { line: 1, .. })));
    }

    #[test]
    fn default_config_has_242_subcarriers() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert_eq!(c.n_subcarriers(), 242);
        assert_eq!(c.subcarrier_spacing_hz(), 312_500.0);
        let mut dup = c.clone();
        dup.occupied_subcarriers.push(5);
        assert!(dup.validate().is_err());
        let mut out = c.clone();
        out.occupied_subcarriers = vec![128];
        assert!(out.validate().is_err());
        let mut zero = c;
        zero.n_tx = 0;
        assert!(zero.validate().is_err());
    }

    #[test]
    fn realizations_are_deterministic_and_distinct() {
        let p = load_profile("model-b").unwrap();
        let c = SimConfig::default();
        let a = draw_realization(&p, &c, 17);
        let b = draw_realization(&p, &c, 17);
        assert_eq!(a, b);
        let d = draw_realization(&p, &c, 18);
        assert!(a.gains.iter().zip(&d.gains).any(|(x, y)| x != y));
        assert_eq!(a.gains.len(), 9 * 4);
    }

    #[test]
    fn single_tap_unit_gain_is_flat() {
        let c = SimConfig::default();
        let r = ChannelRealization { n_rx: 2, n_tx: 2, delays_s: vec![0.0], gains: vec![C64::new(1.0, 0.0); 4] };
        let csi = to_frequency_response(&r, &c);
        assert!(csi.h.iter().all(|v| *v == C64::new(1.0, 0.0)));
    }

    #[test]
    fn two_taps_one_sample_apart() {
        let c = SimConfig::default();
        let ts = c.sample_period_s();
        let r = ChannelRealization { n_rx: 1, n_tx: 1, delays_s: vec![0.0, ts], gains: vec![C64::new(1.0, 0.0); 2] };
        let csi = to_frequency_response(&r, &c);
        for (ki, &k) in c.occupied_subcarriers.iter().enumerate() {
            // Direct DFT of the tap vector [1, 1, 0, …] at bin k.
            let oracle: C64 = (0..2).map(|n| C64::from_polar(1.0, -2.0 * PI * (k as f64) * n as f64 / 256.0)).sum();
            assert!(approx(csi.h[ki].norm(), oracle.norm(), 1e-12));
        }
        let fft = to_frequency_response_fft(&r, &c).unwrap();
        for (a, b) in csi.h.iter().zip(&fft.h) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn fft_path_rejects_off_grid_delays() {
        let p = load_profile("model-b").unwrap();
        let c = SimConfig::default();
        let r = draw_realization(&p, &c, 0);
        assert!(matches!(to_frequency_response_fft(&r, &c), Err(ChannelError::OffGrid { .. })));
    }

    #[test]
    fn amp_phase_conventions() {
        let ap = amp_phase(C64::new(1.0, 0.0));
        assert_eq!((ap.amplitude, ap.phase), (1.0, 0.0));
        let ap = amp_phase(C64::new(0.0, 2.0));
        assert!(approx(ap.amplitude, 2.0, 1e-15) && approx(ap.phase, PI / 2.0, 1e-15));
        let ap = amp_phase(C64::new(-1.0, 0.0));
        assert!(approx(ap.amplitude, 1.0, 1e-15) && approx(ap.phase, PI, 1e-15));
        let ap = amp_phase(C64::new(-1.0, -0.0));
        assert!(approx(ap.phase, PI, 1e-15), "negative zero imaginary part maps to +π");
        let ap = amp_phase(C64::new(0.0, 0.0));
        assert_eq!((ap.amplitude, ap.phase), (0.0, 0.0));
    }

    #[test]
    fn apply_channel_noiseless_examples() {
        let mut rng = rng::stream(0, Domain::Noise, 0);
        let y = apply_channel(&CMatrix::identity(2), &[C64::new(3.0, 0.0), C64::new(4.0, 0.0)], 0.0, &mut rng).unwrap();
        assert_eq!(y, vec![C64::new(3.0, 0.0), C64::new(4.0, 0.0)]);
        let h = CMatrix::diag(&[2.0, 3.0], 2, 2);
        let y = apply_channel(&h, &[C64::new(1.0, 0.0); 2], 0.0, &mut rng).unwrap();
        assert_eq!(y, vec![C64::new(2.0, 0.0), C64::new(3.0, 0.0)]);
        assert!(apply_channel(&h, &[C64::new(1.0, 0.0); 3], 0.0, &mut rng).is_err());
    }

    #[test]
    fn apply_channel_noise_power() {
        let mut rng = rng::stream(3, Domain::Noise, 0);
        let h = CMatrix::zeros(2, 2);
        let x = [C64::new(1.0, 0.0); 2];
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| apply_channel(&h, &x, 1.0, &mut rng).unwrap().iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 2.0).abs() < 0.03 * 2.0, "{mean}");
    }

    #[test]
    fn response_matches_naive_sample_domain_sum() {
        let p = load_profile("model-b").unwrap();
        let c = SimConfig::default();
        let r = draw_realization(&p, &c, 5);
        let csi = to_frequency_response(&r, &c);
        let mut worst: f64 = 0.0;
        for (ki, &k) in c.occupied_subcarriers.iter().enumerate() {
            for i in 0..2 {
                for j in 0..2 {
                    let mut acc = C64::new(0.0, 0.0);
                    for (t, tap) in p.taps.iter().enumerate() {
                        let d = tap.delay_ns * 1e-9 * c.bandwidth_hz;
                        let angle = -2.0 * PI * k as f64 * d / c.fft_size as f64;
                        acc += r.gain(t, i, j) * C64::new(angle.cos(), angle.sin());
                    }
                    worst = worst.max((acc - csi.h[(ki * 2 + i) * 2 + j]).norm());
                }
            }
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn single_tap_gain_power_over_ensemble() {
        let p = load_profile("flat1").unwrap();
        let c = SimConfig { n_rx: 1, n_tx: 1, ..SimConfig::default() };
        let mean: f64 = (0..10_000).map(|i| draw_realization(&p, &c, i).gains[0].norm_sqr()).sum::<f64>() / 1e4;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
        let flat = simulate_csi(&p, &c, 1);
        let (lo, hi) = flat.h.iter().map(|v| v.norm()).fold((f64::MAX, 0.0f64), |(l, h), a| (l.min(a), h.max(a)));
        assert!(hi - lo < 1e-9 * hi);
    }

    #[test]
    fn model_b_ensemble_power_is_unit() {
        let p = load_profile("model-b").unwrap();
        let c = SimConfig::default();
        let n = 10_000;
        let total: f64 = (0..n as u64)
            .map(|i| {
                let csi = simulate_csi(&p, &c, i);
                csi.h.iter().map(|v| v.norm_sqr()).sum::<f64>() / csi.h.len() as f64
            })
            .sum();
        let mean = total / n as f64;
        assert!((0.95..=1.05).contains(&mean), "{mean}");
    }
}
