//! Heralded SPDC source: per-pulse pair statistics, gated APD detection and
//! the g⁽²⁾ estimators used to characterise the source.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::rng::{self, Stream};
use crate::timing::{propagate_idler, LossBudget, TimingConfig};
use crate::{Error, Result};

/// Pulses simulated per independently seeded lane.
pub const PULSE_BLOCK: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub pump_wavelength_nm: f64,
    pub signal_wavelength_nm: f64,
    pub idler_wavelength_nm: f64,
    pub rep_rate_hz: f64,
    /// Mean number of photon pairs per pump pulse (μ).
    pub mean_pairs_per_pulse: f64,
    /// Number of thermal modes. `None` is the Poissonian (many-mode) limit.
    pub spdc_modes: Option<u32>,
    /// Overall herald efficiency of the signal arm, collection included.
    pub signal_detection_efficiency: f64,
    /// Efficiency of each APD behind the characterisation beam splitter.
    pub idler_detection_efficiency: f64,
    pub dark_count_prob_per_gate: f64,
    pub gate_width_ns: f64,
    pub apd_dead_time_ns: f64,
    pub apd_pulse_width_ns: f64,
    pub coincidence_window_ns: f64,
}

impl Default for SourceConfig {
    /// Operating point with heralded g⁽²⁾ ≈ 0.08 and ≈ 0.43 heralds per
    /// 2500-pulse shutter window. The dark-count probability gives a
    /// true-to-false herald ratio of 60.
    fn default() -> Self {
        let mu = 0.04;
        let eta_s = 0.0042;
        Self {
            pump_wavelength_nm: 266.0,
            signal_wavelength_nm: 532.0,
            idler_wavelength_nm: 532.0,
            rep_rate_hz: 25_000.0,
            mean_pairs_per_pulse: mu,
            spdc_modes: None,
            signal_detection_efficiency: eta_s,
            idler_detection_efficiency: 0.6,
            dark_count_prob_per_gate: mu * eta_s / 60.0,
            gate_width_ns: 70.0,
            apd_dead_time_ns: 35.0,
            apd_pulse_width_ns: 35.0,
            coincidence_window_ns: 120.0,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pump_wavelength_nm", self.pump_wavelength_nm),
            ("signal_wavelength_nm", self.signal_wavelength_nm),
            ("idler_wavelength_nm", self.idler_wavelength_nm),
            ("rep_rate_hz", self.rep_rate_hz),
            ("gate_width_ns", self.gate_width_ns),
            ("apd_pulse_width_ns", self.apd_pulse_width_ns),
            ("coincidence_window_ns", self.coincidence_window_ns),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(format!("source.{name} must be > 0, got {value}")));
            }
        }
        if !(self.mean_pairs_per_pulse.is_finite() && self.mean_pairs_per_pulse >= 0.0) {
            return Err(Error::config(format!(
                "source.mean_pairs_per_pulse must be >= 0, got {}",
                self.mean_pairs_per_pulse
            )));
        }
        for (name, value) in [
            ("signal_detection_efficiency", self.signal_detection_efficiency),
            ("idler_detection_efficiency", self.idler_detection_efficiency),
            ("dark_count_prob_per_gate", self.dark_count_prob_per_gate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::config(format!("source.{name} must lie in [0, 1], got {value}")));
            }
        }
        if self.spdc_modes == Some(0) {
            return Err(Error::config("source.spdc_modes must be >= 1"));
        }
        if self.apd_dead_time_ns < self.apd_pulse_width_ns {
            return Err(Error::config(
                "source.apd_dead_time_ns must be >= apd_pulse_width_ns (one click per gate)",
            ));
        }
        let mismatch = 1.0 / self.pump_wavelength_nm - 1.0 / self.signal_wavelength_nm - 1.0 / self.idler_wavelength_nm;
        if mismatch.abs() > 1e-9 / self.pump_wavelength_nm {
            return Err(Error::config(format!(
                "wavelengths violate energy conservation: 1/{} != 1/{} + 1/{}",
                self.pump_wavelength_nm, self.signal_wavelength_nm, self.idler_wavelength_nm
            )));
        }
        Ok(())
    }

    pub fn pulse_period_ns(&self) -> f64 {
        1e9 / self.rep_rate_hz
    }

    /// Probability that the signal APD fires on a given pulse.
    pub fn herald_probability(&self) -> f64 {
        1.0 - no_click_generating(
            self.mean_pairs_per_pulse,
            self.spdc_modes,
            self.signal_detection_efficiency,
        ) * (1.0 - self.dark_count_prob_per_gate)
    }

    /// Pair mean μ giving `heralds` expected signal clicks per window of
    /// `pulses` pump pulses, all other parameters fixed.
    pub fn mean_pairs_for_heralds(&self, heralds: f64, pulses: u64) -> Result<f64> {
        let p = heralds / pulses as f64;
        let eta = self.signal_detection_efficiency;
        let floor = self.dark_count_prob_per_gate;
        if !(p > floor && p < 1.0) || eta <= 0.0 {
            return Err(Error::input(format!(
                "cannot reach {heralds} heralds per {pulses} pulses (dark floor {floor}, efficiency {eta})"
            )));
        }
        // Probability of no pair-induced click.
        let r = (1.0 - p) / (1.0 - floor);
        Ok(match self.spdc_modes {
            None => -r.ln() / eta,
            Some(m) => {
                let m = m as f64;
                m * (r.powf(-1.0 / m) - 1.0) / eta
            }
        })
    }
}

/// E[(1 - eta)^n] for the pair-number distribution.
fn no_click_generating(mu: f64, modes: Option<u32>, eta: f64) -> f64 {
    match modes {
        None => (-mu * eta).exp(),
        Some(m) => (1.0 + mu * eta / m as f64).powf(-(m as f64)),
    }
}

/// Per-pulse bookkeeping of one pump pulse in the heralded arrangement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PulsePhotonCounts {
    pub pair_count: u32,
    pub signal_click: bool,
    pub idler_photons_surviving: u32,
}

/// Sampler of the per-pulse pair number.
#[derive(Debug, Clone)]
pub enum PairNumberSampler {
    /// Inversion on a precomputed cumulative table.
    Poisson {
        mu: f64,
        cdf: Vec<f64>,
    },
    Large(Poisson<f64>),
    /// Gamma-mixed Poisson (negative binomial), g⁽²⁾ = 1 + 1/modes.
    Multimode {
        gamma: Gamma<f64>,
    },
    Zero,
}

impl PairNumberSampler {
    pub fn new(mu: f64, modes: Option<u32>) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::input(format!("mean pair number must be >= 0, got {mu}")));
        }
        if mu == 0.0 {
            return Ok(Self::Zero);
        }
        if let Some(m) = modes {
            let gamma =
                Gamma::new(m as f64, mu / m as f64).map_err(|e| Error::input(format!("multimode sampler: {e}")))?;
            return Ok(Self::Multimode { gamma });
        }
        if mu > 30.0 {
            let poisson = Poisson::new(mu).map_err(|e| Error::input(format!("poisson sampler: {e}")))?;
            return Ok(Self::Large(poisson));
        }
        let mut cdf = Vec::new();
        let mut p = (-mu).exp();
        let mut c = p;
        let mut k = 0.0;
        while 1.0 - c > 1e-15 && cdf.len() < 512 {
            cdf.push(c);
            k += 1.0;
            p *= mu / k;
            c += p;
        }
        cdf.push(1.0);
        Ok(Self::Poisson { mu, cdf })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            Self::Zero => 0,
            Self::Poisson { cdf, .. } => {
                let u: f64 = rng.random();
                if u < cdf[0] {
                    return 0;
                }
                cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1) as u32
            }
            Self::Large(poisson) => poisson.sample(rng) as u32,
            Self::Multimode { gamma } => {
                let lambda = gamma.sample(rng);
                if lambda <= 0.0 {
                    0
                } else {
                    Poisson::new(lambda).map(|p| p.sample(rng) as u32).unwrap_or(0)
                }
            }
        }
    }
}

/// Independent per-pulse pair numbers for `n_pulses` pulses.
pub fn sample_pair_counts(config: &SourceConfig, n_pulses: u64, seed: u64) -> Result<Vec<u32>> {
    if n_pulses == 0 {
        return Err(Error::input("n_pulses must be >= 1"));
    }
    let sampler = PairNumberSampler::new(config.mean_pairs_per_pulse, config.spdc_modes)?;
    let mut out = Vec::with_capacity(n_pulses as usize);
    for (block, start) in (0..n_pulses).step_by(PULSE_BLOCK as usize).enumerate() {
        let len = PULSE_BLOCK.min(n_pulses - start);
        let mut rng = rng::stream(rng::derive_seed(seed, block as u64), Stream::Source);
        out.extend((0..len).map(|_| sampler.sample(&mut rng)));
    }
    Ok(out)
}

/// Gated APD: clicks at most once per gate, with probability
/// 1 − (1 − efficiency)^photons · (1 − dark).
pub fn gated_click<R: Rng + ?Sized>(photons: u32, efficiency: f64, dark: f64, rng: &mut R) -> bool {
    let miss = (1.0 - efficiency).powi(photons as i32) * (1.0 - dark);
    rng.random::<f64>() >= miss
}

/// Signal-arm herald for a pulse carrying `pair_count` pairs.
pub fn detect_signal<R: Rng + ?Sized>(pair_count: u32, config: &SourceConfig, rng: &mut R) -> bool {
    gated_click(
        pair_count,
        config.signal_detection_efficiency,
        config.dark_count_prob_per_gate,
        rng,
    )
}

fn thin<R: Rng + ?Sized>(n: u32, p: f64, rng: &mut R) -> u32 {
    (0..n).filter(|_| rng.random::<f64>() < p).count() as u32
}

/// One pump pulse of the heralded source as used in the rod experiment:
/// pair generation, signal herald and feed-forward delivery to the cell.
pub fn simulate_heralded_pulse<R: Rng + ?Sized>(
    sampler: &PairNumberSampler,
    herald_time_ns: f64,
    config: &SourceConfig,
    timing: &TimingConfig,
    losses: &LossBudget,
    rng: &mut R,
) -> PulsePhotonCounts {
    let pair_count = sampler.sample(rng);
    let signal_click = detect_signal(pair_count, config, rng);
    let idler_photons_surviving = if signal_click {
        propagate_idler(pair_count, herald_time_ns, timing, losses, rng)
    } else {
        0
    };
    PulsePhotonCounts {
        pair_count,
        signal_click,
        idler_photons_surviving,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Estimate {
    pub value: f64,
    pub std_dev: f64,
    pub n_samples: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            seed: 0x6732,
        }
    }
}

fn g2_from_histogram(hist: &[u64], n: u64) -> Option<f64> {
    let n = n as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for (k, &c) in hist.iter().enumerate() {
        let k = k as f64;
        s1 += c as f64 * k;
        s2 += c as f64 * k * k;
    }
    let mean = s1 / n;
    if mean <= 0.0 {
        return None;
    }
    let var = (s2 / n - mean * mean).max(0.0);
    Some(1.0 + (var - mean) / (mean * mean))
}

/// Moment estimator g⁽²⁾ = 1 + (Var N − ⟨N⟩)/⟨N⟩² with a bootstrap standard
/// deviation (default 1000 resamples).
pub fn moment_g2(counts: &[u32]) -> Result<G2Estimate> {
    moment_g2_with(counts, &BootstrapConfig::default())
}

/// [`moment_g2`] with explicit bootstrap settings. The variance is the
/// population (1/n) variance. Resampling is done on the count histogram, each
/// replicate being a multinomial draw over the observed count values.
pub fn moment_g2_with(counts: &[u32], bootstrap: &BootstrapConfig) -> Result<G2Estimate> {
    if counts.is_empty() {
        return Err(Error::EstimatorUndefined("moment g2 of an empty sequence"));
    }
    let max = *counts.iter().max().unwrap() as usize;
    let mut hist = vec![0u64; max + 1];
    for &c in counts {
        hist[c as usize] += 1;
    }
    let n = counts.len() as u64;
    let value = g2_from_histogram(&hist, n).ok_or(Error::EstimatorUndefined("moment g2 with zero mean"))?;

    let mut replicates = Vec::with_capacity(bootstrap.resamples);
    let mut rng = rng::stream(bootstrap.seed, Stream::Bootstrap);
    let mut resampled = vec![0u64; hist.len()];
    for _ in 0..bootstrap.resamples {
        let mut remaining = n;
        let mut mass_left = 1.0;
        for (slot, &c) in resampled.iter_mut().zip(&hist) {
            let p = c as f64 / n as f64;
            *slot = if remaining == 0 || c == 0 {
                0
            } else if p >= mass_left {
                remaining
            } else {
                Binomial::new(remaining, (p / mass_left).min(1.0))
                    .expect("valid binomial")
                    .sample(&mut rng)
            };
            remaining -= *slot;
            mass_left -= p;
        }
        if let Some(g) = g2_from_histogram(&resampled, n) {
            replicates.push(g);
        }
    }
    let std_dev = if replicates.len() > 1 {
        let m = replicates.iter().sum::<f64>() / replicates.len() as f64;
        (replicates.iter().map(|g| (g - m).powi(2)).sum::<f64>() / (replicates.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(G2Estimate {
        value: value.max(0.0),
        std_dev,
        n_samples: n,
    })
}

/// Normalisation factor of the coincidence estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Normalization {
    /// Known without counting error: a repetition rate with rate-valued
    /// counts, or a number of pump pulses with total counts.
    Exact(f64),
    /// A counted number of heralds, carrying its own Poisson error.
    Counted(u64),
}

impl Normalization {
    fn value(self) -> f64 {
        match self {
            Self::Exact(f) => f,
            Self::Counted(n) => n as f64,
        }
    }
}

/// g⁽²⁾ = f·N_c / (N₁·N₂) with Poisson counting-error propagation. With no
/// coincidences the deviation is the value one coincidence would give.
pub fn coincidence_g2(n1: u64, n2: u64, nc: u64, f: Normalization) -> Result<G2Estimate> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::EstimatorUndefined("coincidence g2 with a zero singles count"));
    }
    let fv = f.value();
    if !(fv.is_finite() && fv > 0.0) {
        return Err(Error::EstimatorUndefined(
            "coincidence g2 with non-positive normalisation",
        ));
    }
    let scale = fv / (n1 as f64 * n2 as f64);
    let value = scale * nc as f64;
    let std_dev = if nc == 0 {
        scale
    } else {
        let mut rel2 = 1.0 / nc as f64 + 1.0 / n1 as f64 + 1.0 / n2 as f64;
        if let Normalization::Counted(n) = f {
            rel2 += 1.0 / n as f64;
        }
        value * rel2.sqrt()
    };
    let n_samples = match f {
        Normalization::Exact(f) => f.round() as u64,
        Normalization::Counted(n) => n,
    };
    Ok(G2Estimate {
        value,
        std_dev,
        n_samples,
    })
}

/// The three source-characterisation arrangements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum G2Mode {
    /// Signal APD against one idler APD, feed-forward inactive.
    Cross,
    /// 50/50 splitter in the idler beam, feed-forward inactive.
    UnconditionalIdler,
    /// 50/50 splitter in the idler beam behind the herald-triggered AOM.
    Heralded,
}

impl G2Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cross => "cross",
            Self::UnconditionalIdler => "idler",
            Self::Heralded => "heralded",
        }
    }
}

impl fmt::Display for G2Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for G2Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(Self::Cross),
            "idler" | "unconditional_idler" => Ok(Self::UnconditionalIdler),
            "heralded" => Ok(Self::Heralded),
            other => Err(Error::input(format!(
                "unknown g2 mode {other:?} (expected cross, idler or heralded)"
            ))),
        }
    }
}

/// Raw counts of one characterisation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoincidenceCounts {
    pub n1: u64,
    pub n2: u64,
    pub nc: u64,
    /// Pump pulses (cross, idler) or heralds (heralded).
    pub normalization: u64,
    pub signal_clicks: u64,
}

impl std::ops::AddAssign for CoincidenceCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.n1 += rhs.n1;
        self.n2 += rhs.n2;
        self.nc += rhs.nc;
        self.normalization += rhs.normalization;
        self.signal_clicks += rhs.signal_clicks;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Run {
    pub mode: G2Mode,
    pub mean_pairs_per_pulse: f64,
    pub n_pulses: u64,
    pub counts: CoincidenceCounts,
    pub estimate: G2Estimate,
}

impl G2Run {
    /// Signal-APD photocounts per pump pulse, the experimental proxy for
    /// pump power.
    pub fn signal_counts_per_pulse(&self) -> f64 {
        self.counts.signal_clicks as f64 / self.n_pulses as f64
    }
}

struct Arm {
    transmission: f64,
    efficiency: f64,
    dark: f64,
}

impl Arm {
    /// Split `photons` on a 50/50 splitter and detect both outputs.
    fn split_detect<R: Rng + ?Sized>(&self, photons: u32, rng: &mut R) -> (bool, bool) {
        let first = thin(photons, 0.5, rng);
        (
            gated_click(first, self.efficiency, self.dark, rng),
            gated_click(photons - first, self.efficiency, self.dark, rng),
        )
    }
}

fn simulate_block(
    mode: G2Mode,
    sampler: &PairNumberSampler,
    config: &SourceConfig,
    timing: &TimingConfig,
    losses: &LossBudget,
    first_pulse: u64,
    len: u64,
    seed: u64,
) -> CoincidenceCounts {
    let mut rng = rng::stream(seed, Stream::Source);
    let mut c = CoincidenceCounts::default();
    let arm = Arm {
        // With the loop inactive the AOM is held open; the fiber and AOM
        // transmissions still apply.
        transmission: losses.eta_fiber * losses.eta_aom,
        efficiency: config.idler_detection_efficiency,
        dark: config.dark_count_prob_per_gate,
    };
    // In the characterisation set-up the fiber beam splitter takes the place
    // of the taper.
    let delivery = LossBudget {
        eta_taper: 1.0,
        ..*losses
    };
    let period = config.pulse_period_ns();
    for i in first_pulse..first_pulse + len {
        let n = sampler.sample(&mut rng);
        match mode {
            G2Mode::Cross => {
                c.normalization += 1;
                let s = detect_signal(n, config, &mut rng);
                let k = thin(n, arm.transmission, &mut rng);
                let d = gated_click(k, arm.efficiency, arm.dark, &mut rng);
                c.signal_clicks += s as u64;
                c.n1 += s as u64;
                c.n2 += d as u64;
                c.nc += (s && d) as u64;
            }
            G2Mode::UnconditionalIdler => {
                c.normalization += 1;
                let k = thin(n, arm.transmission, &mut rng);
                let (d1, d2) = arm.split_detect(k, &mut rng);
                c.n1 += d1 as u64;
                c.n2 += d2 as u64;
                c.nc += (d1 && d2) as u64;
            }
            G2Mode::Heralded => {
                if !detect_signal(n, config, &mut rng) {
                    continue;
                }
                c.signal_clicks += 1;
                c.normalization += 1;
                let herald_time = i as f64 * period;
                let k = propagate_idler(n, herald_time, timing, &delivery, &mut rng);
                let (d1, d2) = arm.split_detect(k, &mut rng);
                c.n1 += d1 as u64;
                c.n2 += d2 as u64;
                c.nc += (d1 && d2) as u64;
            }
        }
    }
    c
}

/// Simulate one of the characterisation arrangements for `n_pulses` pump
/// pulses and apply the coincidence estimator.
///
/// Clicks are registered per pump pulse; with the 40 µs pulse period and a
/// coincidence window below it, two clicks coincide iff they belong to the
/// same pulse. In heralded mode N₁, N₂ and N_c are counted only on heralded
/// pulses and f is the number of heralds.
pub fn run_g2_configuration(
    mode: G2Mode,
    config: &SourceConfig,
    timing: &TimingConfig,
    losses: &LossBudget,
    n_pulses: u64,
    seed: u64,
) -> Result<G2Run> {
    config.validate()?;
    timing.validate()?;
    losses.validate()?;
    if n_pulses == 0 {
        return Err(Error::input("n_pulses must be >= 1"));
    }
    if config.coincidence_window_ns >= config.pulse_period_ns() {
        return Err(Error::config(
            "coincidence window must be shorter than the pulse period",
        ));
    }
    let sampler = PairNumberSampler::new(config.mean_pairs_per_pulse, config.spdc_modes)?;
    let blocks: Vec<u64> = (0..n_pulses.div_ceil(PULSE_BLOCK)).collect();
    let run_block = |&b: &u64| {
        let start = b * PULSE_BLOCK;
        let len = PULSE_BLOCK.min(n_pulses - start);
        simulate_block(
            mode,
            &sampler,
            config,
            timing,
            losses,
            start,
            len,
            rng::derive_seed(seed, b),
        )
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<CoincidenceCounts> = {
        use rayon::prelude::*;
        blocks.par_iter().map(run_block).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<CoincidenceCounts> = blocks.iter().map(run_block).collect();

    let mut counts = CoincidenceCounts::default();
    for p in parts {
        counts += p;
    }
    let f = match mode {
        G2Mode::Heralded => Normalization::Counted(counts.normalization),
        _ => Normalization::Exact(counts.normalization as f64),
    };
    let estimate = coincidence_g2(counts.n1, counts.n2, counts.nc, f)?;
    Ok(G2Run {
        mode,
        mean_pairs_per_pulse: config.mean_pairs_per_pulse,
        n_pulses,
        counts,
        estimate,
    })
}

/// Run `mode` at every μ in `mus`, each point with its own derived seed.
pub fn g2_scan(
    mode: G2Mode,
    mus: &[f64],
    config: &SourceConfig,
    timing: &TimingConfig,
    losses: &LossBudget,
    n_pulses: u64,
    seed: u64,
) -> Result<Vec<G2Run>> {
    mus.iter()
        .enumerate()
        .map(|(i, &mu)| {
            let cfg = SourceConfig {
                mean_pairs_per_pulse: mu,
                ..config.clone()
            };
            run_g2_configuration(mode, &cfg, timing, losses, n_pulses, rng::derive_seed(seed, i as u64))
        })
        .collect()
}

/// Fraction of Poisson(λ) windows with two or more heralds.
pub fn multi_herald_fraction(heralds_per_window: f64) -> f64 {
    let l = heralds_per_window;
    1.0 - (1.0 + l) * (-l).exp()
}

/// Mean heralds per window giving the requested multi-herald fraction.
pub fn heralds_for_multi_fraction(fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::input(format!("fraction must lie in (0, 1), got {fraction}")));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while multi_herald_fraction(hi) < fraction {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if multi_herald_fraction(mid) < fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SourceConfig::default().validate().unwrap();
    }

    #[test]
    fn wavelength_invariant_enforced() {
        let cfg = SourceConfig {
            signal_wavelength_nm: 530.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let nondegenerate = SourceConfig {
            signal_wavelength_nm: 500.0,
            idler_wavelength_nm: 1.0 / (1.0 / 266.0 - 1.0 / 500.0),
            ..Default::default()
        };
        nondegenerate.validate().unwrap();
    }

    #[test]
    fn negative_mu_rejected() {
        let cfg = SourceConfig {
            mean_pairs_per_pulse: -0.1,
            ..Default::default()
        };
        assert!(sample_pair_counts(&cfg, 10, 1).is_err());
    }

    #[test]
    fn zero_mu_gives_zeros() {
        let cfg = SourceConfig {
            mean_pairs_per_pulse: 0.0,
            ..Default::default()
        };
        assert!(sample_pair_counts(&cfg, 100_000, 9).unwrap().iter().all(|&n| n == 0));
    }

    #[test]
    fn pair_counts_are_reproducible() {
        let cfg = SourceConfig::default();
        let a = sample_pair_counts(&cfg, 200_000, 42).unwrap();
        let b = sample_pair_counts(&cfg, 200_000, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_pair_counts(&cfg, 200_000, 43).unwrap());
    }

    #[test]
    fn signal_detection_edge_cases() {
        let mut rng = rng::seeded(5);
        let dark_free = SourceConfig {
            dark_count_prob_per_gate: 0.0,
            signal_detection_efficiency: 1.0,
            ..Default::default()
        };
        for _ in 0..10_000 {
            assert!(!detect_signal(0, &dark_free, &mut rng));
            assert!(detect_signal(1, &dark_free, &mut rng));
        }
    }

    #[test]
    fn two_pairs_half_efficiency() {
        let cfg = SourceConfig {
            dark_count_prob_per_gate: 0.0,
            signal_detection_efficiency: 0.5,
            ..Default::default()
        };
        let mut rng = rng::seeded(6);
        let n = 100_000;
        let clicks = (0..n).filter(|_| detect_signal(2, &cfg, &mut rng)).count();
        let rate = clicks as f64 / n as f64;
        let se = (0.75 * 0.25 / n as f64).sqrt();
        assert!((rate - 0.75).abs() < 3.0 * se, "rate {rate}");
    }

    #[test]
    fn fock_counts_have_zero_g2() {
        let g = moment_g2(&vec![1; 1000]).unwrap();
        assert_eq!(g.value, 0.0);
        assert_eq!(g.std_dev, 0.0);
    }

    #[test]
    fn moment_g2_errors() {
        assert!(matches!(moment_g2(&[]), Err(Error::EstimatorUndefined(_))));
        assert!(matches!(moment_g2(&[0, 0, 0]), Err(Error::EstimatorUndefined(_))));
    }

    #[test]
    fn coincidence_arithmetic() {
        let g = coincidence_g2(1000, 1000, 40, Normalization::Exact(25_000.0)).unwrap();
        assert!((g.value - 1.0).abs() < 1e-12);
        let zero = coincidence_g2(1000, 1000, 0, Normalization::Exact(25_000.0)).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(zero.std_dev > 0.0);
        assert!(coincidence_g2(0, 10, 1, Normalization::Exact(1.0)).is_err());
        assert!(coincidence_g2(10, 0, 1, Normalization::Counted(5)).is_err());
    }

    #[test]
    fn coincidence_scale_invariance() {
        let base = coincidence_g2(120, 340, 7, Normalization::Exact(5e5)).unwrap();
        for k in [2_u64, 3, 10] {
            let scaled = coincidence_g2(120 * k, 340 * k, 7 * k * k, Normalization::Exact(5e5)).unwrap();
            assert!((scaled.value - base.value).abs() < 1e-12 * base.value);
        }
    }

    #[test]
    fn herald_probability_round_trip() {
        let cfg = SourceConfig::default();
        let mu = cfg.mean_pairs_for_heralds(0.43, 2500).unwrap();
        let tuned = SourceConfig {
            mean_pairs_per_pulse: mu,
            ..cfg.clone()
        };
        assert!((tuned.herald_probability() * 2500.0 - 0.43).abs() < 1e-12);
        let thermal = SourceConfig {
            spdc_modes: Some(3),
            ..cfg
        };
        let mu = thermal.mean_pairs_for_heralds(0.43, 2500).unwrap();
        let tuned = SourceConfig {
            mean_pairs_per_pulse: mu,
            ..thermal
        };
        assert!((tuned.herald_probability() * 2500.0 - 0.43).abs() < 1e-12);
    }

    #[test]
    fn default_operating_point() {
        let cfg = SourceConfig::default();
        let heralds = cfg.herald_probability() * 2500.0;
        assert!((heralds - 0.43).abs() < 0.01, "{heralds}");
        let true_rate = cfg.mean_pairs_per_pulse * cfg.signal_detection_efficiency;
        assert!((true_rate / cfg.dark_count_prob_per_gate - 60.0).abs() < 1e-9);
    }

    #[test]
    fn mode_names_parse() {
        for m in [G2Mode::Cross, G2Mode::UnconditionalIdler, G2Mode::Heralded] {
            assert_eq!(m.as_str().parse::<G2Mode>().unwrap(), m);
        }
        assert!("bogus".parse::<G2Mode>().is_err());
    }

    #[test]
    fn heralded_low_mu_without_darks_is_near_zero() {
        let cfg = SourceConfig {
            mean_pairs_per_pulse: 0.002,
            signal_detection_efficiency: 0.5,
            idler_detection_efficiency: 1.0,
            dark_count_prob_per_gate: 0.0,
            ..Default::default()
        };
        let run = run_g2_configuration(
            G2Mode::Heralded,
            &cfg,
            &TimingConfig::default(),
            &LossBudget::LOSSLESS,
            2_000_000,
            11,
        )
        .unwrap();
        assert!(run.estimate.value < 0.02, "{:?}", run);
    }

    #[test]
    fn g2_runs_are_deterministic() {
        let cfg = SourceConfig::default();
        let a = run_g2_configuration(
            G2Mode::Cross,
            &cfg,
            &TimingConfig::default(),
            &LossBudget::default(),
            300_000,
            3,
        )
        .unwrap();
        let b = run_g2_configuration(
            G2Mode::Cross,
            &cfg,
            &TimingConfig::default(),
            &LossBudget::default(),
            300_000,
            3,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn multi_fraction_root() {
        let l = heralds_for_multi_fraction(0.07).unwrap();
        assert!((multi_herald_fraction(l) - 0.07).abs() < 1e-12);
        assert!((l - 0.43).abs() < 0.005);
    }
}
