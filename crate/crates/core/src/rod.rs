//! Rod-cell response model and membrane-current synthesis.
//!
//! A photoisomerisation produces the impulse response of an m-stage Poisson
//! filter, `i(t) = A0 [t/t0 · exp(1 − t/t0)]^(m−1)`. Recorded traces are the
//! linear sum of these responses (photon-driven and spontaneous) plus
//! continuous physiological noise and amplifier noise.
//!
//! Noise strengths are specified in the amplitude domain: each variance is
//! the variance it contributes to an amplitude measured with the reference
//! windows. The per-sample generators are scaled accordingly, so changing
//! the sample rate or bandwidth leaves the amplitude statistics unchanged.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::protocol::{AmplitudeWindows, Interval, TrialTiming};
use crate::{Error, Result};

/// FWHM of a Gaussian divided by its standard deviation, 2·sqrt(2 ln 2).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Dark-noise amplitude variance the default cell reproduces, pA².
pub const DEFAULT_DARK_AMPLITUDE_VARIANCE: f64 = 0.07;

/// FWHM of the single-photon amplitude peak the default jitter targets, pA.
pub const SINGLE_PHOTON_PEAK_FWHM: f64 = 0.5;

/// Responses beyond this many times-to-peak are treated as zero.
const RESPONSE_SUPPORT: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RodCellParams {
    pub quantum_efficiency: f64,
    pub response_amplitude_pa: f64,
    pub time_to_peak_s: f64,
    pub filter_stages: u32,
    pub amplitude_jitter_sd_pa: f64,
    /// Continuous physiological noise, amplitude-domain variance.
    pub continuous_noise_variance_pa2: f64,
    /// Rate of spontaneous single-photon-like events.
    pub discrete_event_rate_hz: f64,
    /// Amplifier noise, amplitude-domain variance.
    pub amplifier_noise_variance_pa2: f64,
    pub sample_rate_hz: f64,
    pub recording_bandwidth_hz: f64,
    /// Ceiling on the summed response current; `None` keeps it linear.
    pub saturation_current_pa: Option<f64>,
    /// Windows in which the noise variances are defined.
    pub noise_reference: AmplitudeWindows,
}

impl Default for RodCellParams {
    fn default() -> Self {
        static DEFAULT: OnceLock<RodCellParams> = OnceLock::new();
        DEFAULT
            .get_or_init(|| {
                let base = RodCellParams {
                    quantum_efficiency: 0.29,
                    response_amplitude_pa: 0.58,
                    time_to_peak_s: 1.75,
                    filter_stages: 4,
                    amplitude_jitter_sd_pa: 0.0,
                    continuous_noise_variance_pa2: 0.0,
                    discrete_event_rate_hz: 0.02,
                    amplifier_noise_variance_pa2: 0.032,
                    sample_rate_hz: 1000.0,
                    recording_bandwidth_hz: 100.0,
                    saturation_current_pa: None,
                    noise_reference: AmplitudeWindows::default(),
                };
                let calibrated = base
                    .with_dark_amplitude_variance(DEFAULT_DARK_AMPLITUDE_VARIANCE)
                    .expect("default noise budget is consistent");
                let jitter = jitter_for_peak_fwhm(SINGLE_PHOTON_PEAK_FWHM, calibrated.dark_amplitude_variance());
                RodCellParams {
                    amplitude_jitter_sd_pa: jitter,
                    ..calibrated
                }
            })
            .clone()
    }
}

/// Amplitude jitter that widens a dark-noise peak of variance `dark_variance`
/// to the requested FWHM. Zero when the dark noise alone is already wider.
pub fn jitter_for_peak_fwhm(fwhm: f64, dark_variance: f64) -> f64 {
    let target = (fwhm / FWHM_PER_SIGMA).powi(2);
    (target - dark_variance).max(0.0).sqrt()
}

impl RodCellParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.quantum_efficiency) {
            return Err(Error::config(format!(
                "cell.quantum_efficiency must lie in [0, 1], got {}",
                self.quantum_efficiency
            )));
        }
        for (name, v) in [
            ("response_amplitude_pa", self.response_amplitude_pa),
            ("time_to_peak_s", self.time_to_peak_s),
            ("sample_rate_hz", self.sample_rate_hz),
            ("recording_bandwidth_hz", self.recording_bandwidth_hz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("cell.{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("amplitude_jitter_sd_pa", self.amplitude_jitter_sd_pa),
            ("continuous_noise_variance_pa2", self.continuous_noise_variance_pa2),
            ("discrete_event_rate_hz", self.discrete_event_rate_hz),
            ("amplifier_noise_variance_pa2", self.amplifier_noise_variance_pa2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("cell.{name} must be >= 0, got {v}")));
            }
        }
        if self.filter_stages < 2 {
            return Err(Error::config(format!(
                "cell.filter_stages must be >= 2, got {}",
                self.filter_stages
            )));
        }
        if let Some(c) = self.saturation_current_pa {
            if !(c > 0.0) {
                return Err(Error::config("cell.saturation_current_pa must be > 0"));
            }
        }
        self.noise_reference.validate()
    }

    /// Same cell with every noise source switched off.
    pub fn noise_free(&self) -> Self {
        Self {
            amplitude_jitter_sd_pa: 0.0,
            continuous_noise_variance_pa2: 0.0,
            discrete_event_rate_hz: 0.0,
            amplifier_noise_variance_pa2: 0.0,
            ..self.clone()
        }
    }

    /// Sets the continuous-noise variance so the total dark amplitude
    /// variance (continuous + amplifier + spontaneous events) equals `total`.
    pub fn with_dark_amplitude_variance(&self, total: f64) -> Result<Self> {
        let rest = self.amplifier_noise_variance_pa2 + self.discrete_amplitude_variance();
        if total < rest {
            return Err(Error::config(format!(
                "dark amplitude variance {total} pA² is below the amplifier and spontaneous-event share {rest} pA²"
            )));
        }
        Ok(Self {
            continuous_noise_variance_pa2: total - rest,
            ..self.clone()
        })
    }

    /// Expected variance of dark amplitudes over the reference windows.
    pub fn dark_amplitude_variance(&self) -> f64 {
        self.continuous_noise_variance_pa2 + self.amplifier_noise_variance_pa2 + self.discrete_amplitude_variance()
    }

    /// Amplitude variance contributed by spontaneous events (Campbell's
    /// theorem): rate · E[A²] · ∫ g(s)² ds, where g(s) is the amplitude a
    /// unit event at time s produces in the reference windows.
    pub fn discrete_amplitude_variance(&self) -> f64 {
        if self.discrete_event_rate_hz == 0.0 {
            return 0.0;
        }
        let w = &self.noise_reference;
        let fs = self.sample_rate_hz;
        let unit = RodCellParams {
            response_amplitude_pa: 1.0,
            ..self.clone()
        };
        let peak = w.peak.sample_range(fs);
        let base = w.baseline.sample_range(fs);
        let window_mean = |range: &std::ops::Range<usize>, s: f64| {
            range
                .clone()
                .map(|k| single_photon_waveform(k as f64 / fs - s, &unit))
                .sum::<f64>()
                / range.len().max(1) as f64
        };
        let h = 0.005;
        let from = w.baseline.start - RESPONSE_SUPPORT * self.time_to_peak_s;
        let steps = ((w.peak.end - from) / h).ceil() as usize;
        let integral: f64 = (0..steps)
            .map(|i| {
                let s = from + (i as f64 + 0.5) * h;
                (window_mean(&peak, s) - window_mean(&base, s)).powi(2)
            })
            .sum::<f64>()
            * h;
        let second_moment = self.response_amplitude_pa.powi(2) + self.amplitude_jitter_sd_pa.powi(2);
        self.discrete_event_rate_hz * second_moment * integral
    }
}

/// Poisson-filter impulse response with real-valued stage count.
pub fn poisson_filter(t: f64, amplitude: f64, time_to_peak: f64, stages: f64) -> f64 {
    if t <= 0.0 {
        return if t == 0.0 && stages == 1.0 { amplitude } else { 0.0 };
    }
    let u = t / time_to_peak;
    amplitude * (u * (1.0 - u).exp()).powf(stages - 1.0)
}

/// Single-photon response current at time `t` after absorption, pA.
pub fn single_photon_waveform(t: f64, params: &RodCellParams) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let u = t / params.time_to_peak_s;
    params.response_amplitude_pa * (u * (1.0 - u).exp()).powi(params.filter_stages as i32 - 1)
}

/// Full width at half maximum of the Poisson-filter response, by bisection
/// on both half-maximum crossings.
pub fn poisson_filter_fwhm(time_to_peak: f64, stages: f64) -> Result<f64> {
    if !(stages >= 2.0) || !(time_to_peak > 0.0) {
        return Err(Error::input(format!(
            "FWHM needs stages >= 2 and t0 > 0, got stages {stages}, t0 {time_to_peak}"
        )));
    }
    let f = |t: f64| poisson_filter(t, 1.0, time_to_peak, stages) - 0.5;
    let bisect = |mut lo: f64, mut hi: f64| {
        let rising = f(lo) < 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) < 0.0) == rising {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let mut upper = 2.0 * time_to_peak;
    while f(upper) > 0.0 {
        upper *= 2.0;
    }
    let rise = bisect(0.0, time_to_peak);
    let fall = bisect(time_to_peak, upper);
    Ok(fall - rise)
}

pub fn waveform_fwhm_duration(params: &RodCellParams) -> Result<f64> {
    poisson_filter_fwhm(params.time_to_peak_s, params.filter_stages as f64)
}

/// Number of the `delivered_photons` that isomerise, binomial with
/// probability `efficiency`.
pub fn absorb<R: Rng + ?Sized>(delivered_photons: u32, efficiency: f64, rng: &mut R) -> u32 {
    (0..delivered_photons)
        .filter(|_| rng.random::<f64>() < efficiency)
        .count() as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialClass {
    ZeroHerald,
    SingleHerald,
    MultiHerald,
}

impl TrialClass {
    pub fn from_herald_count(heralds: usize) -> Self {
        match heralds {
            0 => Self::ZeroHerald,
            1 => Self::SingleHerald,
            _ => Self::MultiHerald,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time_s: f64,
    pub current_pa: f64,
}

/// One shutter cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub samples: Vec<Sample>,
    pub shutter_interval: Interval,
    /// Signal-APD photocount times recorded alongside the current.
    pub herald_times_s: Vec<f64>,
    pub herald_count: usize,
    /// Simulation ground truth; not used by the analysis.
    pub true_isomerizations: usize,
    pub trial_class: TrialClass,
}

impl TrialRecord {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn currents(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.current_pa)
    }
}

/// Precomputed per-sample noise generators for one cell.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    ar_coeff: f64,
    continuous_sd: f64,
    amplifier_sd: f64,
}

impl NoiseModel {
    pub fn new(params: &RodCellParams) -> Self {
        let fs = params.sample_rate_hz;
        let a = (-2.0 * std::f64::consts::PI * params.recording_bandwidth_hz / fs).exp();
        let peak = params.noise_reference.peak.sample_range(fs);
        let base = params.noise_reference.baseline.sample_range(fs);
        let white_gain = 1.0 / peak.len() as f64 + 1.0 / base.len() as f64;
        let ar_gain = ar1_amplitude_gain(a, &base, &peak);
        Self {
            ar_coeff: a,
            continuous_sd: (params.continuous_noise_variance_pa2 / ar_gain).sqrt(),
            amplifier_sd: (params.amplifier_noise_variance_pa2 / white_gain).sqrt(),
        }
    }

    pub fn continuous_sample_sd(&self) -> f64 {
        self.continuous_sd
    }

    pub fn amplifier_sample_sd(&self) -> f64 {
        self.amplifier_sd
    }
}

/// Variance of mean(peak) − mean(baseline) for a unit-variance stationary
/// AR(1) sequence with coefficient `a`.
fn ar1_amplitude_gain(a: f64, base: &std::ops::Range<usize>, peak: &std::ops::Range<usize>) -> f64 {
    let block_var = |n: usize| {
        let n_f = n as f64;
        let mut acc = n_f;
        let mut ad = 1.0;
        for d in 1..n {
            ad *= a;
            if ad < 1e-300 {
                break;
            }
            acc += 2.0 * (n - d) as f64 * ad;
        }
        acc / (n_f * n_f)
    };
    let p0 = peak.start;
    let peak_sum: f64 = peak.clone().map(|i| a.powi((i - p0) as i32)).sum();
    let base_sum: f64 = base.clone().map(|j| a.powf((p0 - j) as f64)).sum();
    let cov = peak_sum * base_sum / (peak.len() * base.len()) as f64;
    block_var(peak.len()) + block_var(base.len()) - 2.0 * cov
}

/// Single-pole low-pass filter at `cutoff_hz`, started from the first sample.
pub fn low_pass(signal: &[f64], cutoff_hz: f64, sample_rate_hz: f64) -> Vec<f64> {
    let a = (-2.0 * std::f64::consts::PI * cutoff_hz / sample_rate_hz).exp();
    let mut out = Vec::with_capacity(signal.len());
    let mut y = signal.first().copied().unwrap_or(0.0);
    for &x in signal {
        y = a * y + (1.0 - a) * x;
        out.push(y);
    }
    out
}

/// Synthesize the membrane current of one trial.
///
/// `absorption_times_s` are the isomerisation times of delivered photons and
/// `herald_times_s` the signal-APD clicks of the window. Noise is drawn from
/// `rng` in a fixed order, so a given seed always yields the same trace.
pub fn synthesize_trial<R: Rng + ?Sized>(
    timing: &TrialTiming,
    cell: &RodCellParams,
    absorption_times_s: &[f64],
    herald_times_s: &[f64],
    rng: &mut R,
) -> Result<TrialRecord> {
    cell.validate()?;
    let duration = timing.duration_s();
    for &t in absorption_times_s.iter().chain(herald_times_s) {
        if !(0.0..duration).contains(&t) {
            return Err(Error::TimeOutsideRecord { time: t, duration });
        }
    }
    let fs = cell.sample_rate_hz;
    let n = (duration * fs).round() as usize;
    let mut response = vec![0.0; n];

    let jitter = Normal::new(0.0, cell.amplitude_jitter_sd_pa).expect("finite jitter");
    let mut add_event = |at: f64, rng: &mut R| {
        let amplitude = cell.response_amplitude_pa + jitter.sample(rng);
        let first = (at * fs).ceil().max(0.0) as usize;
        let last = (((at + RESPONSE_SUPPORT * cell.time_to_peak_s) * fs).ceil().max(0.0) as usize).min(n);
        for (k, r) in response.iter_mut().enumerate().take(last).skip(first) {
            let shape = single_photon_waveform(k as f64 / fs - at, cell) / cell.response_amplitude_pa;
            *r += amplitude * shape;
        }
    };

    // Spontaneous events and noise are drawn before the photon responses,
    // so trials that share a seed share their dark background.
    if cell.discrete_event_rate_hz > 0.0 {
        let lead = RESPONSE_SUPPORT * cell.time_to_peak_s;
        let span = duration + lead;
        let count = Poisson::new(cell.discrete_event_rate_hz * span)
            .expect("positive rate")
            .sample(rng) as usize;
        for _ in 0..count {
            let at = rng.random::<f64>() * span - lead;
            add_event(at, rng);
        }
    }

    let noise = NoiseModel::new(cell);
    let a = noise.ar_coeff;
    let drive = (1.0 - a * a).sqrt() * noise.continuous_sd;
    let mut cont = if noise.continuous_sd > 0.0 {
        noise.continuous_sd * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    };
    let background: Vec<f64> = (0..n)
        .map(|k| {
            let mut current = 0.0;
            if noise.continuous_sd > 0.0 {
                if k > 0 {
                    cont = a * cont + drive * rng.sample::<f64, _>(StandardNormal);
                }
                current += cont;
            }
            if noise.amplifier_sd > 0.0 {
                current += noise.amplifier_sd * rng.sample::<f64, _>(StandardNormal);
            }
            current
        })
        .collect();

    for &t in absorption_times_s {
        add_event(t, rng);
    }
    if let Some(ceiling) = cell.saturation_current_pa {
        for r in &mut response {
            *r = r.min(ceiling);
        }
    }
    let samples = response
        .iter()
        .zip(&background)
        .enumerate()
        .map(|(k, (&r, &b))| Sample {
            time_s: k as f64 / fs,
            current_pa: r + b,
        })
        .collect();

    Ok(TrialRecord {
        trial_id: 0,
        seed: 0,
        sample_rate_hz: fs,
        samples,
        shutter_interval: timing.shutter_interval(),
        herald_times_s: herald_times_s.to_vec(),
        herald_count: herald_times_s.len(),
        true_isomerizations: absorption_times_s.len(),
        trial_class: TrialClass::from_herald_count(herald_times_s.len()),
    })
}
