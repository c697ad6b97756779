//! Herald-aligned waveform averaging and Poisson-filter model fitting.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, r_squared, LeastSquaresProblem, LmSettings};
use crate::protocol::Interval;
use crate::rod::{low_pass, poisson_filter, poisson_filter_fwhm, TrialRecord};
use crate::{Error, Result};

/// Default bandwidth of averaged waveforms.
pub const AVERAGE_BANDWIDTH_HZ: f64 = 20.0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AveragedWaveform {
    pub sample_rate_hz: f64,
    pub bandwidth_hz: f64,
    pub n_trials: usize,
    /// Time of sample `j` relative to the sample grid origin after the herald.
    pub times_s: Vec<f64>,
    pub mean_pa: Vec<f64>,
    pub sem_pa: Vec<f64>,
    /// Per-trial delay between the herald and the first aligned sample.
    pub grid_offsets_s: Vec<f64>,
}

/// Baseline-subtracted, low-pass filtered mean of `trials` aligned on their
/// first herald, with its pointwise standard error.
pub fn average_waveform(trials: &[&TrialRecord], baseline: &Interval, bandwidth_hz: f64) -> Result<AveragedWaveform> {
    let first = trials.first().ok_or_else(|| Error::input("no trials to average"))?;
    let fs = first.sample_rate_hz;
    if trials.iter().any(|t| t.sample_rate_hz != fs) {
        return Err(Error::input("trials with different sample rates cannot be averaged"));
    }
    let mut starts = Vec::with_capacity(trials.len());
    let mut offsets = Vec::with_capacity(trials.len());
    for t in trials {
        let herald = *t
            .herald_times_s
            .first()
            .ok_or_else(|| Error::input(format!("trial {} has no herald to align on", t.trial_id)))?;
        let start = (herald * fs - 1e-9).ceil().max(0.0) as usize;
        starts.push(start);
        offsets.push(start as f64 / fs - herald);
    }
    let len = trials
        .iter()
        .zip(&starts)
        .map(|(t, &s)| t.samples.len().saturating_sub(s))
        .min()
        .unwrap_or(0);
    if len < 2 {
        return Err(Error::input("aligned traces are too short to average"));
    }
    let base_range = baseline.sample_range(fs);
    let mut traces = Vec::with_capacity(trials.len());
    for (t, &s) in trials.iter().zip(&starts) {
        if base_range.is_empty() || base_range.end > t.samples.len() {
            return Err(Error::WindowOutsideRecord {
                start: baseline.start,
                end: baseline.end,
                duration: t.duration_s(),
            });
        }
        let level = t.samples[base_range.clone()].iter().map(|x| x.current_pa).sum::<f64>() / base_range.len() as f64;
        let raw: Vec<f64> = t.samples[s..s + len].iter().map(|x| x.current_pa - level).collect();
        traces.push(low_pass(&raw, bandwidth_hz, fs));
    }
    let n = traces.len() as f64;
    let mut mean = vec![0.0; len];
    for tr in &traces {
        for (m, v) in mean.iter_mut().zip(tr) {
            *m += v / n;
        }
    }
    let sem = if traces.len() > 1 {
        (0..len)
            .map(|j| {
                let var = traces.iter().map(|tr| (tr[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            })
            .collect()
    } else {
        vec![0.0; len]
    };
    Ok(AveragedWaveform {
        sample_rate_hz: fs,
        bandwidth_hz,
        n_trials: trials.len(),
        times_s: (0..len).map(|j| j as f64 / fs).collect(),
        mean_pa: mean,
        sem_pa: sem,
        grid_offsets_s: offsets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformFit {
    pub amplitude_pa: f64,
    pub time_to_peak_s: f64,
    pub stages: f64,
    pub fwhm_s: Option<f64>,
    pub r_squared: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip)]
    pub average: AveragedWaveform,
}

impl WaveformFit {
    /// Unfiltered model response at `t` seconds after absorption.
    pub fn model(&self, t: f64) -> f64 {
        poisson_filter(t, self.amplitude_pa, self.time_to_peak_s, self.stages)
    }
}

/// The averaged model: each trial's response sampled on its own grid
/// offset, averaged, then passed through the same low-pass as the data.
struct AveragedModel<'a> {
    avg: &'a AveragedWaveform,
}

impl LeastSquaresProblem for AveragedModel<'_> {
    fn n_params(&self) -> usize {
        3
    }

    fn targets(&self) -> &[f64] {
        &self.avg.mean_pa
    }

    fn evaluate(&self, p: &[f64], values: &mut [f64], jacobian: Option<&mut DMatrix<f64>>) {
        let (amp, t0, m) = (p[0], p[1], p[2]);
        let n = self.avg.grid_offsets_s.len() as f64;
        let len = values.len();
        let want_jac = jacobian.is_some();
        let mut raw = vec![0.0; len];
        let mut cols = if want_jac { vec![vec![0.0; len]; 3] } else { Vec::new() };
        for &eps in &self.avg.grid_offsets_s {
            for (j, r) in raw.iter_mut().enumerate() {
                let t = self.avg.times_s[j] + eps;
                if t <= 0.0 {
                    continue;
                }
                let u = t / t0;
                let g = u * (1.0 - u).exp();
                let shape = g.powf(m - 1.0);
                let f = amp * shape;
                *r += f / n;
                if want_jac {
                    cols[0][j] += shape / n;
                    cols[1][j] += f * (m - 1.0) * (u - 1.0) / t0 / n;
                    cols[2][j] += f * g.ln() / n;
                }
            }
        }
        let fs = self.avg.sample_rate_hz;
        let bw = self.avg.bandwidth_hz;
        values.copy_from_slice(&low_pass(&raw, bw, fs));
        if let Some(jac) = jacobian {
            for (k, col) in cols.iter().enumerate() {
                for (j, v) in low_pass(col, bw, fs).into_iter().enumerate() {
                    jac[(j, k)] = v;
                }
            }
        }
    }

    fn is_feasible(&self, p: &[f64]) -> bool {
        p[1] > 0.0 && p[2] > 1.0
    }
}

/// Stage count whose unit-t0 FWHM equals `ratio`, clamped to [2, 60].
pub fn stages_for_fwhm_ratio(ratio: f64) -> f64 {
    let width = |m: f64| poisson_filter_fwhm(1.0, m).expect("m >= 2");
    let (mut lo, mut hi) = (2.0, 60.0);
    if ratio >= width(lo) {
        return lo;
    }
    if ratio <= width(hi) {
        return hi;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if width(mid) > ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Coarse grid over (t0, m) with the amplitude solved linearly; robust to
/// noisy averages whose raw maximum can sit anywhere.
fn initial_guess(problem: &AveragedModel<'_>) -> [f64; 3] {
    let avg = problem.avg;
    let y = &avg.mean_pa;
    let span = avg.times_s.last().copied().unwrap_or(1.0);
    let mut best = (
        f64::INFINITY,
        [y.iter().cloned().fold(0.0, f64::max).max(1e-6), 0.5 * span, 4.0],
    );
    let mut shape = vec![0.0; y.len()];
    for m in [2.5, 3.0, 4.0, 5.0, 6.0, 8.0] {
        for i in 1..=60 {
            let t0 = span * i as f64 / 80.0;
            problem.evaluate(&[1.0, t0, m], &mut shape, None);
            let gg: f64 = shape.iter().map(|g| g * g).sum();
            if gg <= 0.0 {
                continue;
            }
            let amp = shape.iter().zip(y).map(|(g, v)| g * v).sum::<f64>() / gg;
            if amp <= 0.0 {
                continue;
            }
            let sse: f64 = shape.iter().zip(y).map(|(g, v)| (v - amp * g).powi(2)).sum();
            if sse < best.0 {
                best = (sse, [amp, t0, m]);
            }
        }
    }
    best.1
}

/// Average single-photon responses and fit `A0 [t/t0 · e^(1−t/t0)]^(m−1)`.
pub fn average_and_fit_waveform(
    trials: &[&TrialRecord],
    baseline: &Interval,
    bandwidth_hz: f64,
    settings: &LmSettings,
) -> Result<WaveformFit> {
    let avg = average_waveform(trials, baseline, bandwidth_hz)?;
    let problem = AveragedModel { avg: &avg };
    let start = initial_guess(&problem);
    let out = levenberg_marquardt(&problem, &start, settings);
    let mut values = vec![0.0; avg.mean_pa.len()];
    problem.evaluate(&out.params, &mut values, None);
    let (amp, t0, m) = (out.params[0], out.params[1], out.params[2]);
    Ok(WaveformFit {
        amplitude_pa: amp,
        time_to_peak_s: t0,
        stages: m,
        fwhm_s: poisson_filter_fwhm(t0, m).ok(),
        r_squared: r_squared(&avg.mean_pa, &values),
        converged: out.converged,
        iterations: out.iterations,
        average: avg,
    })
}
