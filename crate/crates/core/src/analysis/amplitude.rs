//! Response amplitudes and criterion detection.

use serde::{Deserialize, Serialize};

use crate::protocol::{AmplitudeWindows, Interval};
use crate::rod::TrialRecord;
use crate::{Error, Result};

/// Criterion level separating single-photon responses from non-responses.
pub const DEFAULT_CRITERION_PA: f64 = 0.45;

fn window_mean(trial: &TrialRecord, window: &Interval) -> Result<f64> {
    let duration = trial.duration_s();
    if window.start < 0.0 || window.end > duration + 1e-9 || window.start >= window.end {
        return Err(Error::WindowOutsideRecord {
            start: window.start,
            end: window.end,
            duration,
        });
    }
    let range = window.sample_range(trial.sample_rate_hz);
    if range.is_empty() || range.end > trial.samples.len() {
        return Err(Error::WindowOutsideRecord {
            start: window.start,
            end: window.end,
            duration,
        });
    }
    let n = range.len() as f64;
    Ok(trial.samples[range].iter().map(|s| s.current_pa).sum::<f64>() / n)
}

/// Mean current in the peak window minus mean current in the baseline
/// window, pA.
pub fn extract_amplitude(trial: &TrialRecord, windows: &AmplitudeWindows) -> Result<f64> {
    Ok(window_mean(trial, &windows.peak)? - window_mean(trial, &windows.baseline)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseClass {
    Response,
    NonResponse,
}

/// A response is an amplitude strictly above the criterion.
pub fn classify_response(amplitude: f64, criterion: f64) -> ResponseClass {
    if amplitude > criterion {
        ResponseClass::Response
    } else {
        ResponseClass::NonResponse
    }
}

/// Observed fraction of trials classified as responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseProbability {
    pub value: f64,
    /// Number of trials behind `value`; zero for an exact probability.
    pub trials: usize,
}

impl ResponseProbability {
    pub fn exact(value: f64) -> Self {
        Self { value, trials: 0 }
    }

    pub fn from_amplitudes(amplitudes: &[f64], criterion: f64) -> Self {
        let responses = amplitudes
            .iter()
            .filter(|&&a| classify_response(a, criterion) == ResponseClass::Response)
            .count();
        Self {
            value: if amplitudes.is_empty() {
                0.0
            } else {
                responses as f64 / amplitudes.len() as f64
            },
            trials: amplitudes.len(),
        }
    }

    /// Binomial standard deviation.
    pub fn std_dev(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            (self.value * (1.0 - self.value) / self.trials as f64).sqrt()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::TrialTiming;
    use crate::rng;
    use crate::rod::{synthesize_trial, RodCellParams};

    fn flat_trial(level: f64) -> TrialRecord {
        let cell = RodCellParams::default().noise_free();
        let mut t = synthesize_trial(&TrialTiming::default(), &cell, &[], &[], &mut rng::seeded(0)).unwrap();
        for s in &mut t.samples {
            s.current_pa = level;
        }
        t
    }

    #[test]
    fn constant_waveform_has_zero_amplitude() {
        let t = flat_trial(3.3);
        assert!(extract_amplitude(&t, &AmplitudeWindows::default()).unwrap().abs() < 1e-12);
        let same = AmplitudeWindows {
            baseline: Interval::new(1.0, 1.5),
            peak: Interval::new(1.0, 1.5),
        };
        assert_eq!(extract_amplitude(&t, &same).unwrap(), 0.0);
    }

    #[test]
    fn noise_free_peak_amplitude() {
        let cell = RodCellParams::default().noise_free();
        let t = synthesize_trial(&TrialTiming::default(), &cell, &[0.65], &[0.65], &mut rng::seeded(0)).unwrap();
        let narrow = AmplitudeWindows {
            baseline: Interval::new(0.2, 0.6),
            peak: Interval::new(0.65 + 1.75 - 0.01, 0.65 + 1.75 + 0.01),
        };
        let a = extract_amplitude(&t, &narrow).unwrap();
        assert!((a - 0.58).abs() < 1e-3, "{a}");
    }

    #[test]
    fn window_outside_record() {
        let t = flat_trial(0.0);
        let w = AmplitudeWindows {
            baseline: Interval::new(0.2, 0.6),
            peak: Interval::new(5.0, 6.0),
        };
        assert!(matches!(
            extract_amplitude(&t, &w),
            Err(Error::WindowOutsideRecord { .. })
        ));
    }

    #[test]
    fn criterion_is_strict() {
        assert_eq!(classify_response(0.58, 0.45), ResponseClass::Response);
        assert_eq!(classify_response(0.0, 0.45), ResponseClass::NonResponse);
        assert_eq!(classify_response(0.45, 0.45), ResponseClass::NonResponse);
    }

    #[test]
    fn response_probability_counts() {
        let p = ResponseProbability::from_amplitudes(&[0.1, 0.5, 0.9, 0.45], 0.45);
        assert_eq!(p.value, 0.5);
        assert_eq!(p.trials, 4);
        assert!((p.std_dev() - 0.25).abs() < 1e-15);
    }
}
