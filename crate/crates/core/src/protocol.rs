//! Trial protocol: the shutter cycle and the time windows used to measure
//! response amplitudes.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Closed time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    /// Half-open sample index range `[first, last)` of the samples
    /// `t_k = k / rate` with `start <= t_k < end`.
    pub fn sample_range(&self, rate: f64) -> std::ops::Range<usize> {
        // A small guard absorbs rounding of products like 0.2 * 1000.
        let first = (self.start * rate - 1e-9).ceil().max(0.0) as usize;
        let last = (self.end * rate - 1e-9).ceil().max(0.0) as usize;
        first..last.max(first)
    }
}

/// Baseline and peak windows of the amplitude measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeWindows {
    pub baseline: Interval,
    pub peak: Interval,
}

impl AmplitudeWindows {
    pub fn new(baseline: Interval, peak: Interval) -> Result<Self> {
        let w = Self { baseline, peak };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.baseline.start, self.baseline.end, self.peak.start, self.peak.end]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.baseline.start >= self.baseline.end || self.peak.start >= self.peak.end {
            return Err(Error::input(format!("malformed amplitude windows {self:?}")));
        }
        if self.baseline.end > self.peak.start {
            return Err(Error::input(format!(
                "baseline window must end before the peak window starts: {self:?}"
            )));
        }
        Ok(())
    }

    /// Default placement: the last 400 ms of the dark segment as baseline and
    /// one second centred on the expected response peak.
    pub fn auto(timing: &TrialTiming, time_to_peak_s: f64) -> Self {
        let dark_end = timing.dark_duration_s;
        let center = timing.shutter_interval().midpoint() + time_to_peak_s;
        Self {
            baseline: Interval::new((dark_end - 0.4).max(0.0), dark_end),
            peak: Interval::new(center - 0.5, center + 0.5),
        }
    }
}

impl Default for AmplitudeWindows {
    fn default() -> Self {
        Self::auto(&TrialTiming::default(), 1.75)
    }
}

/// Time layout of one shutter cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub dark_duration_s: f64,
    pub shutter_open_s: f64,
    /// Recording time after the shutter opens.
    pub post_record_s: f64,
}

impl Default for TrialTiming {
    fn default() -> Self {
        Self {
            dark_duration_s: 0.6,
            shutter_open_s: 0.1,
            post_record_s: 5.0,
        }
    }
}

impl TrialTiming {
    pub fn duration_s(&self) -> f64 {
        self.dark_duration_s + self.post_record_s
    }

    pub fn shutter_interval(&self) -> Interval {
        Interval::new(self.dark_duration_s, self.dark_duration_s + self.shutter_open_s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dark_duration_s >= 0.0 && self.shutter_open_s > 0.0 && self.post_record_s >= self.shutter_open_s) {
            return Err(Error::config(format!("invalid trial timing {self:?}")));
        }
        Ok(())
    }
}

/// Experiment protocol shared by every cell of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub dark_duration_ms: f64,
    pub shutter_open_ms: f64,
    pub post_record_ms: f64,
    pub pulses_per_window: u64,
    pub trials_per_cell: usize,
    pub master_seed: u64,
    /// Interval between functionality checks. Recorded as metadata only.
    pub functionality_check_interval_min: f64,
    /// Recording session length per cell. Recorded as metadata only.
    pub session_duration_min: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            dark_duration_ms: 600.0,
            shutter_open_ms: 100.0,
            post_record_ms: 5000.0,
            pulses_per_window: 2500,
            trials_per_cell: 400,
            master_seed: 1,
            functionality_check_interval_min: 20.0,
            session_duration_min: 110.0,
        }
    }
}

impl ProtocolConfig {
    pub fn timing(&self) -> TrialTiming {
        TrialTiming {
            dark_duration_s: self.dark_duration_ms * 1e-3,
            shutter_open_s: self.shutter_open_ms * 1e-3,
            post_record_s: self.post_record_ms * 1e-3,
        }
    }

    /// Checks the protocol against the pump repetition rate:
    /// pulses per window = shutter time × repetition rate.
    pub fn validate(&self, rep_rate_hz: f64) -> Result<()> {
        self.timing().validate()?;
        if self.trials_per_cell == 0 {
            return Err(Error::config("protocol.trials_per_cell must be >= 1"));
        }
        let expected = self.shutter_open_ms * 1e-3 * rep_rate_hz;
        if (expected - self.pulses_per_window as f64).abs() > 0.5 {
            return Err(Error::config(format!(
                "protocol.pulses_per_window = {} but shutter {} ms at {} Hz injects {expected}",
                self.pulses_per_window, self.shutter_open_ms, rep_rate_hz
            )));
        }
        Ok(())
    }
}
