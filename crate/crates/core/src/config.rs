//! TOML run configuration.
//!
//! Sections `[source]`, `[timing]`, `[losses]`, `[protocol]`, an optional
//! `[operating_point]` and one `[[cell]]` table per cell group. Every key
//! carries its unit in its name; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::harness::{cell_for_protocol, CellSpec, SimulationConfig};
use crate::protocol::ProtocolConfig;
use crate::rod::{jitter_for_peak_fwhm, RodCellParams, DEFAULT_DARK_AMPLITUDE_VARIANCE, SINGLE_PHOTON_PEAK_FWHM};
use crate::source::SourceConfig;
use crate::timing::{LossBudget, TimingConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatingPoint {
    /// When set, μ is solved for this mean number of heralds per window.
    pub heralds_per_window: Option<f64>,
}

/// One `[[cell]]` table. Unset keys take the default cell's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellSection {
    /// Number of identical cells described by this table.
    pub count: usize,
    /// Overrides `protocol.trials_per_cell`.
    pub trials: Option<usize>,
    pub quantum_efficiency: f64,
    pub response_amplitude_pa: f64,
    pub time_to_peak_s: f64,
    pub filter_stages: u32,
    /// Defaults to the jitter that gives a 0.5 pA wide response peak.
    pub amplitude_jitter_sd_pa: Option<f64>,
    /// Total dark amplitude variance; the continuous noise is set to make
    /// up the remainder. Exclusive with `continuous_noise_variance_pa2`.
    pub dark_amplitude_variance_pa2: Option<f64>,
    pub continuous_noise_variance_pa2: Option<f64>,
    pub discrete_event_rate_hz: f64,
    pub amplifier_noise_variance_pa2: f64,
    pub sample_rate_hz: f64,
    pub recording_bandwidth_hz: f64,
    pub saturation_current_pa: Option<f64>,
}

impl Default for CellSection {
    fn default() -> Self {
        let d = RodCellParams::default();
        Self {
            count: 1,
            trials: None,
            quantum_efficiency: d.quantum_efficiency,
            response_amplitude_pa: d.response_amplitude_pa,
            time_to_peak_s: d.time_to_peak_s,
            filter_stages: d.filter_stages,
            amplitude_jitter_sd_pa: None,
            dark_amplitude_variance_pa2: None,
            continuous_noise_variance_pa2: None,
            discrete_event_rate_hz: d.discrete_event_rate_hz,
            amplifier_noise_variance_pa2: d.amplifier_noise_variance_pa2,
            sample_rate_hz: d.sample_rate_hz,
            recording_bandwidth_hz: d.recording_bandwidth_hz,
            saturation_current_pa: d.saturation_current_pa,
        }
    }
}

impl CellSection {
    pub fn resolve(&self, protocol: &ProtocolConfig) -> Result<RodCellParams> {
        let base = cell_for_protocol(
            &RodCellParams {
                quantum_efficiency: self.quantum_efficiency,
                response_amplitude_pa: self.response_amplitude_pa,
                time_to_peak_s: self.time_to_peak_s,
                filter_stages: self.filter_stages,
                amplitude_jitter_sd_pa: 0.0,
                continuous_noise_variance_pa2: self.continuous_noise_variance_pa2.unwrap_or(0.0),
                discrete_event_rate_hz: self.discrete_event_rate_hz,
                amplifier_noise_variance_pa2: self.amplifier_noise_variance_pa2,
                sample_rate_hz: self.sample_rate_hz,
                recording_bandwidth_hz: self.recording_bandwidth_hz,
                saturation_current_pa: self.saturation_current_pa,
                noise_reference: Default::default(),
            },
            protocol,
        );
        base.validate()?;
        let calibrated = match (self.dark_amplitude_variance_pa2, self.continuous_noise_variance_pa2) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "cell: set either dark_amplitude_variance_pa2 or continuous_noise_variance_pa2, not both",
                ))
            }
            (Some(total), None) => base.with_dark_amplitude_variance(total)?,
            (None, Some(_)) => base,
            (None, None) => base.with_dark_amplitude_variance(DEFAULT_DARK_AMPLITUDE_VARIANCE)?,
        };
        let jitter = self
            .amplitude_jitter_sd_pa
            .unwrap_or_else(|| jitter_for_peak_fwhm(SINGLE_PHOTON_PEAK_FWHM, calibrated.dark_amplitude_variance()));
        let cell = RodCellParams {
            amplitude_jitter_sd_pa: jitter,
            ..calibrated
        };
        cell.validate()?;
        Ok(cell)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub source: SourceConfig,
    pub timing: TimingConfig,
    pub losses: LossBudget,
    pub protocol: ProtocolConfig,
    pub operating_point: OperatingPoint,
    #[serde(rename = "cell")]
    pub cells: Vec<CellSection>,
}

impl ConfigFile {
    /// Expand cell groups, apply the operating point and validate.
    pub fn resolve(&self) -> Result<SimulationConfig> {
        let sections = if self.cells.is_empty() {
            vec![CellSection::default()]
        } else {
            self.cells.clone()
        };
        let mut cells = Vec::new();
        for (i, s) in sections.iter().enumerate() {
            let params = s
                .resolve(&self.protocol)
                .map_err(|e| Error::config(format!("cell table {i}: {e}")))?;
            let trials = s.trials.unwrap_or(self.protocol.trials_per_cell);
            for _ in 0..s.count {
                cells.push(CellSpec {
                    params: params.clone(),
                    trials,
                });
            }
        }
        let mut config = SimulationConfig {
            source: self.source.clone(),
            timing: self.timing.clone(),
            losses: self.losses,
            protocol: self.protocol.clone(),
            cells,
        };
        if let Some(h) = self.operating_point.heralds_per_window {
            config.tune_heralds_per_window(h)?;
        }
        if !config.timing.is_delivery_feasible() {
            return Err(Error::config(format!(
                "fiber delay {} ns misses the AOM window [{}, {}] ns",
                config.timing.fiber_delay_ns,
                config.timing.aom_activation_delay_ns,
                config.timing.aom_activation_delay_ns + config.timing.aom_open_duration_ns
            )));
        }
        config.validate()?;
        Ok(config)
    }
}

pub fn parse_config(text: &str, origin: &Path) -> Result<SimulationConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::schema(origin, e.to_string()))?;
    file.resolve().map_err(|e| match e {
        Error::InvalidConfig(msg) => Error::schema(origin, msg),
        other => other,
    })
}

pub fn load_config(path: &Path) -> Result<SimulationConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}
