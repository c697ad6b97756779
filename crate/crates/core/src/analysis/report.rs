//! Per-cell analysis of a simulated run and the consolidated report.

use serde::{Deserialize, Serialize};

use super::amplitude::{
    classify_response, extract_amplitude, ResponseClass, ResponseProbability, DEFAULT_CRITERION_PA,
};
use super::gauss::{exceedance_probability, fit_gaussians, FitSpec, GaussianFitResult, Histogram};
use super::lm::LmSettings;
use super::qe::{estimate_qe, QEEstimate};
use super::stats::{welch_t_test, TTestResult};
use super::waveform::{average_and_fit_waveform, WaveformFit, AVERAGE_BANDWIDTH_HZ};
use crate::protocol::{AmplitudeWindows, TrialTiming};
use crate::rod::{TrialClass, TrialRecord};
use crate::timing::LossBudget;
use crate::{Error, Result};

/// Amplitude windows: placed from the protocol and time-to-peak, or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WindowChoice {
    Auto,
    Fixed { windows: AmplitudeWindows },
}

impl WindowChoice {
    pub fn resolve(&self, timing: &TrialTiming, time_to_peak_s: f64) -> AmplitudeWindows {
        match self {
            WindowChoice::Auto => AmplitudeWindows::auto(timing, time_to_peak_s),
            WindowChoice::Fixed { windows } => *windows,
        }
    }
}

/// What enters Welch's test for a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WelchSamples {
    /// Per-trial amplitudes.
    Amplitudes,
    /// Per-trial response indicators (1 above criterion, else 0).
    Indicators,
}

impl std::str::FromStr for WelchSamples {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amplitudes" => Ok(Self::Amplitudes),
            "indicators" => Ok(Self::Indicators),
            other => Err(Error::input(format!(
                "unknown Welch sample kind {other:?} (amplitudes|indicators)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSettings {
    pub criterion_pa: f64,
    pub windows: WindowChoice,
    pub bin_width_pa: f64,
    pub welch_samples: WelchSamples,
    /// Constrain both peaks of the single-herald fit to one FWHM.
    pub equal_fwhm: bool,
    /// Starting guesses of the single-herald response peak.
    pub response_center_init_pa: f64,
    pub response_fwhm_init_pa: f64,
    pub waveform_bandwidth_hz: f64,
    pub lm: LmSettings,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            criterion_pa: DEFAULT_CRITERION_PA,
            windows: WindowChoice::Auto,
            bin_width_pa: 0.1,
            welch_samples: WelchSamples::Amplitudes,
            equal_fwhm: false,
            response_center_init_pa: 0.58,
            response_fwhm_init_pa: 0.5,
            waveform_bandwidth_hz: AVERAGE_BANDWIDTH_HZ,
            lm: LmSettings::default(),
        }
    }
}

impl AnalysisSettings {
    pub fn validate(&self) -> Result<()> {
        if !self.criterion_pa.is_finite() {
            return Err(Error::input("criterion must be finite"));
        }
        if !(self.bin_width_pa > 0.0) || !(self.waveform_bandwidth_hz > 0.0) {
            return Err(Error::input("bin width and waveform bandwidth must be > 0"));
        }
        if let WindowChoice::Fixed { windows } = &self.windows {
            windows.validate()?;
        }
        Ok(())
    }
}

/// A result that may be unavailable for a cell, with the reason kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome<T> {
    Ok(T),
    Unavailable(String),
}

impl<T> Outcome<T> {
    pub fn ok(&self) -> Option<&T> {
        match self {
            Outcome::Ok(v) => Some(v),
            Outcome::Unavailable(_) => None,
        }
    }
}

impl<T> From<Result<T>> for Outcome<T> {
    fn from(r: Result<T>) -> Self {
        match r {
            Ok(v) => Outcome::Ok(v),
            Err(e) => Outcome::Unavailable(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub zero_herald: usize,
    pub single_herald: usize,
    pub multi_herald: usize,
}

impl ClassCounts {
    pub fn of(trials: &[TrialRecord]) -> Self {
        let count = |c| trials.iter().filter(|t| t.trial_class == c).count();
        Self {
            zero_herald: count(TrialClass::ZeroHerald),
            single_herald: count(TrialClass::SingleHerald),
            multi_herald: count(TrialClass::MultiHerald),
        }
    }

    pub fn total(&self) -> usize {
        self.zero_herald + self.single_herald + self.multi_herald
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAnalysis {
    pub cell: usize,
    pub counts: ClassCounts,
    pub windows: AmplitudeWindows,
    pub dark_amplitudes_pa: Vec<f64>,
    pub single_amplitudes_pa: Vec<f64>,
    pub p_sph: ResponseProbability,
    pub p_dn: ResponseProbability,
    pub qe: Outcome<QEEstimate>,
    pub welch: Outcome<TTestResult>,
    pub dark_histogram: Outcome<Histogram>,
    pub single_histogram: Outcome<Histogram>,
    pub dark_fit: Outcome<GaussianFitResult>,
    pub single_fit: Outcome<GaussianFitResult>,
    /// Dark-fit probability of exceeding the criterion.
    pub dark_exceedance: Outcome<f64>,
    /// Fit to the average of single-herald trials classified as responses.
    pub waveform: Outcome<WaveformFit>,
}

fn indicators(amplitudes: &[f64], criterion: f64) -> Vec<f64> {
    amplitudes
        .iter()
        .map(|&a| f64::from(u8::from(classify_response(a, criterion) == ResponseClass::Response)))
        .collect()
}

/// Analyse the trials of one cell. Multi-herald trials are counted but
/// excluded from every estimate.
pub fn analyze_cell(
    cell: usize,
    trials: &[TrialRecord],
    timing: &TrialTiming,
    time_to_peak_s: f64,
    losses: &LossBudget,
    settings: &AnalysisSettings,
) -> Result<CellAnalysis> {
    settings.validate()?;
    let windows = settings.windows.resolve(timing, time_to_peak_s);
    windows.validate()?;
    let mut dark = Vec::new();
    let mut single = Vec::new();
    let mut single_trials = Vec::new();
    for t in trials {
        match t.trial_class {
            TrialClass::ZeroHerald => dark.push(extract_amplitude(t, &windows)?),
            TrialClass::SingleHerald => {
                let a = extract_amplitude(t, &windows)?;
                single.push(a);
                single_trials.push((t, a));
            }
            TrialClass::MultiHerald => {}
        }
    }
    let criterion = settings.criterion_pa;
    let p_sph = ResponseProbability::from_amplitudes(&single, criterion);
    let p_dn = ResponseProbability::from_amplitudes(&dark, criterion);
    let qe = if single.is_empty() || dark.is_empty() {
        Outcome::Unavailable("quantum efficiency needs both single-herald and zero-herald trials".into())
    } else {
        estimate_qe(p_sph, p_dn, losses).into()
    };
    let welch = match settings.welch_samples {
        WelchSamples::Amplitudes => welch_t_test(&single, &dark),
        WelchSamples::Indicators => welch_t_test(&indicators(&single, criterion), &indicators(&dark, criterion)),
    }
    .into();

    let dark_histogram = Histogram::build(&dark, settings.bin_width_pa);
    let single_histogram = Histogram::build(&single, settings.bin_width_pa);
    let dark_fit: Outcome<GaussianFitResult> = match &dark_histogram {
        Ok(h) => {
            let mut spec = FitSpec::single_from(h);
            spec.settings = settings.lm;
            fit_gaussians(h, &spec).into()
        }
        Err(e) => Outcome::Unavailable(e.to_string()),
    };
    let single_fit = match &single_histogram {
        Ok(h) => {
            let mut spec = FitSpec::response_pair(h, settings.response_center_init_pa, settings.response_fwhm_init_pa)
                .with_equal_fwhm(settings.equal_fwhm);
            spec.settings = settings.lm;
            fit_gaussians(h, &spec).into()
        }
        Err(e) => Outcome::Unavailable(e.to_string()),
    };
    let dark_exceedance = match &dark_fit {
        Outcome::Ok(f) => exceedance_probability(f, criterion).into(),
        Outcome::Unavailable(why) => Outcome::Unavailable(why.clone()),
    };
    let responders: Vec<&TrialRecord> = single_trials
        .iter()
        .filter(|(_, a)| classify_response(*a, criterion) == ResponseClass::Response)
        .map(|(t, _)| *t)
        .collect();
    let waveform = if responders.len() < 2 {
        Outcome::Unavailable(format!(
            "{} response trials; averaging needs at least 2",
            responders.len()
        ))
    } else {
        average_and_fit_waveform(
            &responders,
            &windows.baseline,
            settings.waveform_bandwidth_hz,
            &settings.lm,
        )
        .into()
    };

    Ok(CellAnalysis {
        cell,
        counts: ClassCounts::of(trials),
        windows,
        dark_amplitudes_pa: dark,
        single_amplitudes_pa: single,
        p_sph,
        p_dn,
        qe,
        welch,
        dark_histogram: dark_histogram.into(),
        single_histogram: single_histogram.into(),
        dark_fit,
        single_fit,
        dark_exceedance,
        waveform,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub n_cells: usize,
    pub eta_mean: Option<f64>,
    pub eta_sd: Option<f64>,
    pub eta_sem: Option<f64>,
    /// Cells whose one-tailed Welch p falls below 0.05.
    pub significant_cells: usize,
}

impl ReportSummary {
    pub fn of(cells: &[CellAnalysis]) -> Self {
        let etas: Vec<f64> = cells.iter().filter_map(|c| c.qe.ok().map(|q| q.eta)).collect();
        let n = etas.len() as f64;
        let mean = (!etas.is_empty()).then(|| etas.iter().sum::<f64>() / n);
        let sd = mean
            .filter(|_| etas.len() > 1)
            .map(|m| (etas.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Self {
            n_cells: cells.len(),
            eta_mean: mean,
            eta_sd: sd,
            eta_sem: sd.map(|s| s / n.sqrt()),
            significant_cells: cells
                .iter()
                .filter(|c| c.welch.ok().is_some_and(|w| w.one_tailed_p < 0.05))
                .count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub settings: AnalysisSettings,
    pub losses: LossBudget,
    pub cells: Vec<CellAnalysis>,
    pub summary: ReportSummary,
}

impl AnalysisReport {
    pub fn new(settings: AnalysisSettings, losses: LossBudget, cells: Vec<CellAnalysis>) -> Self {
        Self {
            summary: ReportSummary::of(&cells),
            settings,
            losses,
            cells,
        }
    }
}
