//! Amplitude extraction, criterion detection, histogram fits, significance,
//! quantum efficiency and waveform fits.

pub mod amplitude;
pub mod gauss;
pub mod lm;
pub mod qe;
pub mod report;
pub mod stats;
pub mod waveform;

pub use amplitude::{classify_response, extract_amplitude, ResponseClass, ResponseProbability, DEFAULT_CRITERION_PA};
pub use gauss::{
    exceedance_probability, fit_gaussians, fit_gaussians_to_heights, gaussian_exceedance, FitSpec, GaussianComponent,
    GaussianFitResult, Histogram,
};
pub use lm::{levenberg_marquardt, LeastSquaresProblem, LmOutcome, LmSettings};
pub use qe::{estimate_qe, QEEstimate};
pub use report::{
    analyze_cell, AnalysisReport, AnalysisSettings, CellAnalysis, ClassCounts, Outcome, WelchSamples, WindowChoice,
};
pub use stats::{student_t_sf, welch_t_test, TTestResult};
pub use waveform::{average_and_fit_waveform, average_waveform, AveragedWaveform, WaveformFit};
