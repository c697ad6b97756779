//! Demo operations behind the browser bindings, returning JSON text.

use rodsim::analysis::{analyze_cell, AnalysisSettings, GaussianFitResult, Histogram, Outcome};
use rodsim::harness::{run_cell, SimulationConfig};
use rodsim::rod::{poisson_filter, poisson_filter_fwhm};
use rodsim::source::{g2_scan, G2Mode};
use serde::Serialize;

type DemoResult = Result<String, String>;

fn json<T: Serialize>(v: &T) -> DemoResult {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Curve {
    times_s: Vec<f64>,
    current_pa: Vec<f64>,
    fwhm_s: Option<f64>,
}

/// Single-photon response sampled at `points` times over `duration_s`.
pub fn waveform(amplitude_pa: f64, time_to_peak_s: f64, stages: f64, duration_s: f64, points: usize) -> DemoResult {
    if !(amplitude_pa > 0.0 && time_to_peak_s > 0.0 && stages >= 1.0 && duration_s > 0.0) || points < 2 {
        return Err("need amplitude, time to peak and duration > 0, stages >= 1 and at least 2 points".into());
    }
    let times_s: Vec<f64> = (0..points)
        .map(|i| duration_s * i as f64 / (points - 1) as f64)
        .collect();
    json(&Curve {
        current_pa: times_s
            .iter()
            .map(|&t| poisson_filter(t, amplitude_pa, time_to_peak_s, stages))
            .collect(),
        fwhm_s: poisson_filter_fwhm(time_to_peak_s, stages).ok(),
        times_s,
    })
}

#[derive(Serialize)]
struct G2Point {
    mu: f64,
    g2: f64,
    sd: f64,
    signal_counts_per_pulse: f64,
}

/// g⁽²⁾ of one measurement arrangement at `steps` pair means in [lo, hi].
pub fn g2(mode: &str, mu_lo: f64, mu_hi: f64, steps: usize, pulses: u64, seed: u64) -> DemoResult {
    let mode: G2Mode = mode.parse().map_err(|e: rodsim::Error| e.to_string())?;
    if steps == 0 || steps > 50 || !(mu_lo >= 0.0 && mu_hi >= mu_lo) {
        return Err("need 0 <= lo <= hi and 1..=50 steps".into());
    }
    let mus: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                mu_lo
            } else {
                mu_lo + (mu_hi - mu_lo) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let c = SimulationConfig::with_default_cells(1, 1);
    let runs = g2_scan(mode, &mus, &c.source, &c.timing, &c.losses, pulses, seed).map_err(|e| e.to_string())?;
    json(
        &runs
            .iter()
            .map(|r| G2Point {
                mu: r.mean_pairs_per_pulse,
                g2: r.estimate.value,
                sd: r.estimate.std_dev,
                signal_counts_per_pulse: r.signal_counts_per_pulse(),
            })
            .collect::<Vec<_>>(),
    )
}

#[derive(Serialize)]
struct HistogramView {
    centers_pa: Vec<f64>,
    probability: Vec<f64>,
    fit_x_pa: Vec<f64>,
    fit_y: Vec<f64>,
    fit_r_squared: Option<f64>,
}

fn view(h: &Outcome<Histogram>, f: &Outcome<GaussianFitResult>) -> Option<HistogramView> {
    let h = h.ok()?;
    let lo = h.centers.first()? - h.bin_width;
    let hi = h.centers.last()? + h.bin_width;
    let curve = f.ok().map(|f| f.sample_curve((lo, hi), 200)).unwrap_or_default();
    Some(HistogramView {
        centers_pa: h.centers.clone(),
        probability: h.probabilities(),
        fit_x_pa: curve.iter().map(|p| p.0).collect(),
        fit_y: curve.iter().map(|p| p.1).collect(),
        fit_r_squared: f.ok().map(|f| f.r_squared),
    })
}

#[derive(Serialize)]
struct CellView {
    zero_herald: usize,
    single_herald: usize,
    multi_herald: usize,
    p_sph: f64,
    p_dn: f64,
    eta: Option<f64>,
    eta_std_err: Option<f64>,
    welch_p: Option<f64>,
    dark: Option<HistogramView>,
    single: Option<HistogramView>,
}

/// Simulate and analyse one cell of `trials` shutter cycles.
pub fn cell(
    trials: usize,
    quantum_efficiency: f64,
    heralds_per_window: f64,
    criterion_pa: f64,
    seed: u64,
) -> DemoResult {
    if trials == 0 || trials > 5000 {
        return Err("trials must lie in 1..=5000".into());
    }
    let mut c = SimulationConfig::with_default_cells(1, trials);
    c.cells[0].params.quantum_efficiency = quantum_efficiency;
    c.tune_heralds_per_window(heralds_per_window)
        .map_err(|e| e.to_string())?;
    c.validate().map_err(|e| e.to_string())?;
    let data = run_cell(&c, 0, seed).map_err(|e| e.to_string())?;
    let settings = AnalysisSettings {
        criterion_pa,
        ..AnalysisSettings::default()
    };
    let t0 = c.cells[0].params.time_to_peak_s;
    let a = analyze_cell(0, &data, &c.protocol.timing(), t0, &c.losses, &settings).map_err(|e| e.to_string())?;
    json(&CellView {
        zero_herald: a.counts.zero_herald,
        single_herald: a.counts.single_herald,
        multi_herald: a.counts.multi_herald,
        p_sph: a.p_sph.value,
        p_dn: a.p_dn.value,
        eta: a.qe.ok().map(|q| q.eta),
        eta_std_err: a.qe.ok().map(|q| q.std_err),
        welch_p: a.welch.ok().map(|w| w.one_tailed_p),
        dark: view(&a.dark_histogram, &a.dark_fit),
        single: view(&a.single_histogram, &a.single_fit),
    })
}
