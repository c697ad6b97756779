//! `rodsim` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rodsim::analysis::{
    analyze_cell, average_waveform, classify_response, AnalysisReport, AnalysisSettings, AveragedWaveform,
    ResponseClass, WelchSamples, WindowChoice,
};
use rodsim::config::load_config;
use rodsim::harness::run_experiment;
use rodsim::io::{self, Layout};
use rodsim::protocol::{AmplitudeWindows, Interval};
use rodsim::rod::{TrialClass, TrialRecord};
use rodsim::source::{g2_scan, G2Mode};

#[derive(Parser)]
#[command(
    name = "rodsim",
    version,
    about = "Heralded single-photon stimulation of rod cells: simulation and analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every cell of a configuration and write the dataset.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides protocol.master_seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "per-trial")]
        layout: Layout,
    },
    /// Analyse a dataset: amplitudes, fits, significance and quantum efficiency.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = rodsim::analysis::DEFAULT_CRITERION_PA)]
        criterion: f64,
        /// `auto` or four times in seconds: baseline start,end then peak start,end.
        #[arg(long, default_value = "auto")]
        windows: String,
        /// Samples entering Welch's test: amplitudes or indicators.
        #[arg(long, default_value = "amplitudes")]
        welch: WelchSamples,
        /// Constrain both single-herald peaks to one FWHM.
        #[arg(long)]
        equal_fwhm: bool,
        #[arg(long, default_value_t = 0.1)]
        bin_width: f64,
    },
    /// Second-order correlation versus mean pair number.
    G2scan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: G2Mode,
        /// LO:HI:STEPS, evenly spaced and inclusive.
        #[arg(long)]
        mu_range: String,
        #[arg(long, default_value_t = 10_000_000)]
        pulses: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot-ready tables from a dataset and its analysis.
    Report {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        analysis: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

type CliResult<T> = Result<T, String>;

fn parse_windows(spec: &str) -> CliResult<WindowChoice> {
    if spec == "auto" {
        return Ok(WindowChoice::Auto);
    }
    let v: Vec<f64> = spec
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("--windows {spec:?}: {e}")))
        .collect::<CliResult<_>>()?;
    let [a, b, c, d] = v[..] else {
        return Err(format!(
            "--windows expects auto or four comma-separated times, got {spec:?}"
        ));
    };
    let windows = AmplitudeWindows::new(Interval::new(a, b), Interval::new(c, d)).map_err(|e| e.to_string())?;
    Ok(WindowChoice::Fixed { windows })
}

fn parse_mu_range(spec: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, steps] = parts[..] else {
        return Err(format!("--mu-range expects LO:HI:STEPS, got {spec:?}"));
    };
    let lo: f64 = lo.parse().map_err(|e| format!("--mu-range LO: {e}"))?;
    let hi: f64 = hi.parse().map_err(|e| format!("--mu-range HI: {e}"))?;
    let steps: usize = steps.parse().map_err(|e| format!("--mu-range STEPS: {e}"))?;
    let ordered = lo >= 0.0 && hi >= lo;
    if steps == 0 || !ordered || (steps == 1 && hi != lo) {
        return Err(format!(
            "--mu-range {spec:?}: need 0 <= LO <= HI and STEPS >= 1 (STEPS = 1 only when LO = HI)"
        ));
    }
    Ok((0..steps)
        .map(|i| {
            if steps == 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (steps - 1) as f64
            }
        })
        .collect())
}

fn responders<'a>(
    trials: &'a [TrialRecord],
    analysis: &rodsim::analysis::CellAnalysis,
    criterion: f64,
) -> Vec<&'a TrialRecord> {
    trials
        .iter()
        .filter(|t| t.trial_class == TrialClass::SingleHerald)
        .zip(&analysis.single_amplitudes_pa)
        .filter(|(_, &a)| classify_response(a, criterion) == ResponseClass::Response)
        .map(|(t, _)| t)
        .collect()
}

fn write_tables(
    dir: &Path,
    prefix: &str,
    report: &AnalysisReport,
    averages: &[Option<AveragedWaveform>],
) -> CliResult<()> {
    for (name, contents) in io::report_tables(report, averages) {
        let path = dir.join(format!("{prefix}{name}"));
        io::write_atomic(&path, contents.as_bytes()).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>, layout: Layout) -> CliResult<()> {
    let cfg = load_config(config).map_err(|e| e.to_string())?;
    let dataset = run_experiment(&cfg, seed).map_err(|e| e.to_string())?;
    io::write_dataset(&dataset, out, layout).map_err(|e| e.to_string())?;
    let total: usize = dataset.cells.iter().map(|c| c.trials.len()).sum();
    eprintln!(
        "wrote {} cells, {total} trials to {}",
        dataset.cells.len(),
        out.display()
    );
    Ok(())
}

fn analyze(data: &Path, out: &Path, settings: AnalysisSettings) -> CliResult<()> {
    settings.validate().map_err(|e| e.to_string())?;
    let manifest = io::read_manifest(data).map_err(|e| e.to_string())?;
    let timing = manifest.config.protocol.timing();
    let mut cells = Vec::new();
    let mut averages = Vec::new();
    for entry in &manifest.cells {
        let trials = io::read_cell(data, &manifest, entry.cell).map_err(|e| e.to_string())?;
        let t0 = manifest.config.cells[entry.cell].params.time_to_peak_s;
        let cell = analyze_cell(entry.cell, &trials, &timing, t0, &manifest.config.losses, &settings)
            .map_err(|e| format!("cell {}: {e}", entry.cell))?;
        averages.push(cell.waveform.ok().map(|w| w.average.clone()));
        cells.push(cell);
    }
    let report = AnalysisReport::new(settings, manifest.config.losses, cells);
    io::write_report(&report, out).map_err(|e| e.to_string())?;
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    write_tables(dir, &format!("{stem}."), &report, &averages)?;
    let s = &report.summary;
    match (s.eta_mean, s.eta_sem) {
        (Some(m), Some(e)) => eprintln!("eta = {m:.4} ± {e:.4} (mean ± s.e.m., {} cells)", s.n_cells),
        (Some(m), None) => eprintln!("eta = {m:.4} (1 cell)"),
        _ => eprintln!("eta unavailable"),
    }
    eprintln!(
        "{} of {} cells with one-tailed Welch p < 0.05",
        s.significant_cells, s.n_cells
    );
    Ok(())
}

fn g2(config: &Path, mode: G2Mode, mu_range: &str, pulses: u64, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let cfg = load_config(config).map_err(|e| e.to_string())?;
    let mus = parse_mu_range(mu_range)?;
    let seed = seed.unwrap_or(cfg.protocol.master_seed);
    let runs = g2_scan(mode, &mus, &cfg.source, &cfg.timing, &cfg.losses, pulses, seed).map_err(|e| e.to_string())?;
    io::write_atomic(out, io::g2_table(&runs).as_bytes()).map_err(|e| e.to_string())
}

fn report(data: &Path, analysis: &Path, out: &Path) -> CliResult<()> {
    let report = io::read_report(analysis).map_err(|e| e.to_string())?;
    let manifest = io::read_manifest(data).map_err(|e| e.to_string())?;
    if report.cells.len() != manifest.cells.len() {
        return Err(format!(
            "{} describes {} cells but the dataset has {}",
            analysis.display(),
            report.cells.len(),
            manifest.cells.len()
        ));
    }
    let mut averages = Vec::new();
    for cell in &report.cells {
        let avg = match cell.waveform.ok() {
            Some(_) => {
                let trials = io::read_cell(data, &manifest, cell.cell).map_err(|e| e.to_string())?;
                let picked = responders(&trials, cell, report.settings.criterion_pa);
                average_waveform(&picked, &cell.windows.baseline, report.settings.waveform_bandwidth_hz).ok()
            }
            None => None,
        };
        averages.push(avg);
    }
    io::create_dir_atomic(out, |dir| {
        write_tables(dir, "", &report, &averages).map_err(rodsim::Error::InvalidInput)
    })
    .map_err(|e| e.to_string())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            layout,
        } => simulate(&config, &out, seed, layout),
        Command::Analyze {
            data,
            out,
            criterion,
            windows,
            welch,
            equal_fwhm,
            bin_width,
        } => {
            let settings = AnalysisSettings {
                criterion_pa: criterion,
                windows: parse_windows(&windows)?,
                welch_samples: welch,
                equal_fwhm,
                bin_width_pa: bin_width,
                ..AnalysisSettings::default()
            };
            analyze(&data, &out, settings)
        }
        Command::G2scan {
            config,
            mode,
            mu_range,
            pulses,
            seed,
            out,
        } => g2(&config, mode, &mu_range, pulses, seed, &out),
        Command::Report { data, analysis, out } => report(&data, &analysis, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("rodsim: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
