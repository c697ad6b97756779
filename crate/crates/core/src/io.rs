//! Dataset, report and table files.
//!
//! A dataset directory holds `manifest.json` plus the trials, either one
//! file per trial (`cell_NNN/trial_NNNNN.csv`) or a single `trials.csv`
//! bundle. Each trial is a `# {json}` metadata line followed by a
//! `time_s,current_pA` table. Floats are written in shortest round-trip form.
//! Every file and directory is written under a temporary name and renamed
//! into place.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisReport, AveragedWaveform, ClassCounts};
use crate::harness::{RunDataset, SeedLedger, SimulationConfig};
use crate::protocol::Interval;
use crate::rod::{Sample, TrialClass, TrialRecord};
use crate::source::G2Run;
use crate::{Error, Result};

pub const DATASET_FORMAT: &str = "rodsim-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
const BUNDLE: &str = "trials.csv";
/// Points per sampled fit curve.
pub const CURVE_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    PerTrial,
    Bundle,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-trial" | "per_trial" => Ok(Layout::PerTrial),
            "bundle" => Ok(Layout::Bundle),
            other => Err(Error::input(format!("unknown layout {other:?} (per-trial|bundle)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCell {
    pub cell: usize,
    pub n_trials: usize,
    pub counts: ClassCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub layout: Layout,
    pub config: SimulationConfig,
    pub seeds: SeedLedger,
    pub cells: Vec<ManifestCell>,
}

/// Trial metadata as stored in the header line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrialHeader {
    cell: usize,
    trial_id: u64,
    trial_class: TrialClass,
    herald_count: usize,
    seed: u64,
    sample_rate_hz: f64,
    shutter_interval: Interval,
    herald_times_s: Vec<f64>,
    true_isomerizations: usize,
    n_samples: usize,
}

fn write_trial(out: &mut String, cell: usize, t: &TrialRecord) -> Result<()> {
    let header = TrialHeader {
        cell,
        trial_id: t.trial_id,
        trial_class: t.trial_class,
        herald_count: t.herald_count,
        seed: t.seed,
        sample_rate_hz: t.sample_rate_hz,
        shutter_interval: t.shutter_interval,
        herald_times_s: t.herald_times_s.clone(),
        true_isomerizations: t.true_isomerizations,
        n_samples: t.samples.len(),
    };
    out.push_str("# ");
    out.push_str(&serde_json::to_string(&header)?);
    out.push_str("\ntime_s,current_pA\n");
    for s in &t.samples {
        let _ = writeln!(out, "{},{}", s.time_s, s.current_pa);
    }
    Ok(())
}

/// Serialize one trial in the single-trial file format.
pub fn trial_to_string(cell: usize, trial: &TrialRecord) -> Result<String> {
    let mut s = String::new();
    write_trial(&mut s, cell, trial)?;
    Ok(s)
}

/// Parse every trial in `text`, returned with its cell index.
pub fn parse_trials(text: &str, origin: &Path) -> Result<Vec<(usize, TrialRecord)>> {
    let bad = |line: usize, msg: String| Error::schema(origin, format!("line {}: {msg}", line + 1));
    let mut lines = text.lines().enumerate().peekable();
    let mut trials = Vec::new();
    while let Some((ln, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let json = line
            .strip_prefix("# ")
            .ok_or_else(|| bad(ln, "expected a '# {json}' trial header".into()))?;
        let h: TrialHeader = serde_json::from_str(json).map_err(|e| bad(ln, e.to_string()))?;
        match lines.next() {
            Some((_, "time_s,current_pA")) => {}
            Some((ln, other)) => return Err(bad(ln, format!("expected column header, found {other:?}"))),
            None => return Err(bad(ln, "missing sample table".into())),
        }
        let mut samples = Vec::with_capacity(h.n_samples);
        for _ in 0..h.n_samples {
            let (ln, row) = lines
                .next()
                .ok_or_else(|| bad(ln, format!("trial {} ends before {} samples", h.trial_id, h.n_samples)))?;
            let (t, i) = row
                .split_once(',')
                .ok_or_else(|| bad(ln, format!("malformed sample row {row:?}")))?;
            let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| bad(ln, format!("{v:?}: {e}")));
            samples.push(Sample {
                time_s: parse(t)?,
                current_pa: parse(i)?,
            });
        }
        if h.herald_count != h.herald_times_s.len() || h.trial_class != TrialClass::from_herald_count(h.herald_count) {
            return Err(bad(
                ln,
                format!("trial {} has inconsistent herald metadata", h.trial_id),
            ));
        }
        trials.push((
            h.cell,
            TrialRecord {
                trial_id: h.trial_id,
                seed: h.seed,
                sample_rate_hz: h.sample_rate_hz,
                samples,
                shutter_interval: h.shutter_interval,
                herald_times_s: h.herald_times_s,
                herald_count: h.herald_count,
                true_isomerizations: h.true_isomerizations,
                trial_class: h.trial_class,
            },
        ));
    }
    Ok(trials)
}

fn parent_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Write `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = parent_of(path);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Populate a fresh directory through `fill` and move it to `path`. An
/// existing non-empty `path` is never overwritten.
pub fn create_dir_atomic(path: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if path.exists() {
        let empty = fs::read_dir(path).map_err(|e| Error::io(path, e))?.next().is_none();
        if !empty {
            return Err(Error::io(
                path,
                std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    "output directory exists and is not empty",
                ),
            ));
        }
        fs::remove_dir(path).map_err(|e| Error::io(path, e))?;
    }
    let parent = parent_of(path);
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let tmp = tempfile::Builder::new()
        .prefix(".rodsim-partial")
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;
    fill(tmp.path())?;
    let staged = tmp.keep();
    fs::rename(&staged, path).map_err(|e| {
        let _ = fs::remove_dir_all(&staged);
        Error::io(path, e)
    })
}

fn trial_path(dir: &Path, cell: usize, trial: u64) -> PathBuf {
    dir.join(format!("cell_{cell:03}"))
        .join(format!("trial_{trial:05}.csv"))
}

pub fn write_dataset(dataset: &RunDataset, dir: &Path, layout: Layout) -> Result<()> {
    create_dir_atomic(dir, |tmp| {
        match layout {
            Layout::PerTrial => {
                for c in &dataset.cells {
                    let cell_dir = tmp.join(format!("cell_{:03}", c.cell));
                    fs::create_dir(&cell_dir).map_err(|e| Error::io(&cell_dir, e))?;
                    for t in &c.trials {
                        let p = trial_path(tmp, c.cell, t.trial_id);
                        fs::write(&p, trial_to_string(c.cell, t)?).map_err(|e| Error::io(&p, e))?;
                    }
                }
            }
            Layout::Bundle => {
                let p = tmp.join(BUNDLE);
                let mut f = std::io::BufWriter::new(fs::File::create(&p).map_err(|e| Error::io(&p, e))?);
                for c in &dataset.cells {
                    for t in &c.trials {
                        f.write_all(trial_to_string(c.cell, t)?.as_bytes())
                            .map_err(|e| Error::io(&p, e))?;
                    }
                }
                f.flush().map_err(|e| Error::io(&p, e))?;
            }
        }
        let manifest = Manifest {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            layout,
            config: dataset.config.clone(),
            seeds: dataset.seeds.clone(),
            cells: dataset
                .cells
                .iter()
                .map(|c| ManifestCell {
                    cell: c.cell,
                    n_trials: c.trials.len(),
                    counts: ClassCounts::of(&c.trials),
                })
                .collect(),
        };
        let p = tmp.join(MANIFEST);
        fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))
    })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::schema(&p, e.to_string()))?;
    if m.format != DATASET_FORMAT || m.version != DATASET_VERSION {
        return Err(Error::schema(
            &p,
            format!(
                "unsupported dataset {} v{} (expected {DATASET_FORMAT} v{DATASET_VERSION})",
                m.format, m.version
            ),
        ));
    }
    Ok(m)
}

fn read_text(p: &Path) -> Result<String> {
    let f = fs::File::open(p).map_err(|e| Error::io(p, e))?;
    let mut s = String::new();
    for line in BufReader::new(f).lines() {
        s.push_str(&line.map_err(|e| Error::io(p, e))?);
        s.push('\n');
    }
    Ok(s)
}

/// Trials of one cell, in trial order.
pub fn read_cell(dir: &Path, manifest: &Manifest, cell: usize) -> Result<Vec<TrialRecord>> {
    let entry = manifest
        .cells
        .iter()
        .find(|c| c.cell == cell)
        .ok_or_else(|| Error::schema(dir.join(MANIFEST), format!("no cell {cell}")))?;
    let trials: Vec<TrialRecord> = match manifest.layout {
        Layout::PerTrial => {
            let mut out = Vec::with_capacity(entry.n_trials);
            for i in 0..entry.n_trials {
                let p = trial_path(dir, cell, i as u64);
                let mut parsed = parse_trials(&read_text(&p)?, &p)?;
                if parsed.len() != 1 || parsed[0].0 != cell || parsed[0].1.trial_id != i as u64 {
                    return Err(Error::schema(&p, format!("expected exactly trial {i} of cell {cell}")));
                }
                out.push(parsed.remove(0).1);
            }
            out
        }
        Layout::Bundle => {
            let p = dir.join(BUNDLE);
            parse_trials(&read_text(&p)?, &p)?
                .into_iter()
                .filter(|(c, _)| *c == cell)
                .map(|(_, t)| t)
                .collect()
        }
    };
    if trials.len() != entry.n_trials || ClassCounts::of(&trials) != entry.counts {
        return Err(Error::schema(
            dir,
            format!("cell {cell} does not match its manifest entry"),
        ));
    }
    Ok(trials)
}

pub fn read_dataset(dir: &Path) -> Result<RunDataset> {
    let manifest = read_manifest(dir)?;
    let cells = manifest
        .cells
        .iter()
        .map(|c| {
            Ok(crate::harness::CellDataset {
                cell: c.cell,
                trials: read_cell(dir, &manifest, c.cell)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunDataset {
        config: manifest.config,
        seeds: manifest.seeds,
        cells,
    })
}

pub fn write_report(report: &AnalysisReport, path: &Path) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(report)?.as_bytes())
}

pub fn read_report(path: &Path) -> Result<AnalysisReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))
}

pub fn g2_table(runs: &[G2Run]) -> String {
    let mut s = String::from("mu,mode,g2,sd,n_pulses,signal_counts_per_pulse\n");
    for r in runs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.mean_pairs_per_pulse,
            r.mode,
            r.estimate.value,
            r.estimate.std_dev,
            r.n_pulses,
            r.signal_counts_per_pulse()
        );
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Plot-ready tables derived from a report, as `(file name, contents)`.
/// `averages` holds the averaged response of each cell, if any.
pub fn report_tables(report: &AnalysisReport, averages: &[Option<AveragedWaveform>]) -> Vec<(&'static str, String)> {
    let mut probs =
        String::from("cell,n_zero,n_single,n_multi,p_sph,p_sph_sd,p_dn,p_dn_sd,eta,eta_se,welch_t,welch_df,welch_p\n");
    let mut hist = String::from("cell,kind,center_pa,count,probability,probability_sd\n");
    let mut curves = String::from("cell,kind,amplitude_pa,probability\n");
    let mut fits = String::from("cell,kind,component,weight,center_pa,fwhm_pa,r_squared,converged\n");
    let mut wfits = String::from("cell,n_trials,amplitude_pa,time_to_peak_s,stages,fwhm_s,r_squared,converged\n");
    let mut wave = String::from("cell,time_s,mean_pa,sem_pa,fit_pa\n");
    for c in &report.cells {
        let qe = c.qe.ok();
        let w = c.welch.ok();
        let _ = writeln!(
            probs,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.cell,
            c.counts.zero_herald,
            c.counts.single_herald,
            c.counts.multi_herald,
            c.p_sph.value,
            c.p_sph.std_dev(),
            c.p_dn.value,
            c.p_dn.std_dev(),
            opt(qe.map(|q| q.eta)),
            opt(qe.map(|q| q.std_err)),
            opt(w.map(|w| w.t_statistic)),
            opt(w.map(|w| w.degrees_of_freedom)),
            opt(w.map(|w| w.one_tailed_p)),
        );
        for (kind, h, f) in [
            ("dark", &c.dark_histogram, &c.dark_fit),
            ("single_herald", &c.single_histogram, &c.single_fit),
        ] {
            let Some(h) = h.ok() else { continue };
            for ((x, n), (p, sd)) in h
                .centers
                .iter()
                .zip(&h.counts)
                .zip(h.probabilities().into_iter().zip(h.probability_sd()))
            {
                let _ = writeln!(hist, "{},{kind},{x},{n},{p},{sd}", c.cell);
            }
            let Some(f) = f.ok() else { continue };
            let lo = h.centers.first().copied().unwrap_or(0.0) - h.bin_width;
            let hi = h.centers.last().copied().unwrap_or(0.0) + h.bin_width;
            for (x, y) in f.sample_curve((lo, hi), CURVE_POINTS) {
                let _ = writeln!(curves, "{},{kind},{x},{y}", c.cell);
            }
            for (i, g) in f.components.iter().enumerate() {
                let _ = writeln!(
                    fits,
                    "{},{kind},{i},{},{},{},{},{}",
                    c.cell, g.weight, g.center, g.fwhm, f.r_squared, f.converged
                );
            }
        }
        if let Some(wf) = c.waveform.ok() {
            let _ = writeln!(
                wfits,
                "{},{},{},{},{},{},{},{}",
                c.cell,
                wf.average.n_trials,
                wf.amplitude_pa,
                wf.time_to_peak_s,
                wf.stages,
                opt(wf.fwhm_s),
                wf.r_squared,
                wf.converged
            );
            if let Some(Some(avg)) = averages.get(c.cell) {
                let model: Vec<f64> = avg
                    .times_s
                    .iter()
                    .map(|&t| {
                        let n = avg.grid_offsets_s.len() as f64;
                        avg.grid_offsets_s.iter().map(|e| wf.model(t + e)).sum::<f64>() / n
                    })
                    .collect();
                let fitted = crate::rod::low_pass(&model, avg.bandwidth_hz, avg.sample_rate_hz);
                for (j, &t) in avg.times_s.iter().enumerate() {
                    let _ = writeln!(
                        wave,
                        "{},{t},{},{},{}",
                        c.cell, avg.mean_pa[j], avg.sem_pa[j], fitted[j]
                    );
                }
            }
        }
    }
    vec![
        ("response_probabilities.csv", probs),
        ("histograms.csv", hist),
        ("histogram_fit_curves.csv", curves),
        ("histogram_fits.csv", fits),
        ("waveform_fits.csv", wfits),
        ("average_waveforms.csv", wave),
    ]
}
