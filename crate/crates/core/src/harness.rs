//! Trial protocol and multi-cell experiment runs.

use serde::{Deserialize, Serialize};

use crate::protocol::{AmplitudeWindows, ProtocolConfig};
use crate::rng::{self, Stream};
use crate::rod::{absorb, synthesize_trial, RodCellParams, TrialClass, TrialRecord};
use crate::source::{detect_signal, PairNumberSampler, SourceConfig};
use crate::timing::{propagate_idler, LossBudget, TimingConfig};
use crate::{Error, Result};

/// One recorded cell: its parameters and number of shutter cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub params: RodCellParams,
    pub trials: usize,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub source: SourceConfig,
    pub timing: TimingConfig,
    pub losses: LossBudget,
    pub protocol: ProtocolConfig,
    pub cells: Vec<CellSpec>,
}

impl SimulationConfig {
    /// Default source, timing, losses and protocol with `n_cells` default
    /// cells of `trials` trials each.
    pub fn with_default_cells(n_cells: usize, trials: usize) -> Self {
        let protocol = ProtocolConfig {
            trials_per_cell: trials,
            ..ProtocolConfig::default()
        };
        let params = cell_for_protocol(&RodCellParams::default(), &protocol);
        Self {
            source: SourceConfig::default(),
            timing: TimingConfig::default(),
            losses: LossBudget::default(),
            protocol,
            cells: vec![CellSpec { params, trials }; n_cells],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.timing.validate()?;
        self.losses.validate()?;
        self.protocol.validate(self.source.rep_rate_hz)?;
        if self.cells.is_empty() {
            return Err(Error::config("at least one cell is required"));
        }
        for (i, c) in self.cells.iter().enumerate() {
            c.params
                .validate()
                .map_err(|e| Error::config(format!("cell {i}: {e}")))?;
            if c.trials == 0 {
                return Err(Error::config(format!("cell {i}: trials must be >= 1")));
            }
        }
        Ok(())
    }

    /// Replace μ so the source yields `heralds` signal clicks per window on
    /// average.
    pub fn tune_heralds_per_window(&mut self, heralds: f64) -> Result<()> {
        self.source.mean_pairs_per_pulse = self
            .source
            .mean_pairs_for_heralds(heralds, self.protocol.pulses_per_window)?;
        Ok(())
    }
}

/// Cell whose noise reference windows follow the protocol and its own
/// time-to-peak.
pub fn cell_for_protocol(cell: &RodCellParams, protocol: &ProtocolConfig) -> RodCellParams {
    RodCellParams {
        noise_reference: AmplitudeWindows::auto(&protocol.timing(), cell.time_to_peak_s),
        ..cell.clone()
    }
}

/// Seed of trial `trial` of cell `cell`.
pub fn trial_seed(master_seed: u64, cell: usize, trial: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(master_seed, cell as u64), trial as u64)
}

/// Simulate one shutter cycle: pump pulses, heralds, feed-forward delivery,
/// absorption and the recorded current.
pub fn run_trial(
    protocol: &ProtocolConfig,
    cell: &RodCellParams,
    source: &SourceConfig,
    timing: &TimingConfig,
    losses: &LossBudget,
    seed: u64,
) -> Result<TrialRecord> {
    let sampler = PairNumberSampler::new(source.mean_pairs_per_pulse, source.spdc_modes)?;
    run_trial_with(&sampler, protocol, cell, source, timing, losses, seed)
}

fn run_trial_with(
    sampler: &PairNumberSampler,
    protocol: &ProtocolConfig,
    cell: &RodCellParams,
    source: &SourceConfig,
    timing: &TimingConfig,
    losses: &LossBudget,
    seed: u64,
) -> Result<TrialRecord> {
    let trial_timing = protocol.timing();
    let mut src = rng::stream(seed, Stream::Source);
    let mut ff = rng::stream(seed, Stream::Feedforward);
    let mut abs = rng::stream(seed, Stream::Absorption);
    let period_ns = source.pulse_period_ns();
    let open = trial_timing.dark_duration_s;
    let mut heralds = Vec::new();
    let mut absorptions = Vec::new();
    for k in 0..protocol.pulses_per_window {
        let pairs = sampler.sample(&mut src);
        if !detect_signal(pairs, source, &mut src) {
            continue;
        }
        let herald_ns = k as f64 * period_ns;
        let herald_s = open + herald_ns * 1e-9;
        heralds.push(herald_s);
        let delivered = propagate_idler(pairs, herald_ns, timing, losses, &mut ff);
        let absorbed = absorb(delivered, cell.quantum_efficiency, &mut abs);
        for _ in 0..absorbed {
            absorptions.push(herald_s + timing.fiber_delay_ns * 1e-9);
        }
    }
    let mut trial = synthesize_trial(
        &trial_timing,
        cell,
        &absorptions,
        &heralds,
        &mut rng::stream(seed, Stream::Noise),
    )?;
    trial.seed = seed;
    trial.trial_class = TrialClass::from_herald_count(heralds.len());
    Ok(trial)
}

/// Classified response probability of trials with and without one absorbed
/// photon, from paired trials that share their dark background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseEfficiency {
    pub with_absorption: f64,
    pub without_absorption: f64,
    /// Probability that an absorbed photon turns a trial into a response.
    pub net: f64,
    /// Standard error of `net` from the per-pair differences.
    pub net_std_err: f64,
    pub trials: usize,
}

/// Monte Carlo estimate of how often a single absorption during the shutter
/// window is classified as a response by `criterion_pa` in `windows`.
/// Absorptions fall on a uniformly chosen pump pulse.
pub fn response_efficiency(
    protocol: &ProtocolConfig,
    source: &SourceConfig,
    timing: &TimingConfig,
    cell: &RodCellParams,
    windows: &AmplitudeWindows,
    criterion_pa: f64,
    trials: usize,
    seed: u64,
) -> Result<ResponseEfficiency> {
    use crate::analysis::{classify_response, extract_amplitude, ResponseClass};
    use rand::Rng;

    if trials == 0 {
        return Err(Error::input("response_efficiency needs at least one trial"));
    }
    let trial_timing = protocol.timing();
    let one = |i: usize| -> Result<(bool, bool)> {
        let s = rng::derive_seed(seed, i as u64);
        let k = rng::stream(s, Stream::Absorption).random_range(0..protocol.pulses_per_window);
        let at = trial_timing.dark_duration_s + k as f64 / source.rep_rate_hz + timing.fiber_delay_ns * 1e-9;
        let hit = |abs: &[f64]| -> Result<bool> {
            let t = synthesize_trial(&trial_timing, cell, abs, &[], &mut rng::stream(s, Stream::Noise))?;
            Ok(classify_response(extract_amplitude(&t, windows)?, criterion_pa) == ResponseClass::Response)
        };
        Ok((hit(&[at])?, hit(&[])?))
    };
    #[cfg(feature = "parallel")]
    let pairs: Vec<(bool, bool)> = {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let pairs: Vec<(bool, bool)> = (0..trials).map(one).collect::<Result<_>>()?;
    let n = trials as f64;
    let diffs: Vec<f64> = pairs
        .iter()
        .map(|&(w, wo)| f64::from(u8::from(w)) - f64::from(u8::from(wo)))
        .collect();
    let net = diffs.iter().sum::<f64>() / n;
    let var = if trials > 1 {
        diffs.iter().map(|d| (d - net).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(ResponseEfficiency {
        with_absorption: pairs.iter().filter(|p| p.0).count() as f64 / n,
        without_absorption: pairs.iter().filter(|p| p.1).count() as f64 / n,
        net,
        net_std_err: (var / n).sqrt(),
        trials,
    })
}

/// How trial seeds derive from the master seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLedger {
    pub master_seed: u64,
    pub scheme: String,
    pub cell_seeds: Vec<u64>,
}

impl SeedLedger {
    pub fn new(master_seed: u64, n_cells: usize) -> Self {
        Self {
            master_seed,
            scheme: "trial_seed = splitmix(splitmix(master, cell), trial); ChaCha8 streams \
                     1 source, 2 feed-forward, 3 absorption, 4 noise"
                .into(),
            cell_seeds: (0..n_cells).map(|c| rng::derive_seed(master_seed, c as u64)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDataset {
    pub cell: usize,
    pub trials: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDataset {
    pub config: SimulationConfig,
    pub seeds: SeedLedger,
    pub cells: Vec<CellDataset>,
}

/// All trials of one cell, in trial order.
pub fn run_cell(config: &SimulationConfig, cell: usize, master_seed: u64) -> Result<Vec<TrialRecord>> {
    let spec = config
        .cells
        .get(cell)
        .ok_or_else(|| Error::input(format!("no cell {cell} in configuration")))?;
    let sampler = PairNumberSampler::new(config.source.mean_pairs_per_pulse, config.source.spdc_modes)?;
    let one = |i: usize| -> Result<TrialRecord> {
        let mut t = run_trial_with(
            &sampler,
            &config.protocol,
            &spec.params,
            &config.source,
            &config.timing,
            &config.losses,
            trial_seed(master_seed, cell, i),
        )?;
        t.trial_id = i as u64;
        Ok(t)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..spec.trials).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..spec.trials).map(one).collect()
    }
}

/// Run every cell. `seed` overrides the protocol's master seed.
pub fn run_experiment(config: &SimulationConfig, seed: Option<u64>) -> Result<RunDataset> {
    config.validate()?;
    let master = seed.unwrap_or(config.protocol.master_seed);
    let mut snapshot = config.clone();
    snapshot.protocol.master_seed = master;
    let cells = (0..config.cells.len())
        .map(|c| {
            Ok(CellDataset {
                cell: c,
                trials: run_cell(config, c, master)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunDataset {
        seeds: SeedLedger::new(master, config.cells.len()),
        config: snapshot,
        cells,
    })
}
