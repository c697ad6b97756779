//! Feed-forward electronics and the idler-arm loss budget.
//!
//! A signal-APD click opens the AOM after a fixed activation delay; the
//! idler photon, delayed by the fiber, is transmitted only if it reaches the
//! AOM while the gate is open. The AND-gate coincidence with the generator
//! gate is folded into the gated detection model of [`crate::source`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub generator_period_us: f64,
    pub apd_pulse_width_ns: f64,
    pub and_gate_window_ns: f64,
    pub aom_activation_delay_ns: f64,
    pub aom_open_duration_ns: f64,
    pub fiber_delay_ns: f64,
    /// Gaussian jitter on the fiber delay; zero disables it.
    pub fiber_delay_jitter_ns: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            generator_period_us: 40.0,
            apd_pulse_width_ns: 35.0,
            and_gate_window_ns: 120.0,
            aom_activation_delay_ns: 190.0,
            aom_open_duration_ns: 100.0,
            fiber_delay_ns: 230.0,
            fiber_delay_jitter_ns: 0.0,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("generator_period_us", self.generator_period_us),
            ("apd_pulse_width_ns", self.apd_pulse_width_ns),
            ("and_gate_window_ns", self.and_gate_window_ns),
            ("aom_activation_delay_ns", self.aom_activation_delay_ns),
            ("aom_open_duration_ns", self.aom_open_duration_ns),
            ("fiber_delay_ns", self.fiber_delay_ns),
            ("fiber_delay_jitter_ns", self.fiber_delay_jitter_ns),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::config(format!(
                    "timing.{name} must be finite and >= 0, got {value}"
                )));
            }
        }
        if self.generator_period_us <= 0.0 {
            return Err(Error::config("timing.generator_period_us must be > 0"));
        }
        Ok(())
    }

    /// True when a photon travelling the fiber reaches the AOM while it is
    /// open (activation delay <= fiber delay <= activation delay + open time).
    pub fn is_delivery_feasible(&self) -> bool {
        self.aom_activation_delay_ns <= self.fiber_delay_ns
            && self.fiber_delay_ns <= self.aom_activation_delay_ns + self.aom_open_duration_ns
    }
}

/// Transmission of each optical element between the AOM input and the cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossBudget {
    pub eta_aom: f64,
    pub eta_taper: f64,
    pub eta_fiber: f64,
}

impl Default for LossBudget {
    fn default() -> Self {
        Self {
            eta_aom: 0.60,
            eta_taper: 0.70,
            eta_fiber: 0.50,
        }
    }
}

impl LossBudget {
    pub const LOSSLESS: LossBudget = LossBudget {
        eta_aom: 1.0,
        eta_taper: 1.0,
        eta_fiber: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("eta_aom", self.eta_aom),
            ("eta_taper", self.eta_taper),
            ("eta_fiber", self.eta_fiber),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::config(format!("losses.{name} must lie in [0, 1], got {value}")));
            }
        }
        Ok(())
    }

    /// Product of the three element transmissions.
    pub fn transmission(&self) -> f64 {
        loss_chain_transmission(self)
    }
}

pub fn loss_chain_transmission(losses: &LossBudget) -> f64 {
    losses.eta_taper * losses.eta_aom * losses.eta_fiber
}

/// Interval during which the AOM diverts light into the delivery fiber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AomGate {
    pub start_ns: f64,
    pub end_ns: f64,
}

impl AomGate {
    pub fn contains(&self, t_ns: f64) -> bool {
        self.start_ns <= t_ns && t_ns <= self.end_ns
    }
}

/// Gate opened by a herald at `herald_time_ns`. Without a herald the AOM
/// stays inactive and no gate exists.
pub fn aom_gate(herald_time_ns: Option<f64>, timing: &TimingConfig) -> Option<AomGate> {
    let herald = herald_time_ns?;
    debug_assert!(herald >= 0.0);
    let start_ns = herald + timing.aom_activation_delay_ns;
    Some(AomGate {
        start_ns,
        end_ns: start_ns + timing.aom_open_duration_ns,
    })
}

/// Number of the `idler_count` heralded idler photons that reach the cell.
///
/// Each photon arrives at the AOM one fiber delay after the herald; it must
/// fall inside the gate and then survive the fiber, AOM and taper
/// transmissions in turn. The order of the three Bernoulli losses has no
/// statistical effect.
pub fn propagate_idler<R: Rng + ?Sized>(
    idler_count: u32,
    herald_time_ns: f64,
    timing: &TimingConfig,
    losses: &LossBudget,
    rng: &mut R,
) -> u32 {
    if idler_count == 0 {
        return 0;
    }
    let gate = aom_gate(Some(herald_time_ns), timing).expect("herald present");
    let jitter = (timing.fiber_delay_jitter_ns > 0.0)
        .then(|| Normal::new(0.0, timing.fiber_delay_jitter_ns).expect("finite jitter"));
    let mut delivered = 0;
    for _ in 0..idler_count {
        let mut arrival = herald_time_ns + timing.fiber_delay_ns;
        if let Some(jitter) = &jitter {
            arrival += jitter.sample(rng);
        }
        if !gate.contains(arrival) {
            continue;
        }
        if rng.random::<f64>() < losses.eta_fiber
            && rng.random::<f64>() < losses.eta_aom
            && rng.random::<f64>() < losses.eta_taper
        {
            delivered += 1;
        }
    }
    delivered
}
