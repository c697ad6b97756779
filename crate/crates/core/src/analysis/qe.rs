//! Quantum efficiency from response probabilities, corrected for dark
//! noise and delivery losses.

use serde::{Deserialize, Serialize};

use super::amplitude::ResponseProbability;
use crate::timing::LossBudget;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QEEstimate {
    pub eta: f64,
    pub std_err: f64,
    pub p_sph: ResponseProbability,
    pub p_dn: ResponseProbability,
    pub losses: LossBudget,
    /// Set when a statistical fluctuation pushed the estimate below zero.
    pub negative: bool,
}

/// η = (p_sph − p_dn) / (η_taper · η_AOM · η_fiber), with binomial error
/// propagation on both probabilities.
pub fn estimate_qe(p_sph: ResponseProbability, p_dn: ResponseProbability, losses: &LossBudget) -> Result<QEEstimate> {
    losses.validate()?;
    let transmission = losses.transmission();
    if transmission <= 0.0 {
        return Err(Error::input(
            "loss chain transmits nothing; quantum efficiency undefined",
        ));
    }
    let eta = (p_sph.value - p_dn.value) / transmission;
    let std_err = p_sph.std_dev().hypot(p_dn.std_dev()) / transmission;
    Ok(QEEstimate {
        eta,
        std_err,
        p_sph,
        p_dn,
        losses: *losses,
        negative: eta < 0.0,
    })
}
