//! Browser bindings: response waveform, g⁽²⁾ scan and a simulated cell.

mod demo;

pub use demo::{cell, g2, waveform};
use wasm_bindgen::prelude::*;

#[wasm_bindgen(js_name = waveform)]
pub fn waveform_js(
    amplitude_pa: f64,
    time_to_peak_s: f64,
    stages: f64,
    duration_s: f64,
    points: usize,
) -> Result<String, JsValue> {
    waveform(amplitude_pa, time_to_peak_s, stages, duration_s, points).map_err(JsValue::from)
}

#[wasm_bindgen(js_name = g2Scan)]
pub fn g2_js(mode: &str, mu_lo: f64, mu_hi: f64, steps: usize, pulses: f64, seed: f64) -> Result<String, JsValue> {
    g2(mode, mu_lo, mu_hi, steps, pulses as u64, seed as u64).map_err(JsValue::from)
}

#[wasm_bindgen(js_name = simulateCell)]
pub fn cell_js(
    trials: usize,
    quantum_efficiency: f64,
    heralds_per_window: f64,
    criterion_pa: f64,
    seed: f64,
) -> Result<String, JsValue> {
    cell(
        trials,
        quantum_efficiency,
        heralds_per_window,
        criterion_pa,
        seed as u64,
    )
    .map_err(JsValue::from)
}
