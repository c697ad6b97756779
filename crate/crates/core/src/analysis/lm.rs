//! Levenberg-Marquardt least squares with Marquardt diagonal scaling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmSettings {
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Converged once an accepted step lowers the cost by less than this
    /// fraction.
    pub relative_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            relative_tolerance: 1e-8,
            max_iterations: 200,
        }
    }
}

/// Curve-fitting problem: find parameters whose model values match
/// `targets()` in the least-squares sense.
pub trait LeastSquaresProblem {
    fn n_params(&self) -> usize;

    fn targets(&self) -> &[f64];

    /// Model values at `params`; fills the Jacobian (rows = points) when
    /// requested.
    fn evaluate(&self, params: &[f64], values: &mut [f64], jacobian: Option<&mut DMatrix<f64>>);

    fn is_feasible(&self, _params: &[f64]) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn cost_of<P: LeastSquaresProblem + ?Sized>(problem: &P, params: &[f64], values: &mut [f64]) -> f64 {
    problem.evaluate(params, values, None);
    problem
        .targets()
        .iter()
        .zip(values.iter())
        .map(|(y, f)| (y - f).powi(2))
        .sum()
}

/// Minimise the sum of squared residuals from `initial`. Never fails: when
/// the iteration budget runs out the last accepted iterate is returned with
/// `converged = false`.
pub fn levenberg_marquardt<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    initial: &[f64],
    settings: &LmSettings,
) -> LmOutcome {
    let n = problem.targets().len();
    let k = problem.n_params();
    assert_eq!(initial.len(), k, "parameter count mismatch");

    let mut params = initial.to_vec();
    let mut values = vec![0.0; n];
    let mut trial_values = vec![0.0; n];
    let mut jac = DMatrix::zeros(n, k);
    let mut cost = cost_of(problem, &params, &mut values);
    let mut damping = settings.initial_damping;

    for iteration in 1..=settings.max_iterations {
        if cost == 0.0 {
            return LmOutcome {
                params,
                cost,
                converged: true,
                iterations: iteration - 1,
            };
        }
        problem.evaluate(&params, &mut values, Some(&mut jac));
        let residual = DVector::from_iterator(n, problem.targets().iter().zip(&values).map(|(y, f)| y - f));
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * residual;

        loop {
            let mut a = jtj.clone();
            for i in 0..k {
                let d = jtj[(i, i)].max(1e-12);
                a[(i, i)] += damping * d;
            }
            let step = a
                .clone()
                .cholesky()
                .map(|c| c.solve(&jtr))
                .or_else(|| a.lu().solve(&jtr));
            let candidate: Option<Vec<f64>> = step.map(|s| params.iter().zip(s.iter()).map(|(p, d)| p + d).collect());
            let improved = candidate.and_then(|c| {
                if !c.iter().all(|v| v.is_finite()) || !problem.is_feasible(&c) {
                    return None;
                }
                let new_cost = cost_of(problem, &c, &mut trial_values);
                (new_cost.is_finite() && new_cost < cost).then_some((c, new_cost))
            });
            match improved {
                Some((c, new_cost)) => {
                    let relative = (cost - new_cost) / cost;
                    params = c;
                    cost = new_cost;
                    damping = (damping * settings.damping_down).max(1e-15);
                    if relative < settings.relative_tolerance {
                        return LmOutcome {
                            params,
                            cost,
                            converged: true,
                            iterations: iteration,
                        };
                    }
                    break;
                }
                None => {
                    damping *= settings.damping_up;
                    if damping > 1e16 {
                        // No downhill step exists at any damping: stationary point.
                        return LmOutcome {
                            params,
                            cost,
                            converged: true,
                            iterations: iteration,
                        };
                    }
                }
            }
        }
    }
    LmOutcome {
        params,
        cost,
        converged: false,
        iterations: settings.max_iterations,
    }
}

/// Coefficient of determination of `values` against `targets`.
pub fn r_squared(targets: &[f64], values: &[f64]) -> f64 {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let ss_tot: f64 = targets.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = targets.iter().zip(values).map(|(y, f)| (y - f).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - ss_res / ss_tot
}
