//! Amplitude histograms and Gaussian peak fitting.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, r_squared, LeastSquaresProblem, LmSettings};
use super::stats::normal_sf;
use crate::rod::FWHM_PER_SIGMA;
use crate::{Error, Result};

const FOUR_LN2: f64 = 4.0 * std::f64::consts::LN_2;

/// Probability histogram with bins centred on integer multiples of the bin
/// width, so one bin is centred exactly on zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub centers: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn build(values: &[f64], bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0) {
            return Err(Error::input("bin width must be > 0"));
        }
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("histogram needs finite, non-empty data"));
        }
        let index = |v: f64| (v / bin_width).round() as i64;
        let lo = values.iter().map(|&v| index(v)).min().unwrap();
        let hi = values.iter().map(|&v| index(v)).max().unwrap();
        let mut counts = vec![0u64; (hi - lo + 1) as usize];
        for &v in values {
            counts[(index(v) - lo) as usize] += 1;
        }
        let centers = (lo..=hi).map(|i| i as f64 * bin_width).collect();
        Ok(Self {
            bin_width,
            centers,
            counts,
            total: values.len() as u64,
        })
    }

    /// Probability per bin.
    pub fn probabilities(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.total as f64).collect()
    }

    /// Binomial standard deviation of each bin probability.
    pub fn probability_sd(&self) -> Vec<f64> {
        let n = self.total as f64;
        self.probabilities()
            .iter()
            .map(|p| (p * (1.0 - p) / n).sqrt())
            .collect()
    }

    pub fn non_empty_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    /// Peak height, in the units of the fitted bin heights.
    pub weight: f64,
    pub center: f64,
    pub fwhm: f64,
}

impl GaussianComponent {
    pub fn new(weight: f64, center: f64, fwhm: f64) -> Self {
        Self { weight, center, fwhm }
    }

    pub fn sigma(&self) -> f64 {
        self.fwhm / FWHM_PER_SIGMA
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.weight * (-FOUR_LN2 * (x - self.center).powi(2) / (self.fwhm * self.fwhm)).exp()
    }

    /// Area under the peak divided by the bin width: the fraction of the
    /// histogram the component accounts for.
    pub fn fraction(&self, bin_width: f64) -> f64 {
        self.weight * self.sigma() * (2.0 * std::f64::consts::PI).sqrt() / bin_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFitResult {
    pub components: Vec<GaussianComponent>,
    pub r_squared: f64,
    pub converged: bool,
    pub iterations: usize,
    pub equal_fwhm: bool,
}

impl GaussianFitResult {
    pub fn eval(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.eval(x)).sum()
    }

    /// The fitted curve at `points` evenly spaced abscissae spanning `range`.
    pub fn sample_curve(&self, range: (f64, f64), points: usize) -> Vec<(f64, f64)> {
        let step = (range.1 - range.0) / (points.max(2) - 1) as f64;
        (0..points)
            .map(|i| {
                let x = range.0 + i as f64 * step;
                (x, self.eval(x))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSpec {
    pub initial: Vec<GaussianComponent>,
    /// Share one FWHM between all components.
    pub equal_fwhm: bool,
    pub settings: LmSettings,
}

impl FitSpec {
    /// One peak initialised from the histogram moments.
    pub fn single_from(hist: &Histogram) -> Self {
        let p = hist.probabilities();
        let mean: f64 = hist.centers.iter().zip(&p).map(|(x, w)| x * w).sum();
        let var: f64 = hist.centers.iter().zip(&p).map(|(x, w)| w * (x - mean).powi(2)).sum();
        let height = p.iter().cloned().fold(0.0, f64::max);
        let fwhm = (var.sqrt() * FWHM_PER_SIGMA).max(hist.bin_width);
        Self {
            initial: vec![GaussianComponent::new(height, mean, fwhm)],
            equal_fwhm: false,
            settings: LmSettings::default(),
        }
    }

    /// Non-response peak at 0 and single-photon peak at `response_center`,
    /// both of width `fwhm`.
    pub fn response_pair(hist: &Histogram, response_center: f64, fwhm: f64) -> Self {
        let p = hist.probabilities();
        let height_at = |x: f64| {
            let i = hist
                .centers
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
                .map(|(i, _)| i)
                .unwrap_or(0);
            p[i]
        };
        let h0 = height_at(0.0);
        let h1 =
            (height_at(response_center) - GaussianComponent::new(h0, 0.0, fwhm).eval(response_center)).max(0.05 * h0);
        Self {
            initial: vec![
                GaussianComponent::new(h0, 0.0, fwhm),
                GaussianComponent::new(h1, response_center, fwhm),
            ],
            equal_fwhm: false,
            settings: LmSettings::default(),
        }
    }

    pub fn with_equal_fwhm(mut self, equal: bool) -> Self {
        self.equal_fwhm = equal;
        self
    }

    fn free_params(&self) -> usize {
        if self.equal_fwhm {
            2 * self.initial.len() + 1
        } else {
            3 * self.initial.len()
        }
    }
}

struct MixtureProblem<'a> {
    x: &'a [f64],
    y: Vec<f64>,
    components: usize,
    equal_fwhm: bool,
}

impl MixtureProblem<'_> {
    fn unpack(&self, p: &[f64]) -> Vec<GaussianComponent> {
        (0..self.components)
            .map(|i| {
                if self.equal_fwhm {
                    GaussianComponent::new(p[2 * i], p[2 * i + 1], p[2 * self.components])
                } else {
                    GaussianComponent::new(p[3 * i], p[3 * i + 1], p[3 * i + 2])
                }
            })
            .collect()
    }

    fn pack(&self, comps: &[GaussianComponent]) -> Vec<f64> {
        let mut p = Vec::new();
        for c in comps {
            p.push(c.weight);
            p.push(c.center);
            if !self.equal_fwhm {
                p.push(c.fwhm);
            }
        }
        if self.equal_fwhm {
            p.push(comps.iter().map(|c| c.fwhm).sum::<f64>() / comps.len() as f64);
        }
        p
    }
}

impl LeastSquaresProblem for MixtureProblem<'_> {
    fn n_params(&self) -> usize {
        if self.equal_fwhm {
            2 * self.components + 1
        } else {
            3 * self.components
        }
    }

    fn targets(&self) -> &[f64] {
        &self.y
    }

    fn evaluate(&self, p: &[f64], values: &mut [f64], mut jacobian: Option<&mut DMatrix<f64>>) {
        let comps = self.unpack(p);
        if let Some(j) = jacobian.as_deref_mut() {
            j.fill(0.0);
        }
        for (row, (&x, v)) in self.x.iter().zip(values.iter_mut()).enumerate() {
            *v = 0.0;
            for (i, c) in comps.iter().enumerate() {
                let d = x - c.center;
                let e = (-FOUR_LN2 * d * d / (c.fwhm * c.fwhm)).exp();
                *v += c.weight * e;
                if let Some(j) = jacobian.as_deref_mut() {
                    let d_center = c.weight * e * 2.0 * FOUR_LN2 * d / (c.fwhm * c.fwhm);
                    let d_fwhm = c.weight * e * 2.0 * FOUR_LN2 * d * d / c.fwhm.powi(3);
                    if self.equal_fwhm {
                        j[(row, 2 * i)] = e;
                        j[(row, 2 * i + 1)] = d_center;
                        j[(row, 2 * self.components)] += d_fwhm;
                    } else {
                        j[(row, 3 * i)] = e;
                        j[(row, 3 * i + 1)] = d_center;
                        j[(row, 3 * i + 2)] = d_fwhm;
                    }
                }
            }
        }
    }

    fn is_feasible(&self, p: &[f64]) -> bool {
        self.unpack(p).iter().all(|c| c.fwhm > 0.0)
    }
}

/// Fit a sum of Gaussian peaks to the bin probabilities of `hist` by
/// Levenberg-Marquardt. Non-convergence is reported through `converged`.
pub fn fit_gaussians(hist: &Histogram, spec: &FitSpec) -> Result<GaussianFitResult> {
    fit_gaussians_to_heights(&hist.centers, &hist.probabilities(), spec)
}

/// [`fit_gaussians`] on arbitrary bin heights.
pub fn fit_gaussians_to_heights(centers: &[f64], heights: &[f64], spec: &FitSpec) -> Result<GaussianFitResult> {
    if !(1..=2).contains(&spec.initial.len()) {
        return Err(Error::input("one or two Gaussian components supported"));
    }
    if spec.initial.iter().any(|c| !(c.fwhm > 0.0)) {
        return Err(Error::input("initial FWHM must be > 0"));
    }
    let non_empty = heights.iter().filter(|&&h| h != 0.0).count();
    let needed = 3 * spec.free_params();
    if non_empty < needed {
        return Err(Error::input(format!(
            "{non_empty} non-empty bins; a {}-parameter fit needs at least {needed}",
            spec.free_params()
        )));
    }
    let problem = MixtureProblem {
        x: centers,
        y: heights.to_vec(),
        components: spec.initial.len(),
        equal_fwhm: spec.equal_fwhm,
    };
    let start = problem.pack(&spec.initial);
    let out = levenberg_marquardt(&problem, &start, &spec.settings);
    let mut values = vec![0.0; centers.len()];
    problem.evaluate(&out.params, &mut values, None);
    Ok(GaussianFitResult {
        components: problem.unpack(&out.params),
        r_squared: r_squared(heights, &values),
        converged: out.converged,
        iterations: out.iterations,
        equal_fwhm: spec.equal_fwhm,
    })
}

/// Probability that a Gaussian with the given centre and FWHM exceeds
/// `threshold`.
pub fn gaussian_exceedance(center: f64, fwhm: f64, threshold: f64) -> f64 {
    normal_sf((threshold - center) / (fwhm / FWHM_PER_SIGMA))
}

/// Upper-tail probability above `threshold` of a single-peak fit.
pub fn exceedance_probability(fit: &GaussianFitResult, threshold: f64) -> Result<f64> {
    match fit.components.as_slice() {
        [c] => Ok(gaussian_exceedance(c.center, c.fwhm, threshold)),
        _ => Err(Error::input("exceedance probability needs a single-component fit")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_heights(comps: &[GaussianComponent], centers: &[f64]) -> Vec<f64> {
        centers.iter().map(|&x| comps.iter().map(|c| c.eval(x)).sum()).collect()
    }

    #[test]
    fn histogram_is_zero_centred() {
        let h = Histogram::build(&[-0.04, 0.04, 0.06, 0.26], 0.1).unwrap();
        assert_eq!(h.counts, vec![2, 1, 0, 1]);
        assert!(h.centers[0].abs() < 1e-15);
        assert!((h.centers[3] - 0.3).abs() < 1e-12);
        assert_eq!(h.total, 4);
        assert!(Histogram::build(&[], 0.1).is_err());
        assert!(Histogram::build(&[f64::NAN], 0.1).is_err());
    }

    #[test]
    fn exact_two_peak_recovery() {
        let truth = [
            GaussianComponent::new(0.2, 0.0, 0.5),
            GaussianComponent::new(0.05, 0.58, 0.5),
        ];
        let centers: Vec<f64> = (-15..=20).map(|i| i as f64 * 0.1).collect();
        let heights = synthetic_heights(&truth, &centers);
        let spec = FitSpec {
            initial: vec![
                GaussianComponent::new(0.15, 0.05, 0.4),
                GaussianComponent::new(0.03, 0.5, 0.6),
            ],
            equal_fwhm: false,
            settings: LmSettings::default(),
        };
        let fit = fit_gaussians_to_heights(&centers, &heights, &spec).unwrap();
        assert!(fit.converged);
        for (got, want) in fit.components.iter().zip(&truth) {
            assert!((got.center - want.center).abs() < 1e-5, "{fit:?}");
            assert!((got.fwhm - want.fwhm).abs() < 1e-5);
            assert!((got.weight - want.weight).abs() < 1e-6);
        }
        assert!(fit.r_squared > 0.999_999);

        let constrained = fit_gaussians_to_heights(&centers, &heights, &spec.clone().with_equal_fwhm(true)).unwrap();
        assert!((constrained.components[0].fwhm - 0.5).abs() < 1e-5);
        assert_eq!(constrained.components[0].fwhm, constrained.components[1].fwhm);
    }

    #[test]
    fn too_few_bins_rejected() {
        let h = Histogram::build(&[0.0, 0.1, 0.2, 0.3], 0.1).unwrap();
        assert!(fit_gaussians(&h, &FitSpec::single_from(&h)).is_err());
    }

    #[test]
    fn exceedance_values() {
        assert!((gaussian_exceedance(0.0, 0.4, 0.0) - 0.5).abs() < 1e-15);
        assert!(gaussian_exceedance(0.0, 0.4, 1e6) == 0.0);
        let p = gaussian_exceedance(0.0, 0.4, 0.45);
        assert!(p < 0.011 && (p - 0.004).abs() < 0.0005, "{p}");
        let two = GaussianFitResult {
            components: vec![GaussianComponent::new(1.0, 0.0, 1.0); 2],
            r_squared: 1.0,
            converged: true,
            iterations: 0,
            equal_fwhm: false,
        };
        assert!(exceedance_probability(&two, 0.45).is_err());
    }
}
