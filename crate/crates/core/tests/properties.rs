//! Invariants of the estimators and the simulation pipeline.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rodsim::analysis::{
    classify_response, estimate_qe, fit_gaussians_to_heights, student_t_sf, welch_t_test, FitSpec, GaussianComponent,
    ResponseClass, ResponseProbability,
};
use rodsim::harness::{run_trial, trial_seed, SimulationConfig};
use rodsim::rng::{stream, Stream};
use rodsim::rod::{synthesize_trial, RodCellParams, FWHM_PER_SIGMA};
use rodsim::source::{coincidence_g2, moment_g2, Normalization};
use rodsim::timing::LossBudget;
use statrs::distribution::{ContinuousCDF, StudentsT};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn classification_is_monotone(a in -5.0f64..5.0, b in -5.0f64..5.0, crit in -1.0f64..2.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let r = |x| classify_response(x, crit) == ResponseClass::Response;
        prop_assert!(!r(lo) || r(hi));
        prop_assert_eq!(r(crit), false);
    }

    #[test]
    fn qe_is_linear_in_response_probabilities(
        p_dn in 0.0f64..0.2, d1 in 0.0f64..0.4, d2 in 0.0f64..0.4, n in 10usize..2000,
    ) {
        let losses = LossBudget::default();
        let at = |p: f64| {
            let sph = ResponseProbability { value: p_dn + p, trials: n };
            let dn = ResponseProbability { value: p_dn, trials: n };
            estimate_qe(sph, dn, &losses).unwrap().eta
        };
        let (e1, e2) = (at(d1), at(d2));
        prop_assert!((e1 - d1 / losses.transmission()).abs() < 1e-12);
        if d1 <= d2 {
            prop_assert!(e1 <= e2);
        }
        let sum = at(d1 + d2);
        prop_assert!((sum - (e1 + e2)).abs() < 1e-12);
    }

    #[test]
    fn coincidence_g2_scale_invariant(n1 in 1u64..1_000_000, n2 in 1u64..1_000_000, nc in 0u64..10_000, f in 1.0f64..1e9, k in 1u64..1000) {
        let a = coincidence_g2(n1, n2, nc, Normalization::Exact(f)).unwrap().value;
        let b = coincidence_g2(n1 * k, n2, nc, Normalization::Exact(f * k as f64)).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn welch_tails_are_complementary(
        a in prop::collection::vec(-10.0f64..10.0, 2..30),
        b in prop::collection::vec(-10.0f64..10.0, 2..30),
    ) {
        if let (Ok(ab), Ok(ba)) = (welch_t_test(&a, &b), welch_t_test(&b, &a)) {
            prop_assert!((ab.one_tailed_p + ba.one_tailed_p - 1.0).abs() < 1e-10);
            prop_assert!((ab.t_statistic + ba.t_statistic).abs() < 1e-12 * ab.t_statistic.abs().max(1.0));
        }
    }

    #[test]
    fn t_tail_matches_statrs(t in -30.0f64..30.0, df in 1.0f64..200.0) {
        let oracle = 1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t);
        prop_assert!((student_t_sf(t, df) - oracle).abs() < 1e-9, "t {} df {}", t, df);
    }

    #[test]
    fn gaussian_fit_ignores_height_scale(
        c0 in -0.1f64..0.1, c1 in 0.4f64..0.8, w in 0.3f64..0.7, h1 in 0.2f64..0.6, k in 0.01f64..100.0,
    ) {
        // Two resolved peaks; a vanishing second peak makes the fit ill-posed.
        let truth = [GaussianComponent::new(1.0, c0, w), GaussianComponent::new(h1, c1, w)];
        let centers: Vec<f64> = (-15..=20).map(|i| i as f64 * 0.1).collect();
        let heights: Vec<f64> = centers.iter().map(|&x| truth.iter().map(|g| g.eval(x)).sum::<f64>() + 0.002 * (x * 37.0).sin().abs()).collect();
        let scaled: Vec<f64> = heights.iter().map(|h| h * k).collect();
        let spec = |s: f64| FitSpec {
            initial: vec![GaussianComponent::new(s, 0.0, 0.5), GaussianComponent::new(0.3 * s, 0.58, 0.5)],
            equal_fwhm: false,
            settings: Default::default(),
        };
        let a = fit_gaussians_to_heights(&centers, &heights, &spec(1.0)).unwrap();
        let b = fit_gaussians_to_heights(&centers, &scaled, &spec(k)).unwrap();
        for (x, y) in a.components.iter().zip(&b.components) {
            prop_assert!((x.center - y.center).abs() < 1e-6);
            prop_assert!((x.fwhm - y.fwhm).abs() < 1e-6);
            prop_assert!((x.weight * k - y.weight).abs() < 1e-6 * k);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    // Binomial thinning keeps ⟨n(n−1)⟩/⟨n⟩² fixed, so g² of a Poisson
    // source stays at one.
    #[test]
    fn thinning_keeps_poisson_g2(mean in 0.5f64..3.0, q in 0.2f64..1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Poisson::new(mean).unwrap();
        let n = 200_000;
        let counts: Vec<u32> = (0..n)
            .map(|_| {
                let k = d.sample(&mut rng) as u32;
                (0..k).filter(|_| rng.random::<f64>() < q).count() as u32
            })
            .collect();
        let g = moment_g2(&counts).unwrap();
        // ~5σ of the moment estimator for Poisson input.
        let sd = (2.0 / n as f64).sqrt() / (mean * q);
        prop_assert!((g.value - 1.0).abs() < 5.0 * sd, "g2 {} sd {}", g.value, sd);
    }

    #[test]
    fn trials_replay_from_their_seed(master in any::<u64>(), cell in 0usize..4, trial in 0usize..1000) {
        let c = SimulationConfig::with_default_cells(1, 1);
        let seed = trial_seed(master, cell, trial);
        let run = || run_trial(&c.protocol, &c.cells[0].params, &c.source, &c.timing, &c.losses, seed).unwrap();
        prop_assert_eq!(run(), run());
    }
}

/// Simpson's rule on the t density, an oracle independent of any special
/// function implementation.
fn t_tail_by_quadrature(t: f64, df: f64) -> f64 {
    let ln_norm = statrs::function::gamma::ln_gamma((df + 1.0) / 2.0)
        - statrs::function::gamma::ln_gamma(df / 2.0)
        - 0.5 * (df * std::f64::consts::PI).ln();
    let pdf = |x: f64| (ln_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    // Substituting x = t + u/(1−u) maps [t, ∞) onto [0, 1).
    let f = |u: f64| {
        if u >= 1.0 {
            0.0
        } else {
            pdf(t + u / (1.0 - u)) / (1.0 - u).powi(2)
        }
    };
    let n = 200_000;
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn t_tail_matches_quadrature() {
    for &(t, df) in &[(0.5, 3.0), (1.0, 8.0), (2.2, 5.5), (-1.3, 12.0), (3.0, 40.0)] {
        let q = if t >= 0.0 {
            t_tail_by_quadrature(t, df)
        } else {
            1.0 - t_tail_by_quadrature(-t, df)
        };
        assert!(
            (student_t_sf(t, df) - q).abs() < 1e-7,
            "t {t} df {df}: {} vs {q}",
            student_t_sf(t, df)
        );
    }
}

#[test]
fn textbook_welch_example() {
    // Equal variances 2.5, difference −1: t = −1 on 8 degrees of freedom.
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [2.0, 3.0, 4.0, 5.0, 6.0];
    let r = welch_t_test(&a, &b).unwrap();
    assert!((r.t_statistic + 1.0).abs() < 1e-12);
    assert!((r.degrees_of_freedom - 8.0).abs() < 1e-12);
    assert!((r.one_tailed_p - (1.0 - t_tail_by_quadrature(1.0, 8.0))).abs() < 1e-7);
    assert!((r.one_tailed_p - 0.826_703).abs() < 1e-5);
}

fn dark_amplitudes(cell: &RodCellParams, n: usize, seed: u64) -> Vec<f64> {
    let c = SimulationConfig::with_default_cells(1, 1);
    let timing = c.protocol.timing();
    let windows = rodsim::protocol::AmplitudeWindows::auto(&timing, cell.time_to_peak_s);
    (0..n)
        .map(|i| {
            let t = synthesize_trial(
                &timing,
                cell,
                &[],
                &[],
                &mut stream(trial_seed(seed, 0, i), Stream::Noise),
            )
            .unwrap();
            rodsim::analysis::extract_amplitude(&t, &windows).unwrap()
        })
        .collect()
}

fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

#[test]
fn dark_noise_is_calibrated() {
    let c = SimulationConfig::with_default_cells(1, 1);
    let v = variance(&dark_amplitudes(&c.cells[0].params, 10_000, 21));
    assert!((v - 0.07).abs() <= 0.15 * 0.07, "dark variance {v}");
}

#[test]
fn amplifier_noise_alone_is_calibrated() {
    let c = SimulationConfig::with_default_cells(1, 1);
    let cell = RodCellParams {
        continuous_noise_variance_pa2: 0.0,
        discrete_event_rate_hz: 0.0,
        ..c.cells[0].params.clone()
    };
    let fwhm = variance(&dark_amplitudes(&cell, 10_000, 22)).sqrt() * FWHM_PER_SIGMA;
    assert!((fwhm - 0.4).abs() <= 0.04, "amplifier FWHM {fwhm}");
}

#[test]
fn photon_statistics_random_draws() {
    // Guard against a sampler silently returning its mean.
    let c = SimulationConfig::with_default_cells(1, 1);
    let counts = rodsim::source::sample_pair_counts(&c.source, 100_000, 3).unwrap();
    let m = counts.iter().map(|&k| k as f64).sum::<f64>() / counts.len() as f64;
    assert!((m - c.source.mean_pairs_per_pulse).abs() < 5.0 * (c.source.mean_pairs_per_pulse / 1e5).sqrt());
    assert!(counts.iter().any(|&k| k >= 2));
}
