mod common;

use distkm::skewnormal::{
    exceedance, fit_sn, se_full_delta, sn_cdf, sn_loglik, sn_pdf, sn_sf, FitOptions, SnParams,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, SkewNormal};

fn draws(loc: f64, scale: f64, shape: f64, n: usize, seed: u64) -> Vec<f64> {
    let d = SkewNormal::new(loc, scale, shape).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

#[test]
fn recovers_generating_parameters() {
    let x = draws(0.0, 1.0, 5.0, 10_000, 11);
    let p = fit_sn(&x, &FitOptions::default()).unwrap().params;
    assert!(!p.fallback);
    assert!(p.converged);
    assert!(p.location.abs() < 0.05, "location {}", p.location);
    assert!((p.scale - 1.0).abs() < 0.05, "scale {}", p.scale);
    assert!((p.shape - 5.0).abs() < 1.0, "shape {}", p.shape);
    assert_eq!(p.n_fit, 10_000);
}

#[test]
fn maximum_beats_generating_parameters() {
    for (i, &(loc, scale, shape, n)) in [
        (0.0, 1.0, 3.0, 50usize),
        (2.0, 0.5, -4.0, 200),
        (-1.0, 3.0, 0.5, 30),
        (0.0, 1.0, 8.0, 500),
        (10.0, 2.0, -1.0, 20),
    ]
    .iter()
    .enumerate()
    {
        let x = draws(loc, scale, shape, n, 100 + i as u64);
        let fit = fit_sn(&x, &FitOptions::default()).unwrap().params;
        let truth = SnParams::new(loc, scale, shape);
        assert!(
            fit.loglik >= sn_loglik(&x, &truth) - 1e-9,
            "case {i}: {} < {}",
            fit.loglik,
            sn_loglik(&x, &truth)
        );
        assert!((fit.loglik - sn_loglik(&x, &fit)).abs() < 1e-8 * fit.loglik.abs().max(1.0));
    }
}

#[test]
fn delta_se_halves_information_scaling() {
    let x = draws(0.0, 1.0, 2.0, 1_000, 5);
    let doubled: Vec<f64> = x.iter().chain(&x).copied().collect();
    let a = fit_sn(&x, &FitOptions::default()).unwrap();
    let b = fit_sn(&doubled, &FitOptions::default()).unwrap();
    let se_a = se_full_delta(&a.params, 1.0, a.information.as_ref().unwrap()).unwrap();
    let se_b = se_full_delta(&b.params, 1.0, b.information.as_ref().unwrap()).unwrap();
    let ratio = se_a / se_b;
    assert!((ratio - 2f64.sqrt()).abs() < 0.01 * 2f64.sqrt(), "ratio {ratio}");
}

#[test]
fn delta_se_matches_monte_carlo_spread() {
    let reps = 500;
    let mut probs = Vec::with_capacity(reps);
    let mut ses = Vec::with_capacity(reps);
    for r in 0..reps {
        let x = draws(0.0, 1.0, 2.0, 10_000, 10_000 + r as u64);
        let fit = fit_sn(&x, &FitOptions::default()).unwrap();
        let e = exceedance(&fit, 1.0);
        probs.push(e.prob);
        if let Some(se) = e.se_delta {
            ses.push(se);
        }
    }
    let (_, sd) = common::mean_sd(&probs);
    let (mean_se, _) = common::mean_sd(&ses);
    assert!(ses.len() >= reps * 95 / 100);
    let ratio = mean_se / sd;
    assert!((0.85..=1.15).contains(&ratio), "se {mean_se} sd {sd} ratio {ratio}");
}

#[test]
fn cdf_matches_quadrature_on_grid() {
    let (loc, scale) = (0.5, 1.5);
    for shape in [-10.0, -2.0, 0.0, 2.0, 10.0] {
        let p = SnParams::new(loc, scale, shape);
        let lower = loc - 40.0 * scale;
        for k in 0..=24 {
            let x = loc - 6.0 * scale + k as f64 * 0.5 * scale;
            let q = common::integrate(|t| sn_pdf(t, &p), lower, x, 1e-14);
            let c = sn_cdf(x, &p);
            assert!((c - q).abs() <= 1e-9, "shape {shape} x {x}: {c} vs {q}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fit_is_scale_equivariant(a in 0.05f64..20.0, b in -50.0f64..50.0, seed in 0u64..1000) {
        let x = draws(0.0, 1.0, 3.0, 80, seed);
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let px = fit_sn(&x, &FitOptions::default()).unwrap().params;
        let py = fit_sn(&y, &FitOptions::default()).unwrap().params;
        prop_assert_eq!(px.fallback, py.fallback);
        prop_assert!((py.location - (a * px.location + b)).abs() < 1e-6 * a.max(1.0) * (1.0 + px.location.abs() + b.abs()));
        prop_assert!((py.scale - a * px.scale).abs() < 1e-6 * a * px.scale);
        prop_assert!((py.shape - px.shape).abs() < 1e-5 * (1.0 + px.shape.abs()));
    }

    #[test]
    fn cdf_is_monotone(loc in -5.0f64..5.0, scale in 0.1f64..5.0, shape in -30.0f64..30.0,
                       x1 in -20.0f64..20.0, dx in 0.0f64..10.0) {
        let p = SnParams::new(loc, scale, shape);
        let (a, b) = (sn_cdf(x1, &p), sn_cdf(x1 + dx, &p));
        prop_assert!(a <= b + 1e-15);
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(sn_sf(x1, &p) + 1e-15 >= sn_sf(x1 + dx, &p));
    }

    #[test]
    fn pdf_matches_normal_when_symmetric(loc in -5.0f64..5.0, scale in 0.1f64..5.0, x in -20.0f64..20.0) {
        let z = (x - loc) / scale;
        let normal = (-0.5 * z * z).exp() / (scale * (2.0 * std::f64::consts::PI).sqrt());
        prop_assert!((sn_pdf(x, &SnParams::new(loc, scale, 0.0)) - normal).abs() < 1e-12);
    }
}
