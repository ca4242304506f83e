use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use contagion::bundled;
use contagion::calibrate::{alternate_fit, residuals, FitConfig, UtilityLaw};
use contagion::lm::forward_jacobian;
use contagion::model::{ArticleSeries, CountryParams, UniversalParams};
use contagion::synth::SynthSpec;

fn articles() -> Arc<ArticleSeries> {
    Arc::new(bundled::synthetic_articles())
}

#[test]
fn jacobian_gradient_matches_central_differences() {
    let art = articles();
    let spec = SynthSpec::seven_country(0.01, 9);
    let data = spec.estimates(&art).unwrap().remove(0);
    let uni = spec.universal;
    let cfg = FitConfig::default();
    let f = |p: &[f64]| {
        let local = CountryParams::new(p[1], p[0], p[2], p[3], 0.0);
        let u = UtilityLaw::Discounted.model(&local, &uni, &art);
        residuals(&local, &uni, &u, &data, &cfg.integrator)
    };
    let cost = |p: &[f64]| f(p).unwrap().iter().map(|r| r * r).sum::<f64>();
    let lo = [0.0, 0.9, 0.45, 0.45];
    let hi = [0.2, 1.1, 0.6, 0.6];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let p: Vec<f64> = (0..4).map(|j| rng.gen_range(lo[j] + 0.01..hi[j] - 0.01)).collect();
        let r = f(&p).unwrap();
        let jac = forward_jacobian(&f, &p, &r, &[-1.0; 4], &[2.0; 4], 1e-7).unwrap();
        for j in 0..4 {
            let g_fd: f64 = 2.0 * (0..r.len()).map(|i| jac[(i, j)] * r[i]).sum::<f64>();
            let h = 1e-5 * p[j].abs().max(1.0);
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp[j] += h;
            pm[j] -= h;
            let g_c = (cost(&pp) - cost(&pm)) / (2.0 * h);
            let scale = g_c.abs().max(1e-3);
            assert!((g_fd - g_c).abs() / scale < 1e-3, "param {j} at {p:?}: {g_fd} vs {g_c}");
        }
    }
}

fn small_problem() -> (Arc<ArticleSeries>, Vec<contagion::dataio::EstimatedPrevalence>) {
    let art = articles();
    let mut spec = SynthSpec::seven_country(0.01, 17);
    spec.countries.truncate(3);
    let est = spec.estimates(&art).unwrap();
    (art, est)
}

#[test]
fn fit_result_invariants() {
    let (art, est) = small_problem();
    let cfg = FitConfig {
        max_itn: 8,
        ..FitConfig::default()
    };
    let r = alternate_fit(&est, UtilityLaw::Discounted, &art, &cfg).unwrap();
    let sum: f64 = r.per_country_error.values().sum();
    assert!((r.total_error - sum).abs() <= 1e-12 * sum);
    assert!(r.total_error <= r.initial_error);
    assert_eq!(r.log.len(), r.outer_iterations);
    assert!(r.monotone);
    for w in r.log.windows(2) {
        assert!(w[1].total_error <= w[0].total_error);
    }
    for rec in &r.log {
        assert!(rec.total_error <= rec.error_after_local);
    }
    let b = cfg.bounds;
    assert!(b.b.contains(r.universal.b) && b.delta.contains(r.universal.delta));
    for p in r.locals.values() {
        assert!(b.a.contains(p.a) && b.x0.contains(p.x0));
        assert!(b.u0.contains(p.u0) && b.u_inf.contains(p.u_inf));
    }
    assert_eq!(r.locals.keys().copied().collect::<Vec<_>>(), vec![1, 4, 7]);
}

#[test]
fn country_order_does_not_matter() {
    let (art, est) = small_problem();
    let cfg = FitConfig {
        max_itn: 4,
        ..FitConfig::default()
    };
    let a = alternate_fit(&est, UtilityLaw::Discounted, &art, &cfg).unwrap();
    let mut rev = est.clone();
    rev.reverse();
    let b = alternate_fit(&rev, UtilityLaw::Discounted, &art, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn constant_law_fits_its_own_noise_free_data() {
    let art = articles();
    let mut spec = SynthSpec::single(0.0, 0);
    spec.law = UtilityLaw::Constant;
    spec.countries[0].params.x0 = 0.3;
    spec.universal = UniversalParams::new(1.0, 1.0);
    let est = spec.estimates(&art).unwrap();
    let r = alternate_fit(&est, UtilityLaw::Constant, &art, &FitConfig::default()).unwrap();
    assert!(r.total_error < 1e-8, "{}", r.total_error);
}

#[test]
fn noise_free_discounted_data_descends_towards_zero() {
    let art = articles();
    let mut spec = SynthSpec::single(0.0, 0);
    spec.countries[0].params.x0 = 0.25;
    let est = spec.estimates(&art).unwrap();
    let short = alternate_fit(&est, UtilityLaw::Discounted, &art, &FitConfig::default()).unwrap();
    let cfg = FitConfig {
        tol: 1e-10,
        max_itn: 300,
        ..FitConfig::default()
    };
    let long = alternate_fit(&est, UtilityLaw::Discounted, &art, &cfg).unwrap();
    assert!(short.total_error < 1e-3 * short.initial_error, "{}", short.total_error);
    assert!(long.total_error < short.total_error);
    assert!(long.monotone && short.monotone);
}
