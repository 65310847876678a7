use aedes_core::estimation::bites::ig_log_likelihood;
use aedes_core::estimation::capacity::split_rhat;
use aedes_core::estimation::pf::{systematic_resample, truncated_normal, Marginal};
use aedes_core::estimation::{
    fit_bites_ig, fit_capacity_ig, fit_trap_scaling, observation_likelihood, CapacityFitConfig,
    PfConfig, PfModel, TrapFitConfig,
};
use aedes_core::forcing::{CapacityModel, ClimateSeries, RateSet};
use aedes_core::lifecycle::{CapacitySource, LifecycleParams};
use aedes_core::transmission::EpiParams;
use chrono::NaiveDate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, InverseGaussian, Normal, Poisson};

proptest! {
    #[test]
    fn observation_likelihood_is_a_distribution(pred in 0.0f64..40.0) {
        let total: f64 = (0..400u64).map(|k| observation_likelihood(pred, k).exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn systematic_resampling_is_unbiased(raw in prop::collection::vec(0.0f64..1.0, 1..60), u in 0.0f64..1.0) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 1e-6);
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let n = w.len();
        let picks = systematic_resample(&w, u);
        prop_assert_eq!(picks.len(), n);
        prop_assert!(picks.windows(2).all(|p| p[0] <= p[1]));
        // Each offspring count is within one of its expectation.
        for (i, wi) in w.iter().enumerate() {
            let count = picks.iter().filter(|p| **p == i).count() as f64;
            prop_assert!((count - n as f64 * wi).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn truncated_normal_respects_bounds(at in 0.0f64..1.0, sd in 0.0f64..10.0, lo in -3.0f64..0.0, width in 0.01f64..4.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = lo + at * width;
        let x = truncated_normal(&mut rng, mean, sd, [lo, lo + width]);
        prop_assert!(x >= lo && x <= lo + width);
    }

    /// The closed-form fit is a stationary point of the likelihood.
    #[test]
    fn bite_fit_maximizes_likelihood(mu in 0.3f64..2.0, lambda in 0.5f64..10.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ig = InverseGaussian::new(mu, lambda).unwrap();
        let xs: Vec<f64> = (0..200).map(|_| ig.sample(&mut rng)).collect();
        let f = fit_bites_ig(&xs).unwrap();
        let best = ig_log_likelihood(&xs, f.mu, f.lambda);
        for (dm, dl) in [(1.01, 1.0), (0.99, 1.0), (1.0, 1.02), (1.0, 0.98)] {
            prop_assert!(ig_log_likelihood(&xs, f.mu * dm, f.lambda * dl) < best);
        }
    }
}

#[test]
fn marginal_quantiles_follow_weights() {
    let m = Marginal::of(&[3.0, 1.0, 2.0], &[0.0, 0.25, 0.75]);
    assert!((m.mean - 1.75).abs() < 1e-12);
    assert_eq!(m.p05, 1.0);
    assert_eq!(m.p50, 2.0);
    assert_eq!(m.p95, 2.0);
}

#[test]
fn split_rhat_separates_mixed_from_stuck_chains() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mixed: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..2000).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    assert!(split_rhat(&mixed) < 1.01);
    let stuck: Vec<Vec<f64>> = (0..4)
        .map(|c| {
            (0..2000)
                .map(|_| c as f64 + 0.1 * normal.sample(&mut rng))
                .collect()
        })
        .collect();
    assert!(split_rhat(&stuck) > 2.0);
}

fn trap_data(k: f64, r: f64, seed: u64) -> (Vec<u64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adults: Vec<f64> = (0..300).map(|_| 2000.0 * rng.random::<f64>()).collect();
    let counts = adults
        .iter()
        .map(|a| Poisson::new(k * a + r).unwrap().sample(&mut rng) as u64)
        .collect();
    (counts, adults)
}

#[test]
fn trap_scaling_recovers_truth_and_rescales() {
    let cfg = TrapFitConfig::default();
    let (counts, adults) = trap_data(0.01, 0.5, 11);
    let fit = fit_trap_scaling(&counts, &adults, &cfg, 1).unwrap();
    assert!((fit.k - 0.01).abs() < 0.1 * 0.01, "k = {}", fit.k);
    assert!((0.0..2.0).contains(&fit.r));
    // Ten times the abundance needs a tenth of the scaling.
    let big: Vec<f64> = adults.iter().map(|a| 10.0 * a).collect();
    let scaled = fit_trap_scaling(&counts, &big, &cfg, 1).unwrap();
    assert!(
        (scaled.k * 10.0 - fit.k).abs() < 0.05 * fit.k,
        "{} vs {}",
        scaled.k,
        fit.k
    );
}

#[test]
fn trap_fit_flags_background_only_data() {
    let fit = fit_trap_scaling(&[0, 2, 1], &[0.0; 3], &TrapFitConfig::default(), 0).unwrap();
    assert!(fit.background_only);
    assert!(fit_trap_scaling(&[1, 2], &[1.0], &TrapFitConfig::default(), 0).is_err());
}

#[test]
fn short_capacity_fit_keeps_continuity_and_shape() {
    let truth = CapacityModel::default_model();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pairs: Vec<(f64, f64)> = (0..1500)
        .map(|_| {
            let p = 0.03 * rng.random::<f64>();
            let ig = InverseGaussian::new(truth.mu(p), truth.lambda(p)).unwrap();
            (p, ig.sample(&mut rng))
        })
        .collect();
    let cfg = CapacityFitConfig {
        chains: 2,
        iterations: 1500,
        burn_in: 750,
        ..CapacityFitConfig::default()
    };
    let fit = fit_capacity_ig(&pairs, &cfg, 5).unwrap();
    assert_eq!(fit.draws.len(), 2 * 750);
    assert_eq!(fit.rhat.len(), 11);
    for m in fit.draws.iter().step_by(50) {
        let low = m.a0 + m.a1 * m.p0 + m.a2 * m.p0 * m.p0;
        assert!((low - m.mu(m.p0)).abs() < 1e-9);
    }
    let curve = fit.mu_curve(&[0.005, 0.02]);
    assert!(curve.iter().all(|c| c.mean > 0.0 && c.p25 <= c.p75));
    assert!(fit_capacity_ig(&[(0.01, -1.0)], &cfg, 0).is_err());
}

fn small_filter() -> (LifecycleParams, ClimateSeries, PfConfig) {
    let days = 12 * 7;
    let start = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
    let t = (0..days)
        .map(|d| 27.0 + 2.0 * (d as f64 / 30.0).sin())
        .collect();
    let climate = ClimateSeries::new(start, t, vec![0.0; days]).unwrap();
    let params =
        LifecycleParams::new(2, RateSet::default_tables(), CapacitySource::Constant(1.0)).unwrap();
    let cfg = PfConfig {
        particles: 150,
        initial_infectious: 5.0,
        burn_in_days: 200,
        ..PfConfig::default()
    };
    (params, climate, cfg)
}

#[test]
fn filter_bookkeeping_is_consistent() {
    let (params, climate, cfg) = small_filter();
    let epi = EpiParams {
        n_humans: 5000.0,
        ..EpiParams::default()
    };
    let model = PfModel::new(&params, epi, &climate, cfg.clone()).unwrap();
    let (expected, observed) = model.generate(&[2.0; 12], 1.0, 7).unwrap();
    assert_eq!(expected.len(), 12);
    let a = model.run(&observed, 3).unwrap();
    let b = model.run(&observed, 3).unwrap();
    assert_eq!(a.generations.len(), 12);
    for (ga, gb) in a.generations.iter().zip(&b.generations) {
        assert_eq!(ga.weights, gb.weights);
        let n = cfg.particles as f64;
        assert!(ga.ess >= 1.0 - 1e-9 && ga.ess <= n + 1e-9, "ess {}", ga.ess);
        assert!((ga.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(ga.c.iter().all(|c| *c > 0.0));
        assert!(ga.n_bites.iter().all(|v| *v > 0.0));
    }
    for w in a.smoothing_weights().unwrap() {
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    for path in a.sample_paths(20, 1).unwrap() {
        for k in 1..path.len() {
            assert_eq!(a.generations[k].ancestors[path[k]], path[k - 1]);
        }
    }
    let bad = PfConfig {
        particles: 0,
        ..cfg
    };
    assert!(PfModel::new(&params, epi, &climate, bad).is_err());
}
