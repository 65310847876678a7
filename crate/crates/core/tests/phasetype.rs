use aedes_core::phasetype::{kron_combine, kron_combine_capped, PhaseTypeDist};
use proptest::prelude::*;

/// Erlang(J, rate J) survival by the Poisson partial sum.
fn erlang_survival(j: usize, x: f64) -> f64 {
    let lam = j as f64 * x;
    let mut term = (-lam).exp();
    let mut sum = term;
    for k in 1..j {
        term *= lam / k as f64;
        sum += term;
    }
    sum
}

#[test]
fn erlang_matches_poisson_partial_sums() {
    for j in [1, 2, 3, 7, 20, 50] {
        let d = PhaseTypeDist::erlang(j).unwrap();
        for x in [0.05, 0.3, 0.9, 1.0, 1.7, 3.0] {
            let s = d.survival(x).unwrap();
            let want = erlang_survival(j, x);
            assert!((s - want).abs() < 1e-10, "J={j} x={x}: {s} vs {want}");
        }
    }
}

#[test]
fn shape_zero_is_rejected() {
    assert!(PhaseTypeDist::erlang(0).is_err());
}

#[test]
fn general_two_phase_matches_closed_form() {
    // Hypoexponential with rates 1 and 3.
    let d = PhaseTypeDist::new(vec![1.0, 0.0], vec![-1.0, 1.0, 0.0, -3.0]).unwrap();
    for x in [0.1f64, 0.5, 2.0] {
        let want = 1.5 * (-x).exp() - 0.5 * (-3.0 * x).exp();
        assert!((d.survival(x).unwrap() - want).abs() < 1e-10);
    }
    assert!((d.mean() - (1.0 + 1.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn combined_chain_survival_is_product() {
    let a = PhaseTypeDist::erlang(3).unwrap();
    let b = PhaseTypeDist::erlang(2).unwrap();
    let k = kron_combine(0.5, &a, 2.0, &b).unwrap();
    assert_eq!(k.dim(), 6);
    for t in [0.2, 1.0, 4.0] {
        let want = a.survival(0.5 * t).unwrap() * b.survival(2.0 * t).unwrap();
        assert!((k.survival(t).unwrap() - want).abs() < 1e-9);
    }
    assert!(kron_combine_capped(1.0, &a, 1.0, &b, 5).is_err());
}

proptest! {
    #[test]
    fn survival_and_cdf_are_complementary_and_monotone(j in 1usize..120, x in 0.0f64..4.0, dx in 0.0f64..1.0) {
        let d = PhaseTypeDist::erlang(j).unwrap();
        let s = d.survival(x).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s + d.cdf(x).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!(d.survival(x + dx).unwrap() <= s + 1e-12);
    }

    #[test]
    fn erlang_mean_is_one(j in 1usize..200) {
        prop_assert!((PhaseTypeDist::erlang(j).unwrap().mean() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negligible_tail_is_negligible(j in 1usize..100, e in 1e-12f64..1e-3) {
        let d = PhaseTypeDist::erlang(j).unwrap();
        let x = d.negligible_beyond(e);
        prop_assert!(d.survival(x).unwrap() <= e * (1.0 + 1e-6));
    }
}
