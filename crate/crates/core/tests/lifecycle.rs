use aedes_core::forcing::{ClimateSeries, DailyRates, RateSet};
use aedes_core::lifecycle::{
    basic_offspring_number, burn_in, hatch_factor, integral_oracle, peak_relative_error, simulate,
    simulate_with, steady_state_larvae, CapacitySource, LifecycleParams, LifecycleState,
    StageTotals, FEMALE_FRACTION,
};
use chrono::NaiveDate;
use proptest::prelude::*;

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()
}

fn rates(ov: f64) -> DailyRates {
    DailyRates {
        egg_to_larva: 0.3,
        larva_to_pupa: 0.14,
        pupa_to_adult: 0.45,
        gonotrophic: 0.25,
        egg_mortality: 0.01,
        larva_mortality: 0.05,
        pupa_mortality: 0.02,
        adult_mortality: 0.06,
        extrinsic_incubation: 0.08,
        oviposition: ov,
    }
}

fn arb_rates() -> impl Strategy<Value = DailyRates> {
    (
        (0.1f64..0.6, 0.08f64..0.3, 0.2f64..0.8, 0.1f64..0.4),
        (0.0f64..0.1, 0.01f64..0.15, 0.0f64..0.1, 0.03f64..0.15),
        2.0f64..60.0,
    )
        .prop_map(|((el, lp, pa, g), (me, ml, mp, ma), ov)| DailyRates {
            egg_to_larva: el,
            larva_to_pupa: lp,
            pupa_to_adult: pa,
            gonotrophic: g,
            egg_mortality: me,
            larva_mortality: ml,
            pupa_mortality: mp,
            adult_mortality: ma,
            extrinsic_incubation: 0.1,
            oviposition: ov,
        })
}

#[test]
fn hatch_factor_throttles_linearly_and_clips() {
    assert_eq!(hatch_factor(0.0, 100.0), 1.0);
    assert!((hatch_factor(25.0, 100.0) - 0.75).abs() < 1e-15);
    assert_eq!(hatch_factor(150.0, 100.0), 0.0);
    assert_eq!(hatch_factor(1.0, f64::INFINITY), 1.0);
}

#[test]
fn without_oviposition_or_mortality_nothing_is_lost() {
    let r = DailyRates {
        egg_mortality: 0.0,
        larva_mortality: 0.0,
        pupa_mortality: 0.0,
        adult_mortality: 0.0,
        ..rates(0.0)
    };
    let params = LifecycleParams::new(
        4,
        RateSet::constant(&r),
        CapacitySource::Constant(f64::INFINITY),
    )
    .unwrap();
    let climate = ClimateSeries::constant(start(), 60, 25.0, 0.0).unwrap();
    let traj = simulate(&params, &climate, &LifecycleState::with_eggs(4, 500.0), 60).unwrap();
    // Only the female share of emerging pupae is tracked as adults.
    for t in traj.totals() {
        let mass = t.eggs + t.larvae + t.pupae + t.adults / FEMALE_FRACTION;
        assert!((mass - 500.0).abs() < 1e-6, "{mass}");
    }
    assert!(traj.totals().last().unwrap().adults > 499.0 * FEMALE_FRACTION);
}

#[test]
fn ode_tracks_the_integral_form_under_seasonal_forcing() {
    let days = 120;
    let tavg: Vec<f64> = (0..days)
        .map(|d| 24.0 + 5.0 * (d as f64 / 20.0).sin())
        .collect();
    let climate = ClimateSeries::new(start(), tavg, vec![0.0; days]).unwrap();
    let params = LifecycleParams::new(
        8,
        RateSet::default_tables(),
        CapacitySource::Constant(800.0),
    )
    .unwrap();
    let init = StageTotals {
        eggs: 300.0,
        adults: 20.0,
        ..StageTotals::default()
    };
    let ode = simulate(
        &params,
        &climate,
        &LifecycleState::from_totals(8, &init).unwrap(),
        days,
    )
    .unwrap()
    .totals();
    let oracle = integral_oracle(&params, &climate, &init, days, 0.05).unwrap();
    let err = peak_relative_error(&oracle, &ode);
    assert!(err.iter().all(|e| *e < 1e-3), "{err:?}");
}

#[test]
fn burn_in_is_periodic_alignment() {
    let days = 100;
    let tavg: Vec<f64> = (0..days)
        .map(|d| 20.0 + 8.0 * (d as f64 / 15.9).sin())
        .collect();
    let climate = ClimateSeries::new(start(), tavg, vec![0.0; days]).unwrap();
    let params =
        LifecycleParams::new(3, RateSet::default_tables(), CapacitySource::Constant(1e3)).unwrap();
    let init = LifecycleState::with_eggs(3, 50.0);
    // Two full cycles of spin-up equal two consecutive plain runs.
    let spun = burn_in(&params, &climate, 2 * days, &init).unwrap();
    let once = simulate_with(&params, &climate, &init, days, |_, _| {}).unwrap();
    let twice = simulate_with(&params, &climate, &once, days, |_, _| {}).unwrap();
    for (a, b) in spun.as_slice().iter().zip(twice.as_slice()) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
    }
}

#[test]
fn horizon_beyond_climate_is_rejected() {
    let climate = ClimateSeries::constant(start(), 10, 25.0, 0.0).unwrap();
    let params =
        LifecycleParams::new(2, RateSet::default_tables(), CapacitySource::Constant(10.0)).unwrap();
    assert!(simulate(&params, &climate, &LifecycleState::with_eggs(2, 1.0), 11).is_err());
    assert!(
        LifecycleParams::new(0, RateSet::default_tables(), CapacitySource::Constant(10.0)).is_err()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn states_stay_nonnegative(r in arb_rates(), j in 1usize..12, cap in 1.0f64..1e4, e0 in 0.0f64..1e5) {
        let params = LifecycleParams::new(j, RateSet::constant(&r), CapacitySource::Constant(cap)).unwrap();
        let climate = ClimateSeries::constant(start(), 120, 25.0, 0.0).unwrap();
        let mut min = f64::INFINITY;
        simulate_with(&params, &climate, &LifecycleState::with_eggs(j, e0), 120, |_, s| {
            min = s.as_slice().iter().copied().fold(min, f64::min);
        }).unwrap();
        prop_assert!(min >= 0.0);
    }

    #[test]
    fn offspring_number_decreases_with_shape(r in arb_rates(), j in 1usize..60) {
        let a = basic_offspring_number(&r, j).unwrap();
        let b = basic_offspring_number(&r, j + 1).unwrap();
        prop_assert!(b < a);
    }

    #[test]
    fn offspring_number_is_linear_in_oviposition(r in arb_rates(), j in 1usize..30, k in 0.1f64..10.0) {
        let a = basic_offspring_number(&r, j).unwrap();
        let scaled = DailyRates { oviposition: k * r.oviposition, ..r };
        let b = basic_offspring_number(&scaled, j).unwrap();
        prop_assert!((b - k * a).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// The long-run larval level, simulated, pins down the offspring number.
    #[test]
    fn equilibrium_larvae_match_offspring_number(r in arb_rates(), j in 1usize..6, target in 1.3f64..4.0) {
        let unit = basic_offspring_number(&DailyRates { oviposition: 1.0, ..r }, j).unwrap();
        let r = DailyRates { oviposition: target / unit, ..r };
        let cap = 1000.0;
        let params = LifecycleParams::new(j, RateSet::constant(&r), CapacitySource::Constant(cap)).unwrap();
        let climate = ClimateSeries::constant(start(), 6000, 25.0, 0.0).unwrap();
        let end = simulate_with(&params, &climate, &LifecycleState::with_eggs(j, 100.0), 6000, |_, _| {}).unwrap();
        let want = steady_state_larvae(target, cap);
        prop_assert!((end.totals().larvae - want).abs() < 0.01 * want, "{} vs {want}", end.totals().larvae);
    }
}
