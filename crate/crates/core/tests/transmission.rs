use aedes_core::forcing::{ClimateSeries, DailyRates, RateSet};
use aedes_core::lifecycle::{burn_in, simulate, CapacitySource, LifecycleParams, LifecycleState};
use aedes_core::transmission::{reproduction_number, EpiModel, EpiParams, TransmissionState};
use chrono::NaiveDate;
use proptest::prelude::*;

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2019, 6, 1).unwrap()
}

fn seasonal(days: usize) -> ClimateSeries {
    let t = (0..days)
        .map(|d| 25.0 + 4.0 * (d as f64 / 58.0).sin())
        .collect();
    ClimateSeries::new(start(), t, vec![0.0; days]).unwrap()
}

fn setup(j: usize, cap: f64) -> (LifecycleParams, LifecycleState) {
    let params =
        LifecycleParams::new(j, RateSet::default_tables(), CapacitySource::Constant(cap)).unwrap();
    let spin = ClimateSeries::constant(start(), 400, 25.0, 0.0).unwrap();
    let mosq = burn_in(&params, &spin, 400, &LifecycleState::with_eggs(j, 100.0)).unwrap();
    (params, mosq)
}

#[test]
fn no_bites_means_no_new_cases() {
    let (params, mosq) = setup(3, 5e4);
    let epi = EpiParams {
        n_bites: 0.0,
        ..EpiParams::default()
    };
    let climate = seasonal(100);
    let mut init = TransmissionState::disease_free(&mosq, epi.n_humans);
    init.seed_infectious(50.0).unwrap();
    let traj = EpiModel::new(&params, epi, &climate)
        .unwrap()
        .run(&init, 100)
        .unwrap();
    let last = traj.states.last().unwrap();
    assert_eq!(last.cumulative_incidence(), 0.0);
    assert!(last
        .adults_e()
        .iter()
        .chain(last.adults_i())
        .all(|v| *v == 0.0));
    // The seeded cases recover.
    assert!(last.humans()[2] < 1e-3 && (last.humans()[3] - 50.0).abs() < 1e-3);
}

#[test]
fn weekly_cases_add_up_to_cumulative_incidence() {
    let (params, mosq) = setup(4, 5e4);
    let epi = EpiParams {
        n_bites: 1.4,
        ..EpiParams::default()
    };
    let climate = seasonal(140);
    let mut init = TransmissionState::disease_free(&mosq, epi.n_humans);
    init.seed_infectious(5.0).unwrap();
    let traj = EpiModel::new(&params, epi, &climate)
        .unwrap()
        .run(&init, 140)
        .unwrap();
    let weekly: f64 = traj.weekly_cases().iter().sum();
    let total = traj.states.last().unwrap().cumulative_incidence();
    assert_eq!(traj.weekly_cases().len(), 20);
    assert!((weekly - total).abs() < 1e-9 * total.max(1.0));
    assert!(traj.weekly_cases().iter().all(|c| *c >= 0.0));
}

#[test]
fn reproduction_number_scaling() {
    let r = RateSet::default_tables().at(26.0);
    let epi = EpiParams::default();
    let base = reproduction_number(1e4, &epi, &r).unwrap();
    let doubled_bites = reproduction_number(
        1e4,
        &EpiParams {
            n_bites: 2.0,
            ..epi
        },
        &r,
    )
    .unwrap();
    let doubled_adults = reproduction_number(2e4, &epi, &r).unwrap();
    assert!((doubled_bites - 4.0 * base).abs() < 1e-12 * base);
    assert!((doubled_adults - 2.0 * base).abs() < 1e-12 * base);
    let no_incubation = DailyRates {
        extrinsic_incubation: 0.0,
        ..r
    };
    assert_eq!(reproduction_number(1e4, &epi, &no_incubation).unwrap(), 0.0);
}

#[test]
fn seeding_more_than_susceptible_is_rejected() {
    let (_, mosq) = setup(1, 10.0);
    let mut s = TransmissionState::disease_free(&mosq, 100.0);
    assert!(s.seed_infectious(101.0).is_err());
    assert!(s.seed_infectious(-1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn humans_conserved_and_mosquitoes_unaffected(
        j in 1usize..8,
        n_bites in 0.0f64..3.0,
        n_humans in 1e3f64..1e6,
        cap_per_human in 0.5f64..5.0,
        seed_frac in 1e-4f64..1e-2,
    ) {
        let (params, mosq) = setup(j, cap_per_human * n_humans);
        let epi = EpiParams { n_bites, n_humans, ..EpiParams::default() };
        let climate = seasonal(200);
        let mut init = TransmissionState::disease_free(&mosq, n_humans);
        init.seed_infectious(seed_frac * n_humans).unwrap();
        let traj = EpiModel::new(&params, epi, &climate).unwrap().run(&init, 200).unwrap();
        let plain = simulate(&params, &climate, &mosq, 200).unwrap().totals();
        let peak = plain.iter().map(|t| t.adults).fold(0.0, f64::max);
        for (s, t) in traj.states.iter().zip(&plain) {
            let h: f64 = s.humans().iter().sum();
            prop_assert!((h - n_humans).abs() <= 1e-9 * n_humans);
            prop_assert!((s.total_adults() - t.adults).abs() <= 1e-6 * peak);
            prop_assert!(s.as_slice().iter().all(|v| *v >= 0.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// Early growth flips sign where the reproduction number crosses one.
    #[test]
    fn threshold_at_one(j in 1usize..6, gamma_h in 0.1f64..0.3, eta_h in 0.1f64..0.3) {
        let (params, mosq) = setup(j, 2e5);
        let base = EpiParams { n_bites: 1.0, gamma_h, eta_h, n_humans: 1e5, ..EpiParams::default() };
        let rates = RateSet::default_tables().at(25.0);
        let unit = reproduction_number(mosq.totals().adults, &base, &rates).unwrap();
        let climate = ClimateSeries::constant(start(), 84, 25.0, 0.0).unwrap();
        for (target, grows) in [(1.25, true), (0.75, false)] {
            let epi = EpiParams { n_bites: (target / unit).sqrt(), ..base };
            let mut init = TransmissionState::disease_free(&mosq, epi.n_humans);
            init.seed_infectious(10.0).unwrap();
            let w = EpiModel::new(&params, epi, &climate).unwrap().run(&init, 84).unwrap().weekly_cases();
            prop_assert_eq!(w[11] > w[4], grows, "target {} weekly {:?}", target, w);
        }
    }
}
