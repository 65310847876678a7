//! Dengue transmission on top of the Erlang-chain life cycle.
//!
//! Adult females are split into susceptible, exposed and infectious
//! substate chains sharing the same gonotrophic development. Exposed
//! females become infectious at the extrinsic incubation rate; every class
//! lays eggs. Humans follow a closed SEIR model.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::{ClimateSeries, DailyRates};
use crate::lifecycle::{
    aquatic_rhs, chain_rhs, LifecycleParams, LifecycleState, LifecycleSystem, FEMALE_FRACTION,
};
use crate::ode::{clamp_nonnegative, stability_bound, OdeSystem, Rk4};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpiParams {
    /// Bites per gonotrophic cycle.
    pub n_bites: f64,
    pub phi_hv: f64,
    pub phi_vh: f64,
    /// Inverse intrinsic incubation period (per day).
    pub gamma_h: f64,
    /// Inverse human infectious period (per day).
    pub eta_h: f64,
    pub n_humans: f64,
    /// Biting happens in the last `k` gonotrophic substates; `None` means all.
    pub k_bite_stages: Option<usize>,
}

impl Default for EpiParams {
    fn default() -> Self {
        Self {
            n_bites: 1.0,
            phi_hv: 0.5,
            phi_vh: 0.5,
            gamma_h: 1.0 / 5.5,
            eta_h: 1.0 / 5.0,
            n_humans: 10_000.0,
            k_bite_stages: None,
        }
    }
}

impl EpiParams {
    pub fn validate(&self, j: usize) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} must be in [0, 1]")))
            }
        };
        prob("phi_hv", self.phi_hv)?;
        prob("phi_vh", self.phi_vh)?;
        if !(self.n_bites >= 0.0 && self.n_bites.is_finite()) {
            return Err(Error::invalid(format!(
                "n_bites = {} must be >= 0",
                self.n_bites
            )));
        }
        for (name, v) in [
            ("gamma_h", self.gamma_h),
            ("eta_h", self.eta_h),
            ("n_humans", self.n_humans),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be > 0")));
            }
        }
        if let Some(k) = self.k_bite_stages {
            if k == 0 || k > j {
                return Err(Error::invalid(format!(
                    "k_bite_stages = {k} must be in 1..={j}"
                )));
            }
        }
        Ok(())
    }

    pub fn bite_stages(&self, j: usize) -> usize {
        self.k_bite_stages.unwrap_or(j)
    }
}

pub const HUMAN_CLASSES: usize = 4;

/// Layout: `E, L, P, As, Ae, Ai` (each `J` long), then `Hs, He, Hi, Hr` and
/// the cumulative count of entries into `Hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionState {
    j: usize,
    y: Vec<f64>,
    pub t: f64,
}

impl TransmissionState {
    /// Disease-free state: every adult susceptible, all humans susceptible.
    pub fn disease_free(mosquitoes: &LifecycleState, n_humans: f64) -> Self {
        let j = mosquitoes.j();
        let mut y = vec![0.0; 6 * j + HUMAN_CLASSES + 1];
        y[..4 * j].copy_from_slice(mosquitoes.as_slice());
        y[6 * j] = n_humans;
        Self {
            j,
            y,
            t: mosquitoes.t,
        }
    }

    pub fn from_vec(j: usize, y: Vec<f64>, t: f64) -> Result<Self> {
        if y.len() != 6 * j + HUMAN_CLASSES + 1 {
            return Err(Error::invalid("transmission state has the wrong length"));
        }
        if y.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(
                "transmission state entries must be finite and >= 0",
            ));
        }
        Ok(Self { j, y, t })
    }

    /// Moves `n` humans from susceptible to infectious.
    pub fn seed_infectious(&mut self, n: f64) -> Result<()> {
        let hs = self.y[6 * self.j];
        if !(n >= 0.0 && n <= hs) {
            return Err(Error::invalid(format!(
                "cannot seed {n} infectious from {hs} susceptible"
            )));
        }
        self.y[6 * self.j] -= n;
        self.y[6 * self.j + 2] += n;
        Ok(())
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.y
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.y
    }

    fn block(&self, i: usize) -> &[f64] {
        &self.y[i * self.j..(i + 1) * self.j]
    }

    pub fn eggs(&self) -> &[f64] {
        self.block(0)
    }

    pub fn larvae(&self) -> &[f64] {
        self.block(1)
    }

    pub fn pupae(&self) -> &[f64] {
        self.block(2)
    }

    pub fn adults_s(&self) -> &[f64] {
        self.block(3)
    }

    pub fn adults_e(&self) -> &[f64] {
        self.block(4)
    }

    pub fn adults_i(&self) -> &[f64] {
        self.block(5)
    }

    /// `[Hs, He, Hi, Hr]`.
    pub fn humans(&self) -> [f64; 4] {
        let h = &self.y[6 * self.j..];
        [h[0], h[1], h[2], h[3]]
    }

    pub fn cumulative_incidence(&self) -> f64 {
        self.y[6 * self.j + HUMAN_CLASSES]
    }

    pub fn total_adults(&self) -> f64 {
        self.y[3 * self.j..6 * self.j].iter().sum()
    }

    /// Aquatic stages and adults pooled over infection status.
    pub fn mosquitoes(&self) -> LifecycleState {
        let j = self.j;
        let mut y = self.y[..4 * j].to_vec();
        for i in 0..j {
            y[3 * j + i] += self.y[4 * j + i] + self.y[5 * j + i];
        }
        LifecycleState::from_vec(j, y, self.t).expect("entries are nonnegative")
    }

    /// Scales every mosquito compartment by `k`; humans are untouched.
    pub fn scale_mosquitoes(&mut self, k: f64) {
        for v in &mut self.y[..6 * self.j] {
            *v *= k;
        }
    }
}

/// Human-to-vector force of infection per biting susceptible female,
/// averaged over the whole cycle: `n_B gamma_ae phi_HV Hi / N_H`.
pub fn force_hv(state: &TransmissionState, epi: &EpiParams, gonotrophic: f64) -> f64 {
    epi.n_bites * gonotrophic * epi.phi_hv * state.humans()[2] / epi.n_humans
}

/// Vector-to-human force of infection per susceptible human.
pub fn force_vh(state: &TransmissionState, epi: &EpiParams, gonotrophic: f64) -> f64 {
    let j = state.j;
    let k = epi.bite_stages(j);
    let biting: f64 = state.adults_i()[j - k..].iter().sum();
    epi.n_bites * gonotrophic * epi.phi_vh * (j as f64 / k as f64) * biting / epi.n_humans
}

/// The coupled system with rates frozen at one temperature.
#[derive(Debug, Clone, Copy)]
pub struct TransmissionSystem {
    pub j: usize,
    pub rates: DailyRates,
    pub capacity: f64,
    pub epi: EpiParams,
    /// Upper bound on the vector-to-human force over the step.
    vh_bound: f64,
}

impl TransmissionSystem {
    pub fn new(
        j: usize,
        rates: DailyRates,
        capacity: f64,
        epi: EpiParams,
        state: &TransmissionState,
    ) -> Self {
        let k = epi.bite_stages(j) as f64;
        let vh_bound = 2.0
            * epi.n_bites
            * rates.gonotrophic
            * epi.phi_vh
            * (j as f64 / k)
            * state.total_adults()
            / epi.n_humans;
        Self {
            j,
            rates,
            capacity,
            epi,
            vh_bound,
        }
    }
}

impl OdeSystem for TransmissionSystem {
    fn dim(&self) -> usize {
        6 * self.j + HUMAN_CLASSES + 1
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let j = self.j;
        let jf = j as f64;
        let r = &self.rates;
        let epi = &self.epi;
        let ka = jf * r.gonotrophic;
        let k = epi.bite_stages(j);
        let bite_scale = jf / k as f64;

        let (as_, ae, ai) = (&y[3 * j..4 * j], &y[4 * j..5 * j], &y[5 * j..6 * j]);
        let h = &y[6 * j..];
        let completing = ka * (as_[j - 1] + ae[j - 1] + ai[j - 1]);
        let emergence = aquatic_rhs(j, r, self.capacity, r.oviposition * completing, y, dy);

        let hv = epi.n_bites * r.gonotrophic * epi.phi_hv * h[2] / epi.n_humans * bite_scale;
        let biting_i: f64 = ai[j - k..].iter().sum();
        let vh = epi.n_bites * r.gonotrophic * epi.phi_vh * bite_scale * biting_i / epi.n_humans;
        let gv = r.extrinsic_incubation;

        let (_, dadults) = dy.split_at_mut(3 * j);
        let (das, rest) = dadults.split_at_mut(j);
        let (dae, rest) = rest.split_at_mut(j);
        let (dai, dh) = rest.split_at_mut(j);

        chain_rhs(
            as_,
            das,
            FEMALE_FRACTION * emergence + ka * as_[j - 1],
            ka,
            r.adult_mortality,
        );
        chain_rhs(ae, dae, ka * ae[j - 1], ka, r.adult_mortality);
        chain_rhs(ai, dai, ka * ai[j - 1], ka, r.adult_mortality);
        for i in j - k..j {
            let inf = hv * as_[i];
            das[i] -= inf;
            dae[i] += inf;
        }
        for i in 0..j {
            let becoming = gv * ae[i];
            dae[i] -= becoming;
            dai[i] += becoming;
        }

        let infections = vh * h[0];
        let onset = epi.gamma_h * h[1];
        let recovery = epi.eta_h * h[2];
        dh[0] = -infections;
        dh[1] = infections - onset;
        dh[2] = onset - recovery;
        dh[3] = recovery;
        dh[4] = onset;
    }

    fn stiffness(&self) -> f64 {
        let base = LifecycleSystem::new(self.j, self.rates, self.capacity).stiffness();
        let k = self.epi.bite_stages(self.j) as f64;
        let hv_max =
            self.epi.n_bites * self.rates.gonotrophic * self.epi.phi_hv * self.j as f64 / k;
        let human = self.vh_bound.max(self.epi.gamma_h).max(self.epi.eta_h);
        (base + hv_max + self.rates.extrinsic_incubation).max(human)
    }
}

/// One RK4 step of the coupled system; refuses steps beyond the stability bound.
pub fn step_epi(
    state: &TransmissionState,
    lifecycle: &LifecycleParams,
    epi: &EpiParams,
    temp: f64,
    capacity: f64,
    dt: f64,
) -> Result<TransmissionState> {
    epi.validate(lifecycle.j)?;
    if state.j != lifecycle.j {
        return Err(Error::invalid("state and parameters disagree on J"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("step size {dt} must be positive")));
    }
    let sys = TransmissionSystem::new(lifecycle.j, lifecycle.rates.at(temp), capacity, *epi, state);
    let bound = stability_bound(&sys);
    if dt > bound {
        return Err(Error::StepRefused { dt, bound });
    }
    let mut next = state.clone();
    Rk4::new(sys.dim()).step(&sys, &mut next.y, dt);
    if !clamp_nonnegative(&mut next.y) {
        return Err(Error::Integration(format!(
            "negative compartment after a step of {dt} day; reduce the step"
        )));
    }
    next.t += dt;
    Ok(next)
}

/// `R0 = (a/N_H) n_B^2 gamma_ae^2 phi_HV phi_VH / (gamma_ad eta_H (1 + gamma_ad/gamma_V))`.
///
/// Returns 0 when the extrinsic incubation rate is 0 (no vector ever becomes
/// infectious).
pub fn reproduction_number(adults: f64, epi: &EpiParams, rates: &DailyRates) -> Result<f64> {
    if !(rates.adult_mortality > 0.0) {
        return Err(Error::ParameterInfeasible(
            "adult mortality must be > 0".into(),
        ));
    }
    if !(epi.eta_h > 0.0) {
        return Err(Error::ParameterInfeasible("eta_h must be > 0".into()));
    }
    if !(epi.n_humans > 0.0) {
        return Err(Error::ParameterInfeasible("n_humans must be > 0".into()));
    }
    let gv = rates.extrinsic_incubation;
    if gv <= 0.0 {
        return Ok(0.0);
    }
    let g = rates.gonotrophic;
    Ok(
        adults / epi.n_humans * epi.n_bites.powi(2) * g * g * epi.phi_hv * epi.phi_vh
            / (rates.adult_mortality * epi.eta_h * (1.0 + rates.adult_mortality / gv)),
    )
}

/// Advances a transmission state one day at a time over `climate`.
pub struct EpiModel<'a> {
    pub lifecycle: &'a LifecycleParams,
    pub epi: EpiParams,
    pub climate: &'a ClimateSeries,
    pub capacity: Vec<f64>,
    ws: Rk4,
}

impl<'a> EpiModel<'a> {
    pub fn new(
        lifecycle: &'a LifecycleParams,
        epi: EpiParams,
        climate: &'a ClimateSeries,
    ) -> Result<Self> {
        lifecycle.validate()?;
        epi.validate(lifecycle.j)?;
        let capacity = lifecycle.capacity.daily(climate);
        Ok(Self::with_capacity(lifecycle, epi, climate, capacity))
    }

    /// Uses an explicit daily capacity series instead of the lifecycle's source.
    pub fn with_capacity(
        lifecycle: &'a LifecycleParams,
        epi: EpiParams,
        climate: &'a ClimateSeries,
        capacity: Vec<f64>,
    ) -> Self {
        Self {
            lifecycle,
            epi,
            climate,
            capacity,
            ws: Rk4::new(6 * lifecycle.j + HUMAN_CLASSES + 1),
        }
    }

    /// Advances `state` over day `day` (from `t = day` to `day + 1`).
    pub fn advance_day(&mut self, state: &mut TransmissionState, day: usize) -> Result<()> {
        if day >= self.climate.len() {
            return Err(Error::invalid(format!(
                "day {day} is outside the climate series"
            )));
        }
        let rates = self.lifecycle.rates.at(self.climate.tavg()[day]);
        advance_day(
            &mut self.ws,
            self.lifecycle,
            &self.epi,
            &rates,
            self.capacity[day],
            state,
            day,
        )
    }

    pub fn run(&mut self, init: &TransmissionState, horizon: usize) -> Result<EpiTrajectory> {
        if init.j != self.lifecycle.j {
            return Err(Error::invalid("initial state and parameters disagree on J"));
        }
        if horizon > self.climate.len() {
            return Err(Error::invalid("horizon exceeds the climate series"));
        }
        let mut state = init.clone();
        state.t = 0.0;
        let mut states = Vec::with_capacity(horizon + 1);
        states.push(state.clone());
        for day in 0..horizon {
            self.advance_day(&mut state, day)?;
            states.push(state.clone());
        }
        Ok(EpiTrajectory {
            start_date: self.climate.start_date(),
            states,
        })
    }
}

/// Advances `state` by one day under frozen `rates` and `capacity`; `day`
/// is the index of the day being integrated.
pub fn advance_day(
    ws: &mut Rk4,
    lifecycle: &LifecycleParams,
    epi: &EpiParams,
    rates: &DailyRates,
    capacity: f64,
    state: &mut TransmissionState,
    day: usize,
) -> Result<()> {
    let sys = TransmissionSystem::new(lifecycle.j, *rates, capacity, *epi, state);
    ws.advance(&sys, &mut state.y, 1.0, &lifecycle.integrator)
        .map_err(|e| match e {
            Error::Integration(m) => Error::Integration(format!("day {day}: {m}")),
            other => other,
        })?;
    state.t = (day + 1) as f64;
    Ok(())
}

pub fn simulate_epi(
    lifecycle: &LifecycleParams,
    epi: &EpiParams,
    climate: &ClimateSeries,
    init: &TransmissionState,
    horizon: usize,
) -> Result<EpiTrajectory> {
    EpiModel::new(lifecycle, *epi, climate)?.run(init, horizon)
}

#[derive(Debug, Clone)]
pub struct EpiTrajectory {
    pub start_date: NaiveDate,
    pub states: Vec<TransmissionState>,
}

impl EpiTrajectory {
    /// Cases (He to Hi transitions) in each complete 7-day block.
    pub fn weekly_cases(&self) -> Vec<f64> {
        let cum: Vec<f64> = self
            .states
            .iter()
            .map(|s| s.cumulative_incidence())
            .collect();
        cum.windows(8).step_by(7).map(|w| w[7] - w[0]).collect()
    }

    /// Cases in the 7 days ending at each snapshot (shorter at the start).
    pub fn trailing_weekly_cases(&self) -> Vec<f64> {
        let cum: Vec<f64> = self
            .states
            .iter()
            .map(|s| s.cumulative_incidence())
            .collect();
        (0..cum.len())
            .map(|d| cum[d] - cum[d.saturating_sub(7)])
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(
            w,
            "date,eggs,larvae,pupae,adults_s,adults_e,adults_i,Hs,He,Hi,Hr,weekly_cases"
        )
        .map_err(io)?;
        let weekly = self.trailing_weekly_cases();
        for (d, s) in self.states.iter().enumerate() {
            let sum = |v: &[f64]| v.iter().sum::<f64>();
            let h = s.humans();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                self.start_date + chrono::Days::new(d as u64),
                sum(s.eggs()),
                sum(s.larvae()),
                sum(s.pupae()),
                sum(s.adults_s()),
                sum(s.adults_e()),
                sum(s.adults_i()),
                h[0],
                h[1],
                h[2],
                h[3],
                weekly[d]
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::RateSet;
    use crate::lifecycle::CapacitySource;

    fn unit_rates() -> DailyRates {
        DailyRates {
            egg_to_larva: 1.0,
            larva_to_pupa: 1.0,
            pupa_to_adult: 1.0,
            gonotrophic: 1.0,
            egg_mortality: 0.0,
            larva_mortality: 0.0,
            pupa_mortality: 0.0,
            adult_mortality: 1.0,
            extrinsic_incubation: 1e12,
            oviposition: 1.0,
        }
    }

    fn unit_epi() -> EpiParams {
        EpiParams {
            n_bites: 1.0,
            phi_hv: 1.0,
            phi_vh: 1.0,
            gamma_h: 1.0,
            eta_h: 1.0,
            n_humans: 1.0,
            k_bite_stages: None,
        }
    }

    #[test]
    fn r0_unit_cases() {
        let r = reproduction_number(1.0, &unit_epi(), &unit_rates()).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
        let mut rates = unit_rates();
        rates.extrinsic_incubation = 1.0;
        assert!((reproduction_number(1.0, &unit_epi(), &rates).unwrap() - 0.5).abs() < 1e-12);
        rates.adult_mortality = 0.0;
        assert!(matches!(
            reproduction_number(1.0, &unit_epi(), &rates),
            Err(Error::ParameterInfeasible(_))
        ));
    }

    fn state(j: usize) -> TransmissionState {
        let mut y = vec![0.0; 6 * j + 5];
        for (i, v) in y.iter_mut().enumerate().take(6 * j) {
            *v = 1.0 + i as f64;
        }
        y[6 * j] = 900.0;
        y[6 * j + 2] = 100.0;
        TransmissionState::from_vec(j, y, 0.0).unwrap()
    }

    #[test]
    fn forces_follow_formulas() {
        let j = 4;
        let s = state(j);
        let epi = EpiParams {
            n_humans: 1000.0,
            k_bite_stages: Some(2),
            ..EpiParams::default()
        };
        let ai = s.adults_i();
        let expected = epi.n_bites * 0.3 * epi.phi_vh * 2.0 * (ai[2] + ai[3]) / 1000.0;
        assert!((force_vh(&s, &epi, 0.3) - expected).abs() < 1e-15);
        assert!((force_hv(&s, &epi, 0.3) - epi.n_bites * 0.3 * epi.phi_hv * 0.1).abs() < 1e-15);
        let doubled = EpiParams {
            n_humans: 2000.0,
            ..epi
        };
        assert!((force_vh(&s, &doubled, 0.3) - 0.5 * expected).abs() < 1e-15);
    }

    #[test]
    fn disease_free_state_stays_free() {
        let lp = LifecycleParams::new(
            3,
            RateSet::default_tables(),
            CapacitySource::Constant(500.0),
        )
        .unwrap();
        let s = TransmissionState::disease_free(&LifecycleState::with_eggs(3, 50.0), 1000.0);
        let mut next = s;
        for _ in 0..100 {
            next = step_epi(&next, &lp, &EpiParams::default(), 27.0, 500.0, 0.05).unwrap();
        }
        assert!(next
            .adults_e()
            .iter()
            .chain(next.adults_i())
            .all(|v| *v == 0.0));
        assert_eq!(next.humans(), [1000.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn weekly_cases_from_cumulative() {
        let mut states = Vec::new();
        for d in 0..15 {
            let mut s = state(1);
            s.as_mut_slice()[6 + 4] = d as f64 * 2.0;
            states.push(s);
        }
        let tr = EpiTrajectory {
            start_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            states,
        };
        assert_eq!(tr.weekly_cases(), vec![14.0, 14.0]);
        assert_eq!(tr.trailing_weekly_cases()[3], 6.0);
    }
}
