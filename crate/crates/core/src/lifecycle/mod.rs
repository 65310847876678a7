//! Four-stage mosquito life cycle (egg, larva, pupa, adult female) with
//! Erlang-distributed development.
//!
//! Every stage is split into `J` development substates. Development moves a
//! substate forward at `J * gamma(T)`; mortality is exponential at the
//! stage's death rate regardless of substate. Larval hatching is throttled by
//! `max(0, 1 - l / C)`. Half of emerging pupae are female and enter the adult
//! chain; adults completing a gonotrophic cycle lay `ov(T)` eggs and start the
//! next cycle. `J = 1` is the classical Markovian model.

mod oracle;

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::{
    moving_average, CapacityModel, ClimateSeries, DailyRates, RateSet, PRECIP_WINDOW_DAYS,
};
use crate::ode::{clamp_nonnegative, stability_bound, IntegratorConfig, OdeSystem, Rk4};

pub use oracle::{integral_oracle, peak_relative_error, MAX_ORACLE_POINTS};

/// Share of emerging adults that are female.
pub const FEMALE_FRACTION: f64 = 0.5;

/// Where the larval carrying capacity comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum CapacitySource {
    /// Fixed total capacity (larvae).
    Constant(f64),
    /// `per_human_scale * mu(p)` with `p` the trailing two-week mean precipitation.
    Precipitation {
        model: CapacityModel,
        per_human_scale: f64,
    },
}

impl CapacitySource {
    /// Capacity for every day of `climate`.
    pub fn daily(&self, climate: &ClimateSeries) -> Vec<f64> {
        match self {
            CapacitySource::Constant(c) => vec![*c; climate.len()],
            CapacitySource::Precipitation {
                model,
                per_human_scale,
            } => moving_average(climate.precip(), PRECIP_WINDOW_DAYS)
                .expect("window is positive")
                .into_iter()
                .map(|p| per_human_scale * model.mu(p).max(0.0))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifecycleParams {
    pub j: usize,
    pub rates: RateSet,
    pub capacity: CapacitySource,
    pub integrator: IntegratorConfig,
}

impl LifecycleParams {
    pub fn new(j: usize, rates: RateSet, capacity: CapacitySource) -> Result<Self> {
        let p = Self {
            j,
            rates,
            capacity,
            integrator: IntegratorConfig::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.j == 0 {
            return Err(Error::invalid("Erlang shape J must be >= 1"));
        }
        if let CapacitySource::Constant(c) = self.capacity {
            if !(c >= 0.0) {
                return Err(Error::invalid(format!("capacity {c} must be >= 0")));
            }
        }
        self.integrator.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageTotals {
    pub eggs: f64,
    pub larvae: f64,
    pub pupae: f64,
    pub adults: f64,
}

impl StageTotals {
    pub fn sum(&self) -> f64 {
        self.eggs + self.larvae + self.pupae + self.adults
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.eggs, self.larvae, self.pupae, self.adults]
    }
}

/// Substate populations, laid out `[E_1..E_J, L_1..L_J, P_1..P_J, A_1..A_J]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LifecycleState {
    j: usize,
    y: Vec<f64>,
    /// Days since the start of the forcing series.
    pub t: f64,
}

impl LifecycleState {
    pub fn zeros(j: usize) -> Self {
        Self {
            j,
            y: vec![0.0; 4 * j],
            t: 0.0,
        }
    }

    /// A fresh cohort of `n` eggs in the first egg substate.
    pub fn with_eggs(j: usize, n: f64) -> Self {
        let mut s = Self::zeros(j);
        s.y[0] = n;
        s
    }

    /// Each stage total as a fresh cohort in the stage's first substate.
    pub fn from_totals(j: usize, totals: &StageTotals) -> Result<Self> {
        let mut y = vec![0.0; 4 * j];
        for (k, v) in totals.as_array().into_iter().enumerate() {
            y[k * j] = v;
        }
        Self::from_vec(j, y, 0.0)
    }

    pub fn from_vec(j: usize, y: Vec<f64>, t: f64) -> Result<Self> {
        if y.len() != 4 * j {
            return Err(Error::invalid(format!(
                "expected {} substates, got {}",
                4 * j,
                y.len()
            )));
        }
        if y.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(
                "substate populations must be finite and >= 0",
            ));
        }
        Ok(Self { j, y, t })
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

    pub fn eggs(&self) -> &[f64] {
        &self.y[..self.j]
    }

    pub fn larvae(&self) -> &[f64] {
        &self.y[self.j..2 * self.j]
    }

    pub fn pupae(&self) -> &[f64] {
        &self.y[2 * self.j..3 * self.j]
    }

    pub fn adults(&self) -> &[f64] {
        &self.y[3 * self.j..]
    }

    pub fn totals(&self) -> StageTotals {
        StageTotals {
            eggs: self.eggs().iter().sum(),
            larvae: self.larvae().iter().sum(),
            pupae: self.pupae().iter().sum(),
            adults: self.adults().iter().sum(),
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            j: self.j,
            y: self.y.iter().map(|v| v * k).collect(),
            t: self.t,
        }
    }
}

/// Hatching throttle `max(0, 1 - l / C)`.
#[inline]
pub fn hatch_factor(larvae: f64, capacity: f64) -> f64 {
    if capacity.is_infinite() {
        1.0
    } else if capacity <= 0.0 {
        0.0
    } else {
        (1.0 - larvae / capacity).max(0.0)
    }
}

/// Right-hand side for `E, L, P` under frozen rates, writing into the
/// matching slices of `dy`. `eggs_in` is the oviposition inflow into `E_1`.
/// Returns the pupal emergence flux `J * gamma_pa * P_J`.
#[inline]
pub(crate) fn aquatic_rhs(
    j: usize,
    r: &DailyRates,
    capacity: f64,
    eggs_in: f64,
    y: &[f64],
    dy: &mut [f64],
) -> f64 {
    let jf = j as f64;
    let (e, rest) = y.split_at(j);
    let (l, rest) = rest.split_at(j);
    let p = &rest[..j];
    let (de, drest) = dy.split_at_mut(j);
    let (dl, drest) = drest.split_at_mut(j);
    let dp = &mut drest[..j];

    let ke = jf * r.egg_to_larva;
    let kl = jf * r.larva_to_pupa;
    let kp = jf * r.pupa_to_adult;

    let l_total: f64 = l.iter().sum();
    let hatch = hatch_factor(l_total, capacity) * ke * e[j - 1];

    chain_rhs(e, de, eggs_in, ke, r.egg_mortality);
    chain_rhs(l, dl, hatch, kl, r.larva_mortality);
    chain_rhs(p, dp, kl * l[j - 1], kp, r.pupa_mortality);
    kp * p[j - 1]
}

/// `dx_1 = inflow - (k + mu) x_1`, `dx_i = k x_{i-1} - (k + mu) x_i`.
#[inline]
pub(crate) fn chain_rhs(x: &[f64], dx: &mut [f64], inflow: f64, k: f64, mu: f64) {
    let out = k + mu;
    dx[0] = inflow - out * x[0];
    for i in 1..x.len() {
        dx[i] = k * x[i - 1] - out * x[i];
    }
}

/// The Erlang-chain life cycle with rates frozen at one temperature.
#[derive(Debug, Clone, Copy)]
pub struct LifecycleSystem {
    pub j: usize,
    pub rates: DailyRates,
    pub capacity: f64,
}

impl LifecycleSystem {
    pub fn new(j: usize, rates: DailyRates, capacity: f64) -> Self {
        Self { j, rates, capacity }
    }
}

impl OdeSystem for LifecycleSystem {
    fn dim(&self) -> usize {
        4 * self.j
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let j = self.j;
        let r = &self.rates;
        let jf = j as f64;
        let ka = jf * r.gonotrophic;
        let a = &y[3 * j..];
        let completing = ka * a[j - 1];
        let emergence = aquatic_rhs(j, r, self.capacity, r.oviposition * completing, y, dy);
        let da = &mut dy[3 * j..];
        chain_rhs(
            a,
            da,
            FEMALE_FRACTION * emergence + completing,
            ka,
            r.adult_mortality,
        );
    }

    fn stiffness(&self) -> f64 {
        let r = &self.rates;
        let dev = r
            .egg_to_larva
            .max(r.larva_to_pupa)
            .max(r.pupa_to_adult)
            .max(r.gonotrophic);
        let mort = r
            .egg_mortality
            .max(r.larva_mortality)
            .max(r.pupa_mortality)
            .max(r.adult_mortality);
        self.j as f64 * dev + mort
    }
}

/// Flows between and out of the life-cycle stages at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageFluxes {
    pub oviposition: f64,
    pub hatching: f64,
    pub pupation: f64,
    /// Total pupal emergence, both sexes.
    pub emergence: f64,
    pub egg_deaths: f64,
    pub larva_deaths: f64,
    pub pupa_deaths: f64,
    pub adult_deaths: f64,
    /// Eggs completing development while hatching is blocked by capacity.
    pub blocked_hatching: f64,
}

impl StageFluxes {
    /// `d/dt` of the total population implied by the boundary fluxes.
    pub fn net(&self) -> f64 {
        self.oviposition
            - (1.0 - FEMALE_FRACTION) * self.emergence
            - self.blocked_hatching
            - self.egg_deaths
            - self.larva_deaths
            - self.pupa_deaths
            - self.adult_deaths
    }
}

impl LifecycleSystem {
    pub fn fluxes(&self, state: &LifecycleState) -> StageFluxes {
        let jf = self.j as f64;
        let r = &self.rates;
        let t = state.totals();
        let e_last = state.eggs()[self.j - 1];
        let completing_eggs = jf * r.egg_to_larva * e_last;
        let hatching = hatch_factor(t.larvae, self.capacity) * completing_eggs;
        StageFluxes {
            oviposition: r.oviposition * jf * r.gonotrophic * state.adults()[self.j - 1],
            hatching,
            pupation: jf * r.larva_to_pupa * state.larvae()[self.j - 1],
            emergence: jf * r.pupa_to_adult * state.pupae()[self.j - 1],
            egg_deaths: r.egg_mortality * t.eggs,
            larva_deaths: r.larva_mortality * t.larvae,
            pupa_deaths: r.pupa_mortality * t.pupae,
            adult_deaths: r.adult_mortality * t.adults,
            blocked_hatching: completing_eggs - hatching,
        }
    }
}

/// One explicit RK4 step of the life cycle at temperature `temp` and capacity
/// `capacity`. Refuses steps beyond the RK4 stability bound.
pub fn step(
    state: &LifecycleState,
    params: &LifecycleParams,
    temp: f64,
    capacity: f64,
    dt: f64,
) -> Result<LifecycleState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("step size {dt} must be positive")));
    }
    if state.j != params.j {
        return Err(Error::invalid("state and parameters disagree on J"));
    }
    let sys = LifecycleSystem::new(params.j, params.rates.at(temp), capacity);
    let bound = stability_bound(&sys);
    if dt > bound {
        return Err(Error::StepRefused { dt, bound });
    }
    let mut next = state.clone();
    Rk4::new(sys.dim()).step(&sys, &mut next.y, dt);
    if !clamp_nonnegative(&mut next.y) {
        return Err(Error::Integration(format!(
            "negative population after a step of {dt} day; reduce the step"
        )));
    }
    next.t += dt;
    Ok(next)
}

/// Daily snapshots of a life-cycle run; `states[d]` is the state at day `d`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub start_date: NaiveDate,
    pub states: Vec<LifecycleState>,
}

impl Trajectory {
    pub fn totals(&self) -> Vec<StageTotals> {
        self.states.iter().map(LifecycleState::totals).collect()
    }

    /// `date,eggs,larvae,pupae,adults`, plus all `4J` substates when asked.
    pub fn write_csv(&self, path: &Path, substates: bool) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let j = self.states.first().map_or(0, |s| s.j);
        let mut header = String::from("date,eggs,larvae,pupae,adults");
        if substates {
            for stage in ["E", "L", "P", "A"] {
                for i in 1..=j {
                    header.push_str(&format!(",{stage}{i}"));
                }
            }
        }
        writeln!(w, "{header}").map_err(io)?;
        for (d, s) in self.states.iter().enumerate() {
            let t = s.totals();
            let date = self.start_date + chrono::Days::new(d as u64);
            write!(w, "{date},{},{},{},{}", t.eggs, t.larvae, t.pupae, t.adults).map_err(io)?;
            if substates {
                for v in &s.y {
                    write!(w, ",{v}").map_err(io)?;
                }
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Runs `horizon` days from `init`, calling `observe(day, state)` for the
/// initial state and after every day.
pub fn simulate_with(
    params: &LifecycleParams,
    climate: &ClimateSeries,
    init: &LifecycleState,
    horizon: usize,
    mut observe: impl FnMut(usize, &LifecycleState),
) -> Result<LifecycleState> {
    params.validate()?;
    if init.j != params.j {
        return Err(Error::invalid("initial state and parameters disagree on J"));
    }
    if horizon > climate.len() {
        return Err(Error::invalid(format!(
            "horizon {horizon} exceeds the climate series ({} days)",
            climate.len()
        )));
    }
    let capacity = params.capacity.daily(climate);
    let mut state = init.clone();
    state.t = 0.0;
    let mut ws = Rk4::new(4 * params.j);
    observe(0, &state);
    for day in 0..horizon {
        let sys = LifecycleSystem::new(
            params.j,
            params.rates.at(climate.tavg()[day]),
            capacity[day],
        );
        ws.advance(&sys, &mut state.y, 1.0, &params.integrator)
            .map_err(|e| day_error(e, day))?;
        state.t = (day + 1) as f64;
        observe(day + 1, &state);
    }
    Ok(state)
}

fn day_error(e: Error, day: usize) -> Error {
    match e {
        Error::Integration(m) => Error::Integration(format!("day {day}: {m}")),
        other => other,
    }
}

pub fn simulate(
    params: &LifecycleParams,
    climate: &ClimateSeries,
    init: &LifecycleState,
    horizon: usize,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(horizon + 1);
    simulate_with(params, climate, init, horizon, |_, s| {
        states.push(s.clone())
    })?;
    Ok(Trajectory {
        start_date: climate.start_date(),
        states,
    })
}

/// Spin-up length for map and filter runs.
pub const BURN_IN_DAYS: usize = 730;

/// Prepends `burn_in` days of cyclically repeated climate so that day
/// `burn_in` of the result is day 0 of `climate`.
pub fn with_spinup(climate: &ClimateSeries, burn_in: usize) -> ClimateSeries {
    let n = climate.len();
    let offset = (n - burn_in % n) % n;
    climate.cyclic(offset, burn_in + n)
}

/// State at day 0 of `climate` after `burn_in` days of cyclic spin-up from `init`.
pub fn burn_in(
    params: &LifecycleParams,
    climate: &ClimateSeries,
    burn_in: usize,
    init: &LifecycleState,
) -> Result<LifecycleState> {
    let spun = with_spinup(climate, burn_in);
    let mut state = simulate_with(params, &spun, init, burn_in, |_, _| {})?;
    state.t = 0.0;
    Ok(state)
}

/// The classical four-compartment model (exponential sojourns), integrated
/// with the same scheme. Its adult equation has no recycling term because
/// gonotrophic completion re-enters the same compartment.
#[derive(Debug, Clone, Copy)]
pub struct ClassicSystem {
    pub rates: DailyRates,
    pub capacity: f64,
}

impl OdeSystem for ClassicSystem {
    fn dim(&self) -> usize {
        4
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let r = &self.rates;
        let (e, l, p, a) = (y[0], y[1], y[2], y[3]);
        dy[0] = r.oviposition * r.gonotrophic * a - (r.egg_to_larva + r.egg_mortality) * e;
        dy[1] = hatch_factor(l, self.capacity) * r.egg_to_larva * e
            - (r.larva_to_pupa + r.larva_mortality) * l;
        dy[2] = r.larva_to_pupa * l - (r.pupa_to_adult + r.pupa_mortality) * p;
        dy[3] = FEMALE_FRACTION * r.pupa_to_adult * p - r.adult_mortality * a;
    }

    fn stiffness(&self) -> f64 {
        LifecycleSystem::new(1, self.rates, self.capacity).stiffness()
    }
}

pub fn simulate_classic(
    params: &LifecycleParams,
    climate: &ClimateSeries,
    init: StageTotals,
    horizon: usize,
) -> Result<Vec<StageTotals>> {
    if horizon > climate.len() {
        return Err(Error::invalid("horizon exceeds the climate series"));
    }
    let capacity = params.capacity.daily(climate);
    let mut y = init.as_array().to_vec();
    let mut ws = Rk4::new(4);
    let mut out = vec![init];
    for day in 0..horizon {
        let sys = ClassicSystem {
            rates: params.rates.at(climate.tavg()[day]),
            capacity: capacity[day],
        };
        ws.advance(&sys, &mut y, 1.0, &params.integrator)
            .map_err(|e| day_error(e, day))?;
        out.push(StageTotals {
            eggs: y[0],
            larvae: y[1],
            pupae: y[2],
            adults: y[3],
        });
    }
    Ok(out)
}

/// `(1 + x / J)^J`.
fn compound(x: f64, j: f64) -> f64 {
    (j * (x / j).ln_1p()).exp()
}

/// Expected viable adult female offspring per adult female at fixed rates.
///
/// Eggs laid over a lifetime, `ov / ((1 + g_ad / (J g_ae))^J - 1)`, times the
/// chance an egg survives each aquatic stage, `(1 + mu / (J gamma))^-J`,
/// times the female share of emerging adults.
pub fn basic_offspring_number(rates: &DailyRates, j: usize) -> Result<f64> {
    if j == 0 {
        return Err(Error::invalid("Erlang shape J must be >= 1"));
    }
    let dev = [
        ("egg_to_larva", rates.egg_to_larva),
        ("larva_to_pupa", rates.larva_to_pupa),
        ("pupa_to_adult", rates.pupa_to_adult),
        ("gonotrophic", rates.gonotrophic),
    ];
    if let Some((name, v)) = dev.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::ParameterInfeasible(format!(
            "development rate {name} = {v} must be > 0"
        )));
    }
    if !(rates.adult_mortality > 0.0) {
        return Err(Error::ParameterInfeasible(
            "adult mortality must be > 0 for a finite lifetime egg count".into(),
        ));
    }
    let jf = j as f64;
    let cycles = 1.0 / (compound(rates.adult_mortality / rates.gonotrophic, jf) - 1.0);
    let survive = |mu: f64, gamma: f64| 1.0 / compound(mu / gamma, jf);
    Ok(FEMALE_FRACTION
        * rates.oviposition
        * cycles
        * survive(rates.egg_mortality, rates.egg_to_larva)
        * survive(rates.larva_mortality, rates.larva_to_pupa)
        * survive(rates.pupa_mortality, rates.pupa_to_adult))
}

/// Total larvae at the nontrivial equilibrium, `C (1 - 1/r0)`, or 0 when the
/// population cannot persist.
pub fn steady_state_larvae(r0: f64, capacity: f64) -> f64 {
    if r0 > 1.0 {
        capacity * (1.0 - 1.0 / r0)
    } else {
        0.0
    }
}
