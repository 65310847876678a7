//! Bootstrap particle filter over the transmission model with random-walk
//! carrying capacity and biting rate, and genealogy-based smoothing.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::forcing::{ClimateSeries, DailyRates};
use crate::lifecycle::{burn_in, CapacitySource, LifecycleParams, LifecycleState};
use crate::ode::Rk4;
use crate::transmission::{advance_day, EpiParams, TransmissionState};

/// Poisson means are floored here so zero predictions stay comparable.
pub const PREDICTION_FLOOR: f64 = 0.1;

/// Log-likelihood of `observed` cases given `predicted` expected cases.
pub fn observation_likelihood(predicted: f64, observed: u64) -> f64 {
    let lambda = predicted.max(PREDICTION_FLOOR);
    let k = observed as f64;
    k * lambda.ln() - lambda - ln_gamma(k + 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PfConfig {
    pub particles: usize,
    /// Log-uniform prior bounds for capacity per human.
    pub c_prior: [f64; 2],
    /// Uniform prior bounds for bites per cycle.
    pub nb_prior: [f64; 2],
    /// Proposal standard deviations relative to the current value.
    pub c_step: f64,
    pub nb_step: f64,
    /// Resample when ESS falls below this fraction of the ensemble.
    pub ess_fraction: f64,
    pub interval_days: usize,
    pub initial_infectious: f64,
    pub burn_in_days: usize,
}

impl Default for PfConfig {
    fn default() -> Self {
        Self {
            particles: 2000,
            c_prior: [0.1, 100.0],
            nb_prior: [0.2, 3.0],
            c_step: 0.5,
            nb_step: 0.05,
            ess_fraction: 0.5,
            interval_days: 7,
            initial_infectious: 1.0,
            burn_in_days: crate::lifecycle::BURN_IN_DAYS,
        }
    }
}

impl PfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::invalid("need at least one particle"));
        }
        let [c0, c1] = self.c_prior;
        let [n0, n1] = self.nb_prior;
        if !(c0 > 0.0 && c1 >= c0 && n0 > 0.0 && n1 >= n0) {
            return Err(Error::invalid("priors need 0 < low <= high"));
        }
        if !(self.c_step >= 0.0 && self.nb_step >= 0.0) {
            return Err(Error::invalid("proposal scales must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.ess_fraction) {
            return Err(Error::invalid("ess_fraction must be in [0, 1]"));
        }
        if self.interval_days == 0 {
            return Err(Error::invalid("interval_days must be >= 1"));
        }
        if !(self.initial_infectious >= 0.0) {
            return Err(Error::invalid("initial_infectious must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Particle {
    pub state: TransmissionState,
    /// Carrying capacity per human.
    pub c: f64,
    pub n_bites: f64,
    pub log_weight: f64,
    pub ancestor: usize,
}

/// Per-particle record of one filter step.
#[derive(Debug, Clone, Default)]
pub struct Generation {
    pub c: Vec<f64>,
    pub n_bites: Vec<f64>,
    pub predicted: Vec<f64>,
    pub adults: Vec<f64>,
    /// Normalized weights after the observation update.
    pub weights: Vec<f64>,
    /// Index into the previous generation.
    pub ancestors: Vec<usize>,
    pub ess: f64,
    pub resampled: bool,
}

/// Observed counts per reporting interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSeries {
    pub location: String,
    pub week_starts: Vec<NaiveDate>,
    pub counts: Vec<u64>,
}

impl CaseSeries {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

pub const CASES_HEADER: [&str; 3] = ["location", "week_start", "cases"];

/// Reads `location,week_start,cases`. With several locations present,
/// `location` selects one.
pub fn load_cases(path: &Path, location: Option<&str>) -> Result<CaseSeries> {
    let mut rdr = crate::forcing::csv_reader(path)?;
    crate::forcing::check_header(&mut rdr, path, &CASES_HEADER)?;
    let mut out: Option<CaseSeries> = None;
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let parse = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let rec = rec.map_err(|e| parse(e.to_string()))?;
        if rec.len() != 3 {
            return Err(parse(format!("expected 3 fields, found {}", rec.len())));
        }
        let loc = rec[0].trim();
        if location.is_some_and(|l| l != loc) {
            continue;
        }
        let date = crate::forcing::parse_date(rec[1].trim()).map_err(parse)?;
        let cases: u64 = rec[2].trim().parse().map_err(|_| {
            parse(format!(
                "cases must be a nonnegative integer, got {:?}",
                &rec[2]
            ))
        })?;
        let series = out.get_or_insert_with(|| CaseSeries {
            location: loc.to_string(),
            week_starts: Vec::new(),
            counts: Vec::new(),
        });
        if series.location != loc {
            return Err(Error::Format(format!(
                "{}: several locations present; select one",
                path.display()
            )));
        }
        if let Some(prev) = series.week_starts.last() {
            if date <= *prev {
                return Err(Error::Format(format!(
                    "{}: line {line}: week starts must be ascending",
                    path.display()
                )));
            }
        }
        series.week_starts.push(date);
        series.counts.push(cases);
    }
    out.ok_or_else(|| Error::Format(format!("{}: no case rows", path.display())))
}

pub fn write_cases(path: &Path, cases: &CaseSeries) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", CASES_HEADER.join(",")).map_err(io)?;
    for (d, c) in cases.week_starts.iter().zip(&cases.counts) {
        writeln!(w, "{},{d},{c}", cases.location).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Everything fixed across particles.
pub struct PfModel<'a> {
    pub lifecycle: &'a LifecycleParams,
    pub epi: EpiParams,
    pub climate: &'a ClimateSeries,
    pub config: PfConfig,
    daily: Vec<DailyRates>,
    /// Mosquito state at day 0 for a capacity of one larva per human.
    template: LifecycleState,
}

impl<'a> PfModel<'a> {
    pub fn new(
        lifecycle: &'a LifecycleParams,
        epi: EpiParams,
        climate: &'a ClimateSeries,
        config: PfConfig,
    ) -> Result<Self> {
        config.validate()?;
        lifecycle.validate()?;
        epi.validate(lifecycle.j)?;
        let unit = LifecycleParams {
            capacity: CapacitySource::Constant(epi.n_humans),
            ..lifecycle.clone()
        };
        let seed = LifecycleState::with_eggs(lifecycle.j, 10.0);
        let template = if config.burn_in_days > 0 {
            burn_in(&unit, climate, config.burn_in_days, &seed)?
        } else {
            seed
        };
        let daily = climate
            .tavg()
            .iter()
            .map(|t| lifecycle.rates.at(*t))
            .collect();
        Ok(Self {
            lifecycle,
            epi,
            climate,
            config,
            daily,
            template,
        })
    }

    /// Mosquito dynamics are linear in capacity, so the template scales exactly.
    pub fn initial_state(&self, c: f64) -> Result<TransmissionState> {
        let mut s = TransmissionState::disease_free(&self.template.scaled(c), self.epi.n_humans);
        s.seed_infectious(self.config.initial_infectious.min(self.epi.n_humans))?;
        Ok(s)
    }

    /// Advances `state` over interval `step` with fixed `c` and `n_bites`.
    /// Returns the new cases (He to Hi transitions) in the interval.
    pub fn propagate(
        &self,
        state: &mut TransmissionState,
        c: f64,
        n_bites: f64,
        step: usize,
        ws: &mut Rk4,
    ) -> Result<f64> {
        let epi = EpiParams {
            n_bites,
            ..self.epi
        };
        let capacity = c * self.epi.n_humans;
        let before = state.cumulative_incidence();
        let first = step * self.config.interval_days;
        for day in first..first + self.config.interval_days {
            advance_day(
                ws,
                self.lifecycle,
                &epi,
                &self.daily[day],
                capacity,
                state,
                day,
            )?;
        }
        Ok(state.cumulative_incidence() - before)
    }

    /// Synthetic weekly observations: the model at fixed `c` (per step) and
    /// `n_bites`, with Poisson noise.
    pub fn generate(&self, c: &[f64], n_bites: f64, seed: u64) -> Result<(Vec<f64>, Vec<u64>)> {
        let steps = c.len();
        self.check_horizon(steps)?;
        let mut state = self.initial_state(c[0])?;
        let mut ws = Rk4::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut expected = Vec::with_capacity(steps);
        let mut counts = Vec::with_capacity(steps);
        for (k, ck) in c.iter().enumerate() {
            let m = self.propagate(&mut state, *ck, n_bites, k, &mut ws)?;
            expected.push(m);
            counts.push(if m > 0.0 {
                rand_distr::Poisson::new(m)
                    .map_err(|e| Error::Integration(e.to_string()))?
                    .sample(&mut rng) as u64
            } else {
                0
            });
        }
        Ok((expected, counts))
    }

    fn check_horizon(&self, steps: usize) -> Result<()> {
        let need = steps * self.config.interval_days;
        if need > self.climate.len() {
            return Err(Error::invalid(format!(
                "{steps} reporting intervals need {need} days of climate, have {}",
                self.climate.len()
            )));
        }
        Ok(())
    }

    /// Runs the forward filter over `observed`.
    pub fn run(&self, observed: &[u64], seed: u64) -> Result<PfResult> {
        self.check_horizon(observed.len())?;
        let cfg = &self.config;
        let n = cfg.particles;
        let mut rng0 = stream(seed, u64::MAX, u64::MAX);
        let [c0, c1] = cfg.c_prior;
        let [n0, n1] = cfg.nb_prior;
        let mut particles: Vec<Particle> = (0..n)
            .map(|i| {
                let c = (c0.ln() + (c1.ln() - c0.ln()) * rng0.random::<f64>()).exp();
                let nb = n0 + (n1 - n0) * rng0.random::<f64>();
                Ok(Particle {
                    state: self.initial_state(c)?,
                    c,
                    n_bites: nb,
                    log_weight: -(n as f64).ln(),
                    ancestor: i,
                })
            })
            .collect::<Result<_>>()?;

        let mut generations = Vec::with_capacity(observed.len());
        for (step, &obs) in observed.iter().enumerate() {
            let outcomes: Vec<Result<(f64, f64)>> = particles
                .par_iter_mut()
                .enumerate()
                .map(|(i, p)| {
                    let mut rng = stream(seed, i as u64, step as u64);
                    p.c = truncated_normal(&mut rng, p.c, cfg.c_step * p.c, POSITIVE);
                    p.n_bites =
                        truncated_normal(&mut rng, p.n_bites, cfg.nb_step * p.n_bites, POSITIVE);
                    if p.log_weight == f64::NEG_INFINITY {
                        return Ok((0.0, f64::NEG_INFINITY));
                    }
                    let mut ws = Rk4::default();
                    match self.propagate(&mut p.state, p.c, p.n_bites, step, &mut ws) {
                        Ok(pred) => {
                            let ll = observation_likelihood(pred, obs);
                            p.log_weight += ll;
                            Ok((pred, ll))
                        }
                        Err(e) if e.is_numeric() => {
                            log::debug!("pf step {step}: particle {i} dropped: {e}");
                            p.log_weight = f64::NEG_INFINITY;
                            Ok((0.0, f64::NEG_INFINITY))
                        }
                        Err(e) => Err(e),
                    }
                })
                .collect();
            let mut predicted = Vec::with_capacity(n);
            let mut max_ll = f64::NEG_INFINITY;
            for o in outcomes {
                let (pred, ll) = o?;
                predicted.push(pred);
                max_ll = max_ll.max(ll);
            }
            let weights = normalize(&mut particles).ok_or(Error::DegenerateFilter {
                step,
                max_log_lik: max_ll,
            })?;
            let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
            let mut generation = Generation {
                c: particles.iter().map(|p| p.c).collect(),
                n_bites: particles.iter().map(|p| p.n_bites).collect(),
                predicted,
                adults: particles.iter().map(|p| p.state.total_adults()).collect(),
                weights: weights.clone(),
                ancestors: particles.iter().map(|p| p.ancestor).collect(),
                ess,
                resampled: false,
            };
            if ess < cfg.ess_fraction * n as f64 {
                let mut rng = stream(seed, u64::MAX - 1, step as u64);
                let idx = systematic_resample(&weights, rng.random::<f64>());
                let lw = -(n as f64).ln();
                particles = idx
                    .iter()
                    .map(|&a| Particle {
                        log_weight: lw,
                        ancestor: a,
                        ..particles[a].clone()
                    })
                    .collect();
                generation.resampled = true;
            } else {
                for (i, p) in particles.iter_mut().enumerate() {
                    p.ancestor = i;
                }
            }
            log::debug!(
                "pf step {step}: obs {obs}, ess {ess:.1}, resampled {}",
                generation.resampled
            );
            generations.push(generation);
        }
        Ok(PfResult {
            generations,
            observed: observed.to_vec(),
        })
    }
}

/// Independent stream for (master seed, particle, step).
fn stream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut x = splitmix(seed ^ splitmix(a.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    x = splitmix(x ^ splitmix(b.wrapping_add(0xD1B5_4A32_D192_ED03)));
    ChaCha8Rng::seed_from_u64(x)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const POSITIVE: [f64; 2] = [f64::MIN_POSITIVE, f64::INFINITY];

/// Normal(mean, sd) conditioned on `[lo, hi]`, which must contain `mean`.
/// A zero `sd` returns `mean`.
pub fn truncated_normal(rng: &mut impl Rng, mean: f64, sd: f64, [lo, hi]: [f64; 2]) -> f64 {
    if !(sd > 0.0) {
        return mean;
    }
    let dist = Normal::new(mean, sd).expect("sd is positive and finite");
    loop {
        let x = dist.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
}

/// Normalizes log-weights in place; returns linear weights or `None` when
/// no particle has a finite weight.
fn normalize(particles: &mut [Particle]) -> Option<Vec<f64>> {
    let max = particles
        .iter()
        .map(|p| p.log_weight)
        .filter(|w| w.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let sum: f64 = particles.iter().map(|p| (p.log_weight - max).exp()).sum();
    let log_norm = max + sum.ln();
    let weights: Vec<f64> = particles
        .iter_mut()
        .map(|p| {
            p.log_weight -= log_norm;
            p.log_weight.exp()
        })
        .collect();
    Some(weights)
}

/// Systematic resampling with offset `u` in [0, 1).
pub fn systematic_resample(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..n {
        let target = (i as f64 + u) / n as f64;
        while cum < target && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

/// Weighted summary of one quantity at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub mean: f64,
    pub p05: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

impl Marginal {
    pub fn of(values: &[f64], weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let q = |p: f64| {
            let mut cum = 0.0;
            for &i in &order {
                cum += weights[i] / total;
                if cum >= p {
                    return values[i];
                }
            }
            values[*order.last().expect("nonempty")]
        };
        Self {
            mean,
            p05: q(0.05),
            p25: q(0.25),
            p50: q(0.5),
            p75: q(0.75),
            p95: q(0.95),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSummary {
    pub c: Marginal,
    pub n_bites: Marginal,
    pub cases: Marginal,
    pub adults: Marginal,
}

#[derive(Debug, Clone)]
pub struct PfResult {
    /// `generations[k].ancestors[i]` indexes generation `k - 1`.
    pub generations: Vec<Generation>,
    pub observed: Vec<u64>,
}

impl PfResult {
    fn summary(&self, k: usize, w: &[f64]) -> StepSummary {
        let g = &self.generations[k];
        StepSummary {
            c: Marginal::of(&g.c, w),
            n_bites: Marginal::of(&g.n_bites, w),
            cases: Marginal::of(&g.predicted, w),
            adults: Marginal::of(&g.adults, w),
        }
    }

    pub fn filtered(&self) -> Vec<StepSummary> {
        (0..self.generations.len())
            .map(|k| self.summary(k, &self.generations[k].weights))
            .collect()
    }

    /// Final-step weights pushed back through the genealogy: the weight of
    /// particle `j` at step `k` is the total final weight of its descendants.
    pub fn smoothing_weights(&self) -> Result<Vec<Vec<f64>>> {
        let last = self
            .generations
            .last()
            .ok_or_else(|| Error::InvalidState("no stored filter generations".into()))?;
        let mut out = vec![last.weights.clone()];
        for k in (1..self.generations.len()).rev() {
            let g = &self.generations[k];
            let prev_n = self.generations[k - 1].weights.len();
            let mut w = vec![0.0; prev_n];
            for (i, a) in g.ancestors.iter().enumerate() {
                if *a >= prev_n {
                    return Err(Error::InvalidState(format!(
                        "ancestor {a} out of range at step {k}"
                    )));
                }
                w[*a] += out.last().expect("nonempty")[i];
            }
            out.push(w);
        }
        out.reverse();
        Ok(out)
    }

    pub fn smoothed(&self) -> Result<Vec<StepSummary>> {
        let w = self.smoothing_weights()?;
        Ok((0..self.generations.len())
            .map(|k| self.summary(k, &w[k]))
            .collect())
    }

    /// Draws `m` joint trajectories by sampling final particles and tracing
    /// ancestors. Each path lists particle indices per step.
    pub fn sample_paths(&self, m: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        let last = self
            .generations
            .last()
            .ok_or_else(|| Error::InvalidState("no stored filter generations".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = systematic_resample(&last.weights, rng.random::<f64>());
        let k_last = self.generations.len() - 1;
        Ok((0..m)
            .map(|s| {
                let mut i = picks[(s * picks.len()) / m.max(1) % picks.len()];
                let mut path = vec![0; k_last + 1];
                for k in (0..=k_last).rev() {
                    path[k] = i;
                    if k > 0 {
                        i = self.generations[k].ancestors[i];
                    }
                }
                path
            })
            .collect())
    }

    /// `week_start,observed,` then mean/p05/p95 of C, n_B and cases.
    pub fn write_posterior_csv(&self, path: &Path, week_starts: &[NaiveDate]) -> Result<()> {
        let rows = self.smoothed()?;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(
            w,
            "week_start,observed,c_mean,c_p05,c_p95,nb_mean,nb_p05,nb_p95,cases_mean,cases_p05,cases_p95"
        )
        .map_err(io)?;
        for (k, r) in rows.iter().enumerate() {
            let date = week_starts
                .get(k)
                .map(|d| d.to_string())
                .unwrap_or_default();
            writeln!(
                w,
                "{date},{},{},{},{},{},{},{},{},{},{}",
                self.observed[k],
                r.c.mean,
                r.c.p05,
                r.c.p95,
                r.n_bites.mean,
                r.n_bites.p05,
                r.n_bites.p95,
                r.cases.mean,
                r.cases.p05,
                r.cases.p95
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn likelihood_floor_and_mode() {
        assert!((observation_likelihood(0.0, 0) + 0.1).abs() < 1e-12);
        let at = |k| observation_likelihood(5.0, k);
        assert!(at(5) >= at(6) && at(4) >= at(3) && at(5) > at(7));
        let total: f64 = (0..200)
            .map(|k| observation_likelihood(37.5, k).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn systematic_resampling_counts() {
        let idx = systematic_resample(&[0.5, 0.25, 0.25, 0.0], 0.3);
        assert_eq!(idx, vec![0, 0, 1, 2]);
        let idx = systematic_resample(&[0.25; 4], 0.99);
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn truncated_normal_stays_in_bounds_and_zero_sd_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..10_000).all(|_| (0.1..=0.5).contains(&truncated_normal(
            &mut rng,
            0.2,
            1.0,
            [0.1, 0.5]
        ))));
        assert_eq!(truncated_normal(&mut rng, 1.7, 0.0, [0.0, 2.0]), 1.7);
    }

    #[test]
    fn weighted_marginal() {
        let m = Marginal::of(&[1.0, 2.0, 3.0], &[0.2, 0.3, 0.5]);
        assert!((m.mean - 2.3).abs() < 1e-12);
        assert_eq!(m.p50, 2.0);
        assert_eq!(m.p95, 3.0);
    }

    #[test]
    fn smoothing_weights_follow_genealogy() {
        let g = |w: Vec<f64>, a: Vec<usize>| Generation {
            c: vec![1.0; w.len()],
            n_bites: vec![1.0; w.len()],
            predicted: vec![0.0; w.len()],
            adults: vec![0.0; w.len()],
            weights: w,
            ancestors: a,
            ess: 0.0,
            resampled: true,
        };
        let r = PfResult {
            generations: vec![g(vec![0.5, 0.5], vec![0, 1]), g(vec![0.1, 0.9], vec![1, 1])],
            observed: vec![0, 0],
        };
        let w = r.smoothing_weights().unwrap();
        assert_eq!(w[1], vec![0.1, 0.9]);
        assert_eq!(w[0], vec![0.0, 1.0]);
        let empty = PfResult {
            generations: vec![],
            observed: vec![],
        };
        assert!(matches!(
            empty.smoothing_weights(),
            Err(Error::InvalidState(_))
        ));
    }
}
