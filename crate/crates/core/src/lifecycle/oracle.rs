//! Direct quadrature of the renewal (integral-equation) form of the life
//! cycle, independent of the substate ODEs.
//!
//! Each stage population is its initial cohort surviving to `t` plus the
//! history of inflows surviving to `t`:
//!
//! ```text
//! x(t) = x0 S(D(0,t)) e^{-M(0,t)} + int_0^t in(u) S(D(u,t)) e^{-M(u,t)} du
//! out(t) = gamma(t) [ x0 f(D(0,t)) e^{-M(0,t)} + int_0^t in(u) f(D(u,t)) e^{-M(u,t)} du ]
//! ```
//!
//! with `D` the accumulated development, `M` the accumulated mortality and
//! `S`, `f` the survival and density of the sojourn law. Initial individuals
//! are taken as freshly entered (zero development). Rates are piecewise
//! constant by day, so the quadrature grid is aligned with day boundaries and
//! inflows are stored with separate left and right limits there.

use super::{hatch_factor, LifecycleParams, StageTotals, FEMALE_FRACTION};
use crate::error::{Error, Result};
use crate::forcing::{ClimateSeries, DailyRates};
use crate::phasetype::PhaseTypeDist;

/// Upper bound on quadrature grid points.
pub const MAX_ORACLE_POINTS: usize = 50_000;

const MORTALITY_CUTOFF: f64 = 40.0;
const KERNEL_EPS: f64 = 1e-16;

struct Stage {
    x0: f64,
    /// Accumulated development and mortality at each grid point.
    dev: Vec<f64>,
    mort: Vec<f64>,
    /// Trapezoid weight times inflow at each completed grid point.
    coef: Vec<f64>,
}

/// History sums at grid point `n`, excluding the `m = n` end point.
struct History {
    count: f64,
    kernel: f64,
}

impl Stage {
    fn history(&self, n: usize, dist: &PhaseTypeDist, cutoff: f64) -> History {
        let (gn, mn) = (self.dev[n], self.mort[n]);
        let mut count = 0.0;
        let mut kernel = 0.0;
        for m in (0..n).rev() {
            let d = gn - self.dev[m];
            let mo = mn - self.mort[m];
            if d > cutoff || mo > MORTALITY_CUTOFF {
                break;
            }
            let (s, f) = dist.eval(d);
            let w = self.coef[m] * (-mo).exp();
            count += w * s;
            kernel += w * f;
        }
        if self.x0 > 0.0 {
            let d = gn;
            let mo = mn;
            if d <= cutoff && mo <= MORTALITY_CUTOFF {
                let (s, f) = dist.eval(d);
                let w = self.x0 * (-mo).exp();
                count += w * s;
                kernel += w * f;
            }
        }
        History { count, kernel }
    }
}

/// Inflows at one grid point for the four stages: eggs, hatching, pupation,
/// adult entries (female emergence plus recycling).
#[derive(Clone, Copy, Default)]
struct Inflows {
    e: f64,
    l: f64,
    p: f64,
    a: f64,
}

/// Evaluates the integral form on a grid of step `quad_dt` and returns daily
/// stage totals for days `0..=horizon`.
pub fn integral_oracle(
    params: &LifecycleParams,
    climate: &ClimateSeries,
    init: &StageTotals,
    horizon: usize,
    quad_dt: f64,
) -> Result<Vec<StageTotals>> {
    params.validate()?;
    if !(quad_dt > 0.0 && quad_dt <= 0.05) {
        return Err(Error::invalid(format!(
            "quad_dt {quad_dt} must be in (0, 0.05]"
        )));
    }
    let per_day = (1.0 / quad_dt).round();
    if (per_day * quad_dt - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "quad_dt {quad_dt} must divide one day evenly"
        )));
    }
    let per_day = per_day as usize;
    if horizon > climate.len() {
        return Err(Error::invalid("horizon exceeds the climate series"));
    }
    if init
        .as_array()
        .iter()
        .any(|v| !(v.is_finite() && *v >= 0.0))
    {
        return Err(Error::invalid(
            "initial stage totals must be finite and >= 0",
        ));
    }
    let n_total = horizon * per_day;
    if n_total + 1 > MAX_ORACLE_POINTS {
        return Err(Error::Infeasible(format!(
            "{} quadrature points exceed the limit of {MAX_ORACLE_POINTS}; shorten the horizon or enlarge quad_dt",
            n_total + 1
        )));
    }

    let h = quad_dt;
    let dist = PhaseTypeDist::erlang(params.j)?;
    let cutoff = dist.negligible_beyond(KERNEL_EPS);
    let f0 = dist.eval(0.0).1;
    let capacity = params.capacity.daily(climate);
    let days: Vec<DailyRates> = (0..climate.len().max(1))
        .map(|d| params.rates.at(climate.tavg()[d.min(climate.len() - 1)]))
        .collect();
    let day_of = |i: usize| (i / per_day).min(days.len() - 1);

    let mk = |x0: f64| Stage {
        x0,
        dev: vec![0.0; n_total + 1],
        mort: vec![0.0; n_total + 1],
        coef: vec![0.0; n_total + 1],
    };
    let mut eggs = mk(init.eggs);
    let mut larvae = mk(init.larvae);
    let mut pupae = mk(init.pupae);
    let mut adults = mk(init.adults);
    for i in 0..n_total {
        let r = &days[day_of(i)];
        let acc = |s: &mut Stage, g: f64, mu: f64| {
            s.dev[i + 1] = s.dev[i] + h * g;
            s.mort[i + 1] = s.mort[i] + h * mu;
        };
        acc(&mut eggs, r.egg_to_larva, r.egg_mortality);
        acc(&mut larvae, r.larva_to_pupa, r.larva_mortality);
        acc(&mut pupae, r.pupa_to_adult, r.pupa_mortality);
        acc(&mut adults, r.gonotrophic, r.adult_mortality);
    }

    let mut out = Vec::with_capacity(horizon + 1);
    out.push(*init);

    // Right limits at t = 0: kernels are x0 f(0).
    let r0 = &days[0];
    let right0 = right_inflows(
        r0,
        capacity[0],
        init.larvae,
        [
            init.eggs * f0,
            init.larvae * f0,
            init.pupae * f0,
            init.adults * f0,
        ],
    );
    set_coef(
        &mut eggs,
        &mut larvae,
        &mut pupae,
        &mut adults,
        0,
        Inflows::default(),
        right0,
        h,
    );

    for n in 1..=n_total {
        let he = eggs.history(n, &dist, cutoff);
        let hl = larvae.history(n, &dist, cutoff);
        let hp = pupae.history(n, &dist, cutoff);
        let ha = adults.history(n, &dist, cutoff);
        let left_day = day_of(n - 1);
        let rl = &days[left_day];
        let cl = capacity[left_day];
        let half = 0.5 * h;

        // Left limits: solve the end-point coupling by fixed-point iteration
        // on the adult recycling flux (exact in one pass when f(0) = 0).
        let mut aa = rl.gonotrophic * ha.kernel;
        let mut left = Inflows::default();
        let mut kernels = [0.0; 4];
        for _ in 0..200 {
            let e_in = rl.oviposition * aa;
            let ke = he.kernel + half * f0 * e_in;
            let raw_hatch = rl.egg_to_larva * ke;
            let l_in = hatching_with_endpoint(raw_hatch, hl.count, cl, half);
            let kl = hl.kernel + half * f0 * l_in;
            let p_in = rl.larva_to_pupa * kl;
            let kp = hp.kernel + half * f0 * p_in;
            let emerge = rl.pupa_to_adult * kp;
            let a_in = FEMALE_FRACTION * emerge + aa;
            let ka = ha.kernel + half * f0 * a_in;
            let next = rl.gonotrophic * ka;
            left = Inflows {
                e: e_in,
                l: l_in,
                p: p_in,
                a: a_in,
            };
            kernels = [ke, kl, kp, ka];
            let done = (next - aa).abs() <= 1e-14 * next.abs().max(1e-300);
            aa = next;
            if f0 == 0.0 || done {
                break;
            }
        }

        let counts = [
            he.count + half * left.e,
            hl.count + half * left.l,
            hp.count + half * left.p,
            ha.count + half * left.a,
        ];
        if n % per_day == 0 {
            out.push(StageTotals {
                eggs: counts[0],
                larvae: counts[1],
                pupae: counts[2],
                adults: counts[3],
            });
        }
        if n < n_total {
            let d = day_of(n);
            let right = right_inflows(&days[d], capacity[d], counts[1], kernels);
            set_coef(
                &mut eggs,
                &mut larvae,
                &mut pupae,
                &mut adults,
                n,
                left,
                right,
                h,
            );
        }
    }
    if out
        .iter()
        .any(|s| s.as_array().iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Integration(
            "oracle produced non-finite values".into(),
        ));
    }
    Ok(out)
}

/// Hatching at a grid point where the larval count itself includes this
/// hatching through the trapezoid end weight: `x = a * raw` with
/// `a = max(0, 1 - (hist + w x) / C)`.
/// Largest per-stage deviation between two daily series, relative to the
/// peak of `reference` for that stage (absolute when the peak is zero).
pub fn peak_relative_error(reference: &[StageTotals], other: &[StageTotals]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (k, o) in out.iter_mut().enumerate() {
        let peak = reference
            .iter()
            .map(|s| s.as_array()[k])
            .fold(0.0, f64::max);
        let dev = reference
            .iter()
            .zip(other)
            .map(|(a, b)| (a.as_array()[k] - b.as_array()[k]).abs())
            .fold(0.0, f64::max);
        *o = if peak > 0.0 { dev / peak } else { dev };
    }
    out
}

fn hatching_with_endpoint(raw: f64, hist_larvae: f64, capacity: f64, w: f64) -> f64 {
    if capacity.is_infinite() {
        return raw;
    }
    if capacity <= 0.0 || raw <= 0.0 {
        return 0.0;
    }
    let a = 1.0 - hist_larvae / capacity;
    if a <= 0.0 {
        return 0.0;
    }
    a * raw / (1.0 + w * raw / capacity)
}

/// Right limits at a grid point given the (continuous) kernels and larval count.
fn right_inflows(r: &DailyRates, capacity: f64, larvae: f64, kernels: [f64; 4]) -> Inflows {
    let [ke, kl, kp, ka] = kernels;
    let aa = r.gonotrophic * ka;
    Inflows {
        e: r.oviposition * aa,
        l: hatch_factor(larvae, capacity) * r.egg_to_larva * ke,
        p: r.larva_to_pupa * kl,
        a: FEMALE_FRACTION * r.pupa_to_adult * kp + aa,
    }
}

#[allow(clippy::too_many_arguments)]
fn set_coef(
    e: &mut Stage,
    l: &mut Stage,
    p: &mut Stage,
    a: &mut Stage,
    n: usize,
    left: Inflows,
    right: Inflows,
    h: f64,
) {
    let half = 0.5 * h;
    e.coef[n] = half * (left.e + right.e);
    l.coef[n] = half * (left.l + right.l);
    p.coef[n] = half * (left.p + right.p);
    a.coef[n] = half * (left.a + right.a);
}
