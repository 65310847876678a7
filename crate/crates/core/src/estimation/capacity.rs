//! Inverse-Gaussian regression of carrying capacity on precipitation,
//! sampled with Metropolis-within-Gibbs.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::{inverse_gaussian_ln_pdf, CapacityModel};
use crate::phasetype::solve_dense;

pub const PARAM_NAMES: [&str; 11] = [
    "a0", "a1", "a2", "alpha1", "alpha2", "b0", "b1", "b2", "beta1", "beta2", "p0",
];

/// Split-R-hat above this triggers a convergence warning.
pub const RHAT_LIMIT: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapacityFitConfig {
    pub chains: usize,
    pub iterations: usize,
    /// Leading iterations discarded; step sizes adapt only during these.
    pub burn_in: usize,
    /// Precipitation bin width (m) used for initialization and summaries.
    pub bin_width: f64,
}

impl Default for CapacityFitConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            iterations: 6000,
            burn_in: 3000,
            bin_width: 0.002,
        }
    }
}

impl CapacityFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.iterations <= self.burn_in + 1 {
            return Err(Error::invalid(
                "need chains >= 1 and iterations > burn_in + 1",
            ));
        }
        if !(self.bin_width > 0.0) {
            return Err(Error::invalid("bin_width must be > 0"));
        }
        Ok(())
    }
}

/// Sampler coordinates: curve values at knots instead of polynomial
/// coefficients, which are far less correlated.
///
/// `[mu(0), mu(p0/2), mu(p0), alpha1 * s, mu(p_max) - mu(p0), lambda(0),
/// lambda(p0/2), lambda(p0), lambda(u) - lambda(p0), lambda(p_max) - lambda(p0),
/// p0 / s]` with `u` midway between `p0` and `p_max` and `s = p_max`.
#[derive(Debug, Clone, Copy)]
struct Coords {
    p_max: f64,
}

impl Coords {
    fn to_model(&self, x: &[f64; 11]) -> CapacityModel {
        let s = self.p_max;
        let p0 = x[10] * s;
        let q = 0.5 * p0;
        let quad = |v0: f64, v1: f64, v2: f64| {
            (
                v0,
                (-3.0 * v0 + 4.0 * v1 - v2) / (2.0 * q),
                (v0 - 2.0 * v1 + v2) / (2.0 * q * q),
            )
        };
        let (a0, a1, a2) = quad(x[0], x[1], x[2]);
        let (b0, b1, b2) = quad(x[5], x[6], x[7]);
        let alpha1 = x[3] / s;
        let alpha2 = x[4] / ((-alpha1 * s).exp() - (-alpha1 * p0).exp());
        let (u1, u2) = (0.5 * (p0 + s), s);
        let g1 = x[8] / (u1 - p0);
        let g2 = x[9] / (u2 - p0);
        let beta2 = (g2 - g1) / (u2 - u1);
        let beta1 = g1 - beta2 * (u1 + p0);
        CapacityModel {
            a0,
            a1,
            a2,
            alpha1,
            alpha2,
            b0,
            b1,
            b2,
            beta1,
            beta2,
            p0,
            p_max: s,
        }
    }

    fn from_model(&self, m: &CapacityModel) -> [f64; 11] {
        let s = self.p_max;
        let p0 = m.p0;
        let lam_p0 = m.lambda(p0);
        [
            m.a0,
            m.a0 + m.a1 * 0.5 * p0 + m.a2 * 0.25 * p0 * p0,
            m.mu(p0),
            m.alpha1 * s,
            m.mu(s) - m.mu(p0),
            m.b0,
            m.b0 + m.b1 * 0.5 * p0 + m.b2 * 0.25 * p0 * p0,
            lam_p0,
            m.lambda(0.5 * (p0 + s)) - lam_p0,
            m.lambda(s) - lam_p0,
            p0 / s,
        ]
    }
}

struct Target<'a> {
    pairs: &'a [(f64, f64)],
    coords: Coords,
    p_lo: f64,
    p_hi: f64,
}

impl Target<'_> {
    fn log_post(&self, x: &[f64; 11]) -> f64 {
        let m = self.coords.to_model(x);
        if !(m.alpha1 > 0.0)
            || !(m.p0 > self.p_lo && m.p0 < self.p_hi)
            || !m.alpha2.is_finite()
            || !m.positive_on_range()
        {
            return f64::NEG_INFINITY;
        }
        let a0 = m.alpha0();
        let b0 = m.beta0();
        self.pairs
            .iter()
            .map(|&(p, c)| {
                let (mu, lambda) = if p < m.p0 {
                    (m.a0 + p * (m.a1 + p * m.a2), m.b0 + p * (m.b1 + p * m.b2))
                } else {
                    (
                        a0 + m.alpha2 * (-m.alpha1 * p).exp(),
                        b0 + p * (m.beta1 + p * m.beta2),
                    )
                };
                inverse_gaussian_ln_pdf(c, mu, lambda)
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct CapacityFit {
    /// Retained draws from all chains, chain by chain.
    pub draws: Vec<CapacityModel>,
    pub chains: usize,
    /// Split-R-hat per parameter, in `PARAM_NAMES` order.
    pub rhat: Vec<f64>,
    pub converged: bool,
    /// Post-burn-in acceptance rate per parameter, averaged over chains.
    pub acceptance: Vec<f64>,
    pub initial: CapacityModel,
}

/// Pointwise posterior summary of `mu(p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub p: f64,
    pub mean: f64,
    pub p25: f64,
    pub p75: f64,
}

impl CapacityFit {
    /// Model with every free parameter at its posterior mean (offsets stay
    /// tied by continuity).
    pub fn posterior_mean_model(&self) -> CapacityModel {
        let n = self.draws.len() as f64;
        let mut acc = [0.0; 11];
        for d in &self.draws {
            for (a, v) in acc.iter_mut().zip(params_of(d)) {
                *a += v / n;
            }
        }
        model_of(&acc, self.draws[0].p_max)
    }

    pub fn mu_curve(&self, ps: &[f64]) -> Vec<CurvePoint> {
        ps.iter()
            .map(|&p| {
                let mut v: Vec<f64> = self.draws.iter().map(|d| d.mu(p)).collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                v.sort_by(f64::total_cmp);
                let q = |f: f64| v[((v.len() - 1) as f64 * f).round() as usize];
                CurvePoint {
                    p,
                    mean,
                    p25: q(0.25),
                    p75: q(0.75),
                }
            })
            .collect()
    }

    pub fn write_curve_csv(&self, path: &Path, ps: &[f64]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "precip_m,mu_mean,mu_p25,mu_p75").map_err(io)?;
        for c in self.mu_curve(ps) {
            writeln!(w, "{},{},{},{}", c.p, c.mean, c.p25, c.p75).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn params_of(m: &CapacityModel) -> [f64; 11] {
    [
        m.a0, m.a1, m.a2, m.alpha1, m.alpha2, m.b0, m.b1, m.b2, m.beta1, m.beta2, m.p0,
    ]
}

fn model_of(x: &[f64; 11], p_max: f64) -> CapacityModel {
    CapacityModel {
        a0: x[0],
        a1: x[1],
        a2: x[2],
        alpha1: x[3],
        alpha2: x[4],
        b0: x[5],
        b1: x[6],
        b2: x[7],
        beta1: x[8],
        beta2: x[9],
        p0: x[10],
        p_max,
    }
}

/// Fits the piecewise inverse-Gaussian capacity model to `(precip, capacity)` pairs.
pub fn fit_capacity_ig(
    pairs: &[(f64, f64)],
    cfg: &CapacityFitConfig,
    seed: u64,
) -> Result<CapacityFit> {
    cfg.validate()?;
    if pairs.len() < 100 {
        return Err(Error::invalid(format!(
            "need at least 100 pairs, got {}",
            pairs.len()
        )));
    }
    if pairs
        .iter()
        .any(|&(p, c)| !(p >= 0.0 && p.is_finite() && c > 0.0 && c.is_finite()))
    {
        return Err(Error::invalid(
            "pairs need precipitation >= 0 and capacity > 0",
        ));
    }
    let p_max = pairs.iter().map(|x| x.0).fold(0.0, f64::max);
    let p_lo = pairs.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
    if !(p_max > p_lo) {
        return Err(Error::invalid("precipitation values must span a range"));
    }
    let initial = initial_estimate(pairs, cfg.bin_width, p_max)?;
    let below = pairs.iter().filter(|x| x.0 < initial.p0).count();
    if below < 10 || pairs.len() - below < 10 {
        return Err(Error::invalid(
            "data must cover both sides of the precipitation threshold (>= 10 points each)",
        ));
    }
    let coords = Coords { p_max };
    let target = Target {
        pairs,
        coords,
        p_lo,
        p_hi: 0.98 * p_max,
    };
    let x0 = coords.from_model(&initial);
    if !target.log_post(&x0).is_finite() {
        return Err(Error::Infeasible(
            "initial capacity estimate has zero posterior density".into(),
        ));
    }

    let runs: Vec<(Vec<[f64; 11]>, [f64; 11])> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(&target, x0, cfg, seed, c as u64))
        .collect();

    let keep = cfg.iterations - cfg.burn_in;
    let mut draws = Vec::with_capacity(keep * cfg.chains);
    let mut per_chain: Vec<Vec<[f64; 11]>> = Vec::with_capacity(cfg.chains);
    let mut acceptance = [0.0; 11];
    for (chain, acc) in &runs {
        for (a, v) in acceptance.iter_mut().zip(acc) {
            *a += v / cfg.chains as f64;
        }
        per_chain.push(
            chain
                .iter()
                .map(|x| params_of(&coords.to_model(x)))
                .collect(),
        );
        draws.extend(chain.iter().map(|x| coords.to_model(x)));
    }
    let rhat: Vec<f64> = (0..11)
        .map(|k| {
            let series: Vec<Vec<f64>> = per_chain
                .iter()
                .map(|c| c.iter().map(|x| x[k]).collect())
                .collect();
            split_rhat(&series)
        })
        .collect();
    let converged = rhat.iter().all(|r| *r <= RHAT_LIMIT);
    if !converged {
        let detail: Vec<String> = PARAM_NAMES
            .iter()
            .zip(&rhat)
            .filter(|(_, r)| **r > RHAT_LIMIT)
            .map(|(n, r)| format!("{n}={r:.3}"))
            .collect();
        log::warn!(
            "capacity fit may not have converged: split-R-hat above {RHAT_LIMIT} for {}",
            detail.join(", ")
        );
    }
    Ok(CapacityFit {
        draws,
        chains: cfg.chains,
        rhat,
        converged,
        acceptance: acceptance.to_vec(),
        initial,
    })
}

fn run_chain(
    target: &Target,
    x0: [f64; 11],
    cfg: &CapacityFitConfig,
    seed: u64,
    chain: u64,
) -> (Vec<[f64; 11]>, [f64; 11]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ chain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    // Overdispersed start around the initial estimate.
    let mut x = x0;
    let mut lp = target.log_post(&x);
    for _ in 0..100 {
        let mut y = x0;
        for v in y.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v *= 1.0 + 0.02 * z;
        }
        let ly = target.log_post(&y);
        if ly.is_finite() {
            x = y;
            lp = ly;
            break;
        }
    }
    let mut step: [f64; 11] = std::array::from_fn(|k| 0.01 * x0[k].abs().max(1e-3));
    let mut accepted = [0usize; 11];
    let mut window = [0usize; 11];
    let mut kept = Vec::with_capacity(cfg.iterations - cfg.burn_in);
    for it in 0..cfg.iterations {
        for k in 0..11 {
            let mut y = x;
            let z: f64 = StandardNormal.sample(&mut rng);
            y[k] += step[k] * z;
            let ly = target.log_post(&y);
            if ly - lp >= rng.random::<f64>().ln() {
                x = y;
                lp = ly;
                if it >= cfg.burn_in {
                    accepted[k] += 1;
                } else {
                    window[k] += 1;
                }
            }
        }
        if it < cfg.burn_in && (it + 1) % 50 == 0 {
            for k in 0..11 {
                let rate = window[k] as f64 / 50.0;
                step[k] *= if rate > 0.44 { 1.25 } else { 0.8 };
                window[k] = 0;
            }
        }
        if it >= cfg.burn_in {
            kept.push(x);
        }
    }
    let keep = (cfg.iterations - cfg.burn_in) as f64;
    (kept, std::array::from_fn(|k| accepted[k] as f64 / keep))
}

/// Split-R-hat: each chain is halved and the potential scale reduction
/// computed over the halves.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        if h < 2 {
            return f64::NAN;
        }
        halves.push(&c[..h]);
        halves.push(&c[c.len() - h..]);
    }
    let n = halves[0].len() as f64;
    let m = halves.len() as f64;
    let means: Vec<f64> = halves.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var = (n - 1.0) / n * w + b / n;
    (var / w).sqrt()
}

struct Bin {
    center: f64,
    n: usize,
    mean: f64,
    var: f64,
}

fn bins(pairs: &[(f64, f64)], width: f64) -> Vec<Bin> {
    let nb = pairs
        .iter()
        .map(|x| (x.0 / width) as usize)
        .max()
        .unwrap_or(0)
        + 1;
    let mut sums = vec![(0usize, 0.0, 0.0); nb];
    for &(p, c) in pairs {
        let b = &mut sums[(p / width) as usize];
        b.0 += 1;
        b.1 += c;
        b.2 += c * c;
    }
    sums.iter()
        .enumerate()
        .filter(|(_, s)| s.0 >= 5)
        .map(|(i, s)| {
            let n = s.0 as f64;
            let mean = s.1 / n;
            Bin {
                center: (i as f64 + 0.5) * width,
                n: s.0,
                mean,
                var: ((s.2 - n * mean * mean) / (n - 1.0)).max(0.0),
            }
        })
        .collect()
}

/// Weighted least squares `y ~ sum_k beta_k f_k(x)`.
fn least_squares(rows: &[(Vec<f64>, f64, f64)]) -> Option<Vec<f64>> {
    let k = rows.first()?.0.len();
    let mut a = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    for (f, y, w) in rows {
        for i in 0..k {
            b[i] += w * f[i] * y;
            for j in 0..k {
                a[i * k + j] += w * f[i] * f[j];
            }
        }
    }
    solve_dense(a, b, k).filter(|x| x.iter().all(|v| v.is_finite()))
}

/// Least-squares and moment estimates used to start the chains.
fn initial_estimate(pairs: &[(f64, f64)], width: f64, p_max: f64) -> Result<CapacityModel> {
    let bins = bins(pairs, width);
    if bins.len() < 3 {
        return Err(Error::invalid(
            "too few populated precipitation bins to initialize the fit",
        ));
    }
    let peak = bins
        .iter()
        .max_by(|a, b| a.mean.total_cmp(&b.mean))
        .expect("nonempty");
    let p0 = peak.center.min(p_max * 0.9);
    let overall = pairs.iter().map(|x| x.1).sum::<f64>() / pairs.len() as f64;

    let low: Vec<_> = pairs
        .iter()
        .filter(|x| x.0 < p0)
        .map(|&(p, c)| (vec![1.0, p, p * p], c, 1.0))
        .collect();
    let (a0, a1, a2) = match least_squares(&low) {
        Some(v) if low.len() >= 3 => (v[0], v[1], v[2]),
        _ => (overall, 0.0, 0.0),
    };
    let mu_p0 = a0 + a1 * p0 + a2 * p0 * p0;
    let high: Vec<(f64, f64)> = pairs.iter().copied().filter(|x| x.0 >= p0).collect();
    let mut best = (f64::INFINITY, 1.0 / p_max, 0.0);
    for i in 0..=60 {
        let alpha1 = (0.1f64.ln() + (1000.0f64.ln() - 0.1f64.ln()) * i as f64 / 60.0).exp() / p_max;
        let e0 = (-alpha1 * p0).exp();
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for &(p, c) in &high {
            let x = (-alpha1 * p).exp() - e0;
            sxx += x * x;
            sxy += x * (c - mu_p0);
        }
        if sxx <= 0.0 {
            continue;
        }
        let alpha2 = sxy / sxx;
        let sse: f64 = high
            .iter()
            .map(|&(p, c)| (c - mu_p0 - alpha2 * ((-alpha1 * p).exp() - e0)).powi(2))
            .sum();
        if sse < best.0 {
            best = (sse, alpha1, alpha2);
        }
    }
    let (alpha1, alpha2) = (best.1, best.2);

    let lam = |b: &Bin| b.mean.powi(3) / b.var.max(1e-12 * b.mean * b.mean);
    let low_bins: Vec<_> = bins
        .iter()
        .filter(|b| b.center < p0)
        .map(|b| (vec![1.0, b.center, b.center * b.center], lam(b), b.n as f64))
        .collect();
    let lam_all = {
        let var =
            pairs.iter().map(|x| (x.1 - overall).powi(2)).sum::<f64>() / (pairs.len() - 1) as f64;
        overall.powi(3) / var.max(1e-12)
    };
    let (b0, b1, b2) = match least_squares(&low_bins) {
        Some(v) if low_bins.len() >= 3 => (v[0], v[1], v[2]),
        _ => (lam_all, 0.0, 0.0),
    };
    let lam_p0 = b0 + b1 * p0 + b2 * p0 * p0;
    let high_bins: Vec<_> = bins
        .iter()
        .filter(|b| b.center >= p0)
        .map(|b| {
            (
                vec![b.center - p0, b.center * b.center - p0 * p0],
                lam(b) - lam_p0,
                b.n as f64,
            )
        })
        .collect();
    let (beta1, beta2) = match least_squares(&high_bins) {
        Some(v) if high_bins.len() >= 2 => (v[0], v[1]),
        _ => (0.0, 0.0),
    };

    let candidate = CapacityModel {
        a0,
        a1,
        a2,
        alpha1,
        alpha2,
        b0,
        b1,
        b2,
        beta1,
        beta2,
        p0,
        p_max,
    };
    if candidate.positive_on_range() {
        return Ok(candidate);
    }
    let flat_lambda = CapacityModel {
        b0: lam_all,
        b1: 0.0,
        b2: 0.0,
        beta1: 0.0,
        beta2: 0.0,
        ..candidate
    };
    if flat_lambda.positive_on_range() {
        return Ok(flat_lambda);
    }
    Ok(CapacityModel {
        a0: overall,
        a1: 0.0,
        a2: 0.0,
        alpha1: 1.0 / p_max,
        alpha2: 0.0,
        ..flat_lambda
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rhat_of_identical_chains_is_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        assert!((split_rhat(&chains) - 1.0).abs() < 0.01);
    }

    #[test]
    fn rhat_flags_separated_chains() {
        let chains = vec![vec![0.0, 0.1, 0.0, 0.1], vec![5.0, 5.1, 5.0, 5.1]];
        assert!(split_rhat(&chains) > RHAT_LIMIT);
    }

    #[test]
    fn rejects_tiny_samples() {
        let pairs = vec![(0.001, 1.0); 50];
        assert!(fit_capacity_ig(&pairs, &CapacityFitConfig::default(), 0).is_err());
    }

    #[test]
    fn least_squares_recovers_line() {
        let rows: Vec<_> = (0..10)
            .map(|i| (vec![1.0, i as f64], 2.0 + 3.0 * i as f64, 1.0))
            .collect();
        let b = least_squares(&rows).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-10 && (b[1] - 3.0).abs() < 1e-10);
    }
}
