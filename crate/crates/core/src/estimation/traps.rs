//! Poisson scaling between trap counts and simulated adult abundance:
//! `count_i ~ Poisson(k a_i + r)` with `0 <= r < 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exclusive upper bound on the background rate.
pub const R_MAX: f64 = 2.0;
const LN_K_BOUNDS: [f64; 2] = [-20.7, 20.7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapFitConfig {
    pub iterations: usize,
    pub burn_in: usize,
}

impl Default for TrapFitConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 5_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrapFit {
    pub k: f64,
    pub r: f64,
    pub k_draws: Vec<f64>,
    pub r_draws: Vec<f64>,
    pub acceptance: f64,
    /// Every abundance was zero while some counts were not.
    pub background_only: bool,
}

impl TrapFit {
    pub fn mean_curve(&self, adults: &[f64]) -> Vec<f64> {
        adults.iter().map(|a| self.k * a + self.r).collect()
    }
}

fn log_lik(counts: &[u64], adults: &[f64], k: f64, r: f64) -> f64 {
    let mut ll = 0.0;
    for (&c, &a) in counts.iter().zip(adults) {
        let m = k * a + r;
        if m <= 0.0 {
            if c > 0 {
                return f64::NEG_INFINITY;
            }
            continue;
        }
        ll += c as f64 * m.ln() - m;
    }
    ll
}

/// Metropolis sampler over `(ln k, r)` with a log-uniform prior on `k` and
/// a uniform prior on `r` in `[0, 2)`.
pub fn fit_trap_scaling(
    counts: &[u64],
    adults: &[f64],
    cfg: &TrapFitConfig,
    seed: u64,
) -> Result<TrapFit> {
    if counts.len() != adults.len() || counts.is_empty() {
        return Err(Error::invalid(
            "counts and adults must be nonempty and of equal length",
        ));
    }
    if adults.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
        return Err(Error::invalid("simulated adults must be finite and >= 0"));
    }
    if cfg.iterations <= cfg.burn_in {
        return Err(Error::invalid("iterations must exceed burn_in"));
    }
    let background_only = adults.iter().all(|a| *a == 0.0) && counts.iter().any(|c| *c > 0);
    if background_only {
        log::warn!("all simulated abundances are zero: the trap fit is determined by the background rate alone");
    }
    let n = counts.len() as f64;
    let mean_c = counts.iter().sum::<u64>() as f64 / n;
    let mean_a = adults.iter().sum::<f64>() / n;
    let mut r = (0.5 * mean_c).min(1.0);
    let mut lk = if mean_a > 0.0 {
        ((mean_c - r).max(1e-6) / mean_a).ln()
    } else {
        0.0
    };
    let mut lp = log_lik(counts, adults, lk.exp(), r);
    if !lp.is_finite() {
        r = 1.0;
        lp = log_lik(counts, adults, lk.exp(), r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut step = [0.1, 0.1];
    let (mut acc, mut window) = (0usize, 0usize);
    let keep = cfg.iterations - cfg.burn_in;
    let mut k_draws = Vec::with_capacity(keep);
    let mut r_draws = Vec::with_capacity(keep);
    for it in 0..cfg.iterations {
        let z0: f64 = StandardNormal.sample(&mut rng);
        let z1: f64 = StandardNormal.sample(&mut rng);
        let nk = lk + step[0] * z0;
        let nr = r + step[1] * z1;
        let u: f64 = rng.random();
        if (LN_K_BOUNDS[0]..=LN_K_BOUNDS[1]).contains(&nk) && (0.0..R_MAX).contains(&nr) {
            let nl = log_lik(counts, adults, nk.exp(), nr);
            if nl - lp >= u.ln() {
                lk = nk;
                r = nr;
                lp = nl;
                if it >= cfg.burn_in {
                    acc += 1;
                } else {
                    window += 1;
                }
            }
        }
        if it < cfg.burn_in && (it + 1) % 100 == 0 {
            let f = if window as f64 / 100.0 > 0.3 {
                1.2
            } else {
                0.8
            };
            step[0] *= f;
            step[1] = (step[1] * f).min(1.0);
            window = 0;
        }
        if it >= cfg.burn_in {
            k_draws.push(lk.exp());
            r_draws.push(r);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(TrapFit {
        k: mean(&k_draws),
        r: mean(&r_draws),
        acceptance: acc as f64 / keep as f64,
        k_draws,
        r_draws,
        background_only,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_counts_and_abundance_push_r_to_zero() {
        let fit = fit_trap_scaling(&[0; 100], &[0.0; 100], &TrapFitConfig::default(), 4).unwrap();
        assert!(fit.r < 0.05, "r = {}", fit.r);
        assert!(fit.r_draws.iter().all(|r| (0.0..R_MAX).contains(r)));
    }

    #[test]
    fn flags_background_only_data() {
        let fit = fit_trap_scaling(&[1, 0, 2], &[0.0; 3], &TrapFitConfig::default(), 4).unwrap();
        assert!(fit.background_only);
    }

    #[test]
    fn rejects_mismatched_lengths() {
        assert!(fit_trap_scaling(&[1, 2], &[1.0], &TrapFitConfig::default(), 0).is_err());
    }
}
