//! Inverse-Gaussian fit of per-location bite rates.

use crate::error::{Error, Result};
use crate::forcing::inverse_gaussian_ln_pdf;

/// Shape estimates are capped here when the sample has (almost) no spread.
pub const LAMBDA_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiteFit {
    pub mu: f64,
    pub lambda: f64,
    /// True when the shape estimate hit `LAMBDA_CAP`.
    pub lambda_capped: bool,
    pub n: usize,
}

/// Maximum-likelihood IG fit: `mu = mean(x)`, `1/lambda = mean(1/x - 1/mu)`.
pub fn fit_bites_ig(values: &[f64]) -> Result<BiteFit> {
    if values.is_empty() {
        return Err(Error::invalid("no bite-rate values"));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!(
            "bite-rate values must be > 0, got {v}"
        )));
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let inv = values.iter().map(|x| 1.0 / x - 1.0 / mu).sum::<f64>() / n;
    let (lambda, capped) = if inv * LAMBDA_CAP > 1.0 {
        (1.0 / inv, false)
    } else {
        (LAMBDA_CAP, true)
    };
    Ok(BiteFit {
        mu,
        lambda,
        lambda_capped: capped,
        n: values.len(),
    })
}

pub fn ig_log_likelihood(values: &[f64], mu: f64, lambda: f64) -> f64 {
    values
        .iter()
        .map(|x| inverse_gaussian_ln_pdf(*x, mu, lambda))
        .sum()
}
