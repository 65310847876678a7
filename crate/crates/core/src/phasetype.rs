//! Phase-type sojourn laws.
//!
//! A phase-type distribution is the absorption time of a continuous-time
//! Markov chain with `m` transient states, described by an initial row vector
//! `alpha` and an `m x m` subgenerator `Q`. Survival is `alpha * exp(xQ) * 1`.
//!
//! Erlang chains (the only family the life-cycle model needs) are evaluated
//! with the closed-form Poisson series. Arbitrary `(alpha, Q)` pairs are
//! accepted after validation and evaluated by uniformization.

use crate::error::{Error, Result};

/// Default bound on the state count of a Kronecker-combined chain.
pub const DEFAULT_KRON_CAP: usize = 65_536;

const ALPHA_SUM_TOL: f64 = 1e-12;
const UNIFORMIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Erlang(usize),
    General,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTypeDist {
    alpha: Vec<f64>,
    /// Row-major `m x m`.
    q: Vec<f64>,
    m: usize,
    shape: Shape,
}

impl PhaseTypeDist {
    /// Erlang law with shape `j` and mean one: `alpha = (1, 0, ..., 0)`,
    /// `-j` on the diagonal and `+j` on the superdiagonal.
    pub fn erlang(j: usize) -> Result<Self> {
        if j == 0 {
            return Err(Error::invalid("Erlang shape J must be at least 1"));
        }
        let jf = j as f64;
        let mut q = vec![0.0; j * j];
        for i in 0..j {
            q[i * j + i] = -jf;
            if i + 1 < j {
                q[i * j + i + 1] = jf;
            }
        }
        let mut alpha = vec![0.0; j];
        alpha[0] = 1.0;
        Ok(Self {
            alpha,
            q,
            m: j,
            shape: Shape::Erlang(j),
        })
    }

    /// Unit-mean exponential law, `alpha = (1)`, `Q = (-1)`.
    pub fn exponential() -> Self {
        Self::erlang(1).expect("J = 1 is valid")
    }

    /// Validated construction from an arbitrary pair. `q` is row-major.
    pub fn new(alpha: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        let m = alpha.len();
        if m == 0 {
            return Err(Error::invalid(
                "phase-type needs at least one transient state",
            ));
        }
        if q.len() != m * m {
            return Err(Error::invalid(format!(
                "subgenerator has {} entries, expected {}",
                q.len(),
                m * m
            )));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::invalid(
                "initial vector entries must be finite and >= 0",
            ));
        }
        let s: f64 = alpha.iter().sum();
        if (s - 1.0).abs() > ALPHA_SUM_TOL {
            return Err(Error::invalid(format!("initial vector sums to {s}, not 1")));
        }
        let mut any_exit = false;
        for i in 0..m {
            let row = &q[i * m..(i + 1) * m];
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("subgenerator entries must be finite"));
            }
            for (k, &v) in row.iter().enumerate() {
                if k == i {
                    if v >= 0.0 {
                        return Err(Error::invalid(format!("Q[{i}][{i}] = {v} must be < 0")));
                    }
                } else if v < 0.0 {
                    return Err(Error::invalid(format!("Q[{i}][{k}] = {v} must be >= 0")));
                }
            }
            let exit = -row.iter().sum::<f64>();
            // Row sums must be <= 0, allowing for cancellation round-off.
            let scale = row[i].abs();
            if exit < -1e-12 * scale {
                return Err(Error::invalid(format!(
                    "row {i} of Q sums to a positive value"
                )));
            }
            if exit > 1e-12 * scale {
                any_exit = true;
            }
        }
        if !any_exit {
            return Err(Error::invalid("exit vector -Q*1 has no positive entry"));
        }
        Ok(Self {
            alpha,
            q,
            m,
            shape: Shape::General,
        })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Row-major subgenerator.
    pub fn subgenerator(&self) -> &[f64] {
        &self.q
    }

    pub fn states(&self) -> usize {
        self.m
    }

    /// The Erlang shape, when this law was built by [`PhaseTypeDist::erlang`].
    pub fn erlang_shape(&self) -> Option<usize> {
        match self.shape {
            Shape::Erlang(j) => Some(j),
            Shape::General => None,
        }
    }

    /// `q = -Q * 1`.
    pub fn exit_vector(&self) -> Vec<f64> {
        (0..self.m)
            .map(|i| -self.q[i * self.m..(i + 1) * self.m].iter().sum::<f64>())
            .collect()
    }

    /// `-alpha * Q^{-1} * 1`.
    pub fn mean(&self) -> f64 {
        let m = self.m;
        let neg_q: Vec<f64> = self.q.iter().map(|v| -v).collect();
        let z = solve_dense(neg_q, vec![1.0; m], m).expect("a valid subgenerator is nonsingular");
        self.alpha.iter().zip(&z).map(|(a, b)| a * b).sum()
    }

    /// Probability that absorption has not happened by development `x`.
    pub fn survival(&self, x: f64) -> Result<f64> {
        check_x(x)?;
        Ok(self.eval(x).0)
    }

    /// Density of the absorption time, `alpha * exp(xQ) * q`.
    pub fn density(&self, x: f64) -> Result<f64> {
        check_x(x)?;
        Ok(self.eval(x).1)
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        Ok(1.0 - self.survival(x)?)
    }

    /// Survival and density together. Unchecked: `x` must be finite and >= 0.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        match self.shape {
            Shape::Erlang(j) => erlang_eval(j, x),
            Shape::General => {
                let m = self.m;
                let diag_max = (0..m).map(|i| -self.q[i * m + i]).fold(0.0, f64::max);
                let exit = self.exit_vector();
                let q = &self.q;
                uniformized(&self.alpha, diag_max, x, Some(&exit), |v, out| {
                    dense_matvec(q, m, v, out)
                })
            }
        }
    }

    /// Smallest development beyond which both survival and density stay
    /// below `eps`. Used to truncate history convolutions.
    pub fn negligible_beyond(&self, eps: f64) -> f64 {
        let mean = self.mean();
        let mut x = mean.max(1e-3);
        for _ in 0..200 {
            let (s, f) = self.eval(x);
            if s < eps && f < eps {
                return x;
            }
            x *= 1.25;
        }
        x
    }
}

fn check_x(x: f64) -> Result<()> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!(
            "development {x} must be finite and >= 0"
        )));
    }
    Ok(())
}

/// Closed-form Erlang(j, rate j) survival and density at `x`.
///
/// `S = exp(-y) * sum_{k<j} y^k / k!` with `y = j x`, `f = j * exp(-y) y^(j-1) / (j-1)!`.
pub(crate) fn erlang_eval(j: usize, x: f64) -> (f64, f64) {
    let y = j as f64 * x;
    if y == 0.0 {
        return (1.0, if j == 1 { 1.0 } else { 0.0 });
    }
    if y < 700.0 {
        let mut term = (-y).exp();
        let mut sum = term;
        for k in 1..j {
            term *= y / k as f64;
            sum += term;
            if term == 0.0 && k as f64 > y {
                // Past the mode and underflowed: the k = j-1 term is 0 as well.
                break;
            }
        }
        (sum.min(1.0), j as f64 * term)
    } else {
        // exp(-y) underflows: accumulate in log space.
        let ly = y.ln();
        let mut log_term = -y;
        let mut sum = log_term.exp();
        for k in 1..j {
            log_term += ly - (k as f64).ln();
            sum += log_term.exp();
        }
        (sum.min(1.0), j as f64 * log_term.exp())
    }
}

fn dense_matvec(a: &[f64], m: usize, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = a[i * m..(i + 1) * m]
            .iter()
            .zip(v)
            .map(|(x, y)| x * y)
            .sum();
    }
}

/// Uniformization: `alpha exp(xG) 1` and optionally `alpha exp(xG) exit`,
/// with `P = I + G / diag_max` applied through `matvec` (which computes `G v`).
fn uniformized(
    alpha: &[f64],
    diag_max: f64,
    x: f64,
    exit: Option<&[f64]>,
    matvec: impl Fn(&[f64], &mut [f64]),
) -> (f64, f64) {
    let m = alpha.len();
    let dot = |v: &[f64]| alpha.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    if diag_max == 0.0 || x == 0.0 {
        return (alpha.iter().sum(), exit.map_or(0.0, dot));
    }
    let lx = diag_max * x;
    let mut ones = vec![1.0; m];
    let mut ex = exit.map(|e| e.to_vec());
    let mut scratch = vec![0.0; m];
    let ln_lx = lx.ln();
    let mut log_w = -lx;
    let mut cum = 0.0;
    let (mut s, mut f) = (0.0, 0.0);
    let n_max = (lx + 12.0 * lx.sqrt() + 50.0).ceil() as usize;
    for n in 0..=n_max {
        if n > 0 {
            log_w += ln_lx - (n as f64).ln();
            step_uniform(&matvec, diag_max, &mut ones, &mut scratch);
            if let Some(e) = ex.as_mut() {
                step_uniform(&matvec, diag_max, e, &mut scratch);
            }
        }
        let w = log_w.exp();
        cum += w;
        s += w * dot(&ones);
        if let Some(e) = ex.as_ref() {
            f += w * dot(e);
        }
        if cum >= 1.0 - UNIFORMIZATION_TOL && n as f64 > lx {
            break;
        }
    }
    (s.clamp(0.0, 1.0), f.max(0.0))
}

fn step_uniform(
    matvec: &impl Fn(&[f64], &mut [f64]),
    lam: f64,
    v: &mut [f64],
    scratch: &mut [f64],
) {
    matvec(v, scratch);
    for (vi, gi) in v.iter_mut().zip(scratch.iter()) {
        *vi += gi / lam;
    }
}

/// Gaussian elimination with partial pivoting; `a` is row-major `m x m`.
pub(crate) fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, m: usize) -> Option<Vec<f64>> {
    for col in 0..m {
        let piv =
            (col..m).max_by(|&i, &k| a[i * m + col].abs().total_cmp(&a[k * m + col].abs()))?;
        if a[piv * m + col] == 0.0 {
            return None;
        }
        if piv != col {
            for k in 0..m {
                a.swap(col * m + k, piv * m + k);
            }
            b.swap(col, piv);
        }
        let d = a[col * m + col];
        for r in col + 1..m {
            let factor = a[r * m + col] / d;
            if factor == 0.0 {
                continue;
            }
            for k in col..m {
                a[r * m + k] -= factor * a[col * m + k];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let s: f64 = (r + 1..m).map(|k| a[r * m + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * m + r];
    }
    Some(x)
}

/// Two independent clocks running at rates `g1` and `g2`, combined into one
/// chain on the product state space.
///
/// Generator `g1 Q1 (x) I2 + g2 I1 (x) Q2`, initial vector `alpha1 (x) alpha2`.
/// Stored as triplets, since the product is sparse.
#[derive(Debug, Clone)]
pub struct KronChain {
    alpha: Vec<f64>,
    entries: Vec<(usize, usize, f64)>,
    dim: usize,
}

impl KronChain {
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dense row-major generator; for small chains and tests.
    pub fn generator_dense(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.dim * self.dim];
        for &(r, c, v) in &self.entries {
            g[r * self.dim + c] += v;
        }
        g
    }

    /// `alpha exp(tG) 1`.
    pub fn survival(&self, t: f64) -> Result<f64> {
        check_x(t)?;
        let diag_max = self
            .entries
            .iter()
            .filter(|(r, c, _)| r == c)
            .map(|&(_, _, v)| -v)
            .fold(0.0, f64::max);
        let (s, _) = uniformized(&self.alpha, diag_max, t, None, |v, out| {
            out.iter_mut().for_each(|o| *o = 0.0);
            for &(r, c, val) in &self.entries {
                out[r] += val * v[c];
            }
        });
        Ok(s)
    }
}

pub fn kron_combine(g1: f64, d1: &PhaseTypeDist, g2: f64, d2: &PhaseTypeDist) -> Result<KronChain> {
    kron_combine_capped(g1, d1, g2, d2, DEFAULT_KRON_CAP)
}

pub fn kron_combine_capped(
    g1: f64,
    d1: &PhaseTypeDist,
    g2: f64,
    d2: &PhaseTypeDist,
    cap: usize,
) -> Result<KronChain> {
    if !(g1 >= 0.0 && g2 >= 0.0) || !g1.is_finite() || !g2.is_finite() {
        return Err(Error::invalid("clock rates must be finite and >= 0"));
    }
    let (m1, m2) = (d1.m, d2.m);
    let dim = m1.checked_mul(m2).unwrap_or(usize::MAX);
    if dim > cap {
        return Err(Error::DimensionOverflow { dim, cap });
    }
    let mut alpha = Vec::with_capacity(dim);
    for a1 in &d1.alpha {
        for a2 in &d2.alpha {
            alpha.push(a1 * a2);
        }
    }
    let mut entries = Vec::new();
    for i in 0..m1 {
        for k in 0..m2 {
            let row = i * m2 + k;
            for j in 0..m1 {
                let v = d1.q[i * m1 + j];
                if v != 0.0 && g1 != 0.0 {
                    entries.push((row, j * m2 + k, g1 * v));
                }
            }
            for l in 0..m2 {
                let v = d2.q[k * m2 + l];
                if v != 0.0 && g2 != 0.0 {
                    entries.push((row, i * m2 + l, g2 * v));
                }
            }
        }
    }
    Ok(KronChain {
        alpha,
        entries,
        dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poisson_series(j: usize, x: f64) -> f64 {
        // Independent route: sum of Poisson(jx) pmf for k < j via lgamma-free recursion in f64.
        let y = j as f64 * x;
        let mut p = (-y).exp();
        let mut s = 0.0;
        for k in 0..j {
            if k > 0 {
                p *= y / k as f64;
            }
            s += p;
        }
        s
    }

    #[test]
    fn erlang_one_is_unit_exponential() {
        let d = PhaseTypeDist::erlang(1).unwrap();
        assert_eq!(d.alpha(), &[1.0]);
        assert_eq!(d.subgenerator(), &[-1.0]);
        assert!((d.survival(0.9).unwrap() - (-0.9f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn erlang_two_matrix() {
        let d = PhaseTypeDist::erlang(2).unwrap();
        assert_eq!(d.alpha(), &[1.0, 0.0]);
        assert_eq!(d.subgenerator(), &[-2.0, 2.0, 0.0, -2.0]);
    }

    #[test]
    fn erlang_zero_rejected() {
        assert!(matches!(
            PhaseTypeDist::erlang(0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn erlang_mean_is_one() {
        for j in [1, 2, 7, 100] {
            let d = PhaseTypeDist::erlang(j).unwrap();
            assert!((d.mean() - 1.0).abs() < 1e-10, "J={j}");
        }
    }

    #[test]
    fn survival_at_zero_and_negative() {
        let d = PhaseTypeDist::erlang(5).unwrap();
        assert_eq!(d.survival(0.0).unwrap(), 1.0);
        assert!(d.survival(-0.1).is_err());
        assert!(d.survival(f64::NAN).is_err());
    }

    #[test]
    fn closed_form_matches_uniformization() {
        for j in [1, 3, 10, 40] {
            let e = PhaseTypeDist::erlang(j).unwrap();
            let g = PhaseTypeDist::new(e.alpha().to_vec(), e.subgenerator().to_vec()).unwrap();
            for i in 0..=50 {
                let x = i as f64 * 0.1;
                let (s1, f1) = e.eval(x);
                let (s2, f2) = g.eval(x);
                assert!((s1 - s2).abs() < 1e-10, "J={j} x={x}: {s1} vs {s2}");
                assert!(
                    (f1 - f2).abs() < 1e-9 * (1.0 + f1),
                    "J={j} x={x}: {f1} vs {f2}"
                );
            }
        }
    }

    #[test]
    fn large_argument_uses_log_space() {
        // y = 1000 > 700: the linear recurrence would underflow to 0.
        let d = PhaseTypeDist::erlang(1000).unwrap();
        let s = d.survival(1.0).unwrap();
        assert!((s - 0.5).abs() < 0.01, "{s}");
        assert!(d.survival(50.0).unwrap() < 1e-12);
    }

    #[test]
    fn erlang_series_agrees_on_grid() {
        for j in [1, 2, 5, 20, 100] {
            let d = PhaseTypeDist::erlang(j).unwrap();
            for i in 0..=500 {
                let x = i as f64 * 0.01;
                let s = d.survival(x).unwrap();
                assert!((s - poisson_series(j, x)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn validation_rejects_bad_pairs() {
        assert!(PhaseTypeDist::new(vec![0.5, 0.4], vec![-1.0, 0.0, 0.0, -1.0]).is_err());
        assert!(PhaseTypeDist::new(vec![1.0], vec![1.0]).is_err());
        assert!(PhaseTypeDist::new(vec![1.0, 0.0], vec![-1.0, 1.0, 1.0, -1.0]).is_err());
        assert!(PhaseTypeDist::new(vec![1.0, 0.0], vec![-1.0, -0.5, 0.0, -1.0]).is_err());
        assert!(PhaseTypeDist::new(vec![1.0, 0.0], vec![-1.0, 1.0, 0.0, -2.0]).is_ok());
    }

    #[test]
    fn general_density_integrates_to_cdf() {
        let d = PhaseTypeDist::new(vec![0.3, 0.7], vec![-3.0, 1.0, 0.5, -2.0]).unwrap();
        let n = 20_000;
        let h = 4.0 / n as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let a = d.density(i as f64 * h).unwrap();
            let b = d.density((i + 1) as f64 * h).unwrap();
            integral += 0.5 * h * (a + b);
        }
        assert!((integral - d.cdf(4.0).unwrap()).abs() < 1e-7);
    }

    #[test]
    fn kron_of_exponentials_is_competing_clocks() {
        let e = PhaseTypeDist::exponential();
        let k = kron_combine(0.3, &e, 0.7, &e).unwrap();
        assert_eq!(k.dim(), 1);
        assert!((k.generator_dense()[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn kron_product_of_marginals() {
        let d1 = PhaseTypeDist::erlang(3).unwrap();
        let d2 = PhaseTypeDist::erlang(1).unwrap();
        let k = kron_combine(0.3, &d1, 0.1, &d2).unwrap();
        for t in [0.0, 0.5, 2.0, 7.5, 20.0] {
            let lhs = k.survival(t).unwrap();
            let rhs = d1.survival(0.3 * t).unwrap() * d2.survival(0.1 * t).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn kron_frozen_clock() {
        let d1 = PhaseTypeDist::erlang(4).unwrap();
        let d2 = PhaseTypeDist::erlang(2).unwrap();
        let k = kron_combine(0.0, &d1, 0.5, &d2).unwrap();
        for t in [0.3, 1.0, 4.0] {
            assert!((k.survival(t).unwrap() - d2.survival(0.5 * t).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn kron_cap_enforced() {
        let d = PhaseTypeDist::erlang(300).unwrap();
        assert!(matches!(
            kron_combine(1.0, &d, 1.0, &d),
            Err(Error::DimensionOverflow {
                dim: 90_000,
                cap: DEFAULT_KRON_CAP
            })
        ));
        assert!(kron_combine_capped(1.0, &d, 1.0, &PhaseTypeDist::exponential(), 100).is_err());
    }
}
