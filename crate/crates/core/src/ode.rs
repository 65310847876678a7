//! Fixed-step classical Runge-Kutta integration for the compartment systems.
//!
//! A step size starts at the configured `dt` and is halved until it is below
//! the RK4 stability bound of the system, the step-doubling error estimate is
//! within tolerance, and every compartment stays nonnegative. Step sizes below
//! `min_dt` are refused.

use crate::error::{Error, Result};

/// `|z| = dt * rate` beyond which a real-axis RK4 step is refused (the exact
/// stability interval ends near 2.785).
pub const RK4_STABILITY_LIMIT: f64 = 2.5;

pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, y: &[f64], dy: &mut [f64]);

    /// Upper bound on the decay rate of any compartment (per day).
    fn stiffness(&self) -> f64;
}

pub fn stability_bound(system: &impl OdeSystem) -> f64 {
    let s = system.stiffness();
    if s > 0.0 {
        RK4_STABILITY_LIMIT / s
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub min_dt: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            min_dt: 1e-4,
            rtol: 1e-5,
            atol: 1e-9,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.min_dt > 0.0 && self.min_dt <= self.dt) {
            return Err(Error::invalid("integrator needs 0 < min_dt <= dt"));
        }
        if !(self.rtol > 0.0 && self.atol >= 0.0) {
            return Err(Error::invalid("integrator tolerances must be positive"));
        }
        Ok(())
    }
}

/// Scratch buffers for RK4, reused across steps.
#[derive(Debug, Clone, Default)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    save: Vec<f64>,
    full: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        let mut s = Self::default();
        s.resize(dim);
        s
    }

    fn resize(&mut self, dim: usize) {
        for v in [
            &mut self.k1,
            &mut self.k2,
            &mut self.k3,
            &mut self.k4,
            &mut self.tmp,
            &mut self.save,
            &mut self.full,
        ] {
            v.resize(dim, 0.0);
        }
    }

    /// One classical RK4 step in place, no checks.
    pub fn step(&mut self, system: &impl OdeSystem, y: &mut [f64], dt: f64) {
        let n = y.len();
        if self.k1.len() != n {
            self.resize(n);
        }
        system.rhs(y, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * dt * self.k1[i];
        }
        system.rhs(&self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * dt * self.k2[i];
        }
        system.rhs(&self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + dt * self.k3[i];
        }
        system.rhs(&self.tmp, &mut self.k4);
        let c = dt / 6.0;
        for i in 0..n {
            y[i] += c * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
    }

    /// Advances `y` by `duration` under a frozen `system`. Returns the step
    /// size that was accepted.
    pub fn advance(
        &mut self,
        system: &impl OdeSystem,
        y: &mut [f64],
        duration: f64,
        cfg: &IntegratorConfig,
    ) -> Result<f64> {
        if duration <= 0.0 {
            return Ok(0.0);
        }
        let n = y.len();
        if self.k1.len() != n {
            self.resize(n);
        }
        let bound = stability_bound(system);
        let mut dt = cfg.dt;
        while dt > bound && dt >= cfg.min_dt {
            dt *= 0.5;
        }
        self.save.copy_from_slice(y);
        loop {
            if dt < cfg.min_dt {
                return Err(Error::Integration(format!(
                    "no step size >= {} passed the stability, error and nonnegativity checks",
                    cfg.min_dt
                )));
            }
            let steps = (duration / dt).ceil().max(1.0) as usize;
            let h = duration / steps as f64;
            if self.try_steps(system, y, h, steps, cfg) {
                return Ok(h);
            }
            y.copy_from_slice(&self.save);
            dt *= 0.5;
        }
    }

    fn try_steps(
        &mut self,
        system: &impl OdeSystem,
        y: &mut [f64],
        h: f64,
        steps: usize,
        cfg: &IntegratorConfig,
    ) -> bool {
        // Step doubling on the first step; the forcing is frozen over the call.
        let mut full = std::mem::take(&mut self.full);
        full.copy_from_slice(y);
        self.step(system, &mut full, h);
        self.step(system, y, 0.5 * h);
        self.step(system, y, 0.5 * h);
        let ok = y.iter().zip(&full).all(|(a, b)| {
            let err = (a - b).abs() / 15.0;
            err <= cfg.atol + cfg.rtol * a.abs().max(b.abs())
        });
        self.full = full;
        if !ok || !clamp_nonnegative(y) {
            return false;
        }
        for _ in 1..steps {
            self.step(system, y, h);
            if !clamp_nonnegative(y) {
                return false;
            }
        }
        true
    }
}

/// Zeroes round-off negatives. Returns false for a genuine negative excursion.
pub(crate) fn clamp_nonnegative(y: &mut [f64]) -> bool {
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * scale + 1e-12;
    for v in y.iter_mut() {
        if *v < 0.0 {
            if *v < -tol || !v.is_finite() {
                return false;
            }
            *v = 0.0;
        } else if !v.is_finite() {
            return false;
        }
    }
    true
}
