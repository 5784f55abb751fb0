//! Fixed-step explicit integrators shared by the matrix and eigenvalue flows.
//!
//! States only need to form a vector space ([`Flowable`]); trajectories are
//! recorded with a configurable stride so that long runs stay bounded in size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm above which a trajectory is treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e8;

/// Maximum number of recorded intervals under [`Stride::Auto`].
pub const AUTO_RECORD_LIMIT: usize = 10_000;

/// A state that can be advanced by an explicit Runge–Kutta scheme.
pub trait Flowable: Clone {
    /// Returns `self + a * other`.
    fn add_scaled(&self, a: f64, other: &Self) -> Self;
    /// Euclidean (Frobenius) norm over all components.
    fn norm(&self) -> f64;
    fn all_finite(&self) -> bool;
}

impl Flowable for f64 {
    fn add_scaled(&self, a: f64, other: &Self) -> Self {
        self + a * other
    }

    fn norm(&self) -> f64 {
        self.abs()
    }

    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    #[default]
    Rk4,
}

/// Which steps of a run are kept in the [`Trajectory`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stride {
    /// Every step up to 10⁴ steps, otherwise every ⌈steps/10⁴⌉-th step.
    #[default]
    Auto,
    Every(usize),
}

impl Stride {
    pub fn resolve(self, steps: usize) -> usize {
        match self {
            Stride::Every(k) => k.max(1),
            Stride::Auto if steps <= AUTO_RECORD_LIMIT => 1,
            Stride::Auto => steps.div_ceil(AUTO_RECORD_LIMIT),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationOptions {
    pub dt: f64,
    pub steps: usize,
    pub method: Method,
    pub stride: Stride,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            dt: 0.01,
            steps: 1000,
            method: Method::Rk4,
            stride: Stride::Auto,
        }
    }
}

impl IntegrationOptions {
    pub fn new(dt: f64, steps: usize, method: Method) -> Self {
        Self {
            dt,
            steps,
            method,
            stride: Stride::Auto,
        }
    }

    pub fn with_stride(mut self, stride: Stride) -> Self {
        self.stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config(format!("dt must be positive and finite, got {}", self.dt)));
        }
        if self.steps == 0 {
            return Err(Error::config("steps must be positive"));
        }
        if let Stride::Every(0) = self.stride {
            return Err(Error::config("recording stride must be positive"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }
}

/// Time-stamped states with named per-record diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub diagnostic_names: Vec<String>,
    /// One row per recorded state, aligned with `diagnostic_names`.
    pub diagnostics: Vec<Vec<f64>>,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<&S> {
        self.states.last()
    }

    /// Column of a named diagnostic, if present.
    pub fn diagnostic(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.diagnostic_names.iter().position(|n| n == name)?;
        Some(self.diagnostics.iter().map(|row| row[idx]).collect())
    }
}

/// One explicit step of size `dt`.
pub fn step<S, F>(state: &S, dt: f64, method: Method, rhs: &F) -> S
where
    S: Flowable,
    F: Fn(&S) -> S,
{
    match method {
        Method::Euler => state.add_scaled(dt, &rhs(state)),
        Method::Rk4 => {
            let k1 = rhs(state);
            let k2 = rhs(&state.add_scaled(0.5 * dt, &k1));
            let k3 = rhs(&state.add_scaled(0.5 * dt, &k2));
            let k4 = rhs(&state.add_scaled(dt, &k3));
            state
                .add_scaled(dt / 6.0, &k1)
                .add_scaled(dt / 3.0, &k2)
                .add_scaled(dt / 3.0, &k3)
                .add_scaled(dt / 6.0, &k4)
        }
    }
}

/// Integrates `rhs` from `init`, recording states per `opts.stride` (the final
/// state is always recorded) together with `diagnostics(state)`.
pub fn integrate<S, F, D>(
    init: &S,
    opts: &IntegrationOptions,
    rhs: F,
    diagnostic_names: &[&str],
    diagnostics: D,
) -> Result<Trajectory<S>>
where
    S: Flowable,
    F: Fn(&S) -> S,
    D: Fn(&S) -> Vec<f64>,
{
    opts.validate()?;
    if !init.all_finite() {
        return Err(Error::NonFinite("initial state".into()));
    }
    let stride = opts.stride.resolve(opts.steps);
    let capacity = opts.steps / stride + 2;
    let mut traj = Trajectory {
        times: Vec::with_capacity(capacity),
        states: Vec::with_capacity(capacity),
        diagnostic_names: diagnostic_names.iter().map(|s| s.to_string()).collect(),
        diagnostics: Vec::with_capacity(capacity),
    };
    let record = |t: f64, s: &S, traj: &mut Trajectory<S>| {
        traj.times.push(t);
        traj.diagnostics.push(diagnostics(s));
        traj.states.push(s.clone());
    };

    let mut state = init.clone();
    record(0.0, &state, &mut traj);
    for k in 1..=opts.steps {
        let next = step(&state, opts.dt, opts.method, &rhs);
        let norm = next.norm();
        if !next.all_finite() || !norm.is_finite() {
            return Err(Error::Divergence {
                last_finite_step: k - 1,
                time: (k - 1) as f64 * opts.dt,
                reason: "non-finite state".into(),
            });
        }
        if norm > DIVERGENCE_NORM {
            return Err(Error::Divergence {
                last_finite_step: k - 1,
                time: (k - 1) as f64 * opts.dt,
                reason: format!("state norm {norm:.3e} exceeds {DIVERGENCE_NORM:.0e}"),
            });
        }
        state = next;
        if k % stride == 0 || k == opts.steps {
            record(k as f64 * opts.dt, &state, &mut traj);
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_stride_bounds_recorded_rows() {
        assert_eq!(Stride::Auto.resolve(10_000), 1);
        assert_eq!(Stride::Auto.resolve(100_000), 10);
        for steps in [1, 9_999, 10_001, 12_345, 100_000, 1_000_003] {
            let s = Stride::Auto.resolve(steps);
            let rows = steps / s + 1 + usize::from(steps % s != 0);
            assert!(rows <= AUTO_RECORD_LIMIT + 1, "steps={steps} rows={rows}");
        }
    }

    #[test]
    fn exponential_decay_orders() {
        // y' = -y, y(0) = 1, exact e^{-1} at t = 1.
        let exact = (-1.0f64).exp();
        let err = |method, n: usize| {
            let opts = IntegrationOptions::new(1.0 / n as f64, n, method);
            let tr = integrate(&1.0, &opts, |y: &f64| -y, &[], |_| vec![]).unwrap();
            (tr.last().unwrap() - exact).abs()
        };
        let euler_ratio = err(Method::Euler, 100) / err(Method::Euler, 200);
        let rk4_ratio = err(Method::Rk4, 20) / err(Method::Rk4, 40);
        assert!((euler_ratio - 2.0).abs() < 0.05, "{euler_ratio}");
        assert!((rk4_ratio - 16.0).abs() < 0.5, "{rk4_ratio}");
    }

    #[test]
    fn divergence_reports_last_finite_step() {
        let opts = IntegrationOptions::new(0.1, 10_000, Method::Euler);
        let err = integrate(&1.0, &opts, |y: &f64| y * y, &[], |_| vec![]).unwrap_err();
        match err {
            Error::Divergence { last_finite_step, .. } => assert!(last_finite_step > 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn final_state_always_recorded() {
        let opts = IntegrationOptions::new(0.01, 25, Method::Rk4).with_stride(Stride::Every(10));
        let tr = integrate(&0.0, &opts, |_: &f64| 1.0, &["x"], |y| vec![*y]).unwrap();
        assert_eq!(tr.times.len(), 4);
        assert!((tr.times[3] - 0.25).abs() < 1e-12);
        assert!((tr.diagnostic("x").unwrap()[3] - 0.25).abs() < 1e-12);
    }
}
