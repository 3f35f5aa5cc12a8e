//! Time integration of the forced KdV-Burgers equation
//! `u_t + A u + B(u) = f`, its linearisation and the adjoint linear equation.
//!
//! The linear symbol is integrated exactly; only the remaining drift is
//! stepped, either by exponential Euler or by a Strang splitting whose
//! inner substep is Heun's method.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::source::{add_into, SpaceTimeField};
use crate::spectral::{propagate, Field, LinearOp, TorusGrid};

/// States whose L² norm exceeds this are reported as a blow-up.
pub const BLOWUP_NORM: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExponentialEuler,
    #[default]
    Strang,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub n_points: usize,
    #[serde(default = "yes")]
    pub dealias: bool,
    #[serde(default)]
    pub scheme: Scheme,
    /// Switches the transport term `u u_x` on or off.
    #[serde(default = "yes")]
    pub nonlinear: bool,
}

fn yes() -> bool {
    true
}

impl SolverConfig {
    pub fn new(n_points: usize, dt: f64) -> Self {
        Self {
            dt,
            n_points,
            dealias: true,
            scheme: Scheme::Strang,
            nonlinear: true,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn linear_only(mut self) -> Self {
        self.nonlinear = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::Config(format!("dt must lie in (0, 0.1], got {}", self.dt)));
        }
        TorusGrid::new(self.n_points).map(|_| ())
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.n_points)
    }

    /// Number of uniform steps of size at most `dt` covering `length`.
    pub fn steps_for(&self, length: f64) -> usize {
        ((length / self.dt) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Errors when `u` is non-finite or its norm exceeds [`BLOWUP_NORM`].
pub fn guard(u: &Field, time: f64) -> Result<()> {
    let norm = u.l2_norm();
    if !norm.is_finite() || norm > BLOWUP_NORM {
        return Err(Error::BlowUp { time, norm });
    }
    Ok(())
}

/// Product `a · ∂_x b`, dealiased by the 2/3 rule when requested.
pub fn advective_product(a: &Field, b: &Field, dealias: bool) -> Field {
    if dealias {
        a.dealias().product(&b.dealias().deriv(1)).dealias()
    } else {
        a.product(&b.deriv(1))
    }
}

/// `B(u) = u u_x`.
pub fn nonlinearity(u: &Field, dealias: bool) -> Field {
    advective_product(u, u, dealias)
}

/// The part of the right-hand side that is not integrated exactly.
pub trait Drift: Sync {
    fn op(&self) -> LinearOp;
    /// Drift at stage time `t`; coefficients are frozen at `t_freeze`.
    fn eval(&self, u: &Field, t: f64, t_freeze: f64) -> Field;
}

/// Drift `-B(u) + f(t)` of the KdVB equation.
pub struct KdvbDrift<'a> {
    pub forcing: &'a dyn SpaceTimeField,
    pub dealias: bool,
    pub nonlinear: bool,
}

impl Drift for KdvbDrift<'_> {
    fn op(&self) -> LinearOp {
        LinearOp::Kdvb
    }

    fn eval(&self, u: &Field, t: f64, _t_freeze: f64) -> Field {
        let mut out = if self.nonlinear {
            nonlinearity(u, self.dealias).scale(-1.0)
        } else {
            Field::zeros(u.grid())
        };
        add_into(&mut out, self.forcing, t, 1.0);
        out
    }
}

/// Drift `-advect · w_x - reaction · w + source` of a linear equation with
/// variable coefficients.
pub struct LinearDrift<'a> {
    pub op: LinearOp,
    pub advect: &'a dyn SpaceTimeField,
    pub reaction: &'a dyn SpaceTimeField,
    pub source: &'a dyn SpaceTimeField,
    pub dealias: bool,
}

impl Drift for LinearDrift<'_> {
    fn op(&self) -> LinearOp {
        self.op
    }

    fn eval(&self, w: &Field, t: f64, t_freeze: f64) -> Field {
        let grid = w.grid();
        let mut out = Field::zeros(grid);
        if let Some(a) = self.advect.at(t_freeze, grid) {
            out.axpy(-1.0, &advective_product(&a, w, self.dealias));
        }
        if let Some(b) = self.reaction.at(t_freeze, grid) {
            let bw = if self.dealias {
                b.dealias().product(&w.dealias()).dealias()
            } else {
                b.product(w)
            };
            out.axpy(-1.0, &bw);
        }
        add_into(&mut out, self.source, t, 1.0);
        out
    }
}

/// Drift of the linearisation `w_t + A w + (ū w)_x = η` around `ū`.
pub struct LinearisedDrift<'a> {
    pub ubar: &'a dyn SpaceTimeField,
    pub source: &'a dyn SpaceTimeField,
    pub dealias: bool,
}

impl Drift for LinearisedDrift<'_> {
    fn op(&self) -> LinearOp {
        LinearOp::Kdvb
    }

    fn eval(&self, w: &Field, t: f64, t_freeze: f64) -> Field {
        let grid = w.grid();
        let mut out = Field::zeros(grid);
        if let Some(ub) = self.ubar.at(t_freeze, grid) {
            // (ū w)_x = ū w_x + ū_x w, taken as one derivative of the product.
            let prod = if self.dealias {
                ub.dealias().product(&w.dealias()).dealias()
            } else {
                ub.product(w)
            };
            out.axpy(-1.0, &prod.deriv(1));
        }
        add_into(&mut out, self.source, t, 1.0);
        out
    }
}

/// One step of size `dt` from time `t`.
pub fn advance(u: &Field, t: f64, dt: f64, drift: &dyn Drift, scheme: Scheme) -> Field {
    let op = drift.op();
    let t_mid = t + 0.5 * dt;
    match scheme {
        Scheme::ExponentialEuler => {
            let mut v = u.clone();
            v.axpy(dt, &drift.eval(u, t, t_mid));
            propagate(&v, dt, op)
        }
        Scheme::Strang => {
            let half = propagate(u, 0.5 * dt, op);
            let k1 = drift.eval(&half, t, t_mid);
            let mut pred = half.clone();
            pred.axpy(dt, &k1);
            let k2 = drift.eval(&pred, t + dt, t_mid);
            let mut next = half;
            next.axpy(0.5 * dt, &k1);
            next.axpy(0.5 * dt, &k2);
            propagate(&next, 0.5 * dt, op)
        }
    }
}

/// Integrates from `t0` and returns the state at each of the increasing
/// `targets`, stepping exactly onto every target.
pub fn march(u0: &Field, t0: f64, targets: &[f64], cfg: &SolverConfig, drift: &dyn Drift) -> Result<Vec<Field>> {
    let mut out = Vec::with_capacity(targets.len());
    let mut u = u0.clone();
    let mut t = t0;
    for &target in targets {
        if target < t - 1e-12 {
            return Err(Error::Config(format!(
                "output times must be increasing ({target} after {t})"
            )));
        }
        let length = target - t;
        if length > 1e-14 {
            let n = cfg.steps_for(length);
            let h = length / n as f64;
            for i in 0..n {
                let ti = t + i as f64 * h;
                u = advance(&u, ti, h, drift, cfg.scheme);
                guard(&u, ti + h)?;
            }
        }
        t = target;
        out.push(u.clone());
    }
    Ok(out)
}

/// One KdVB step with a time-independent forcing.
pub fn step(u: &Field, forcing: &Field, cfg: &SolverConfig) -> Result<Field> {
    step_at(u, 0.0, forcing, cfg)
}

/// One KdVB step from time `t`.
pub fn step_at(u: &Field, t: f64, forcing: &dyn SpaceTimeField, cfg: &SolverConfig) -> Result<Field> {
    let drift = KdvbDrift {
        forcing,
        dealias: cfg.dealias,
        nonlinear: cfg.nonlinear,
    };
    let next = advance(u, t, cfg.dt, &drift, cfg.scheme);
    guard(&next, t + cfg.dt)?;
    Ok(next)
}

/// The solution map `S(u0, f) = u(T)` on `[0, T]`.
pub fn solve_s(u0: &Field, forcing: &dyn SpaceTimeField, horizon: f64, cfg: &SolverConfig) -> Result<Field> {
    solve_interval(u0, 0.0, horizon, forcing, cfg)
}

/// `u(t1)` from `u(t0) = u0`.
pub fn solve_interval(u0: &Field, t0: f64, t1: f64, forcing: &dyn SpaceTimeField, cfg: &SolverConfig) -> Result<Field> {
    if t1 <= t0 {
        return Err(Error::Config(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    let drift = KdvbDrift {
        forcing,
        dealias: cfg.dealias,
        nonlinear: cfg.nonlinear,
    };
    Ok(march(u0, t0, &[t1], cfg, &drift)?.pop().expect("one target"))
}

/// Trajectory on `[t0, t0 + length]` recording every `record_every` steps
/// (and always the endpoints).
pub fn simulate(
    u0: &Field,
    forcing: &dyn SpaceTimeField,
    t0: f64,
    length: f64,
    cfg: &SolverConfig,
    record_every: usize,
) -> Result<Trajectory> {
    let drift = KdvbDrift {
        forcing,
        dealias: cfg.dealias,
        nonlinear: cfg.nonlinear,
    };
    run_recorded(u0, t0, length, cfg, &drift, record_every)
}

/// Steps a general drift over a uniform grid, recording a trajectory.
pub fn run_recorded(
    u0: &Field,
    t0: f64,
    length: f64,
    cfg: &SolverConfig,
    drift: &dyn Drift,
    record_every: usize,
) -> Result<Trajectory> {
    let n = cfg.steps_for(length);
    let h = length / n as f64;
    let every = record_every.max(1);
    let mut traj = Trajectory::new();
    let mut u = u0.clone();
    traj.push(t0, u.clone())?;
    for i in 0..n {
        let t = t0 + i as f64 * h;
        u = advance(&u, t, h, drift, cfg.scheme);
        guard(&u, t + h)?;
        if (i + 1) % every == 0 || i + 1 == n {
            traj.push(t0 + (i + 1) as f64 * h, u.clone())?;
        }
    }
    Ok(traj)
}

/// One step of the linearisation around the frozen state `ubar`.
pub fn step_linearised(w: &Field, ubar: &Field, source: &Field, cfg: &SolverConfig) -> Result<Field> {
    let drift = LinearisedDrift {
        ubar,
        source,
        dealias: cfg.dealias,
    };
    let next = advance(w, 0.0, cfg.dt, &drift, cfg.scheme);
    guard(&next, cfg.dt)?;
    Ok(next)
}

/// `w(T)` for the linearisation around the trajectory `ubar` on `[0, T]`.
pub fn solve_linearised(
    w0: &Field,
    ubar: &dyn SpaceTimeField,
    source: &dyn SpaceTimeField,
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<Field> {
    let drift = LinearisedDrift {
        ubar,
        source,
        dealias: cfg.dealias,
    };
    Ok(march(w0, 0.0, &[horizon], cfg, &drift)?.pop().expect("one target"))
}

/// A time-dependent field seen through `x ↦ 2π - x`, `t ↦ T - t`, scaled.
pub struct Reflected<'a> {
    pub inner: &'a dyn SpaceTimeField,
    pub horizon: f64,
    pub factor: f64,
}

impl SpaceTimeField for Reflected<'_> {
    fn at(&self, t: f64, grid: &TorusGrid) -> Option<Field> {
        self.inner
            .at(self.horizon - t, grid)
            .map(|f| f.reflect().scale(self.factor))
    }
}

/// Solves `-v_t - v_xxx - v_xx + a v_x + b v = g`, `v(T) = v_T`, backward
/// in time and returns `v` at the increasing `times ⊂ [0, T]`.
///
/// Internally `y(x, s) = v(2π - x, T - s)` solves the forward problem
/// `y_s + y_xxx - y_xx - ã y_x + b̃ y = g̃` with reflected coefficients.
#[allow(clippy::too_many_arguments)]
pub fn solve_adjoint(
    v_final: &Field,
    a: &dyn SpaceTimeField,
    b: &dyn SpaceTimeField,
    g: &dyn SpaceTimeField,
    horizon: f64,
    cfg: &SolverConfig,
    times: &[f64],
) -> Result<Trajectory> {
    if horizon <= 0.0 {
        return Err(Error::Config("adjoint horizon must be positive".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("adjoint output times must be strictly increasing".into()));
    }
    if times.iter().any(|&t| t < -1e-12 || t > horizon + 1e-12) {
        return Err(Error::Config("adjoint output times must lie in [0, T]".into()));
    }
    let advect = Reflected {
        inner: a,
        horizon,
        factor: -1.0,
    };
    let reaction = Reflected {
        inner: b,
        horizon,
        factor: 1.0,
    };
    let source = Reflected {
        inner: g,
        horizon,
        factor: 1.0,
    };
    let drift = LinearDrift {
        op: LinearOp::KdvbUndamped,
        advect: &advect,
        reaction: &reaction,
        source: &source,
        dealias: cfg.dealias,
    };
    let s_targets: Vec<f64> = times.iter().rev().map(|t| (horizon - t).max(0.0)).collect();
    let ys = march(&v_final.reflect(), 0.0, &s_targets, cfg, &drift)?;
    let mut traj = Trajectory::new();
    for (t, y) in times.iter().zip(ys.iter().rev()) {
        traj.push(*t, y.reflect())?;
    }
    Ok(traj)
}

/// Per-step residual of the energy identity
/// `½ d/dt ‖u‖² + ‖u‖₁² = (f, u)` along a densely stored trajectory.
///
/// The dissipation integral over each step is taken as the mean of the
/// exact values for the linear flow run forward from the left state and
/// backward from the right state, so the residual vanishes for linear
/// evolution and is `O(dt²)` otherwise.
pub fn energy_report(traj: &Trajectory, forcing: &dyn SpaceTimeField) -> Vec<f64> {
    let mut out = Vec::with_capacity(traj.len().saturating_sub(1));
    for i in 0..traj.len().saturating_sub(1) {
        let (t0, t1) = (traj.times[i], traj.times[i + 1]);
        let (u0, u1) = (&traj.states[i], &traj.states[i + 1]);
        let dt = t1 - t0;
        let de = (u1.l2_norm().powi(2) - u0.l2_norm().powi(2)) / (2.0 * dt);
        let dissipation = 0.5 * (linear_dissipation(u0, dt, -1.0) + linear_dissipation(u1, dt, 1.0));
        let work = |t: f64, u: &Field| forcing.at(t, u.grid()).map_or(0.0, |f| f.inner(u));
        let power = 0.5 * (work(t0, u0) + work(t1, u1));
        out.push(de + dissipation - power);
    }
    out
}

/// Mean over `s ∈ [0, dt]` of `‖e^{direction · s Re A} u‖₁²`.
fn linear_dissipation(u: &Field, dt: f64, direction: f64) -> f64 {
    let nyq = u.grid().nyquist();
    let mut acc = 0.0;
    for (k, c) in u.coeffs().iter().enumerate() {
        let lam = 1.0 + (k * k) as f64;
        let w = if k == 0 || k == nyq { 1.0 } else { 2.0 };
        let x = 2.0 * lam * dt * direction;
        let mean = if x.abs() < 1e-8 { 1.0 + 0.5 * x } else { x.exp_m1() / x };
        acc += w * lam * c.norm_sqr() * mean;
    }
    2.0 * PI * acc
}

/// Sampled states of one path.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Field>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(times: Vec<f64>, states: Vec<Field>) -> Result<Self> {
        let mut t = Self::new();
        for (time, s) in times.into_iter().zip(states) {
            t.push(time, s)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, time: f64, state: Field) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if time <= last {
                return Err(Error::Config(format!(
                    "trajectory times must increase ({time} after {last})"
                )));
            }
            let g = self.states[0].grid();
            if g != state.grid() {
                return Err(Error::GridMismatch {
                    left: g.n_points(),
                    right: state.grid().n_points(),
                });
            }
        }
        self.times.push(time);
        self.states.push(state);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&Field> {
        self.states.last()
    }

    pub fn l2_series(&self) -> Vec<f64> {
        self.states.iter().map(Field::l2_norm).collect()
    }

    pub fn h1_series(&self) -> Vec<f64> {
        self.states.iter().map(Field::h1_norm).collect()
    }

    /// Piecewise-linear interpolation in time, constant beyond the ends.
    pub fn interpolate(&self, t: f64) -> Option<Field> {
        let n = self.times.len();
        if n == 0 {
            return None;
        }
        if t <= self.times[0] {
            return Some(self.states[0].clone());
        }
        if t >= self.times[n - 1] {
            return Some(self.states[n - 1].clone());
        }
        let j = self.times.partition_point(|&s| s <= t);
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let theta = (t - t0) / (t1 - t0);
        let mut f = self.states[j - 1].scale(1.0 - theta);
        f.axpy(theta, &self.states[j]);
        Some(f)
    }
}

impl SpaceTimeField for Trajectory {
    fn at(&self, t: f64, grid: &TorusGrid) -> Option<Field> {
        let f = self.interpolate(t)?;
        if f.grid() == grid {
            Some(f)
        } else {
            Some(f.resample(grid))
        }
    }
}
