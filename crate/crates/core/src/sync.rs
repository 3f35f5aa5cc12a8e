//! Nudged pairs `(u, v)`: `v` receives the feedback `λ P_N(u - v)` and both
//! are driven by the same Wiener path. Provides the exponential weight
//! `Γ(t) = (λ_N/2 - L_g²) t - C₀ ∫₀ᵗ ‖u‖₁²`, the supermartingale check of
//! `e^Γ ‖u - v‖²`, the stopping time `τ_{R,β}`, the Girsanov shift
//! `λ f(v) P_N(u - v)` and the stopped nudged system.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{advective_product, guard, Drift, KdvbDrift, SolverConfig};
use crate::error::{Error, Result};
use crate::noise::MultiplicativeNoiseSpec;
use crate::rng::{Domain, StreamKey};
use crate::source::SpaceTimeField;
use crate::spectral::{eigenvalue_of_index, propagate, Field, LinearOp};
use crate::stats::{fit_line, mean, std_error, LineFit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NudgingConfig {
    /// Number of observed modes `N`.
    pub n_observed: usize,
    /// Feedback gain; defaults to `λ_N / 2`.
    #[serde(default)]
    pub gain: Option<f64>,
    #[serde(default = "shared")]
    pub shared_noise: bool,
    /// Constant `C₀` of `Γ`; estimated along the run when absent.
    #[serde(default)]
    pub c0: Option<f64>,
}

fn shared() -> bool {
    true
}

impl NudgingConfig {
    pub fn new(n_observed: usize) -> Self {
        Self {
            n_observed,
            gain: None,
            shared_noise: true,
            c0: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_observed == 0 {
            return Err(Error::Config("nudging needs n_observed ≥ 1".into()));
        }
        if let Some(g) = self.gain {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("nudging gain must be ≥ 0, got {g}")));
            }
        }
        Ok(())
    }

    /// `λ_N`.
    pub fn lambda_n(&self) -> f64 {
        eigenvalue_of_index(self.n_observed)
    }

    pub fn gain(&self) -> f64 {
        self.gain.unwrap_or(0.5 * self.lambda_n())
    }
}

/// One exponential Euler(-Maruyama) step
/// `v ↦ e^{-dt A}(v + dt(-B(v) + h(t) + feedback) + g(v) ΔW)`.
#[allow(clippy::too_many_arguments)]
fn em_step(
    v: &Field,
    t: f64,
    dt: f64,
    noise: Option<&MultiplicativeNoiseSpec>,
    forcing: &dyn SpaceTimeField,
    solver: &SolverConfig,
    dw: &[f64],
    feedback: Option<&Field>,
) -> Result<Field> {
    let drift = KdvbDrift {
        forcing,
        dealias: solver.dealias,
        nonlinear: solver.nonlinear,
    };
    let mut next = v.clone();
    next.axpy(dt, &drift.eval(v, t, t + 0.5 * dt));
    if let Some(fb) = feedback {
        next.axpy(dt, fb);
    }
    if let Some(spec) = noise {
        next.axpy(1.0, &spec.g_apply(v, dw));
    }
    let next = propagate(&next, dt, LinearOp::Kdvb);
    guard(&next, t + dt)?;
    Ok(next)
}

/// One step of the nudged equation for `v` given the reference state `u`.
/// With zero gain this is exactly the plain stochastic step.
#[allow(clippy::too_many_arguments)]
pub fn step_nudged(
    v: &Field,
    u: &Field,
    t: f64,
    cfg: &NudgingConfig,
    noise: Option<&MultiplicativeNoiseSpec>,
    forcing: &dyn SpaceTimeField,
    solver: &SolverConfig,
    dw: &[f64],
) -> Result<Field> {
    let lambda = cfg.gain();
    let feedback = (lambda != 0.0).then(|| u.sub(v).project(cfg.n_observed).scale(lambda));
    em_step(v, t, solver.dt, noise, forcing, solver, dw, feedback.as_ref())
}

/// `2 (|(B(u) - B(v), w)| - ½‖w‖₁²) / (‖u‖₁² ‖w‖²)`, the smallest `C₀`
/// making the energy inequality for `w = u - v` hold at this state.
pub fn c0_sample(u: &Field, v: &Field, dealias: bool) -> f64 {
    let w = u.sub(v);
    let (wn, un) = (w.l2_norm().powi(2), u.h1_norm().powi(2));
    if wn == 0.0 || un == 0.0 {
        return 0.0;
    }
    // B(u) - B(v) = w u_x + v w_x, formed without cancellation for small w.
    let diff = advective_product(&w, u, dealias).add(&advective_product(v, &w, dealias));
    let tri = diff.inner(&w).abs();
    (2.0 * (tri - 0.5 * w.h1_norm().powi(2)) / (un * wn)).max(0.0)
}

/// The shift `λ f(v) P_N(u - v)` and its norm in the noise space.
#[derive(Clone, Debug, PartialEq)]
pub struct Shift {
    pub coeffs: Vec<f64>,
    pub norm: f64,
}

/// Evaluates the Girsanov shift. `f` is taken at the nudged state `v`, so
/// that `g(v) h = λ P_N(u - v)` holds for every growth regime.
pub fn girsanov_shift(u: &Field, v: &Field, cfg: &NudgingConfig, noise: &MultiplicativeNoiseSpec) -> Result<Shift> {
    if noise.rank() < cfg.n_observed {
        return Err(Error::Domain(format!(
            "shift needs the right-inverse rank M = {} ≥ N = {}",
            noise.rank(),
            cfg.n_observed
        )));
    }
    if !noise.has_right_inverse() {
        return Err(Error::Domain("noise has no bounded right inverse".into()));
    }
    let target = u.sub(v).project(cfg.n_observed).scale(cfg.gain());
    let coeffs = noise.f_apply(v, &target);
    let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    Ok(Shift { coeffs, norm })
}

/// Records of one coupled path at the sampling times.
#[derive(Clone, Debug, Default)]
pub struct PairPath {
    pub times: Vec<f64>,
    /// `‖u - v‖²`.
    pub w_sq: Vec<f64>,
    /// `∫₀ᵗ ‖u‖₁²`.
    pub u_h1_integral: Vec<f64>,
    /// `∫₀ᵗ ‖P_N(u - v)‖²`.
    pub observed_integral: Vec<f64>,
    /// `∫₀ᵗ ‖h‖²_U 1_{s ≤ σ_K}` (stopped runs only).
    pub novikov: Vec<f64>,
    /// Largest [`c0_sample`] along the path.
    pub c0_max: f64,
    /// `σ_K` if reached within the horizon.
    pub sigma_k: Option<f64>,
    pub final_u: Option<Field>,
    pub final_v: Option<Field>,
}

/// How the second copy is driven.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Coupling {
    /// Feedback `λ P_N(u - v)` in the drift.
    Nudged,
    /// Shifted noise `dW + h 1_{s ≤ σ_K} dt`, with threshold `K`.
    Stopped(f64),
}

#[allow(clippy::too_many_arguments)]
fn run_pair(
    u0: &Field,
    v0: &Field,
    cfg: &NudgingConfig,
    noise: Option<&MultiplicativeNoiseSpec>,
    forcing: &dyn SpaceTimeField,
    horizon: f64,
    solver: &SolverConfig,
    key: StreamKey,
    record_every: usize,
    coupling: Coupling,
) -> Result<PairPath> {
    let n = solver.steps_for(horizon);
    let dt = horizon / n as f64;
    let every = record_every.max(1);
    let mut rng_u = key.stream(Domain::Wiener, 0);
    let mut rng_v = key.stream(Domain::Wiener, 1);
    let n_noise = noise.map_or(0, |s| s.n_modes());
    let zero = vec![0.0; n_noise];

    let (mut u, mut v) = (u0.clone(), v0.clone());
    let mut path = PairPath::default();
    let (mut int_u, mut int_obs, mut novikov) = (0.0, 0.0, 0.0);
    let record = |p: &mut PairPath, t: f64, u: &Field, v: &Field, iu: f64, io: f64, nv: f64| {
        p.times.push(t);
        p.w_sq.push(u.sub(v).l2_norm().powi(2));
        p.u_h1_integral.push(iu);
        p.observed_integral.push(io);
        p.novikov.push(nv);
    };
    record(&mut path, 0.0, &u, &v, 0.0, 0.0, 0.0);
    path.c0_max = c0_sample(&u, &v, solver.dealias);
    let mut active = match coupling {
        Coupling::Stopped(k) if k <= 0.0 => {
            path.sigma_k = Some(0.0);
            false
        }
        _ => true,
    };
    let obs_sq = |u: &Field, v: &Field| u.sub(v).project(cfg.n_observed).l2_norm().powi(2);
    for i in 0..n {
        let t = i as f64 * dt;
        let dw_u = match noise {
            Some(s) => s.draw_increments(dt, &mut rng_u),
            None => zero.clone(),
        };
        let dw_v = match noise {
            Some(s) if !cfg.shared_noise => s.draw_increments(dt, &mut rng_v),
            _ => dw_u.clone(),
        };
        let obs_before = obs_sq(&u, &v);
        let h1_before = u.h1_norm().powi(2);
        let v_next = match coupling {
            Coupling::Nudged => em_step(
                &v,
                t,
                dt,
                noise,
                forcing,
                solver,
                &dw_v,
                (cfg.gain() != 0.0)
                    .then(|| u.sub(&v).project(cfg.n_observed).scale(cfg.gain()))
                    .as_ref(),
            )?,
            Coupling::Stopped(_) => {
                let spec = noise.ok_or_else(|| Error::Config("stopped coupling needs multiplicative noise".into()))?;
                if active {
                    let shift = girsanov_shift(&u, &v, cfg, spec)?;
                    novikov += shift.norm * shift.norm * dt;
                    let shifted: Vec<f64> = dw_v.iter().zip(&shift.coeffs).map(|(a, b)| a + b * dt).collect();
                    em_step(&v, t, dt, noise, forcing, solver, &shifted, None)?
                } else {
                    em_step(&v, t, dt, noise, forcing, solver, &dw_v, None)?
                }
            }
        };
        let u_next = em_step(&u, t, dt, noise, forcing, solver, &dw_u, None)?;
        u = u_next;
        v = v_next;
        int_u += 0.5 * dt * (h1_before + u.h1_norm().powi(2));
        int_obs += 0.5 * dt * (obs_before + obs_sq(&u, &v));
        if let Coupling::Stopped(k) = coupling {
            if active && int_obs >= k {
                active = false;
                path.sigma_k = Some(t + dt);
            }
        }
        path.c0_max = path.c0_max.max(c0_sample(&u, &v, solver.dealias));
        if (i + 1) % every == 0 || i + 1 == n {
            record(&mut path, (i + 1) as f64 * dt, &u, &v, int_u, int_obs, novikov);
        }
    }
    path.final_u = Some(u);
    path.final_v = Some(v);
    Ok(path)
}

/// Errors below this fraction of the largest mean-square error are treated
/// as round-off by the decay fits.
pub const ROUND_OFF_FLOOR: f64 = 1e-24;

/// Ensemble of nudged pairs.
#[derive(Clone, Debug)]
pub struct SyncEnsemble {
    pub paths: Vec<PairPath>,
    pub lambda_n: f64,
    pub lipschitz: f64,
    /// `C₀` used for `Γ`: supplied, or the largest estimate over paths.
    pub c0: f64,
    pub w0_sq: f64,
}

/// Runs `n_paths` nudged pairs from `(u0, v0)`; path `p` uses substream `p`.
#[allow(clippy::too_many_arguments)]
pub fn run_sync(
    u0: &Field,
    v0: &Field,
    cfg: &NudgingConfig,
    noise: Option<&MultiplicativeNoiseSpec>,
    forcing: &(dyn SpaceTimeField + Sync),
    horizon: f64,
    solver: &SolverConfig,
    n_paths: usize,
    seed: u64,
    record_every: usize,
) -> Result<SyncEnsemble> {
    run_ensemble(
        u0,
        v0,
        cfg,
        noise,
        forcing,
        horizon,
        solver,
        n_paths,
        seed,
        record_every,
        Coupling::Nudged,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_ensemble(
    u0: &Field,
    v0: &Field,
    cfg: &NudgingConfig,
    noise: Option<&MultiplicativeNoiseSpec>,
    forcing: &(dyn SpaceTimeField + Sync),
    horizon: f64,
    solver: &SolverConfig,
    n_paths: usize,
    seed: u64,
    record_every: usize,
    coupling: Coupling,
) -> Result<SyncEnsemble> {
    cfg.validate()?;
    if n_paths == 0 {
        return Err(Error::Config("need at least one path".into()));
    }
    if horizon <= 0.0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let key = StreamKey::new(seed);
    let paths = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            run_pair(
                u0,
                v0,
                cfg,
                noise,
                forcing,
                horizon,
                solver,
                key.path(p),
                record_every,
                coupling,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let c0 = cfg
        .c0
        .unwrap_or_else(|| paths.iter().map(|p| p.c0_max).fold(0.0, f64::max));
    Ok(SyncEnsemble {
        paths,
        lambda_n: cfg.lambda_n(),
        lipschitz: noise.map_or(0.0, |s| s.constants().lipschitz),
        c0,
        w0_sq: u0.sub(v0).l2_norm().powi(2),
    })
}

/// Row of the synchronisation report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SyncRow {
    pub t: f64,
    pub mean_sq_error: f64,
    pub gamma: f64,
    pub lyapunov_lhs: f64,
    pub lyapunov_se: f64,
    pub n_paths: usize,
}

/// Decay fit of the mean-square error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub model: String,
    pub rate: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl SyncEnsemble {
    pub fn times(&self) -> &[f64] {
        &self.paths[0].times
    }

    pub fn mean_sq_error(&self) -> Vec<f64> {
        (0..self.times().len())
            .map(|i| mean(&self.paths.iter().map(|p| p.w_sq[i]).collect::<Vec<_>>()))
            .collect()
    }

    /// `Γ` along path `p`.
    pub fn gamma(&self, p: usize) -> Vec<f64> {
        let path = &self.paths[p];
        let a = 0.5 * self.lambda_n - self.lipschitz * self.lipschitz;
        path.times
            .iter()
            .zip(&path.u_h1_integral)
            .map(|(t, i)| a * t - self.c0 * i)
            .collect()
    }

    /// `e^{Γ(t)} ‖w(t)‖² + (λ_N/2) ∫₀ᵗ e^Γ ‖w‖²` along path `p`.
    pub fn lyapunov(&self, p: usize) -> Vec<f64> {
        let path = &self.paths[p];
        let gamma = self.gamma(p);
        let weighted: Vec<f64> = gamma.iter().zip(&path.w_sq).map(|(g, w)| g.exp() * w).collect();
        let mut out = Vec::with_capacity(weighted.len());
        let mut integral = 0.0;
        for i in 0..weighted.len() {
            if i > 0 {
                integral += 0.5 * (path.times[i] - path.times[i - 1]) * (weighted[i] + weighted[i - 1]);
            }
            out.push(weighted[i] + 0.5 * self.lambda_n * integral);
        }
        out
    }

    pub fn report(&self) -> Vec<SyncRow> {
        let n = self.paths.len();
        let msq = self.mean_sq_error();
        let gammas: Vec<Vec<f64>> = (0..n).map(|p| self.gamma(p)).collect();
        let lyap: Vec<Vec<f64>> = (0..n).map(|p| self.lyapunov(p)).collect();
        self.times()
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let l: Vec<f64> = lyap.iter().map(|s| s[i]).collect();
                SyncRow {
                    t,
                    mean_sq_error: msq[i],
                    gamma: mean(&gammas.iter().map(|s| s[i]).collect::<Vec<_>>()),
                    lyapunov_lhs: mean(&l),
                    lyapunov_se: std_error(&l),
                    n_paths: n,
                }
            })
            .collect()
    }

    /// Times at which the ensemble mean of the Lyapunov functional exceeds
    /// `‖w(0)‖²` by more than three standard errors plus `rel_tol ‖w(0)‖²`.
    pub fn supermartingale_violations(&self, rel_tol: f64) -> Vec<f64> {
        gamma_supermartingale_check(&self.report(), self.w0_sq, rel_tol)
    }

    /// Smallest error kept by the fits: samples at round-off level would
    /// flatten the tail.
    fn fit_floor(msq: &[f64]) -> f64 {
        ROUND_OFF_FLOOR * msq.iter().cloned().fold(0.0, f64::max)
    }

    /// Exponential fit `log E‖w‖² ≈ a - rate t` over samples above round-off.
    pub fn exponential_fit(&self) -> Option<DecayFit> {
        let msq = self.mean_sq_error();
        let floor = Self::fit_floor(&msq);
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .times()
            .iter()
            .zip(&msq)
            .filter(|(_, m)| **m > floor && m.is_finite())
            .map(|(t, m)| (*t, m.ln()))
            .unzip();
        fit_line(&x, &y).map(|LineFit { slope, intercept, r2 }| DecayFit {
            model: "exponential".into(),
            rate: -slope,
            intercept,
            r2,
        })
    }

    /// Power-law fit `log E‖w‖² ≈ a - rate log t` for `t ≥ t_min`.
    pub fn power_fit(&self, t_min: f64) -> Option<DecayFit> {
        let msq = self.mean_sq_error();
        let floor = Self::fit_floor(&msq);
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .times()
            .iter()
            .zip(&msq)
            .filter(|(t, m)| **t >= t_min && **t > 0.0 && **m > floor)
            .map(|(t, m)| (t.ln(), m.ln()))
            .unzip();
        fit_line(&x, &y).map(|LineFit { slope, intercept, r2 }| DecayFit {
            model: "power".into(),
            rate: -slope,
            intercept,
            r2,
        })
    }

    /// `τ_{R,β}` along path `p`.
    pub fn stopping_tau(&self, p: usize, r: f64, beta: f64) -> Option<f64> {
        let path = &self.paths[p];
        stopping_tau(
            &path.times,
            &path.u_h1_integral,
            self.c0,
            self.lambda_n,
            self.lipschitz,
            r,
            beta,
        )
    }

    /// Empirical `P(τ_{R,β} < ∞)` over the ensemble for each `R`.
    pub fn tau_tail(&self, radii: &[f64], beta: f64) -> Vec<f64> {
        radii
            .iter()
            .map(|&r| {
                let hits = (0..self.paths.len())
                    .filter(|&p| self.stopping_tau(p, r, beta).is_some())
                    .count();
                hits as f64 / self.paths.len() as f64
            })
            .collect()
    }
}

/// Flags report times where the mean Lyapunov functional exceeds its bound.
/// Rows whose mean-square error has reached round-off are skipped: there
/// `e^Γ` multiplies noise rather than the error.
pub fn gamma_supermartingale_check(rows: &[SyncRow], w0_sq: f64, rel_tol: f64) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.mean_sq_error > ROUND_OFF_FLOOR * w0_sq)
        .filter(|r| r.lyapunov_lhs > w0_sq * (1.0 + rel_tol + 1e-12) + 3.0 * r.lyapunov_se)
        .map(|r| r.t)
        .collect()
}

/// First sample time with `C₀ I(t) - (λ_N/4 - L_g²) t - β ≥ R`, where
/// `I(t) = ∫₀ᵗ ‖u‖₁²`; `None` stands for `τ = ∞` on the sampled horizon.
pub fn stopping_tau(
    times: &[f64],
    h1_integral: &[f64],
    c0: f64,
    lambda_n: f64,
    lipschitz: f64,
    r: f64,
    beta: f64,
) -> Option<f64> {
    let a = 0.25 * lambda_n - lipschitz * lipschitz;
    times
        .iter()
        .zip(h1_integral)
        .find(|(t, i)| c0 * **i - a * **t - beta >= r)
        .map(|(t, _)| *t)
}

/// Outcome of the stopped nudged system.
#[derive(Clone, Debug)]
pub struct StoppedReport {
    pub ensemble: SyncEnsemble,
    pub k: f64,
    /// Fraction of paths with `σ_K = ∞` on the horizon.
    pub never_stopped: f64,
    /// Fraction of paths with `‖u(T) - ṽ(T)‖ ≤ tol`.
    pub synchronised: f64,
    pub tolerance: f64,
}

/// Integrates `u` and the shifted copy `ṽ` driven by `dW + h 1_{s ≤ σ_K} ds`.
#[allow(clippy::too_many_arguments)]
pub fn run_nudged_stopped(
    u0: &Field,
    v0: &Field,
    cfg: &NudgingConfig,
    noise: &MultiplicativeNoiseSpec,
    forcing: &(dyn SpaceTimeField + Sync),
    k: f64,
    horizon: f64,
    solver: &SolverConfig,
    n_paths: usize,
    seed: u64,
    tolerance: f64,
) -> Result<StoppedReport> {
    if k.is_nan() || k < 0.0 {
        return Err(Error::Config(format!("stopping level K must be ≥ 0, got {k}")));
    }
    let every = solver.steps_for(1.0).max(1);
    let ensemble = run_ensemble(
        u0,
        v0,
        cfg,
        Some(noise),
        forcing,
        horizon,
        solver,
        n_paths,
        seed,
        every,
        Coupling::Stopped(k),
    )?;
    let n = ensemble.paths.len() as f64;
    let never_stopped = ensemble.paths.iter().filter(|p| p.sigma_k.is_none()).count() as f64 / n;
    let synchronised = ensemble
        .paths
        .iter()
        .filter(|p| p.w_sq.last().is_some_and(|w| w.sqrt() <= tolerance))
        .count() as f64
        / n;
    Ok(StoppedReport {
        ensemble,
        k,
        never_stopped,
        synchronised,
        tolerance,
    })
}

/// Stopping level `K = R* + Σ_{n ≥ m*} n^{-2}` with `R*` four times the
/// pilot-ensemble mean of `∫₀^{m*} ‖P_N(u - v)‖²`, so that Chebyshev's
/// inequality bounds the chance of exceeding `R*` by 1/4.
#[allow(clippy::too_many_arguments)]
pub fn stopping_level(
    u0: &Field,
    v0: &Field,
    cfg: &NudgingConfig,
    noise: &MultiplicativeNoiseSpec,
    forcing: &(dyn SpaceTimeField + Sync),
    m_star: usize,
    solver: &SolverConfig,
    n_pilot: usize,
    seed: u64,
) -> Result<f64> {
    let m_star = m_star.max(1);
    let pilot = run_sync(
        u0,
        v0,
        cfg,
        Some(noise),
        forcing,
        m_star as f64,
        solver,
        n_pilot,
        seed,
        usize::MAX,
    )?;
    let r_star = 4.0
        * mean(
            &pilot
                .paths
                .iter()
                .map(|p| *p.observed_integral.last().expect("recorded"))
                .collect::<Vec<_>>(),
        );
    // Σ_{n ≥ m} n^{-2} = ψ'(m); the tail beyond 10⁶ terms is below 1e-6.
    let tail: f64 = (m_star..1_000_000).map(|n| 1.0 / (n as f64 * n as f64)).sum::<f64>() + 1e-6;
    Ok(r_star + tail)
}
