//! The kicked Markov chain `u_k = S(u_{k-1}, h + η_k)`, sample clouds and
//! moment diagnostics.

pub mod distance;
pub mod fit;

pub use distance::{bounded_lipschitz_1d, dual_lipschitz_estimate, Dictionary, EmpiricalMeasure};
pub use fit::{mixing_rate_fit, MixingFit};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{guard, solve_interval, SolverConfig};
use crate::error::{Error, Result};
use crate::noise::localised::LocalisedNoiseSpec;
use crate::noise::multiplicative::{stochastic_step_with, MultiplicativeNoiseSpec};
use crate::rng::{Domain, StreamKey};
use crate::source::{SpaceTimeField, Sum};
use crate::spectral::Field;
use crate::stats;
use crate::sync::{step_nudged, NudgingConfig};

/// Path bit marking the second chain's streams in an independent coupling.
const INDEPENDENT_PATH: u64 = 1 << 63;

/// Random forcing between two chain states.
#[derive(Clone, Copy, Debug)]
pub enum ChainNoise<'a> {
    Off,
    /// A fresh kick on every period, in local time.
    Localised(&'a LocalisedNoiseSpec),
    /// Continuous multiplicative noise integrated over each period.
    Multiplicative(&'a MultiplicativeNoiseSpec),
}

#[derive(Clone, Debug)]
pub struct ChainConfig {
    pub period: f64,
    pub n_steps: usize,
    pub burn_in: usize,
    pub solver: SolverConfig,
}

impl ChainConfig {
    pub fn validate(&self, noise: ChainNoise<'_>) -> Result<()> {
        self.solver.validate()?;
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::Config(format!(
                "kick period must be positive, got {}",
                self.period
            )));
        }
        if self.n_steps <= self.burn_in {
            return Err(Error::Config(format!(
                "chain length {} must exceed the burn-in {}",
                self.n_steps, self.burn_in
            )));
        }
        if let ChainNoise::Localised(spec) = noise {
            if (spec.period() - self.period).abs() > 1e-12 * self.period {
                return Err(Error::Config(format!(
                    "kick noise built for period {} used with period {}",
                    spec.period(),
                    self.period
                )));
            }
        }
        Ok(())
    }
}

/// One application of `S`: the state after kick number `kick` (1-based).
pub fn chain_step(
    u: &Field,
    kick: u64,
    h: &dyn SpaceTimeField,
    noise: ChainNoise<'_>,
    cfg: &ChainConfig,
    key: StreamKey,
) -> Result<Field> {
    match noise {
        ChainNoise::Off => solve_interval(u, 0.0, cfg.period, h, &cfg.solver),
        ChainNoise::Localised(spec) => {
            let sample = spec.sample_kick(key, kick);
            let eta = spec.kick(&sample);
            solve_interval(u, 0.0, cfg.period, &Sum(h, &eta), &cfg.solver)
        }
        ChainNoise::Multiplicative(spec) => {
            let (n, dt) = substeps(cfg);
            let mut rng = key.stream(Domain::Wiener, kick);
            let mut v = u.clone();
            for j in 0..n {
                let dw = spec.draw_increments(dt, &mut rng);
                v = stochastic_step_with(&v, j as f64 * dt, dt, spec, h, &cfg.solver, &dw)?;
            }
            Ok(v)
        }
    }
}

fn substeps(cfg: &ChainConfig) -> (usize, f64) {
    let n = cfg.solver.steps_for(cfg.period);
    (n, cfg.period / n as f64)
}

/// States `u_{first-1}, u_first, …, u_{first+n-1}` starting from `u` as the
/// state before kick `first`. Restarting from any stored state with the
/// matching kick number reproduces the continuation exactly.
pub fn run_chain_from(
    u: &Field,
    first: u64,
    n: usize,
    h: &dyn SpaceTimeField,
    noise: ChainNoise<'_>,
    cfg: &ChainConfig,
    key: StreamKey,
) -> Result<Vec<Field>> {
    let mut states = Vec::with_capacity(n + 1);
    states.push(u.clone());
    for k in 0..n as u64 {
        let next = chain_step(states.last().unwrap(), first + k, h, noise, cfg, key)?;
        states.push(next);
    }
    Ok(states)
}

/// `u_0, …, u_{n_steps}`.
pub fn run_chain(
    u0: &Field,
    h: &dyn SpaceTimeField,
    noise: ChainNoise<'_>,
    cfg: &ChainConfig,
    key: StreamKey,
) -> Result<Vec<Field>> {
    cfg.validate(noise)?;
    run_chain_from(u0, 1, cfg.n_steps, h, noise, cfg, key)
}

/// `clouds[k][p]` is the state after `k` kicks on path `p`.
pub fn run_ensemble(
    u0: &Field,
    h: &dyn SpaceTimeField,
    noise: ChainNoise<'_>,
    cfg: &ChainConfig,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<Field>>> {
    cfg.validate(noise)?;
    let chains: Vec<Vec<Field>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| run_chain_from(u0, 1, cfg.n_steps, h, noise, cfg, StreamKey::new(seed).path(p)))
        .collect::<Result<_>>()?;
    Ok((0..=cfg.n_steps)
        .map(|k| chains.iter().map(|c| c[k].clone()).collect())
        .collect())
}

/// States of one long chain after `burn_in`, every `thin`-th kept.
pub fn stationary_samples(
    u0: &Field,
    h: &dyn SpaceTimeField,
    noise: ChainNoise<'_>,
    cfg: &ChainConfig,
    thin: usize,
    key: StreamKey,
) -> Result<Vec<Field>> {
    let thin = thin.max(1);
    let states = run_chain(u0, h, noise, cfg, key)?;
    Ok(states.into_iter().skip(cfg.burn_in + 1).step_by(thin).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// Both chains see the same kicks or Wiener increments.
    Shared,
    /// The second chain draws from its own streams.
    Independent,
}

#[derive(Clone, Debug, Serialize)]
pub struct CouplingReport {
    /// `distances[p][k] = ‖u_k - v_k‖` on path `p`.
    pub distances: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl CouplingReport {
    pub fn n_steps(&self) -> usize {
        self.distances.first().map_or(0, |d| d.len() - 1)
    }

    /// Fraction of paths with `‖u_k - v_k‖ ≤ ε`, per `k`.
    pub fn fraction_within(&self) -> Vec<f64> {
        let n = self.distances.len().max(1) as f64;
        (0..=self.n_steps())
            .map(|k| self.distances.iter().filter(|d| d[k] <= self.epsilon).count() as f64 / n)
            .collect()
    }

    pub fn mean_distance(&self) -> Vec<f64> {
        (0..=self.n_steps())
            .map(|k| stats::mean(&self.distances.iter().map(|d| d[k]).collect::<Vec<_>>()))
            .collect()
    }
}

/// Paired chains from `u0` and `v0`. With multiplicative noise the second
/// chain may additionally be nudged towards the first.
#[allow(clippy::too_many_arguments)]
pub fn two_chain_coupling(
    u0: &Field,
    v0: &Field,
    h: &dyn SpaceTimeField,
    noise: ChainNoise<'_>,
    cfg: &ChainConfig,
    mode: CouplingMode,
    nudging: Option<&NudgingConfig>,
    n_paths: usize,
    seed: u64,
    epsilon: f64,
) -> Result<CouplingReport> {
    cfg.validate(noise)?;
    if let Some(n) = nudging {
        n.validate()?;
        if !matches!(noise, ChainNoise::Multiplicative(_) | ChainNoise::Off) {
            return Err(Error::Config(
                "nudged coupling needs multiplicative noise or none".into(),
            ));
        }
    }
    let distances = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let ku = StreamKey::new(seed).path(p);
            let kv = match mode {
                CouplingMode::Shared => ku,
                CouplingMode::Independent => ku.path(p | INDEPENDENT_PATH),
            };
            coupled_path(u0, v0, h, noise, cfg, nudging, ku, kv)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CouplingReport { distances, epsilon })
}

#[allow(clippy::too_many_arguments)]
fn coupled_path(
    u0: &Field,
    v0: &Field,
    h: &dyn SpaceTimeField,
    noise: ChainNoise<'_>,
    cfg: &ChainConfig,
    nudging: Option<&NudgingConfig>,
    ku: StreamKey,
    kv: StreamKey,
) -> Result<Vec<f64>> {
    let (mut u, mut v) = (u0.clone(), v0.clone());
    let mut out = Vec::with_capacity(cfg.n_steps + 1);
    out.push(u.sub(&v).l2_norm());
    for k in 1..=cfg.n_steps as u64 {
        match nudging {
            None => {
                u = chain_step(&u, k, h, noise, cfg, ku)?;
                v = chain_step(&v, k, h, noise, cfg, kv)?;
            }
            Some(nudge) => {
                let spec = match noise {
                    ChainNoise::Multiplicative(s) => Some(s),
                    _ => None,
                };
                let (n, dt) = substeps(cfg);
                let mut ru = ku.stream(Domain::Wiener, k);
                let mut rv = kv.stream(Domain::Wiener, k);
                let shared = ku == kv;
                let solver = SolverConfig {
                    dt,
                    ..cfg.solver.clone()
                };
                for j in 0..n {
                    let t = j as f64 * dt;
                    let (du, dv) = match spec {
                        Some(s) => {
                            let du = s.draw_increments(dt, &mut ru);
                            let dv = if shared {
                                du.clone()
                            } else {
                                s.draw_increments(dt, &mut rv)
                            };
                            (du, dv)
                        }
                        None => (Vec::new(), Vec::new()),
                    };
                    let next_u = match spec {
                        Some(s) => stochastic_step_with(&u, t, dt, s, h, &solver, &du)?,
                        None => step_nudged(
                            &u,
                            &u,
                            t,
                            &NudgingConfig {
                                gain: Some(0.0),
                                ..nudge.clone()
                            },
                            None,
                            h,
                            &solver,
                            &du,
                        )?,
                    };
                    v = step_nudged(&v, &u, t, nudge, spec, h, &solver, &dv)?;
                    u = next_u;
                }
            }
        }
        out.push(u.sub(&v).l2_norm());
    }
    Ok(out)
}

/// Distance from the ensemble law after `k` kicks to a reference cloud.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DistanceRow {
    pub k: usize,
    pub distance: f64,
    pub n_samples: usize,
}

#[derive(Clone, Debug)]
pub struct MixingSetup {
    pub n_chains: usize,
    pub dim: usize,
    /// Kicks discarded at the start of the reference and floor chains.
    pub reference_burn_in: usize,
    /// Kicks of the reference chain kept after its burn-in.
    pub reference_len: usize,
    pub thin: usize,
    /// Only distances above `floor_factor × noise floor` enter the fit.
    pub floor_factor: f64,
}

impl Default for MixingSetup {
    fn default() -> Self {
        Self {
            n_chains: 128,
            dim: 8,
            reference_burn_in: 40,
            reference_len: 1024,
            thin: 1,
            floor_factor: 3.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MixingReport {
    pub rows: Vec<DistanceRow>,
    /// Distance between an independent stationary cloud and the reference.
    pub floor: f64,
    pub fit: Option<MixingFit>,
    pub fit_error: Option<String>,
    /// Ensemble states after the last kick.
    #[serde(skip)]
    pub final_cloud: Vec<Field>,
}

/// Ensemble law after `k` kicks against a long-run reference cloud, with
/// an exponential fit over the part of the series above sampling noise.
pub fn mixing_experiment(
    u0: &Field,
    h: &dyn SpaceTimeField,
    noise: ChainNoise<'_>,
    cfg: &ChainConfig,
    setup: &MixingSetup,
    seed: u64,
) -> Result<MixingReport> {
    cfg.validate(noise)?;
    let clouds = run_ensemble(u0, h, noise, cfg, setup.n_chains, seed)?;
    // Reference and floor chains start from the ensemble's final states so
    // that the burn-in is short; they use path keys the ensemble never does.
    let start = clouds.last().unwrap()[0].clone();
    let ref_cfg = ChainConfig {
        n_steps: setup.reference_burn_in + setup.reference_len * setup.thin.max(1),
        burn_in: setup.reference_burn_in,
        ..cfg.clone()
    };
    let reference = stationary_samples(
        &start,
        h,
        noise,
        &ref_cfg,
        setup.thin,
        StreamKey::new(seed).path(u64::MAX),
    )?;
    let reference = EmpiricalMeasure::from_fields(&reference, setup.dim)?;
    let floor_cloud: Vec<Field> = (0..setup.n_chains as u64)
        .into_par_iter()
        .map(|p| {
            let key = StreamKey::new(seed).path(p | INDEPENDENT_PATH);
            let states = run_chain_from(
                &clouds.last().unwrap()[p as usize],
                1,
                setup.reference_burn_in.max(1),
                h,
                noise,
                cfg,
                key,
            )?;
            Ok(states.last().unwrap().clone())
        })
        .collect::<Result<_>>()?;
    let dictionary = Dictionary::new(&reference, seed)?;
    let floor = dictionary.distance(&EmpiricalMeasure::from_fields(&floor_cloud, setup.dim)?, &reference)?;
    let rows = clouds
        .iter()
        .enumerate()
        .map(|(k, cloud)| {
            let mu = EmpiricalMeasure::from_fields(cloud, setup.dim)?;
            Ok(DistanceRow {
                k,
                distance: dictionary.distance(&mu, &reference)?,
                n_samples: cloud.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let usable: Vec<(f64, f64)> = rows
        .iter()
        .take_while(|r| r.distance > setup.floor_factor * floor)
        .map(|r| (r.k as f64, r.distance))
        .collect();
    let (fit, fit_error) = match mixing_rate_fit(&usable) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let final_cloud = clouds.into_iter().next_back().unwrap_or_default();
    Ok(MixingReport {
        rows,
        floor,
        fit,
        fit_error,
        final_cloud,
    })
}

/// Ensemble moments of a continuous multiplicative-noise solution.
#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub p: f64,
    pub b: f64,
    pub u0_sq: f64,
    pub times: Vec<f64>,
    /// `E‖u(t)‖²`
    pub mean_sq: Vec<f64>,
    /// `E ∫₀ᵗ ‖u‖₁²`
    pub mean_dissipation: Vec<f64>,
    /// `E‖u(t)‖^p`
    pub mean_p: Vec<f64>,
    /// Standard error of `E‖u‖² + 1.5 E∫‖u‖₁²`.
    pub lhs_se: Vec<f64>,
    pub n_paths: usize,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Boundedness {
    pub sup: f64,
    pub early: f64,
    pub late: f64,
    pub bounded: bool,
}

impl MomentReport {
    pub fn lhs(&self) -> Vec<f64> {
        self.mean_sq
            .iter()
            .zip(&self.mean_dissipation)
            .map(|(a, d)| a + 1.5 * d)
            .collect()
    }

    pub fn rhs(&self, margin: f64) -> Vec<f64> {
        self.times
            .iter()
            .map(|t| self.u0_sq + self.b * (1.0 + margin) * t)
            .collect()
    }

    /// Times at which `E‖u‖² + 1.5 E∫‖u‖₁² > ‖u₀‖² + (1 + margin) b t`,
    /// up to rounding in the ensemble mean.
    pub fn dissipation_violations(&self, margin: f64) -> Vec<f64> {
        let (lhs, rhs) = (self.lhs(), self.rhs(margin));
        self.times
            .iter()
            .zip(lhs.iter().zip(&rhs))
            .filter(|(_, (l, r))| **l > **r * (1.0 + 1e-12))
            .map(|(t, _)| *t)
            .collect()
    }

    /// `E‖u‖^p` after `burn_in`: the last quarter of the window must not
    /// exceed 1.5 times the first quarter.
    pub fn boundedness(&self, burn_in: f64) -> Boundedness {
        let tail: Vec<f64> = self
            .times
            .iter()
            .zip(&self.mean_p)
            .filter(|(t, _)| **t >= burn_in)
            .map(|(_, m)| *m)
            .collect();
        let q = (tail.len() / 4).max(1);
        let sup = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let early = stats::mean(&tail[..q.min(tail.len())]);
        let late = stats::mean(&tail[tail.len().saturating_sub(q)..]);
        Boundedness {
            sup,
            early,
            late,
            bounded: sup.is_finite() && late <= 1.5 * early,
        }
    }
}

/// Moment diagnostics for `du = (-Au - B(u) + h) dt + g(u) dW` with a
/// time-independent `h`.
#[allow(clippy::too_many_arguments)]
pub fn moment_diagnostics(
    u0: &Field,
    h: &Field,
    noise: Option<&MultiplicativeNoiseSpec>,
    p: f64,
    horizon: f64,
    solver: &SolverConfig,
    n_paths: usize,
    seed: u64,
    record_every: usize,
) -> Result<MomentReport> {
    solver.validate()?;
    let b = match noise {
        Some(spec) => {
            spec.check_p(p)?;
            spec.moment_b(h.sobolev_norm(-1.0))?
        }
        None => {
            if p <= 2.0 {
                return Err(Error::Domain(format!("moment exponent p = {p} must exceed 2")));
            }
            8.0 * h.sobolev_norm(-1.0).powi(2)
        }
    };
    let n = solver.steps_for(horizon);
    let dt = horizon / n as f64;
    let every = record_every.max(1);
    let solver = SolverConfig { dt, ..solver.clone() };
    let paths: Vec<Vec<(f64, f64, f64)>> = (0..n_paths.max(1) as u64)
        .into_par_iter()
        .map(|path| {
            let mut rng = StreamKey::new(seed).path(path).stream(Domain::Wiener, 0);
            let mut u = u0.clone();
            let mut h1 = u.h1_norm().powi(2);
            let mut integral = 0.0;
            let mut rows = vec![(u.l2_norm().powi(2), 0.0, u.l2_norm().powf(p))];
            for j in 0..n {
                let t = j as f64 * dt;
                u = match noise {
                    Some(spec) => {
                        let dw = spec.draw_increments(dt, &mut rng);
                        stochastic_step_with(&u, t, dt, spec, h, &solver, &dw)?
                    }
                    None => {
                        let next = solve_interval(&u, t, t + dt, h, &solver)?;
                        guard(&next, t + dt)?;
                        next
                    }
                };
                let next_h1 = u.h1_norm().powi(2);
                integral += 0.5 * dt * (h1 + next_h1);
                h1 = next_h1;
                if (j + 1) % every == 0 || j + 1 == n {
                    let l2 = u.l2_norm();
                    rows.push((l2 * l2, integral, l2.powf(p)));
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut times: Vec<f64> = (0..=n).step_by(every).map(|j| j as f64 * dt).collect();
    if !n.is_multiple_of(every) {
        times.push(horizon);
    }
    let column =
        |i: usize, f: &dyn Fn(&(f64, f64, f64)) -> f64| -> Vec<f64> { paths.iter().map(|r| f(&r[i])).collect() };
    let mut report = MomentReport {
        p,
        b,
        u0_sq: u0.l2_norm().powi(2),
        times,
        mean_sq: Vec::new(),
        mean_dissipation: Vec::new(),
        mean_p: Vec::new(),
        lhs_se: Vec::new(),
        n_paths: paths.len(),
    };
    for i in 0..report.times.len() {
        report.mean_sq.push(stats::mean(&column(i, &|r| r.0)));
        report.mean_dissipation.push(stats::mean(&column(i, &|r| r.1)));
        report.mean_p.push(stats::mean(&column(i, &|r| r.2)));
        report.lhs_se.push(stats::std_error(&column(i, &|r| r.0 + 1.5 * r.1)));
    }
    Ok(report)
}

/// Geometric decay factor of an unforced chain, from a log-linear fit of
/// `‖u_k‖` against `k`.
pub fn contraction_factor(states: &[Field]) -> Option<stats::LineFit> {
    let (k, y): (Vec<f64>, Vec<f64>) = states
        .iter()
        .enumerate()
        .map(|(k, u)| (k as f64, u.l2_norm()))
        .filter(|(_, n)| *n > 0.0)
        .map(|(k, n)| (k, n.ln()))
        .unzip();
    stats::fit_line(&k, &y)
}
