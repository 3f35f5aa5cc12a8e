//! Penalised control of the linearisation around a reference trajectory
//! `û`: minimise `½‖ζ‖² + (1/δ)‖P_N w(T)‖²` subject to
//! `w_t + A w + (û w)_x = χ Π_m ζ`, `w(0) = v₀`, with `ζ` expanded on the
//! first `m` window basis functions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    run_recorded, simulate, solve_interval, solve_linearised, LinearisedDrift, SolverConfig, Trajectory,
};
use crate::error::{Error, Result};
use crate::noise::LocalisedNoiseSpec;
use crate::source::{SpaceTimeField, Sum, Zero};
use crate::spectral::{EigenBasis, Field};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub delta: f64,
    /// Rank `N` of the penalised projection.
    pub n_target: usize,
    /// Number `m` of control coefficients.
    pub m: usize,
    /// Ambient modes for the operator `Υ`; defaults to `2N + 8`.
    #[serde(default)]
    pub ambient: Option<usize>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            n_target: 4,
            m: 16,
            ambient: None,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if self.m == 0 || self.n_target == 0 {
            return Err(Error::Config("control needs m ≥ 1 and N ≥ 1".into()));
        }
        Ok(())
    }

    pub fn ambient(&self) -> usize {
        self.ambient.unwrap_or(2 * self.n_target + 8)
    }
}

/// Problem data: configuration, window basis and the reference trajectory.
pub struct ControlProblemSpec<'a> {
    pub config: ControlConfig,
    pub noise: &'a LocalisedNoiseSpec,
    /// `û` on `[0, T]`, densely sampled.
    pub uhat: &'a Trajectory,
    pub horizon: f64,
    pub solver: SolverConfig,
}

/// Reference trajectory from `(ĥ, û₀)`, recorded at every step.
pub fn reference_trajectory(
    uhat0: &Field,
    h: &dyn SpaceTimeField,
    horizon: f64,
    solver: &SolverConfig,
) -> Result<Trajectory> {
    simulate(uhat0, h, 0.0, horizon, solver, 1)
}

/// Assembled problem: the affine map `ζ ↦ P_N w(T) = c₀(v₀) + G ζ`.
pub struct ControlProblem<'a> {
    spec: ControlProblemSpec<'a>,
    basis: EigenBasis,
    gain: DMatrix<f64>,
    hessian: DMatrix<f64>,
}

/// Minimiser of the penalised problem.
#[derive(Clone, Debug)]
pub struct ControlSolution {
    pub zeta: Vec<f64>,
    pub w: Trajectory,
    pub cost: f64,
}

impl ControlSolution {
    pub fn w_final(&self) -> &Field {
        self.w.last().expect("non-empty trajectory")
    }
}

impl<'a> ControlProblem<'a> {
    /// Builds `G` column by column from `m` controlled solves with `w(0) = 0`.
    pub fn new(spec: ControlProblemSpec<'a>) -> Result<Self> {
        spec.config.validate()?;
        let m = spec.config.m;
        if m > spec.noise.basis().len() {
            return Err(Error::Config(format!(
                "m = {m} exceeds the {} window basis functions",
                spec.noise.basis().len()
            )));
        }
        if spec.noise.window().t2 > spec.horizon + 1e-12 {
            return Err(Error::Config("control window extends beyond the horizon".into()));
        }
        let grid = spec.solver.grid()?;
        if spec.uhat.states.iter().any(|u| !u.is_finite()) {
            return Err(Error::Config("reference trajectory is not finite".into()));
        }
        let basis = EigenBasis::new(&grid);
        let n = spec.config.n_target;
        if n > basis.dim() {
            return Err(Error::Config(format!("N = {n} exceeds the grid basis")));
        }
        let zero = Field::zeros(&grid);
        let cols = (0..m)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; m];
                e[j] = 1.0;
                let control = spec.noise.combination(&e);
                let w = solve_linearised(&zero, spec.uhat, &control, spec.horizon, &spec.solver)?;
                Ok(basis.coords(&w, n))
            })
            .collect::<Result<Vec<_>>>()?;
        let gain = DMatrix::from_fn(n, m, |i, j| cols[j][i]);
        let hessian = DMatrix::identity(m, m) + (2.0 / spec.config.delta) * gain.transpose() * &gain;
        Ok(Self {
            spec,
            basis,
            gain,
            hessian,
        })
    }

    pub fn spec(&self) -> &ControlProblemSpec<'a> {
        &self.spec
    }

    pub fn gain_matrix(&self) -> &DMatrix<f64> {
        &self.gain
    }

    /// `I + (2/δ) GᵀG`.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    /// Smallest eigenvalue of `I + (2/δ) GᵀG`; at least 1 up to rounding.
    pub fn hessian_min_eigenvalue(&self) -> f64 {
        nalgebra::SymmetricEigen::new(self.hessian.clone()).eigenvalues.min()
    }

    fn coords(&self, f: &Field) -> DVector<f64> {
        DVector::from_vec(self.basis.coords(f, self.spec.config.n_target))
    }

    /// `w` for the control `ζ`, recorded at every step.
    pub fn trajectory(&self, v0: &Field, zeta: &[f64]) -> Result<Trajectory> {
        let control = self.spec.noise.combination(zeta);
        let drift = LinearisedDrift {
            ubar: self.spec.uhat,
            source: &control,
            dealias: self.spec.solver.dealias,
        };
        run_recorded(v0, 0.0, self.spec.horizon, &self.spec.solver, &drift, 1)
    }

    /// `w(T)` for the control `ζ`.
    pub fn final_state(&self, v0: &Field, zeta: &[f64]) -> Result<Field> {
        let control = self.spec.noise.combination(zeta);
        solve_linearised(v0, self.spec.uhat, &control, self.spec.horizon, &self.spec.solver)
    }

    /// `J(ζ)` by a direct solve.
    pub fn cost(&self, v0: &Field, zeta: &[f64]) -> Result<f64> {
        let w = self.final_state(v0, zeta)?;
        let p = self.coords(&w);
        Ok(0.5 * zeta.iter().map(|z| z * z).sum::<f64>() + p.norm_squared() / self.spec.config.delta)
    }

    /// `∇J(ζ) = ζ + (2/δ) Gᵀ(c₀ + Gζ)`.
    pub fn gradient(&self, v0: &Field, zeta: &[f64]) -> Result<Vec<f64>> {
        let c0 = self.coords(&self.final_state(v0, &[])?);
        let z = DVector::from_column_slice(zeta);
        let g = &z + (2.0 / self.spec.config.delta) * self.gain.transpose() * (c0 + &self.gain * &z);
        Ok(g.iter().copied().collect())
    }

    /// Minimiser from the normal equations `(I + (2/δ)GᵀG) ζ = -(2/δ) Gᵀ c₀`.
    pub fn solve(&self, v0: &Field) -> Result<ControlSolution> {
        if !v0.is_finite() {
            return Err(Error::Config("initial difference is not finite".into()));
        }
        let zeta = self.minimiser(v0)?;
        let w = self.trajectory(v0, &zeta)?;
        let p = self.coords(w.last().expect("recorded"));
        let cost = 0.5 * zeta.iter().map(|z| z * z).sum::<f64>() + p.norm_squared() / self.spec.config.delta;
        Ok(ControlSolution { zeta, w, cost })
    }

    fn minimiser(&self, v0: &Field) -> Result<Vec<f64>> {
        let c0 = self.coords(&self.final_state(v0, &[])?);
        let rhs = -(2.0 / self.spec.config.delta) * self.gain.transpose() * c0;
        let chol = self
            .hessian
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("control Hessian is not positive definite".into()))?;
        let zeta = chol.solve(&rhs);
        if zeta.iter().any(|z| !z.is_finite()) {
            return Err(Error::Singular("control solve produced non-finite values".into()));
        }
        Ok(zeta.iter().copied().collect())
    }

    /// `((1/δ)‖P_N w(T)‖² + ‖ζ‖²) / ‖v₀‖²`, zero for `v₀ = 0`.
    pub fn bound_ratio(&self, v0: &Field, sol: &ControlSolution) -> f64 {
        let n0 = v0.l2_norm().powi(2);
        if n0 == 0.0 {
            return 0.0;
        }
        let p = self.coords(sol.w_final()).norm_squared();
        (p / self.spec.config.delta + sol.zeta.iter().map(|z| z * z).sum::<f64>()) / n0
    }

    /// `Υ` as an `m × K` matrix: column `j` is the minimiser for `v₀ = e_j`.
    pub fn upsilon(&self, ambient: usize) -> Result<DMatrix<f64>> {
        if ambient > self.basis.dim() {
            return Err(Error::Config(format!(
                "ambient dimension {ambient} exceeds the grid basis"
            )));
        }
        let cols = (1..=ambient)
            .into_par_iter()
            .map(|j| self.minimiser(&self.basis.element(j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(self.spec.config.m, ambient, |i, j| cols[j][i]))
    }

    /// `Υ v₀` for `v₀` projected on the first `ambient` eigenfunctions.
    pub fn apply_upsilon(&self, upsilon: &DMatrix<f64>, v0: &Field) -> Vec<f64> {
        let c = DVector::from_vec(self.basis.coords(v0, upsilon.ncols()));
        (upsilon * c).iter().copied().collect()
    }
}

/// Convenience wrapper: assemble and solve.
pub fn solve_p(spec: ControlProblemSpec<'_>, v0: &Field) -> Result<ControlSolution> {
    ControlProblem::new(spec)?.solve(v0)
}

/// Outcome of one contraction run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Contraction {
    pub n_target: usize,
    pub m: usize,
    pub delta: f64,
    pub d: f64,
    /// `‖S(û₀, h) - S(u₀, h + Υ(u₀ - û₀))‖ / ‖u₀ - û₀‖`.
    pub q_measured: f64,
    /// The same ratio for the linearised dynamics.
    pub q_linear: f64,
    /// Set when `u₀ = û₀` and the ratio is defined as zero.
    pub degenerate: bool,
}

/// Reference trajectory, assembled problem and `Υ` for a fixed `(h, û₀)`.
pub struct Squeezer<'a> {
    uhat: Trajectory,
    noise: &'a LocalisedNoiseSpec,
    h: &'a dyn SpaceTimeField,
    config: ControlConfig,
    horizon: f64,
    solver: SolverConfig,
    upsilon: DMatrix<f64>,
    gain: DMatrix<f64>,
}

impl<'a> Squeezer<'a> {
    pub fn new(
        uhat0: &Field,
        h: &'a dyn SpaceTimeField,
        noise: &'a LocalisedNoiseSpec,
        config: ControlConfig,
        horizon: f64,
        solver: SolverConfig,
    ) -> Result<Self> {
        let uhat = reference_trajectory(uhat0, h, horizon, &solver)?;
        let (upsilon, gain) = {
            let problem = ControlProblem::new(ControlProblemSpec {
                config: config.clone(),
                noise,
                uhat: &uhat,
                horizon,
                solver: solver.clone(),
            })?;
            (problem.upsilon(config.ambient())?, problem.gain_matrix().clone())
        };
        Ok(Self {
            uhat,
            noise,
            h,
            config,
            horizon,
            solver,
            upsilon,
            gain,
        })
    }

    pub fn upsilon(&self) -> &DMatrix<f64> {
        &self.upsilon
    }

    pub fn gain_matrix(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn reference(&self) -> &Trajectory {
        &self.uhat
    }

    /// Control coefficients `Υ (u₀ - û₀)`.
    pub fn control(&self, v0: &Field) -> Vec<f64> {
        let basis = EigenBasis::new(v0.grid());
        let c = DVector::from_vec(basis.coords(v0, self.upsilon.ncols()));
        (&self.upsilon * c).iter().copied().collect()
    }

    /// Contraction ratio for `u₀ = û₀ + v₀`.
    pub fn contraction(&self, v0: &Field) -> Result<Contraction> {
        let norm = v0.l2_norm();
        let base = Contraction {
            n_target: self.config.n_target,
            m: self.config.m,
            delta: self.config.delta,
            d: norm,
            q_measured: 0.0,
            q_linear: 0.0,
            degenerate: true,
        };
        if norm == 0.0 {
            return Ok(base);
        }
        let zeta = self.control(v0);
        let control = self.noise.combination(&zeta);
        let uhat0 = &self.uhat.states[0];
        let forcing = Sum(self.h, &control);
        let u_final = solve_interval(&uhat0.add(v0), 0.0, self.horizon, &forcing, &self.solver)?;
        let uhat_final = self.uhat.last().expect("recorded");
        let w_final = solve_linearised(v0, &self.uhat, &control, self.horizon, &self.solver)?;
        Ok(Contraction {
            q_measured: u_final.sub(uhat_final).l2_norm() / norm,
            q_linear: w_final.l2_norm() / norm,
            degenerate: false,
            ..base
        })
    }

    /// Largest `d ≤ d_max` (to bisection accuracy) with `q_measured < 1`
    /// along `direction`, or `None` when even `d_min` fails.
    pub fn threshold(&self, direction: &Field, d_min: f64, d_max: f64, iterations: usize) -> Result<Option<f64>> {
        let unit = direction.scale(1.0 / direction.l2_norm());
        let q = |d: f64| self.contraction(&unit.scale(d)).map(|c| c.q_measured);
        let ok = |d: f64| -> Result<bool> {
            match q(d) {
                Ok(v) => Ok(v < 1.0),
                Err(e) if e.is_numerical() => Ok(false),
                Err(e) => Err(e),
            }
        };
        if ok(d_max)? {
            return Ok(Some(d_max));
        }
        if !ok(d_min)? {
            return Ok(None);
        }
        let (mut lo, mut hi) = (d_min.ln(), d_max.ln());
        for _ in 0..iterations {
            let mid = 0.5 * (lo + hi);
            if ok(mid.exp())? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Some(lo.exp()))
    }
}

/// Convenience wrapper over [`Squeezer::contraction`].
#[allow(clippy::too_many_arguments)]
pub fn contraction_test(
    u0: &Field,
    uhat0: &Field,
    h: &dyn SpaceTimeField,
    noise: &LocalisedNoiseSpec,
    config: ControlConfig,
    horizon: f64,
    solver: SolverConfig,
) -> Result<Contraction> {
    Squeezer::new(uhat0, h, noise, config, horizon, solver)?.contraction(&u0.sub(uhat0))
}

/// Uncontrolled reference for comparisons: `w(T)` with `ζ = 0`.
pub fn free_linearised(v0: &Field, uhat: &Trajectory, horizon: f64, solver: &SolverConfig) -> Result<Field> {
    solve_linearised(v0, uhat, &Zero, horizon, solver)
}
