//! Multiplicative Wiener forcing `g(u) dW` with a diagonal covariance.
//!
//! `g(u) e_j = σ_j(u) e_j` with `σ_j(u) = β_j s(‖u‖)` and `β_j = β₀ / j²`.
//! The scalar shape `s` selects one of three growth regimes:
//!
//! * bounded: `s = 1`, so `‖g(u)‖_HS = B := ‖β‖₂`;
//! * sublinear: `s(r) = (1 + (1 + r²)^{ρ/2}) / 2`, so `‖g(u)‖_HS ≤ B + (B/2) r^ρ`;
//! * linear: `s(r) = 1 + (L / B) r`, so `‖g(u)‖_HS = B + L r`.
//!
//! Since `s ≥ 1`, the right inverse `f(u) v = ((v, e_j) / σ_j(u))_{j ≤ M}`
//! is bounded by `1 / β_M`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{guard, Drift, KdvbDrift, SolverConfig};
use crate::error::{Error, Result};
use crate::rng::standard_normal;
use crate::source::SpaceTimeField;
use crate::spectral::{propagate, EigenBasis, Field, LinearOp};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Growth {
    Bounded,
    Sublinear { rho: f64 },
    Linear { gain: f64 },
}

/// Noise parameters as written in a configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplicativeNoiseConfig {
    pub growth: Growth,
    pub beta0: f64,
    /// Number of driven modes `e_1, …, e_n`.
    pub n_modes: usize,
    /// Rank `M` of the right inverse.
    pub rank: usize,
}

/// Constants of the growth, Lipschitz and right-inverse conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseConstants {
    /// Additive part of the Hilbert-Schmidt growth bound.
    pub k: f64,
    /// Multiplier of `‖u‖^ρ` (sublinear) or `‖u‖` (linear); zero if bounded.
    pub l: f64,
    pub rho: Option<f64>,
    /// Lipschitz constant of `u ↦ g(u)` into Hilbert-Schmidt operators.
    pub lipschitz: f64,
    /// `sup_u ‖f(u)‖`.
    pub f_sup: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiplicativeNoiseSpec {
    growth: Growth,
    beta: Vec<f64>,
    rank: usize,
    base_norm: f64,
}

impl MultiplicativeNoiseSpec {
    pub fn new(growth: Growth, beta0: f64, n_modes: usize, rank: usize) -> Result<Self> {
        if !(beta0 >= 0.0 && beta0.is_finite()) {
            return Err(Error::Config(format!("beta0 must be finite and ≥ 0, got {beta0}")));
        }
        if n_modes == 0 || rank == 0 || rank > n_modes {
            return Err(Error::Config(format!(
                "need 1 ≤ rank ≤ n_modes, got rank {rank}, n_modes {n_modes}"
            )));
        }
        match growth {
            Growth::Sublinear { rho } if !(rho > 0.0 && rho < 1.0) => {
                return Err(Error::Config(format!(
                    "sublinear exponent must lie in (0, 1), got {rho}"
                )));
            }
            Growth::Linear { gain } if !(gain >= 0.0 && gain.is_finite()) => {
                return Err(Error::Config(format!("linear gain must be ≥ 0, got {gain}")));
            }
            _ => {}
        }
        let beta: Vec<f64> = (1..=n_modes).map(|j| beta0 / (j * j) as f64).collect();
        let base_norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        Ok(Self {
            growth,
            beta,
            rank,
            base_norm,
        })
    }

    pub fn from_config(cfg: &MultiplicativeNoiseConfig) -> Result<Self> {
        Self::new(cfg.growth, cfg.beta0, cfg.n_modes, cfg.rank)
    }

    pub fn growth(&self) -> Growth {
        self.growth
    }

    pub fn n_modes(&self) -> usize {
        self.beta.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// `B = (Σ β_j²)^{1/2}`.
    pub fn base_norm(&self) -> f64 {
        self.base_norm
    }

    /// The right inverse exists only if every `β_j`, `j ≤ M`, is positive.
    pub fn has_right_inverse(&self) -> bool {
        self.beta[..self.rank].iter().all(|&b| b > 0.0)
    }

    /// Scalar shape `s(r)`.
    pub fn shape(&self, r: f64) -> f64 {
        match self.growth {
            Growth::Bounded => 1.0,
            Growth::Sublinear { rho } => 0.5 * (1.0 + (1.0 + r * r).powf(0.5 * rho)),
            Growth::Linear { gain } => {
                if self.base_norm == 0.0 {
                    1.0
                } else {
                    1.0 + gain / self.base_norm * r
                }
            }
        }
    }

    pub fn sigma(&self, u: &Field) -> Vec<f64> {
        let s = self.shape(u.l2_norm());
        self.beta.iter().map(|b| b * s).collect()
    }

    pub fn hs_norm(&self, u: &Field) -> f64 {
        self.base_norm * self.shape(u.l2_norm())
    }

    /// `‖g(u₁) - g(u₂)‖_HS`.
    pub fn hs_distance(&self, u1: &Field, u2: &Field) -> f64 {
        self.base_norm * (self.shape(u1.l2_norm()) - self.shape(u2.l2_norm())).abs()
    }

    pub fn constants(&self) -> NoiseConstants {
        let b = self.base_norm;
        let f_sup = if self.has_right_inverse() {
            1.0 / self.beta[self.rank - 1]
        } else {
            f64::INFINITY
        };
        match self.growth {
            Growth::Bounded => NoiseConstants {
                k: b,
                l: 0.0,
                rho: None,
                lipschitz: 0.0,
                f_sup,
            },
            Growth::Sublinear { rho } => {
                let r = 1.0 / (1.0 - rho).sqrt();
                let slope = 0.5 * rho * r * (1.0 + r * r).powf(0.5 * rho - 1.0);
                NoiseConstants {
                    k: b,
                    l: 0.5 * b,
                    rho: Some(rho),
                    lipschitz: b * slope,
                    f_sup,
                }
            }
            Growth::Linear { gain } => NoiseConstants {
                k: b,
                l: gain,
                rho: None,
                lipschitz: gain,
                f_sup,
            },
        }
    }

    /// Growth bound of `‖g(u)‖_HS` at `‖u‖ = r` from the reported constants.
    pub fn growth_bound(&self, r: f64) -> f64 {
        let c = self.constants();
        match self.growth {
            Growth::Bounded => c.k,
            Growth::Sublinear { rho } => c.k + c.l * r.powf(rho),
            Growth::Linear { .. } => c.k + c.l * r,
        }
    }

    /// `g(u) w = Σ_j σ_j(u) w_j e_j`.
    pub fn g_apply(&self, u: &Field, w: &[f64]) -> Field {
        let basis = EigenBasis::new(u.grid());
        assert!(self.n_modes() <= basis.dim(), "more noise modes than the grid resolves");
        let s = self.shape(u.l2_norm());
        let coords: Vec<f64> = self.beta.iter().zip(w).map(|(b, wj)| b * s * wj).collect();
        basis.synthesize(&coords)
    }

    /// `f(u) v`, the coordinates `(v, e_j) / σ_j(u)` for `j ≤ M`.
    pub fn f_apply(&self, u: &Field, v: &Field) -> Vec<f64> {
        assert!(self.has_right_inverse(), "right inverse needs β_j > 0 for j ≤ M");
        let basis = EigenBasis::new(v.grid());
        let s = self.shape(u.l2_norm());
        let coords = basis.coords(v, self.rank);
        let mut out = vec![0.0; self.n_modes()];
        for (j, c) in coords.iter().enumerate() {
            out[j] = c / (self.beta[j] * s);
        }
        out
    }

    /// Constant `b` of the second-moment bound
    /// `E‖u(t)‖² + (3/2) E∫‖u‖₁² ≤ ‖u₀‖² + b t`, from
    /// `2|(u, h)| ≤ ‖u‖₁²/8 + 8‖h‖₋₁²` and Young's inequality.
    pub fn moment_b(&self, h_minus1: f64) -> Result<f64> {
        let c = self.constants();
        let forcing = 8.0 * h_minus1 * h_minus1;
        match self.growth {
            Growth::Bounded => Ok(c.k * c.k + forcing),
            Growth::Sublinear { rho } => {
                let eps = 3.0 / 8.0;
                let young =
                    (1.0 - rho) * (2.0 * c.l * c.l).powf(1.0 / (1.0 - rho)) * (rho / eps).powf(rho / (1.0 - rho));
                Ok(2.0 * c.k * c.k + young + forcing)
            }
            Growth::Linear { .. } => {
                let l2 = c.l * c.l;
                if l2 >= 3.0 / 8.0 {
                    return Err(Error::Domain(format!(
                        "moment bound with coefficient 3/2 needs L₃² < 3/8, got L₃ = {}",
                        c.l
                    )));
                }
                if l2 == 0.0 {
                    return Ok(c.k * c.k + forcing);
                }
                let eps = 3.0 / (8.0 * l2) - 1.0;
                Ok((1.0 + 1.0 / eps) * c.k * c.k + forcing)
            }
        }
    }

    /// Open interval of admissible moment exponents `p`.
    pub fn admissible_p(&self) -> (f64, f64) {
        match self.growth {
            Growth::Linear { gain } if gain > 0.0 => (2.0, 1.0 + 1.0 / (gain * gain)),
            _ => (2.0, f64::INFINITY),
        }
    }

    /// Default exponent: the midpoint of a finite interval, else 4.
    pub fn default_p(&self) -> f64 {
        let (lo, hi) = self.admissible_p();
        if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            4.0
        }
    }

    pub fn check_p(&self, p: f64) -> Result<()> {
        let (lo, hi) = self.admissible_p();
        if p > lo && p < hi {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "moment exponent p = {p} outside the admissible interval ({lo}, {hi})"
            )))
        }
    }

    /// Wiener increments `ΔW_j ~ N(0, dt)` for the driven modes.
    pub fn draw_increments(&self, dt: f64, rng: &mut impl Rng) -> Vec<f64> {
        let sd = dt.sqrt();
        (0..self.n_modes()).map(|_| sd * standard_normal(rng)).collect()
    }
}

/// One exponential Euler-Maruyama step with the given increments:
/// `u ↦ e^{-dt A}(u + dt(-B(u) + h(t)) + g(u) ΔW)`.
pub fn stochastic_step_with(
    u: &Field,
    t: f64,
    dt: f64,
    noise: &MultiplicativeNoiseSpec,
    forcing: &dyn SpaceTimeField,
    cfg: &SolverConfig,
    dw: &[f64],
) -> Result<Field> {
    let drift = KdvbDrift {
        forcing,
        dealias: cfg.dealias,
        nonlinear: cfg.nonlinear,
    };
    let mut v = u.clone();
    v.axpy(dt, &drift.eval(u, t, t + 0.5 * dt));
    v.axpy(1.0, &noise.g_apply(u, dw));
    let next = propagate(&v, dt, LinearOp::Kdvb);
    guard(&next, t + dt)?;
    Ok(next)
}

/// One step with freshly drawn increments.
pub fn stochastic_step(
    u: &Field,
    t: f64,
    noise: &MultiplicativeNoiseSpec,
    forcing: &dyn SpaceTimeField,
    cfg: &SolverConfig,
    rng: &mut impl Rng,
) -> Result<Field> {
    let dw = noise.draw_increments(cfg.dt, rng);
    stochastic_step_with(u, t, cfg.dt, noise, forcing, cfg, &dw)
}
