//! Carleman weights for the backward linear equation
//! `-v_t - v_xxx - v_xx + a v_x + b v = g`, numerical evaluation of both
//! sides of the global Carleman inequality and its conjugated form, and
//! observability constants from Gram matrices of the adjoint solution map.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{solve_adjoint, SolverConfig, Trajectory};
use crate::error::{Error, Result};
use crate::noise::LocalisedNoiseSpec;
use crate::quadrature::GaussLegendre;
use crate::source::{SpaceTimeField, Zero};
use crate::spectral::{EigenBasis, Field};

const TWO_PI: f64 = 2.0 * PI;
const VALIDATION_POINTS: usize = 4096;
/// Relative size of the discarded time tails.
const TAIL: f64 = 1e-14;

/// Weight `ψ` on the torus: two downward parabolas off the window joined by
/// a quintic Hermite piece inside it, shifted to be positive; with
/// `ξ(t) = 1/(t(T - t))` and `φ = ψ ξ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CarlemanWeights {
    pub l1: f64,
    pub l2: f64,
    pub horizon: f64,
    /// Parabola offset, larger than `2π - l2`.
    pub offset: f64,
    /// Additive shift, larger than `2 max φ - 3 min φ`.
    pub shift: f64,
    pub psi_max: f64,
    pub psi_min: f64,
    blend: [f64; 6],
}

impl CarlemanWeights {
    /// Default offset `1.1 (2π - l2)` and shift 10% above the admissible bound.
    pub fn new(l1: f64, l2: f64, horizon: f64) -> Result<Self> {
        Self::with_offset(l1, l2, horizon, 1.1 * (TWO_PI - l2))
    }

    pub fn with_offset(l1: f64, l2: f64, horizon: f64, offset: f64) -> Result<Self> {
        if !(0.0 < l1 && l1 < l2 && l2 < TWO_PI) {
            return Err(Error::Config(format!(
                "window must satisfy 0 < l1 < l2 < 2π, got ({l1}, {l2})"
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if !(offset > TWO_PI - l2) {
            return Err(Error::Config(format!(
                "offset {offset} must exceed 2π - l2 = {}",
                TWO_PI - l2
            )));
        }
        let mut w = Self {
            l1,
            l2,
            horizon,
            offset,
            shift: 0.0,
            psi_max: 0.0,
            psi_min: 0.0,
            blend: [0.0; 6],
        };
        let left = w.parabola_left(l1);
        let right = w.parabola_right(l2);
        w.blend = quintic_hermite(left, right, l2 - l1);
        let (lo, hi) = w.grid_range();
        w.shift = 1.1 * (2.0 * hi - 3.0 * lo);
        w.psi_max = hi + w.shift;
        w.psi_min = lo + w.shift;
        w.validate()?;
        Ok(w)
    }

    fn parabola_left(&self, x: f64) -> [f64; 4] {
        let y = x + self.offset;
        [-y * y + self.offset * self.offset, -2.0 * y, -2.0, 0.0]
    }

    fn parabola_right(&self, x: f64) -> [f64; 4] {
        let y = x - TWO_PI + self.offset;
        [-y * y + self.offset * self.offset, -2.0 * y, -2.0, 0.0]
    }

    /// `φ` before the shift, with derivatives up to order three.
    fn unshifted(&self, x: f64) -> [f64; 4] {
        let x = x.rem_euclid(TWO_PI);
        if x <= self.l1 {
            self.parabola_left(x)
        } else if x >= self.l2 {
            self.parabola_right(x)
        } else {
            let u = x - self.l1;
            let c = &self.blend;
            [
                c[0] + u * (c[1] + u * (c[2] + u * (c[3] + u * (c[4] + u * c[5])))),
                c[1] + u * (2.0 * c[2] + u * (3.0 * c[3] + u * (4.0 * c[4] + u * 5.0 * c[5]))),
                2.0 * c[2] + u * (6.0 * c[3] + u * (12.0 * c[4] + u * 20.0 * c[5])),
                6.0 * c[3] + u * (24.0 * c[4] + u * 60.0 * c[5]),
            ]
        }
    }

    fn grid_range(&self) -> (f64, f64) {
        (0..=VALIDATION_POINTS)
            .map(|j| self.unshifted(TWO_PI * j as f64 / VALIDATION_POINTS as f64)[0])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    /// `[ψ, ψ', ψ'', ψ''']` at `x`.
    pub fn psi_jet(&self, x: f64) -> [f64; 4] {
        let mut j = self.unshifted(x);
        j[0] += self.shift;
        j
    }

    pub fn psi(&self, x: f64) -> f64 {
        self.psi_jet(x)[0]
    }

    pub fn in_window(&self, x: f64) -> bool {
        let x = x.rem_euclid(TWO_PI);
        x > self.l1 && x < self.l2
    }

    /// Checks positivity, monotonicity and concavity off the window and
    /// `2 max ψ < 3 min ψ` on the validation grid.
    pub fn validate(&self) -> Result<()> {
        for j in 0..VALIDATION_POINTS {
            let x = TWO_PI * j as f64 / VALIDATION_POINTS as f64;
            let [p, d1, d2, _] = self.psi_jet(x);
            if p <= 0.0 {
                return Err(Error::Domain(format!("ψ({x}) = {p} is not positive")));
            }
            if !self.in_window(x) && (d1.abs() == 0.0 || d2 >= 0.0) {
                return Err(Error::Domain(format!("ψ fails |ψ'| > 0, ψ'' < 0 at x = {x}")));
            }
        }
        if 2.0 * self.psi_max >= 3.0 * self.psi_min {
            return Err(Error::Domain("2 max ψ < 3 min ψ fails".into()));
        }
        Ok(())
    }

    /// `2 max ψ / (3 min ψ)`, below one for admissible weights.
    pub fn ratio(&self) -> f64 {
        2.0 * self.psi_max / (3.0 * self.psi_min)
    }

    pub fn xi(&self, t: f64) -> f64 {
        1.0 / (t * (self.horizon - t))
    }

    pub fn phi(&self, x: f64, t: f64) -> f64 {
        self.psi(x) * self.xi(t)
    }

    pub fn phi_hat(&self, t: f64) -> f64 {
        self.psi_max * self.xi(t)
    }

    pub fn phi_check(&self, t: f64) -> f64 {
        self.psi_min * self.xi(t)
    }

    /// Half-width `δ` such that `ξ^power e^{-rate ξ}` on `(0, δ)` stays below
    /// `1e-14` of its maximum.
    pub fn tail_cut(&self, rate: f64, power: f64) -> f64 {
        let t = self.horizon;
        let xi_mid = 4.0 / (t * t);
        let g = |xi: f64| power * xi.ln() - rate * xi;
        let peak = if rate > 0.0 { (power / rate).max(xi_mid) } else { xi_mid };
        let target = g(peak) + TAIL.ln();
        let (mut lo, mut hi) = (peak, peak * 2.0);
        while g(hi) > target {
            hi *= 2.0;
            if hi > 1e300 {
                break;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // t (T - t) = 1/ξ on the left half.
        0.5 * (t - (t * t - 4.0 / hi).max(0.0).sqrt())
    }

    /// Composite Gauss-Legendre rule on `(δ, T - δ)` with `δ` from
    /// [`Self::tail_cut`].
    pub fn time_rule(&self, rate: f64, power: f64, panels: usize, order: usize) -> TimeRule {
        let delta = self.tail_cut(rate, power).min(0.5 * self.horizon * (1.0 - 1e-9));
        let (a, b) = (delta, self.horizon - delta);
        let panels = panels.max(1);
        let breaks: Vec<f64> = (0..=panels).map(|i| a + (b - a) * i as f64 / panels as f64).collect();
        let (nodes, weights) = GaussLegendre::new(order.max(1)).composite(&breaks);
        TimeRule { nodes, weights, delta }
    }

    /// Time rule for [`carleman_sides`] at parameter `s`, cut by the slowest
    /// decaying weight `e^{-2sφ̂}`.
    pub fn carleman_rule(&self, s: f64, panels: usize) -> TimeRule {
        self.time_rule(2.0 * s * self.psi_max, 5.0, panels, 8)
    }

    /// Grid export `(x, ψ, ψ', ψ'')`.
    pub fn sample(&self, n: usize) -> Vec<[f64; 4]> {
        (0..n)
            .map(|j| {
                let x = TWO_PI * j as f64 / n as f64;
                let [p, d1, d2, _] = self.psi_jet(x);
                [x, p, d1, d2]
            })
            .collect()
    }
}

/// Quintic on `[0, h]` matching value, slope and curvature at both ends.
fn quintic_hermite(left: [f64; 4], right: [f64; 4], h: f64) -> [f64; 6] {
    let (c0, c1, c2) = (left[0], left[1], 0.5 * left[2]);
    let a = right[0] - (c0 + h * (c1 + h * c2));
    let b = right[1] - (c1 + 2.0 * c2 * h);
    let c = right[2] - 2.0 * c2;
    let h2 = h * h;
    [
        c0,
        c1,
        c2,
        (10.0 * a - 4.0 * b * h + 0.5 * c * h2) / (h2 * h),
        (-15.0 * a + 7.0 * b * h - c * h2) / (h2 * h2),
        (6.0 * a - 3.0 * b * h + 0.5 * c * h2) / (h2 * h2 * h),
    ]
}

/// Quadrature nodes and weights in time.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub delta: f64,
}

/// Both sides of an inequality, kept as logarithms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sides {
    pub log_lhs: f64,
    pub log_rhs: f64,
}

impl Sides {
    pub fn lhs(&self) -> f64 {
        self.log_lhs.exp()
    }

    pub fn rhs(&self) -> f64 {
        self.log_rhs.exp()
    }

    /// `lhs / rhs`; zero when both vanish.
    pub fn ratio(&self) -> f64 {
        if self.log_lhs == f64::NEG_INFINITY {
            0.0
        } else {
            (self.log_lhs - self.log_rhs).exp()
        }
    }

    /// `ln(lhs / rhs)`, finite even where the ratio itself underflows.
    pub fn log_ratio(&self) -> f64 {
        if self.log_lhs == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.log_lhs - self.log_rhs
        }
    }
}

/// `log Σ exp(terms)`, `-∞` for an empty or all `-∞` input.
fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn check_s(s: f64) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Config(format!("Carleman parameter must be positive, got {s}")));
    }
    Ok(())
}

/// Gauss-Legendre nodes on `(a, b)` split into panels of width at most `width`.
fn panel_rule(a: f64, b: f64, width: f64, order: usize) -> (Vec<f64>, Vec<f64>) {
    let panels = ((b - a) / width).ceil().max(1.0) as usize;
    let breaks: Vec<f64> = (0..=panels).map(|i| a + (b - a) * i as f64 / panels as f64).collect();
    GaussLegendre::new(order).composite(&breaks)
}

/// Both sides of the global Carleman inequality at parameter `s` for a
/// solution `v` sampled at the nodes of `rule` with right-hand side `g`:
///
/// `∫(sξ v_xx² + s³ξ³ v_x² + s⁵ξ⁵ v²) e^{-4sφ̂}` against
/// `s⁵ ∫ g² e^{-2sφ̂} + s⁵ ∫_{D_ω} ξ⁵ e^{-6sφ̌ + 2sφ̂} v²`.
pub fn carleman_sides(
    v: &Trajectory,
    rule: &TimeRule,
    g: &dyn SpaceTimeField,
    weights: &CarlemanWeights,
    s: f64,
) -> Result<Sides> {
    check_s(s)?;
    if v.times.len() != rule.nodes.len() || v.times.iter().zip(&rule.nodes).any(|(a, b)| (a - b).abs() > 1e-9) {
        return Err(Error::Config("trajectory must be sampled at the rule nodes".into()));
    }
    let (xw, ww) = panel_rule(weights.l1, weights.l2, 0.25, 12);
    let (mut lhs, mut rhs) = (Vec::new(), Vec::new());
    let ln_s = s.ln();
    for ((&t, &wt), state) in rule.nodes.iter().zip(&rule.weights).zip(&v.states) {
        let xi = weights.xi(t);
        let lw = wt.ln();
        let a0 = state.l2_norm().powi(2);
        let a1 = state.deriv(1).l2_norm().powi(2);
        let a2 = state.deriv(2).l2_norm().powi(2);
        let bracket = s * xi * a2 + (s * xi).powi(3) * a1 + (s * xi).powi(5) * a0;
        lhs.push(lw - 4.0 * s * weights.phi_hat(t) + bracket.ln());
        if let Some(gf) = g.at(t, state.grid()) {
            let g2 = gf.l2_norm().powi(2);
            rhs.push(lw + 5.0 * ln_s - 2.0 * s * weights.phi_hat(t) + g2.ln());
        }
        let omega: f64 = xw.iter().zip(&ww).map(|(x, w)| w * state.eval_at(*x).powi(2)).sum();
        rhs.push(
            lw + 5.0 * ln_s + 5.0 * xi.ln() - 6.0 * s * weights.phi_check(t)
                + 2.0 * s * weights.phi_hat(t)
                + omega.ln(),
        );
    }
    Ok(Sides {
        log_lhs: log_sum_exp(&lhs),
        log_rhs: log_sum_exp(&rhs),
    })
}

/// Data of one instance of the backward problem.
pub struct BackwardProblem<'a> {
    pub v_final: &'a Field,
    pub a: &'a dyn SpaceTimeField,
    pub b: &'a dyn SpaceTimeField,
    pub g: &'a dyn SpaceTimeField,
}

/// Solves the backward problem on the nodes of the rule for `s` and
/// evaluates both sides of the global inequality.
pub fn ct1_sides(
    prob: &BackwardProblem<'_>,
    weights: &CarlemanWeights,
    s: f64,
    panels: usize,
    solver: &SolverConfig,
) -> Result<Sides> {
    check_s(s)?;
    let rule = weights.carleman_rule(s, panels);
    let v = solve_adjoint(
        prob.v_final,
        prob.a,
        prob.b,
        prob.g,
        weights.horizon,
        solver,
        &rule.nodes,
    )?;
    carleman_sides(&v, &rule, prob.g, weights, s)
}

/// `q` and the derivatives entering the conjugated inequality.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub q: f64,
    pub q_x: f64,
    pub q_xx: f64,
    pub q_xxx: f64,
    pub q_t: f64,
}

/// A smooth space-time function, periodic in `x`.
pub trait TestFunction: Sync {
    fn jet(&self, x: f64, t: f64) -> Jet;
}

impl<F: Fn(f64, f64) -> Jet + Sync> TestFunction for F {
    fn jet(&self, x: f64, t: f64) -> Jet {
        self(x, t)
    }
}

/// `Σ amp · cos(k x + θ) · cos(ν t + ϑ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigTestFunction {
    /// `(k, ν, amp, θ, ϑ)` per term.
    pub terms: Vec<(f64, f64, f64, f64, f64)>,
}

impl TrigTestFunction {
    pub fn random(rng: &mut impl Rng, n_terms: usize, max_k: usize, horizon: f64) -> Self {
        let terms = (0..n_terms)
            .map(|_| {
                let k = rng.random_range(0..=max_k) as f64;
                let nu = PI * rng.random_range(0..=3) as f64 / horizon;
                (
                    k,
                    nu,
                    rng.random::<f64>() * 2.0 - 1.0,
                    TWO_PI * rng.random::<f64>(),
                    TWO_PI * rng.random::<f64>(),
                )
            })
            .collect();
        Self { terms }
    }
}

impl TestFunction for TrigTestFunction {
    fn jet(&self, x: f64, t: f64) -> Jet {
        let mut j = Jet::default();
        for &(k, nu, amp, th, vt) in &self.terms {
            let (sx, cx) = (k * x + th).sin_cos();
            let (st, ct) = (nu * t + vt).sin_cos();
            j.q += amp * cx * ct;
            j.q_x -= amp * k * sx * ct;
            j.q_xx -= amp * k * k * cx * ct;
            j.q_xxx += amp * k * k * k * sx * ct;
            j.q_t -= amp * nu * cx * st;
        }
        j
    }
}

/// Resolution of [`lemma_cl2_sides`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cl2Resolution {
    pub time_panels: usize,
    /// Largest spatial panel width.
    pub x_width: f64,
}

impl Default for Cl2Resolution {
    fn default() -> Self {
        Self {
            time_panels: 24,
            x_width: 0.1,
        }
    }
}

/// Both sides of the conjugated inequality for `w = e^{-sφ} q` with
/// `Lq = q_t + q_xxx` (unit constants):
///
/// `∫_{D_T} E(w)` against `∫_{D_T} |Lq|² e^{-2sφ} + ∫_{D_ω} E(w)`, where
/// `E(w) = sφ w_xx² + s³φ³ w_x² + s⁵φ⁵ w²`.
pub fn lemma_cl2_sides(q: &dyn TestFunction, weights: &CarlemanWeights, s: f64, res: Cl2Resolution) -> Result<Sides> {
    check_s(s)?;
    let rule = weights.time_rule(2.0 * s * weights.psi_min, 5.0, res.time_panels, 8);
    // Panels never straddle the window edges, where ψ is only C².
    let mut xs = Vec::new();
    let mut xw = Vec::new();
    for (a, b) in [(0.0, weights.l1), (weights.l1, weights.l2), (weights.l2, TWO_PI)] {
        let (x, w) = panel_rule(a, b, res.x_width, 8);
        xs.extend(x);
        xw.extend(w);
    }
    let jets: Vec<[f64; 4]> = xs.iter().map(|&x| weights.psi_jet(x)).collect();
    let inside: Vec<bool> = xs.iter().map(|&x| weights.in_window(x)).collect();
    let (mut lhs, mut rhs) = (Vec::new(), Vec::new());
    for (&t, &wt) in rule.nodes.iter().zip(&rule.weights) {
        let xi = weights.xi(t);
        for i in 0..xs.len() {
            let Jet {
                q,
                q_x,
                q_xx,
                q_xxx,
                q_t,
            } = q.jet(xs[i], t);
            let [p, p1, p2, _] = jets[i];
            let (phi, phx, phxx) = (p * xi, s * p1 * xi, s * p2 * xi);
            // e^{sφ} w and its x-derivatives.
            let w0 = q;
            let w1 = q_x - phx * q;
            let w2 = q_xx - 2.0 * phx * q_x - phxx * q + phx * phx * q;
            let e = s * phi * w2 * w2 + (s * phi).powi(3) * w1 * w1 + (s * phi).powi(5) * w0 * w0;
            let lw = (wt * xw[i]).ln() - 2.0 * s * phi;
            let energy = lw + e.ln();
            lhs.push(energy);
            if inside[i] {
                rhs.push(energy);
            }
            let lq = q_t + q_xxx;
            rhs.push(lw + (lq * lq).ln());
        }
    }
    Ok(Sides {
        log_lhs: log_sum_exp(&lhs),
        log_rhs: log_sum_exp(&rhs),
    })
}

/// Linear observability problem for the backward equation with `g = 0`.
pub struct ObservabilityProblem<'a> {
    /// Final data lie in the span of the first `n_data` eigenfunctions.
    pub n_data: usize,
    pub a: &'a dyn SpaceTimeField,
    pub b: &'a dyn SpaceTimeField,
    /// Observation window `(x1, x2)`; `(0, 2π)` observes the whole torus.
    pub window: (f64, f64),
    pub horizon: f64,
    pub solver: SolverConfig,
}

impl ObservabilityProblem<'_> {
    fn validate(&self) -> Result<()> {
        let (x1, x2) = self.window;
        if self.n_data == 0 {
            return Err(Error::Config("observability needs N ≥ 1".into()));
        }
        if !(0.0 <= x1 && x1 < x2 && x2 <= TWO_PI) {
            return Err(Error::Config(format!(
                "observation window ({x1}, {x2}) must lie in [0, 2π]"
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        self.solver.validate()
    }

    /// Adjoint solutions from each of the first `n_data` eigenfunctions on
    /// an ambient grid with `ambient` modes, sampled at `times`.
    fn solutions(&self, ambient: usize, times: &[f64]) -> Result<Vec<Trajectory>> {
        let solver = SolverConfig {
            n_points: ambient,
            ..self.solver.clone()
        };
        let grid = solver.grid()?;
        let basis = EigenBasis::new(&grid);
        if self.n_data > basis.dim() {
            return Err(Error::Config(format!(
                "{} data modes exceed the ambient basis of {}",
                self.n_data,
                basis.dim()
            )));
        }
        (1..=self.n_data)
            .into_par_iter()
            .map(|i| solve_adjoint(&basis.element(i), self.a, self.b, &Zero, self.horizon, &solver, times))
            .collect()
    }

    /// First ambient size of the doubling scan: the smallest grid holding
    /// `2N + 16` modes, capped by the solver grid.
    pub fn initial_ambient(&self) -> usize {
        (2 * self.n_data + 16).next_power_of_two().min(self.solver.n_points)
    }
}

/// Sharp observability constant with its generalised spectrum.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Observability {
    pub constant: f64,
    /// Generalised eigenvalues, decreasing.
    pub spectrum: Vec<f64>,
    /// Maximiser in eigenbasis coordinates, unit length.
    pub maximiser: Vec<f64>,
    /// Relative residual of `G₀ x = C G_ω x` at the maximiser.
    pub residual: f64,
    /// Square root of the smallest eigenvalue of the observation Gram matrix.
    pub min_singular_value: f64,
    /// Ambient Fourier modes of the backward solve.
    pub modes: usize,
    pub converged: bool,
}

/// Largest `λ` with `G₀ x = λ G_ω x`.
fn generalised_max(g0: &DMatrix<f64>, gw: &DMatrix<f64>) -> Result<Observability> {
    let k = g0.nrows();
    let sym = 0.5 * (gw + gw.transpose());
    let obs_eigs = SymmetricEigen::new(sym.clone()).eigenvalues;
    let (lo, hi) = obs_eigs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| (a.min(e), b.max(e)));
    if !(lo > 1e-13 * hi.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular(format!(
            "observation Gram matrix is singular (eigenvalues in [{lo:e}, {hi:e}])"
        )));
    }
    let chol = sym
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("observation Gram matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv_g0 = l
        .solve_lower_triangular(g0)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let m = l
        .solve_lower_triangular(&linv_g0.transpose())
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let m = 0.5 * (&m + m.transpose());
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = order[0];
    let lambda = eig.eigenvalues[top];
    let y = eig.eigenvectors.column(top).into_owned();
    let x = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let x: DVector<f64> = &x / x.norm();
    let lhs = g0 * &x;
    let rhs = &sym * &x * lambda;
    let residual = (&lhs - &rhs).norm() / (lhs.norm() + rhs.norm()).max(f64::MIN_POSITIVE);
    Ok(Observability {
        constant: lambda,
        spectrum: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        maximiser: x.iter().copied().collect(),
        residual,
        min_singular_value: lo.sqrt(),
        modes: k,
        converged: true,
    })
}

/// `C = sup ‖v(0)‖² / ∫_{D_ω} v²` over final data in `H_N`, with the
/// backward problem resolved on `ambient` Fourier modes.
pub fn observability_constant_at(prob: &ObservabilityProblem<'_>, ambient: usize) -> Result<Observability> {
    prob.validate()?;
    let (x1, x2) = prob.window;
    let (t_nodes, t_weights) = panel_rule(0.0, prob.horizon, prob.horizon / 16.0, 8);
    let (xs, xw) = panel_rule(x1, x2, 0.25, 12);
    let mut times = vec![0.0];
    times.extend(&t_nodes);
    let sols = prob.solutions(ambient, &times)?;
    // Values at the space-time nodes, one row per basis function.
    let rows: Vec<Vec<f64>> = sols
        .par_iter()
        .map(|traj| {
            let mut row = Vec::with_capacity(t_nodes.len() * xs.len());
            for (state, wt) in traj.states[1..].iter().zip(&t_weights) {
                for (x, wx) in xs.iter().zip(&xw) {
                    row.push((wt * wx).sqrt() * state.eval_at(*x));
                }
            }
            row
        })
        .collect();
    let k = prob.n_data;
    let g0 = DMatrix::from_fn(k, k, |i, j| sols[i].states[0].inner(&sols[j].states[0]));
    let gw = DMatrix::from_fn(k, k, |i, j| rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum());
    let mut out = generalised_max(&g0, &gw)?;
    out.modes = ambient;
    Ok(out)
}

/// [`observability_constant_at`] from [`ObservabilityProblem::initial_ambient`],
/// doubling the ambient grid until the constant moves by less than 1% or
/// the solver grid is reached.
pub fn observability_constant(prob: &ObservabilityProblem<'_>) -> Result<Observability> {
    let full = prob.solver.n_points;
    let mut k = prob.initial_ambient();
    let mut prev = observability_constant_at(prob, k)?;
    while k < full {
        k = (2 * k).min(full);
        let next = observability_constant_at(prob, k)?;
        if (next.constant - prev.constant).abs() < 0.01 * prev.constant.abs() {
            return Ok(next);
        }
        prev = next;
    }
    prev.converged = prob.initial_ambient() >= full;
    Ok(prev)
}

/// Truncated observability: final data in `H_N`, observation through the
/// first `M` coefficients of `χ v` on the window's product sine basis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruncatedObservability {
    /// Smallest stable rank.
    pub m: usize,
    pub constant: f64,
    pub scan: Vec<TruncatedRow>,
}

/// One rank of the truncation scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TruncatedRow {
    pub m: usize,
    /// `None` where the observation is rank deficient.
    pub constant: Option<f64>,
    /// Smallest singular value of `v_T ↦ Π_M(χ v)` on `H_N`.
    pub min_singular_value: f64,
}

/// `∫_Q χ v_i φ_m` for the first `n` eigenfunctions `v_i`,
/// as a `count × n` matrix, with `v(0)` Gram matrix.
fn truncated_maps(prob: &ObservabilityProblem<'_>, noise: &LocalisedNoiseSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    prob.validate()?;
    let basis = noise.basis();
    let w = *noise.window();
    if w.t2 > prob.horizon + 1e-12 {
        return Err(Error::Config(
            "noise window extends beyond the observation horizon".into(),
        ));
    }
    let (mx, nt) = basis.extent();
    let (t_nodes, t_weights) = panel_rule(w.t1, w.t2, w.duration() / (1 + nt / 4) as f64, 16);
    let (xs, xw) = panel_rule(w.x1, w.x2, w.width() / (1 + mx / 4) as f64, 16);
    let mut times = vec![0.0];
    times.extend(&t_nodes);
    let n = prob.n_data;
    let sols = prob.solutions(prob.solver.n_points, &times)?;
    let chi = noise.cutoff();
    let cols: Vec<Vec<f64>> = sols
        .par_iter()
        .map(|traj| {
            let mut c = vec![0.0; basis.len()];
            for (state, (&t, &wt)) in traj.states[1..].iter().zip(t_nodes.iter().zip(&t_weights)) {
                for (&x, &wx) in xs.iter().zip(&xw) {
                    let val = wt * wx * chi.eval(x, t) * state.eval_at(x);
                    for (m, cm) in c.iter_mut().enumerate() {
                        *cm += val * basis.phi(m, x, t);
                    }
                }
            }
            c
        })
        .collect();
    let c = DMatrix::from_fn(basis.len(), n, |m, i| cols[i][m]);
    let g0 = DMatrix::from_fn(n, n, |i, j| sols[i].states[0].inner(&sols[j].states[0]));
    Ok((c, g0))
}

/// Sharp constant of `‖v(0)‖² ≤ C ‖Π_M(χ v)‖²` for each `M`, then the
/// smallest `M` whose constant is within 5% of the value at `2M`.
pub fn truncated_observability(
    prob: &ObservabilityProblem<'_>,
    noise: &LocalisedNoiseSpec,
) -> Result<TruncatedObservability> {
    let (c, g0) = truncated_maps(prob, noise)?;
    let total = c.nrows();
    let scan: Vec<TruncatedRow> = (1..=total)
        .map(|m| {
            let cm = c.rows(0, m);
            let gw = cm.transpose() * cm;
            let lo = SymmetricEigen::new(gw.clone()).eigenvalues.min();
            TruncatedRow {
                m,
                constant: generalised_max(&g0, &gw).ok().map(|o| o.constant),
                min_singular_value: lo.max(0.0).sqrt(),
            }
        })
        .collect();
    for m in 1..=total / 2 {
        if let (Some(a), Some(b)) = (scan[m - 1].constant, scan[2 * m - 1].constant) {
            if (a - b).abs() <= 0.05 * b {
                return Ok(TruncatedObservability { m, constant: a, scan });
            }
        }
    }
    Err(Error::NotConverged(format!(
        "no truncation rank up to {total} gives a stable observability constant"
    )))
}

/// Truncated constant at a fixed rank; `Err(Singular)` when rank deficient.
pub fn truncated_constant(prob: &ObservabilityProblem<'_>, noise: &LocalisedNoiseSpec, m: usize) -> Result<f64> {
    let (c, g0) = truncated_maps(prob, noise)?;
    if m == 0 || m > c.nrows() {
        return Err(Error::Config(format!("rank {m} outside 1..={}", c.nrows())));
    }
    let cm = c.rows(0, m);
    Ok(generalised_max(&g0, &(cm.transpose() * cm))?.constant)
}

/// `v(0)` for final data `v_final`, used as a linearity probe.
pub fn backward_to_zero(prob: &ObservabilityProblem<'_>, v_final: &Field) -> Result<Field> {
    let traj = solve_adjoint(v_final, prob.a, prob.b, &Zero, prob.horizon, &prob.solver, &[0.0])?;
    Ok(traj.states[0].clone())
}
