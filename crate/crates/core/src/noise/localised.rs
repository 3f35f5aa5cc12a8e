//! Kick noise supported in a space-time window `Q = (x1, x2) × (t1, t2)`.
//!
//! One kick is `η(t, x) = Σ_i b_i ξ_i χ(x, t) φ_i(x, t)` where the `φ_i` are
//! the Dirichlet eigenfunctions of `-∂_xx - ∂_tt + 1` on `Q`, `χ` is a
//! polynomial bump and the `ξ_i` are i.i.d. with density `(1 + cos πr)/2`
//! on `[-1, 1]`. Kicks are concatenated with period `T`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, StreamKey};
use crate::source::SpaceTimeField;
use crate::spectral::{Field, TorusGrid};

/// Rectangle `(x1, x2) × (t1, t2)` inside `𝕋 × (0, T)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub x1: f64,
    pub x2: f64,
    pub t1: f64,
    pub t2: f64,
}

impl Window {
    pub fn validate(&self, period: f64) -> Result<()> {
        if !(0.0 < self.x1 && self.x1 < self.x2 && self.x2 < 2.0 * PI) {
            return Err(Error::Config(format!(
                "window needs 0 < x1 < x2 < 2π, got ({}, {})",
                self.x1, self.x2
            )));
        }
        if !(0.0 < self.t1 && self.t1 < self.t2 && self.t2 < period) {
            return Err(Error::Config(format!(
                "window needs 0 < t1 < t2 < T = {period}, got ({}, {})",
                self.t1, self.t2
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn duration(&self) -> f64 {
        self.t2 - self.t1
    }

    pub fn contains_time(&self, t: f64) -> bool {
        self.t1 < t && t < self.t2
    }

    pub fn contains_x(&self, x: f64) -> bool {
        self.x1 < x && x < self.x2
    }
}

/// One Dirichlet eigenpair on the window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QMode {
    pub m: usize,
    pub n: usize,
    pub alpha: f64,
}

/// Eigenfunctions `φ_mn = 2/√(Lx Lt) sin(mπ(x-x1)/Lx) sin(nπ(t-t1)/Lt)`,
/// ordered by eigenvalue with `(m, n)` as tie-break.
#[derive(Clone, Debug)]
pub struct QBasis {
    window: Window,
    modes: Vec<QMode>,
}

impl QBasis {
    pub fn new(window: Window, count: usize) -> Self {
        let (lx, lt) = (window.width(), window.duration());
        let mut modes = Vec::with_capacity(count * count);
        for m in 1..=count {
            for n in 1..=count {
                let alpha = 1.0 + (m as f64 * PI / lx).powi(2) + (n as f64 * PI / lt).powi(2);
                modes.push(QMode { m, n, alpha });
            }
        }
        modes.sort_by(|a, b| a.alpha.total_cmp(&b.alpha).then(a.m.cmp(&b.m)).then(a.n.cmp(&b.n)));
        modes.truncate(count);
        Self { window, modes }
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[QMode] {
        &self.modes
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.modes[i].alpha
    }

    fn norm(&self) -> f64 {
        2.0 / (self.window.width() * self.window.duration()).sqrt()
    }

    /// `φ_i(x, t)` (zero-based `i`), extended by zero outside the window.
    pub fn phi(&self, i: usize, x: f64, t: f64) -> f64 {
        let w = &self.window;
        if !w.contains_x(x) || !w.contains_time(t) {
            return 0.0;
        }
        let md = self.modes[i];
        self.norm()
            * (md.m as f64 * PI * (x - w.x1) / w.width()).sin()
            * (md.n as f64 * PI * (t - w.t1) / w.duration()).sin()
    }

    /// Highest `m` and `n` among the retained modes.
    pub fn extent(&self) -> (usize, usize) {
        self.modes.iter().fold((0, 0), |(a, b), md| (a.max(md.m), b.max(md.n)))
    }
}

/// Symmetric bump `64 s³ (1 - s)³` on `[0, 1]`, equal to 1 at the centre
/// and vanishing to second order at both ends.
pub fn bump(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    let p = s * (1.0 - s);
    64.0 * p * p * p
}

/// Space-time cutoff `χ(x, t) = bump(x̂) bump(t̂)` on the window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cutoff {
    pub window: Window,
}

impl Cutoff {
    pub fn space(&self, x: f64) -> f64 {
        bump((x - self.window.x1) / self.window.width())
    }

    pub fn time(&self, t: f64) -> f64 {
        bump((t - self.window.t1) / self.window.duration())
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        self.space(x) * self.time(t)
    }
}

/// Density `p(r) = (1 + cos πr)/2` on `[-1, 1]`.
pub fn xi_density(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (PI * r).cos())
    }
}

pub fn xi_cdf(r: f64) -> f64 {
    if r <= -1.0 {
        0.0
    } else if r >= 1.0 {
        1.0
    } else {
        0.5 * (r + 1.0) + (PI * r).sin() / (2.0 * PI)
    }
}

/// Inverse of [`xi_cdf`] by safeguarded Newton iteration.
pub fn xi_quantile(p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let mut r = 2.0 * p - 1.0;
    for _ in 0..100 {
        let f = xi_cdf(r) - p;
        if f.abs() < 1e-15 {
            break;
        }
        if f > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let d = xi_density(r);
        let newton = r - f / d;
        r = if d > 1e-12 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 {
            break;
        }
    }
    r
}

/// Parameters of the kick noise as written in a configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalisedNoiseConfig {
    pub window: Window,
    #[serde(default = "default_modes")]
    pub n_modes: usize,
    /// Scale `c` in the default coefficients `b_i = c α_i^{-2}`.
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Explicit coefficients, overriding the default sequence.
    #[serde(default)]
    pub coefficients: Option<Vec<f64>>,
}

fn default_modes() -> usize {
    64
}

fn one() -> f64 {
    1.0
}

/// Validated kick noise.
#[derive(Clone, Debug)]
pub struct LocalisedNoiseSpec {
    basis: QBasis,
    cutoff: Cutoff,
    coeffs: Vec<f64>,
    bound: f64,
    period: f64,
}

impl LocalisedNoiseSpec {
    /// `b_i = amplitude · α_i^{-2}` for `i < n_modes`.
    pub fn new(window: Window, period: f64, n_modes: usize, amplitude: f64) -> Result<Self> {
        let basis = QBasis::new(window, n_modes);
        let coeffs = basis.modes().iter().map(|m| amplitude / (m.alpha * m.alpha)).collect();
        Self::with_coefficients(window, period, coeffs, amplitude.max(0.0))
    }

    /// Explicit coefficients, checked against `0 ≤ b_i ≤ bound · α_i^{-2}`.
    pub fn with_coefficients(window: Window, period: f64, coeffs: Vec<f64>, bound: f64) -> Result<Self> {
        window.validate(period)?;
        if coeffs.is_empty() {
            return Err(Error::Config("kick noise needs at least one mode".into()));
        }
        let basis = QBasis::new(window, coeffs.len());
        for (i, &b) in coeffs.iter().enumerate() {
            let limit = bound / basis.alpha(i).powi(2);
            if !(b >= 0.0 && b.is_finite()) || b > limit * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "coefficient b_{} = {b} violates 0 ≤ b ≤ {limit:.3e}",
                    i + 1
                )));
            }
        }
        Ok(Self {
            basis,
            cutoff: Cutoff { window },
            coeffs,
            bound,
            period,
        })
    }

    pub fn from_config(cfg: &LocalisedNoiseConfig, period: f64) -> Result<Self> {
        match &cfg.coefficients {
            Some(b) => {
                let basis = QBasis::new(cfg.window, b.len());
                // Smallest admissible bound for the given sequence.
                let bound = b
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * basis.alpha(i).powi(2))
                    .fold(0.0, f64::max);
                Self::with_coefficients(cfg.window, period, b.clone(), bound.max(cfg.amplitude))
            }
            None => Self::new(cfg.window, period, cfg.n_modes, cfg.amplitude),
        }
    }

    pub fn basis(&self) -> &QBasis {
        &self.basis
    }

    pub fn cutoff(&self) -> &Cutoff {
        &self.cutoff
    }

    pub fn window(&self) -> &Window {
        &self.cutoff.window
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn decay_bound(&self) -> f64 {
        self.bound
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// True when `b_1, …, b_n` are all non-zero.
    pub fn leading_nonzero(&self, n: usize) -> bool {
        n <= self.coeffs.len() && self.coeffs[..n].iter().all(|&b| b != 0.0)
    }

    /// Draws `ξ_1, …, ξ_n` for kick number `kick` of the stream.
    pub fn sample_kick(&self, key: StreamKey, kick: u64) -> KickSample {
        let mut rng = key.stream(Domain::Kick, kick);
        let xi = (0..self.coeffs.len())
            .map(|_| xi_quantile(rng.random::<f64>()))
            .collect();
        KickSample { xi }
    }

    /// The kick with prescribed coefficients `ξ`.
    pub fn kick(&self, sample: &KickSample) -> Kick<'_> {
        Kick::new(self, sample)
    }

    /// The cut-off combination `χ Σ_i c_i φ_i` in local time.
    pub fn combination(&self, coeffs: &[f64]) -> Kick<'_> {
        Kick::combination(self, coeffs)
    }
}

/// Coefficients `ξ_i ∈ [-1, 1]` of one kick.
#[derive(Clone, Debug, PartialEq)]
pub struct KickSample {
    pub xi: Vec<f64>,
}

impl KickSample {
    pub fn zero(n: usize) -> Self {
        Self { xi: vec![0.0; n] }
    }
}

/// One kick `η_k(τ, x)` as a function of local time `τ ∈ [0, T]`.
///
/// Evaluation is separable: `Σ_mn c_mn sin(mπX) sin(nπT)` is summed over
/// `n` first, then over `m` with a table of spatial sines.
pub struct Kick<'a> {
    spec: &'a LocalisedNoiseSpec,
    /// `c[m-1][n-1] = b_i ξ_i` on the `(m, n)` lattice.
    lattice: Vec<Vec<f64>>,
    is_zero: bool,
}

impl<'a> Kick<'a> {
    fn new(spec: &'a LocalisedNoiseSpec, sample: &KickSample) -> Self {
        let c: Vec<f64> = (0..spec.basis.len())
            .map(|i| spec.coeffs[i] * sample.xi.get(i).copied().unwrap_or(0.0))
            .collect();
        Self::combination(spec, &c)
    }

    /// `χ Σ_i c_i φ_i`; missing coefficients count as zero.
    fn combination(spec: &'a LocalisedNoiseSpec, coeffs: &[f64]) -> Self {
        let (mx, nx) = spec.basis.extent();
        let mut lattice = vec![vec![0.0; nx]; mx];
        let mut is_zero = true;
        for (i, md) in spec.basis.modes().iter().enumerate() {
            let c = coeffs.get(i).copied().unwrap_or(0.0);
            if c != 0.0 {
                is_zero = false;
            }
            lattice[md.m - 1][md.n - 1] = c;
        }
        Self { spec, lattice, is_zero }
    }

    /// Pointwise value, used by quadrature checks.
    pub fn value(&self, x: f64, tau: f64) -> f64 {
        let w = self.spec.window();
        if self.is_zero || !w.contains_x(x) || !w.contains_time(tau) {
            return 0.0;
        }
        let xs = (x - w.x1) / w.width();
        let ts = (tau - w.t1) / w.duration();
        let mut acc = 0.0;
        for (m, row) in self.lattice.iter().enumerate() {
            let sx = ((m + 1) as f64 * PI * xs).sin();
            let inner: f64 = row
                .iter()
                .enumerate()
                .map(|(n, c)| c * ((n + 1) as f64 * PI * ts).sin())
                .sum();
            acc += sx * inner;
        }
        self.spec.basis.norm() * self.spec.cutoff.eval(x, tau) * acc
    }

    /// `η_k(τ, ·)` sampled on the grid, or `None` outside `(t1, t2)`.
    pub fn field(&self, tau: f64, grid: &TorusGrid) -> Option<Field> {
        let w = self.spec.window();
        if self.is_zero || !w.contains_time(tau) {
            return None;
        }
        let ts = (tau - w.t1) / w.duration();
        let time_factor = self.spec.basis.norm() * self.spec.cutoff.time(tau);
        let amps: Vec<f64> = self
            .lattice
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(n, c)| c * ((n + 1) as f64 * PI * ts).sin())
                    .sum()
            })
            .collect();
        let mut values = vec![0.0; grid.n_points()];
        for (j, v) in values.iter_mut().enumerate() {
            let x = grid.node(j);
            if !w.contains_x(x) {
                continue;
            }
            let xs = (x - w.x1) / w.width();
            let s: f64 = amps
                .iter()
                .enumerate()
                .map(|(m, a)| a * ((m + 1) as f64 * PI * xs).sin())
                .sum();
            *v = time_factor * self.spec.cutoff.space(x) * s;
        }
        Some(Field::from_physical(grid, &values))
    }
}

impl SpaceTimeField for Kick<'_> {
    fn at(&self, t: f64, grid: &TorusGrid) -> Option<Field> {
        self.field(t, grid)
    }
}

/// Concatenated kick process `η(t) = η_k(t - (k-1)T)` on `((k-1)T, kT)`.
pub struct KickProcess<'a> {
    kicks: Vec<Kick<'a>>,
    period: f64,
}

impl<'a> KickProcess<'a> {
    pub fn new(spec: &'a LocalisedNoiseSpec, samples: &[KickSample]) -> Self {
        Self {
            kicks: samples.iter().map(|s| spec.kick(s)).collect(),
            period: spec.period(),
        }
    }

    /// Kick index `k ≥ 1` and local time for global time `t`.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let k = (t / self.period).floor().max(0.0) as usize + 1;
        (k, t - (k - 1) as f64 * self.period)
    }
}

/// Evaluates the concatenated process at time `t` (zero beyond the last kick).
pub fn eval_eta(process: &KickProcess<'_>, t: f64, grid: &TorusGrid) -> Field {
    process.at(t, grid).unwrap_or_else(|| Field::zeros(grid))
}

impl SpaceTimeField for KickProcess<'_> {
    fn at(&self, t: f64, grid: &TorusGrid) -> Option<Field> {
        if t < 0.0 {
            return None;
        }
        let (k, tau) = self.locate(t);
        self.kicks.get(k - 1).and_then(|kick| kick.field(tau, grid))
    }
}
