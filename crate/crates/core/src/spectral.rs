//! Fourier representation of real periodic functions on the torus `[0, 2π)`.
//!
//! A [`Field`] stores the half spectrum `c_0, …, c_{n/2}` of a real function
//! sampled on `n` uniform nodes, with `u(x) = Σ_k c_k e^{ikx}` over
//! `k ∈ {-n/2+1, …, n/2}` and `c_{-k} = conj(c_k)`. Norms follow the
//! continuum convention: the constant field `1` has L² norm `√(2π)`.
//!
//! The Nyquist mode `k = n/2` is real on the grid, so every Fourier
//! multiplier acts on it through the real part of its symbol. For odd
//! derivatives this zeroes the mode, which is what the sampled `sin(n x/2)`
//! looks like on the nodes anyway.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Uniform collocation grid on the torus.
#[derive(Clone)]
pub struct TorusGrid {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid").field("n", &self.n).finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

impl TorusGrid {
    /// Grid of `n` nodes. `n` must be a power of two and at least 8.
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::Config(format!("grid size must be a power of two >= 8, got {n}")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        })
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    /// Largest stored wavenumber, `n/2`.
    pub fn nyquist(&self) -> usize {
        self.n / 2
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        self.spacing() * j as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    /// Wavenumbers retained by the 2/3 rule.
    pub fn dealias_cutoff(&self) -> usize {
        self.n / 3
    }

    /// Dimension of the real eigenbasis representable on this grid.
    pub fn basis_dim(&self) -> usize {
        self.n
    }

    fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self.n != other.n {
            return Err(Error::GridMismatch {
                left: self.n,
                right: other.n,
            });
        }
        Ok(())
    }
}

/// Real function on the torus, held as its half spectrum.
#[derive(Clone, Debug)]
pub struct Field {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.coeffs == other.coeffs
    }
}

impl Field {
    pub fn zeros(grid: &TorusGrid) -> Self {
        Self {
            grid: grid.clone(),
            coeffs: vec![Complex64::new(0.0, 0.0); grid.n / 2 + 1],
        }
    }

    pub fn constant(grid: &TorusGrid, value: f64) -> Self {
        let mut f = Self::zeros(grid);
        f.coeffs[0] = Complex64::new(value, 0.0);
        f
    }

    /// Builds a field from `c_0..=c_{n/2}`; imaginary parts of `c_0` and
    /// the Nyquist coefficient are discarded.
    pub fn from_coeffs(grid: &TorusGrid, mut coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.n / 2 + 1 {
            return Err(Error::Config(format!(
                "expected {} coefficients, got {}",
                grid.n / 2 + 1,
                coeffs.len()
            )));
        }
        let last = coeffs.len() - 1;
        coeffs[0].im = 0.0;
        coeffs[last].im = 0.0;
        Ok(Self {
            grid: grid.clone(),
            coeffs,
        })
    }

    /// `a cos(kx) + b sin(kx)`.
    pub fn mode(grid: &TorusGrid, k: usize, a: f64, b: f64) -> Self {
        let mut f = Self::zeros(grid);
        f.add_mode(k, a, b);
        f
    }

    /// Adds `a cos(kx) + b sin(kx)` in place.
    pub fn add_mode(&mut self, k: usize, a: f64, b: f64) {
        let nyq = self.grid.nyquist();
        assert!(k <= nyq, "wavenumber {k} beyond Nyquist {nyq}");
        if k == 0 {
            self.coeffs[0].re += a;
        } else if k == nyq {
            self.coeffs[k].re += a;
        } else {
            self.coeffs[k] += Complex64::new(a / 2.0, -b / 2.0);
        }
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(grid: &TorusGrid, f: impl Fn(f64) -> f64) -> Self {
        let values: Vec<f64> = (0..grid.n).map(|j| f(grid.node(j))).collect();
        Self::from_physical(grid, &values)
    }

    pub fn from_physical(grid: &TorusGrid, values: &[f64]) -> Self {
        assert_eq!(values.len(), grid.n, "physical array length mismatch");
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        grid.fwd.process(&mut buf);
        let scale = 1.0 / grid.n as f64;
        let mut coeffs: Vec<Complex64> = buf[..=grid.n / 2].iter().map(|c| c * scale).collect();
        let last = coeffs.len() - 1;
        coeffs[0].im = 0.0;
        coeffs[last].im = 0.0;
        Self {
            grid: grid.clone(),
            coeffs,
        }
    }

    /// Values at the grid nodes.
    pub fn to_physical(&self) -> Vec<f64> {
        let n = self.grid.n;
        let half = n / 2;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[..=half].copy_from_slice(&self.coeffs);
        for k in 1..half {
            buf[n - k] = self.coeffs[k].conj();
        }
        self.grid.inv.process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    /// Evaluates the trigonometric interpolant at an arbitrary point.
    pub fn eval_at(&self, x: f64) -> f64 {
        let nyq = self.grid.nyquist();
        let mut acc = self.coeffs[0].re + self.coeffs[nyq].re * (nyq as f64 * x).cos();
        let step = Complex64::new(x.cos(), x.sin());
        let mut phase = step;
        for c in &self.coeffs[1..nyq] {
            acc += 2.0 * (c * phase).re;
            phase *= step;
        }
        acc
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeff(&self, k: usize) -> Complex64 {
        self.coeffs[k]
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Applies the Fourier multiplier `symbol(k)`, `k ≥ 0`; the symbol at
    /// `-k` is assumed to be the conjugate (real operator).
    pub fn apply_symbol(&self, symbol: impl Fn(f64) -> Complex64) -> Field {
        let nyq = self.grid.nyquist();
        let mut out = self.clone();
        for (k, c) in out.coeffs.iter_mut().enumerate() {
            let s = symbol(k as f64);
            if k == 0 || k == nyq {
                *c = Complex64::new(c.re * s.re, 0.0);
            } else {
                *c *= s;
            }
        }
        out
    }

    /// `∂_x^order f`.
    pub fn deriv(&self, order: u32) -> Field {
        let base = Complex64::new(0.0, 1.0);
        self.apply_symbol(|k| (base * k).powu(order))
    }

    /// `A f = f_xxx - f_xx + f`.
    pub fn apply_a(&self) -> Field {
        self.apply_symbol(symbol_a)
    }

    /// `e^{-tA} f`.
    pub fn semigroup(&self, t: f64) -> Field {
        propagate(self, t, LinearOp::Kdvb)
    }

    /// `‖f‖_{H^s}` with weights `(1+k²)^s` and the continuum normalisation.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let nyq = self.grid.nyquist();
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate() {
            let w = if k == 0 || k == nyq { 1.0 } else { 2.0 };
            acc += w * (1.0 + (k * k) as f64).powf(s) * c.norm_sqr();
        }
        (2.0 * PI * acc).sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.sobolev_norm(0.0)
    }

    pub fn h1_norm(&self) -> f64 {
        self.sobolev_norm(1.0)
    }

    /// L² inner product `∫ f g dx`.
    pub fn inner(&self, other: &Field) -> f64 {
        assert_eq!(self.grid, other.grid, "inner product across grids");
        let nyq = self.grid.nyquist();
        let mut acc = 0.0;
        for (k, (a, b)) in self.coeffs.iter().zip(&other.coeffs).enumerate() {
            let w = if k == 0 || k == nyq { 1.0 } else { 2.0 };
            acc += w * (a * b.conj()).re;
        }
        2.0 * PI * acc
    }

    /// H¹ inner product with weights `(1+k²)`.
    pub fn inner_h1(&self, other: &Field) -> f64 {
        let nyq = self.grid.nyquist();
        let mut acc = 0.0;
        for (k, (a, b)) in self.coeffs.iter().zip(&other.coeffs).enumerate() {
            let w = if k == 0 || k == nyq { 1.0 } else { 2.0 };
            acc += w * (1.0 + (k * k) as f64) * (a * b.conj()).re;
        }
        2.0 * PI * acc
    }

    /// Orthogonal projection onto `e_1, …, e_n_modes` of [`EigenBasis`].
    pub fn project(&self, n_modes: usize) -> Field {
        let basis = EigenBasis::new(&self.grid);
        let coords = basis.coords(self, n_modes.min(basis.dim()));
        basis.synthesize(&coords)
    }

    /// Zeroes every mode with `|k| > n/3`.
    pub fn dealias(&self) -> Field {
        let cutoff = self.grid.dealias_cutoff();
        let mut out = self.clone();
        for c in out.coeffs.iter_mut().skip(cutoff + 1) {
            *c = Complex64::new(0.0, 0.0);
        }
        out
    }

    /// `f(2π - x)`.
    pub fn reflect(&self) -> Field {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut() {
            *c = c.conj();
        }
        out
    }

    /// Pointwise product, evaluated on the grid (aliased unless the inputs
    /// are band-limited to `n/3`).
    pub fn product(&self, other: &Field) -> Field {
        assert_eq!(self.grid, other.grid, "product across grids");
        let a = self.to_physical();
        let b = other.to_physical();
        let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        Field::from_physical(&self.grid, &prod)
    }

    /// Copies the field onto another grid, truncating or zero-padding modes.
    pub fn resample(&self, grid: &TorusGrid) -> Field {
        let mut out = Field::zeros(grid);
        let keep = self.grid.nyquist().min(grid.nyquist());
        for k in 0..=keep {
            let mut c = self.coeffs[k];
            // A Nyquist coefficient of the coarse grid is a cosine on the fine one.
            if k == self.grid.nyquist() && k < grid.nyquist() {
                c *= 0.5;
            }
            out.coeffs[k] = c;
        }
        let last = out.coeffs.len() - 1;
        out.coeffs[0].im = 0.0;
        out.coeffs[last].im = 0.0;
        out
    }

    pub fn scale(&self, a: f64) -> Field {
        let mut out = self.clone();
        out.scale_mut(a);
        out
    }

    pub fn scale_mut(&mut self, a: f64) {
        for c in self.coeffs.iter_mut() {
            *c *= a;
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Field) {
        assert_eq!(self.grid, other.grid, "axpy across grids");
        for (c, d) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += d * a;
        }
    }

    pub fn add(&self, other: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn try_add(&self, other: &Field) -> Result<Field> {
        self.grid.check_same(&other.grid)?;
        Ok(self.add(other))
    }

    /// Largest coefficient modulus difference.
    pub fn max_coeff_diff(&self, other: &Field) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Symbol of `A = ∂_xxx - ∂_xx + 1`: `a_k = -i k³ + k² + 1`.
pub fn symbol_a(k: f64) -> Complex64 {
    Complex64::new(k * k + 1.0, -k * k * k)
}

/// Linear operators integrated exactly in Fourier space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinearOp {
    /// `∂_xxx - ∂_xx + 1`.
    Kdvb,
    /// `∂_xxx - ∂_xx`, the principal part of the reflected adjoint problem.
    KdvbUndamped,
}

impl LinearOp {
    pub fn symbol(self, k: f64) -> Complex64 {
        match self {
            LinearOp::Kdvb => symbol_a(k),
            LinearOp::KdvbUndamped => Complex64::new(k * k, -k * k * k),
        }
    }
}

/// `e^{-t L} f` for the diagonal operator `L`.
pub fn propagate(f: &Field, t: f64, op: LinearOp) -> Field {
    let nyq = f.grid.nyquist();
    let mut out = f.clone();
    for (k, c) in out.coeffs.iter_mut().enumerate() {
        let a = op.symbol(k as f64);
        if k == 0 || k == nyq {
            *c = Complex64::new(c.re * (-a.re * t).exp(), 0.0);
        } else {
            *c *= (-a * t).exp();
        }
    }
    out
}

/// Kind of an element of the real eigenbasis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeKind {
    Constant,
    Cos,
    Sin,
    /// `cos(n x / 2)`, normalised with the grid quadrature.
    Nyquist,
}

/// One element `e_i` of the basis of eigenfunctions of `-∂_xx + 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisMode {
    /// One-based index `i`.
    pub index: usize,
    pub wavenumber: usize,
    pub kind: ModeKind,
    pub eigenvalue: f64,
}

/// Real orthonormal eigenbasis ordered by eigenvalue, cosine before sine.
#[derive(Clone, Debug)]
pub struct EigenBasis {
    grid: TorusGrid,
}

const SQRT_PI: f64 = 1.772_453_850_905_516;

impl EigenBasis {
    pub fn new(grid: &TorusGrid) -> Self {
        Self { grid: grid.clone() }
    }

    pub fn dim(&self) -> usize {
        self.grid.basis_dim()
    }

    /// Mode `e_i`, one-based.
    pub fn mode(&self, index: usize) -> BasisMode {
        assert!(index >= 1 && index <= self.dim(), "basis index {index} out of range");
        let nyq = self.grid.nyquist();
        let (k, kind) = if index == 1 {
            (0, ModeKind::Constant)
        } else if index == self.dim() {
            (nyq, ModeKind::Nyquist)
        } else if index.is_multiple_of(2) {
            (index / 2, ModeKind::Cos)
        } else {
            (index / 2, ModeKind::Sin)
        };
        BasisMode {
            index,
            wavenumber: k,
            kind,
            eigenvalue: 1.0 + (k * k) as f64,
        }
    }

    pub fn eigenvalue(&self, index: usize) -> f64 {
        self.mode(index).eigenvalue
    }

    /// Coordinates `(f, e_i)` for `i = 1..=count`.
    pub fn coords(&self, f: &Field, count: usize) -> Vec<f64> {
        let s2 = (2.0 * PI).sqrt();
        (1..=count.min(self.dim()))
            .map(|i| {
                let m = self.mode(i);
                let c = f.coeffs[m.wavenumber];
                match m.kind {
                    ModeKind::Constant | ModeKind::Nyquist => s2 * c.re,
                    ModeKind::Cos => 2.0 * SQRT_PI * c.re,
                    ModeKind::Sin => -2.0 * SQRT_PI * c.im,
                }
            })
            .collect()
    }

    /// `Σ_i coords[i-1] e_i`.
    pub fn synthesize(&self, coords: &[f64]) -> Field {
        let mut f = Field::zeros(&self.grid);
        self.accumulate(&mut f, coords);
        f
    }

    /// `f += Σ_i coords[i-1] e_i`.
    pub fn accumulate(&self, f: &mut Field, coords: &[f64]) {
        let s2 = (2.0 * PI).sqrt();
        for (i, &a) in coords.iter().enumerate().take(self.dim()) {
            if a == 0.0 {
                continue;
            }
            let m = self.mode(i + 1);
            let c = &mut f.coeffs[m.wavenumber];
            match m.kind {
                ModeKind::Constant | ModeKind::Nyquist => c.re += a / s2,
                ModeKind::Cos => c.re += a / (2.0 * SQRT_PI),
                ModeKind::Sin => c.im -= a / (2.0 * SQRT_PI),
            }
        }
    }

    /// Basis function `e_i` as a field.
    pub fn element(&self, index: usize) -> Field {
        let mut coords = vec![0.0; index];
        coords[index - 1] = 1.0;
        self.synthesize(&coords)
    }
}

/// `λ_N`, the `N`-th eigenvalue of `-∂_xx + 1` in basis order.
pub fn eigenvalue_of_index(index: usize) -> f64 {
    let k = index / 2;
    1.0 + (k * k) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TorusGrid {
        TorusGrid::new(64).unwrap()
    }

    fn random_field(grid: &TorusGrid, degree: usize, seed: u64) -> Field {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let mut f = Field::constant(grid, next());
        for k in 1..=degree {
            f.add_mode(k, next(), next());
        }
        f
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TorusGrid::new(6).is_err());
        assert!(TorusGrid::new(96).is_err());
        assert!(TorusGrid::new(4).is_err());
        assert!(TorusGrid::new(8).is_ok());
    }

    #[test]
    fn round_trip_physical() {
        let g = grid();
        let values: Vec<f64> = (0..64).map(|j| ((j * 37 % 17) as f64).sin()).collect();
        let f = Field::from_physical(&g, &values);
        let back = f.to_physical();
        let err = values.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-13, "round trip error {err}");
    }

    #[test]
    fn derivative_examples() {
        let g = grid();
        let s = Field::mode(&g, 1, 0.0, 1.0);
        assert!(s.deriv(1).max_coeff_diff(&Field::mode(&g, 1, 1.0, 0.0)) < 1e-15);
        let c = Field::constant(&g, 3.0);
        assert_eq!(c.deriv(2).l2_norm(), 0.0);
        let s3 = Field::mode(&g, 3, 0.0, 1.0);
        assert!(s3.deriv(3).max_coeff_diff(&Field::mode(&g, 3, -27.0, 0.0)) < 1e-13);
    }

    #[test]
    fn derivative_composes() {
        let g = grid();
        let f = random_field(&g, 20, 3);
        assert!(f.deriv(1).deriv(1).max_coeff_diff(&f.deriv(2)) < 1e-12);
    }

    #[test]
    fn apply_a_examples() {
        let g = grid();
        let s = Field::mode(&g, 1, 0.0, 1.0);
        assert!(s.apply_a().max_coeff_diff(&Field::mode(&g, 1, -1.0, 2.0)) < 1e-15);
        let one = Field::constant(&g, 1.0);
        assert!(one.apply_a().max_coeff_diff(&one) < 1e-15);
        let c2 = Field::mode(&g, 2, 1.0, 0.0);
        assert!(c2.apply_a().max_coeff_diff(&Field::mode(&g, 2, 5.0, 8.0)) < 1e-14);
    }

    #[test]
    fn semigroup_examples() {
        let g = grid();
        let s = Field::mode(&g, 1, 0.0, 1.0);
        let t = 0.7;
        let exact = Field::from_fn(&g, |x| (-2.0 * t as f64).exp() * (x + t).sin());
        assert!(s.semigroup(t).max_coeff_diff(&exact) < 1e-15);
        let f = random_field(&g, 10, 9);
        assert_eq!(f.semigroup(0.0), f);
    }

    #[test]
    fn semigroup_composition_and_contraction() {
        let g = grid();
        let f = random_field(&g, 25, 11);
        let a = f.semigroup(0.3).semigroup(0.45);
        let b = f.semigroup(0.75);
        assert!(a.max_coeff_diff(&b) < 1e-14);
        for t in [0.0, 0.1, 1.0, 3.0] {
            assert!(f.semigroup(t).l2_norm() <= (-t).exp() * f.l2_norm() * (1.0 + 1e-14));
        }
    }

    #[test]
    fn semigroup_matches_brute_force_integration() {
        // Classical RK4 on each Fourier mode with 1000 sub-steps.
        let g = grid();
        let f = Field::mode(&g, 1, 0.0, 1.0);
        let steps = 1000;
        let h = 1.0 / steps as f64;
        let mut c = f.coeff(1);
        let rhs = |z: Complex64| -symbol_a(1.0) * z;
        for _ in 0..steps {
            let k1 = rhs(c);
            let k2 = rhs(c + k1 * (h / 2.0));
            let k3 = rhs(c + k2 * (h / 2.0));
            let k4 = rhs(c + k3 * h);
            c += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        let exact = f.semigroup(1.0).coeff(1);
        assert!((exact - c).norm() < 1e-8);
    }

    #[test]
    fn sobolev_norm_examples() {
        let g = grid();
        let s = Field::mode(&g, 1, 0.0, 1.0);
        assert!((s.sobolev_norm(0.0) - PI.sqrt()).abs() < 1e-14);
        assert!((s.sobolev_norm(1.0) - (2.0 * PI).sqrt()).abs() < 1e-14);
        assert!((Field::constant(&g, 1.0).l2_norm() - (2.0 * PI).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn l2_norm_matches_quadrature() {
        let g = grid();
        let f = random_field(&g, 31, 5);
        let quad: f64 = f.to_physical().iter().map(|v| v * v).sum::<f64>() * g.spacing();
        assert!((quad.sqrt() - f.l2_norm()).abs() < 1e-12 * f.l2_norm());
    }

    #[test]
    fn negative_sobolev_matches_dense_weights() {
        // Assemble the H^{-1} Gram matrix in the cos/sin basis explicitly.
        let g = grid();
        let f = random_field(&g, 12, 17);
        let basis = EigenBasis::new(&g);
        let dim = 25;
        let coords = basis.coords(&f, dim);
        let mut acc = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                let w = if i == j { 1.0 / basis.eigenvalue(i + 1) } else { 0.0 };
                acc += coords[i] * w * coords[j];
            }
        }
        assert!((acc.sqrt() - f.sobolev_norm(-1.0)).abs() < 1e-13);
    }

    #[test]
    fn eigenbasis_ordering() {
        let g = grid();
        let b = EigenBasis::new(&g);
        assert_eq!(b.eigenvalue(1), 1.0);
        assert_eq!(b.eigenvalue(2), 2.0);
        assert_eq!(b.eigenvalue(3), 2.0);
        assert_eq!(b.eigenvalue(4), 5.0);
        assert_eq!(b.eigenvalue(5), 5.0);
        assert_eq!(b.mode(2).kind, ModeKind::Cos);
        assert_eq!(b.mode(3).kind, ModeKind::Sin);
        for i in 1..b.dim() {
            assert!(b.eigenvalue(i) <= b.eigenvalue(i + 1));
            assert_eq!(b.eigenvalue(i), eigenvalue_of_index(i));
        }
    }

    #[test]
    fn eigenbasis_is_orthonormal() {
        let g = grid();
        let b = EigenBasis::new(&g);
        for i in 1..=b.dim() {
            for j in 1..=b.dim() {
                let ip = b.element(i).inner(&b.element(j));
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((ip - expected).abs() < 1e-13, "({i},{j}) -> {ip}");
            }
        }
    }

    #[test]
    fn projection_properties() {
        let g = grid();
        let b = EigenBasis::new(&g);
        let f = b.element(1).add(&b.element(5));
        let p = f.project(3);
        assert!(p.max_coeff_diff(&b.element(1)) < 1e-15);
        let r = random_field(&g, 30, 2);
        assert!(r.project(g.basis_dim()).max_coeff_diff(&r) < 1e-15);
        let p7 = r.project(7);
        assert_eq!(p7.project(7), p7);
        assert!(p7.l2_norm() <= r.l2_norm());
    }

    #[test]
    fn dealias_examples() {
        let g = grid();
        let f = random_field(&g, 16, 4);
        assert_eq!(f.dealias(), f);
        let nyq = Field::mode(&g, 32, 1.0, 0.0);
        assert_eq!(nyq.dealias().l2_norm(), 0.0);
    }

    #[test]
    fn eval_at_matches_nodes() {
        let g = grid();
        let f = random_field(&g, 20, 8);
        let phys = f.to_physical();
        for j in [0, 5, 17, 63] {
            assert!((f.eval_at(g.node(j)) - phys[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn reflect_is_x_to_minus_x() {
        let g = grid();
        let f = random_field(&g, 9, 21);
        let r = f.reflect();
        for x in [0.3, 1.7, 4.0] {
            assert!((r.eval_at(x) - f.eval_at(2.0 * PI - x)).abs() < 1e-12);
        }
    }
}
