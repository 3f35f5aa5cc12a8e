//! Lower-bound estimator of the dual-Lipschitz distance
//! `sup { ∫f dμ₁ - ∫f dμ₂ : ‖f‖_∞ + Lip(f) ≤ 1 }` between sample clouds.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{standard_normal, Domain, StreamKey};
use crate::spectral::{EigenBasis, Field};
use crate::stats::median;

/// Samples of `K` eigen-coordinates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    samples: Vec<Vec<f64>>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, samples: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("projection dimension must be ≥ 1".into()));
        }
        if let Some(s) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::Config(format!(
                "sample of length {} in a {dim}-dimensional cloud",
                s.len()
            )));
        }
        Ok(Self { dim, samples })
    }

    /// Coordinates along `e_1, …, e_K` of each state.
    pub fn from_fields(states: &[Field], dim: usize) -> Result<Self> {
        let samples = match states.first() {
            Some(f) => {
                let basis = EigenBasis::new(f.grid());
                states.iter().map(|s| basis.coords(s, dim)).collect()
            }
            None => Vec::new(),
        };
        Self::new(dim, samples)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    fn coordinate(&self, i: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[i]).collect()
    }

    fn mean_of(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.samples.iter().map(|s| f(s)).sum::<f64>() / self.samples.len() as f64
    }
}

/// Half-widths of the clamped coordinate functions.
const CLAMP_SCALES: [f64; 6] = [0.1, 0.3, 1.0, 2.0, 3.0, 10.0];
const N_RIDGES: usize = 256;

/// Fixed family of test functions with `‖f‖_∞ + Lip(f) ≤ 1`.
#[derive(Clone, Debug)]
pub struct Dictionary {
    dim: usize,
    /// Centres of the clamped coordinate functions.
    centres: Vec<f64>,
    /// `(direction, offset)` of the ridges `α tanh(⟨x, w⟩ - c)`.
    ridges: Vec<(Vec<f64>, f64)>,
}

impl Dictionary {
    /// Draws ridge directions from `seed` and places centres at medians of `anchor`.
    pub fn new(anchor: &EmpiricalMeasure, seed: u64) -> Result<Self> {
        if anchor.is_empty() {
            return Err(Error::Config("dictionary anchor cloud is empty".into()));
        }
        let dim = anchor.dim();
        let centres = (0..dim).map(|i| median(&anchor.coordinate(i))).collect();
        let mut rng = StreamKey::new(seed).stream(Domain::Dictionary, 0);
        let ridges = (0..N_RIDGES)
            .map(|_| {
                let mut w: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
                // Log-uniform slope magnitude in [0.1, 10].
                let scale = 10f64.powf(rng.random::<f64>() * 2.0 - 1.0);
                w.iter_mut().for_each(|x| *x *= scale / norm);
                let proj: Vec<f64> = anchor
                    .samples()
                    .iter()
                    .map(|s| s.iter().zip(&w).map(|(a, b)| a * b).sum())
                    .collect();
                let spread = 0.5 * rng.random::<f64>() - 0.25;
                (w, median(&proj) + spread)
            })
            .collect();
        Ok(Self { dim, centres, ridges })
    }

    /// Largest mean difference over the dictionary and the exact 1-D
    /// marginal distances.
    pub fn distance(&self, mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure) -> Result<f64> {
        if mu1.is_empty() || mu2.is_empty() {
            return Err(Error::Config("dual-Lipschitz estimate needs non-empty clouds".into()));
        }
        if mu1.dim() != self.dim || mu2.dim() != self.dim {
            return Err(Error::Config("cloud dimension differs from the dictionary".into()));
        }
        let mut best: f64 = 0.0;
        for i in 0..self.dim {
            for m in CLAMP_SCALES {
                let a = 1.0 / (1.0 + m);
                let c = self.centres[i];
                let f = |s: &[f64]| a * (s[i] - c).clamp(-m, m);
                best = best.max((mu1.mean_of(f) - mu2.mean_of(f)).abs());
            }
        }
        for (w, c) in &self.ridges {
            let alpha = 1.0 / (1.0 + w.iter().map(|x| x * x).sum::<f64>().sqrt());
            let f = |s: &[f64]| alpha * (s.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - c).tanh();
            best = best.max((mu1.mean_of(f) - mu2.mean_of(f)).abs());
        }
        for i in 0..self.dim {
            best = best.max(bounded_lipschitz_1d(&mu1.coordinate(i), &mu2.coordinate(i)));
        }
        Ok(best)
    }
}

/// Estimate with a dictionary anchored on the pooled clouds.
pub fn dual_lipschitz_estimate(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure, seed: u64) -> Result<f64> {
    if mu1.is_empty() || mu2.is_empty() {
        return Err(Error::Config("dual-Lipschitz estimate needs non-empty clouds".into()));
    }
    if mu1.dim() != mu2.dim() {
        return Err(Error::Config(format!(
            "cloud dimensions differ: {} vs {}",
            mu1.dim(),
            mu2.dim()
        )));
    }
    let mut pooled = mu1.samples().to_vec();
    pooled.extend_from_slice(mu2.samples());
    let anchor = EmpiricalMeasure::new(mu1.dim(), pooled)?;
    Dictionary::new(&anchor, seed)?.distance(mu1, mu2)
}

/// Exact bounded-Lipschitz distance between two empirical measures on ℝ.
pub fn bounded_lipschitz_1d(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    // Signed masses on the merged sorted support.
    let mut pts: Vec<(f64, f64)> = a
        .iter()
        .map(|&x| (x, 1.0 / a.len() as f64))
        .chain(b.iter().map(|&x| (x, -1.0 / b.len() as f64)))
        .collect();
    pts.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut xs: Vec<f64> = Vec::with_capacity(pts.len());
    let mut ms: Vec<f64> = Vec::with_capacity(pts.len());
    for (x, m) in pts {
        if xs.last() == Some(&x) {
            *ms.last_mut().expect("non-empty") += m;
        } else {
            xs.push(x);
            ms.push(m);
        }
    }
    if ms.iter().all(|m| m.abs() < 1e-15) {
        return 0.0;
    }
    // The value is concave in the sup-norm budget, so golden-section search applies.
    let value = |bound: f64| bounded_dual(&xs, &ms, bound, 1.0 - bound);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (0.0, 1.0);
    let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut f1, mut f2) = (value(x1), value(x2));
    for _ in 0..80 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = value(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = value(x1);
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    f1.max(f2).max(value(0.0)).max(value(1.0))
}

/// `max Σ m_i f_i` over `|f_i| ≤ bound`, `|f_{i+1} - f_i| ≤ lip (x_{i+1} - x_i)`,
/// by dynamic programming on concave piecewise-linear value functions.
fn bounded_dual(xs: &[f64], ms: &[f64], bound: f64, lip: f64) -> f64 {
    if bound <= 0.0 {
        return 0.0;
    }
    let mut v = ConcavePwl::linear(-bound, bound, ms[0]);
    for i in 1..xs.len() {
        v.dilate(lip * (xs[i] - xs[i - 1]), -bound, bound);
        v.add_slope(ms[i]);
    }
    v.max()
}

/// Concave piecewise-linear function on `[left, left + Σ len]`.
#[derive(Clone, Debug)]
struct ConcavePwl {
    left: f64,
    left_value: f64,
    /// `(length, slope)` with non-increasing slopes.
    segments: Vec<(f64, f64)>,
}

impl ConcavePwl {
    fn linear(a: f64, b: f64, slope: f64) -> Self {
        Self {
            left: a,
            left_value: slope * a,
            segments: vec![(b - a, slope)],
        }
    }

    fn add_slope(&mut self, s: f64) {
        self.left_value += s * self.left;
        for seg in &mut self.segments {
            seg.1 += s;
        }
    }

    fn max(&self) -> f64 {
        let mut v = self.left_value;
        let mut best = v;
        for &(len, slope) in &self.segments {
            v += len * slope;
            best = best.max(v);
        }
        best
    }

    /// `y ↦ max_{|y' - y| ≤ r} f(y')`, restricted back to `[a, b]`.
    fn dilate(&mut self, r: f64, a: f64, b: f64) {
        if r > 0.0 {
            // Ascending part moves left by r, descending part right by r.
            let split = self
                .segments
                .iter()
                .position(|s| s.1 <= 0.0)
                .unwrap_or(self.segments.len());
            self.segments.insert(split, (2.0 * r, 0.0));
            self.left -= r;
        }
        self.trim(a, b);
    }

    fn trim(&mut self, a: f64, b: f64) {
        // Left end.
        let mut cut = a - self.left;
        let mut start = 0;
        while cut > 0.0 && start < self.segments.len() {
            let (len, slope) = self.segments[start];
            if len <= cut {
                self.left_value += len * slope;
                cut -= len;
                start += 1;
            } else {
                self.left_value += cut * slope;
                self.segments[start].0 -= cut;
                cut = 0.0;
            }
        }
        self.segments.drain(..start);
        self.left = a;
        // Right end.
        let mut excess = self.segments.iter().map(|s| s.0).sum::<f64>() - (b - a);
        while excess > 0.0 {
            let Some(last) = self.segments.last_mut() else {
                break;
            };
            if last.0 <= excess {
                excess -= last.0;
                self.segments.pop();
            } else {
                last.0 -= excess;
                excess = 0.0;
            }
        }
        // Merge equal slopes and drop empty pieces.
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(self.segments.len());
        for &(len, slope) in &self.segments {
            if len <= 0.0 {
                continue;
            }
            match merged.last_mut() {
                Some(m) if (m.1 - slope).abs() <= 1e-15 => m.0 += len,
                _ => merged.push((len, slope)),
            }
        }
        self.segments = merged;
    }
}
