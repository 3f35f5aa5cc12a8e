//! Exponential mixing-rate fits.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::fit_line;

/// `d_k ≈ C e^{-σ k}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MixingFit {
    pub sigma: f64,
    pub c: f64,
    pub r2: f64,
    pub n_points: usize,
}

/// Least-squares fit of `log d_k = log C - σ k` over positive finite entries.
pub fn mixing_rate_fit(series: &[(f64, f64)]) -> Result<MixingFit> {
    let (k, y): (Vec<f64>, Vec<f64>) = series
        .iter()
        .filter(|(_, d)| *d > 0.0 && d.is_finite())
        .map(|(k, d)| (*k, d.ln()))
        .unzip();
    if k.len() < 4 {
        return Err(Error::NotConverged(format!(
            "mixing fit needs at least 4 positive points, got {}",
            k.len()
        )));
    }
    let fit = fit_line(&k, &y).ok_or_else(|| Error::NotConverged("degenerate mixing fit".into()))?;
    Ok(MixingFit {
        sigma: -fit.slope,
        c: fit.intercept.exp(),
        r2: fit.r2,
        n_points: k.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_series() {
        let s: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, (-0.5 * k as f64).exp())).collect();
        let f = mixing_rate_fit(&s).unwrap();
        assert!((f.sigma - 0.5).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12 && (f.c - 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 0.3)).collect();
        assert!(mixing_rate_fit(&flat).unwrap().sigma.abs() < 1e-15);
        assert!(mixing_rate_fit(&s[..3]).is_err());
    }
}
