//! Time-dependent fields used as forcing, controls and PDE coefficients.

use crate::spectral::{Field, TorusGrid};

/// A field depending on time. `None` stands for the zero field so that
/// callers can skip work outside the support of a localised source.
pub trait SpaceTimeField: Sync {
    fn at(&self, t: f64, grid: &TorusGrid) -> Option<Field>;
}

/// Identically zero source.
#[derive(Clone, Copy, Debug, Default)]
pub struct Zero;

impl SpaceTimeField for Zero {
    fn at(&self, _t: f64, _grid: &TorusGrid) -> Option<Field> {
        None
    }
}

/// Time-independent field, resampled onto the requested grid if needed.
impl SpaceTimeField for Field {
    fn at(&self, _t: f64, grid: &TorusGrid) -> Option<Field> {
        if self.grid() == grid {
            Some(self.clone())
        } else {
            Some(self.resample(grid))
        }
    }
}

impl<S: SpaceTimeField + ?Sized> SpaceTimeField for &S {
    fn at(&self, t: f64, grid: &TorusGrid) -> Option<Field> {
        (**self).at(t, grid)
    }
}

impl<S: SpaceTimeField + ?Sized> SpaceTimeField for Box<S> {
    fn at(&self, t: f64, grid: &TorusGrid) -> Option<Field> {
        (**self).at(t, grid)
    }
}

/// Closure-backed source.
pub struct FnSource<F>(pub F);

impl<F> SpaceTimeField for FnSource<F>
where
    F: Fn(f64, &TorusGrid) -> Option<Field> + Sync,
{
    fn at(&self, t: f64, grid: &TorusGrid) -> Option<Field> {
        (self.0)(t, grid)
    }
}

/// Pointwise sum of two sources.
pub struct Sum<A, B>(pub A, pub B);

impl<A: SpaceTimeField, B: SpaceTimeField> SpaceTimeField for Sum<A, B> {
    fn at(&self, t: f64, grid: &TorusGrid) -> Option<Field> {
        match (self.0.at(t, grid), self.1.at(t, grid)) {
            (Some(a), Some(b)) => Some(a.add(&b)),
            (a, None) => a,
            (None, b) => b,
        }
    }
}

/// Source shifted in time: `inner(t + offset)`.
pub struct Shifted<S> {
    pub inner: S,
    pub offset: f64,
}

impl<S: SpaceTimeField> SpaceTimeField for Shifted<S> {
    fn at(&self, t: f64, grid: &TorusGrid) -> Option<Field> {
        self.inner.at(t + self.offset, grid)
    }
}

/// Source scaled by a constant.
pub struct Scaled<S> {
    pub inner: S,
    pub factor: f64,
}

impl<S: SpaceTimeField> SpaceTimeField for Scaled<S> {
    fn at(&self, t: f64, grid: &TorusGrid) -> Option<Field> {
        self.inner.at(t, grid).map(|f| f.scale(self.factor))
    }
}

/// Adds `src(t)` to `acc`, returning whether anything was added.
pub fn add_into(acc: &mut Field, src: &dyn SpaceTimeField, t: f64, scale: f64) -> bool {
    match src.at(t, acc.grid()) {
        Some(f) => {
            acc.axpy(scale, &f);
            true
        }
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_and_zero() {
        let g = TorusGrid::new(16).unwrap();
        let f = Field::mode(&g, 1, 1.0, 0.0);
        assert!(Zero.at(0.0, &g).is_none());
        let s = Sum(f.clone(), Zero);
        assert_eq!(s.at(1.0, &g).unwrap(), f);
        let s2 = Sum(f.clone(), f.clone());
        assert!(s2.at(0.0, &g).unwrap().max_coeff_diff(&f.scale(2.0)) < 1e-15);
    }

    #[test]
    fn shifted_closure() {
        let g = TorusGrid::new(16).unwrap();
        let src = FnSource(|t: f64, g: &TorusGrid| Some(Field::constant(g, t)));
        let sh = Shifted {
            inner: src,
            offset: 2.0,
        };
        assert_eq!(sh.at(1.0, &g).unwrap().coeff(0).re, 3.0);
    }
}
