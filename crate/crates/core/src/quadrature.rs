//! Adaptive Simpson quadrature for smooth, oscillatory, vector-valued
//! integrands.
//!
//! The interval is first cut into a fixed number of equal panels (callers
//! pass enough panels to resolve every oscillation), then each panel is
//! bisected until the Richardson estimate |S₂ − S₁|/15 falls below its share
//! of the absolute tolerance. Every integrand value is computed exactly
//! once: endpoints and midpoints are handed down the recursion.

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature did not converge: estimated error {achieved:e} exceeds tolerance {requested:e} after {evaluations} evaluations")]
    NotConverged { achieved: f64, requested: f64, evaluations: usize },
    #[error("integrand returned a non-finite value at x = {0}")]
    NonFinite(f64),
    #[error("invalid quadrature setup: {0}")]
    InvalidSetup(&'static str),
}

/// Integration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Simpson {
    pub abs_tol: f64,
    /// Number of equal panels before any adaptive refinement.
    pub initial_panels: usize,
    /// Maximum number of bisections of an initial panel.
    pub max_depth: u32,
}

impl Default for Simpson {
    fn default() -> Self {
        Self { abs_tol: 1e-9, initial_panels: 16, max_depth: 40 }
    }
}

/// Value of the integral with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral<V> {
    pub value: V,
    pub error_estimate: f64,
    pub evaluations: usize,
}

struct Panel<T, const N: usize> {
    a: T,
    b: T,
    fa: [T; N],
    fm: [T; N],
    fb: [T; N],
    whole: [T; N],
}

fn simpson<T: Real, const N: usize>(h: T, fa: &[T; N], fm: &[T; N], fb: &[T; N]) -> [T; N] {
    let w = h / T::lit(6.0);
    std::array::from_fn(|i| w * (fa[i] + T::lit(4.0) * fm[i] + fb[i]))
}

fn max_abs_diff<T: Real, const N: usize>(x: &[T; N], y: &[T; N]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (*a - *b).abs().to_f64_lossy()).fold(0.0, f64::max)
}

struct Driver<F, T, const N: usize> {
    f: F,
    evaluations: usize,
    max_depth: u32,
    error: f64,
    _marker: std::marker::PhantomData<T>,
}

impl<F, T, const N: usize> Driver<F, T, N>
where
    T: Real,
    F: FnMut(T) -> [T; N],
{
    fn eval(&mut self, x: T) -> Result<[T; N], QuadratureError> {
        self.evaluations += 1;
        let v = (self.f)(x);
        if v.iter().any(|y| !y.is_finite()) {
            return Err(QuadratureError::NonFinite(x.to_f64_lossy()));
        }
        Ok(v)
    }

    fn refine(&mut self, p: Panel<T, N>, tol: f64, depth: u32, acc: &mut [T; N]) -> Result<(), QuadratureError> {
        let m = (p.a + p.b) * T::half();
        let flm = self.eval((p.a + m) * T::half())?;
        let frm = self.eval((m + p.b) * T::half())?;
        let half = (p.b - p.a) * T::half();
        let left = simpson(half, &p.fa, &flm, &p.fm);
        let right = simpson(half, &p.fm, &frm, &p.fb);
        let both: [T; N] = std::array::from_fn(|i| left[i] + right[i]);
        let err = max_abs_diff(&both, &p.whole) / 15.0;
        if err <= tol || depth >= self.max_depth {
            if err > tol {
                self.error += err;
            }
            let fifteenth = T::lit(1.0 / 15.0);
            for i in 0..N {
                acc[i] += both[i] + (both[i] - p.whole[i]) * fifteenth;
            }
            return Ok(());
        }
        self.refine(Panel { a: p.a, b: m, fa: p.fa, fm: flm, fb: p.fm, whole: left }, tol / 2.0, depth + 1, acc)?;
        self.refine(Panel { a: m, b: p.b, fa: p.fm, fm: frm, fb: p.fb, whole: right }, tol / 2.0, depth + 1, acc)
    }
}

impl Simpson {
    pub fn with_tolerance(abs_tol: f64) -> Self {
        Self { abs_tol, ..Self::default() }
    }

    pub fn panels(mut self, n: usize) -> Self {
        self.initial_panels = n;
        self
    }

    /// Integrate `f` over `[a, b]` componentwise.
    pub fn integrate<T, F, const N: usize>(&self, f: F, a: T, b: T) -> Result<Integral<[T; N]>, QuadratureError>
    where
        T: Real,
        F: FnMut(T) -> [T; N],
    {
        if !(self.abs_tol > 0.0) {
            return Err(QuadratureError::InvalidSetup("tolerance must be positive"));
        }
        if self.initial_panels == 0 {
            return Err(QuadratureError::InvalidSetup("at least one initial panel is required"));
        }
        let mut acc = [T::zero(); N];
        if a == b {
            return Ok(Integral { value: acc, error_estimate: 0.0, evaluations: 0 });
        }
        let mut d = Driver { f, evaluations: 0, max_depth: self.max_depth, error: 0.0, _marker: std::marker::PhantomData };
        let n = self.initial_panels;
        let h = (b - a) / T::from_usize_lossy(n);
        let node = |k: usize| if k == n { b } else { a + h * T::from_usize_lossy(k) };
        let panel_tol = self.abs_tol / n as f64;
        let mut fa = d.eval(a)?;
        for k in 0..n {
            let (pa, pb) = (node(k), node(k + 1));
            let fm = d.eval((pa + pb) * T::half())?;
            let fb = d.eval(pb)?;
            let whole = simpson(pb - pa, &fa, &fm, &fb);
            d.refine(Panel { a: pa, b: pb, fa, fm, fb, whole }, panel_tol, 0, &mut acc)?;
            fa = fb;
        }
        if d.error > self.abs_tol {
            return Err(QuadratureError::NotConverged {
                achieved: d.error,
                requested: self.abs_tol,
                evaluations: d.evaluations,
            });
        }
        Ok(Integral { value: acc, error_estimate: d.error, evaluations: d.evaluations })
    }

    /// Scalar convenience wrapper.
    pub fn integrate_scalar<T: Real>(&self, mut f: impl FnMut(T) -> T, a: T, b: T) -> Result<Integral<T>, QuadratureError> {
        let r = self.integrate(|x| [f(x)], a, b)?;
        Ok(Integral { value: r.value[0], error_estimate: r.error_estimate, evaluations: r.evaluations })
    }
}
