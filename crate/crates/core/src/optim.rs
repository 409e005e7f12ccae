//! Smooth local minimization: quasi-Newton (BFGS) with Armijo backtracking
//! and optional box projection, plus golden-section search for scalar
//! problems.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::ControlBox;
use crate::scalar::{dot, lit, norm, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct LineSearchConfig<T> {
    pub max_iterations: usize,
    pub gradient_tolerance: T,
    /// Armijo sufficient-decrease constant.
    pub sufficient_decrease: T,
    /// Step contraction per backtracking trial, in (0, 1).
    pub backtracking_factor: T,
}

impl<T: Scalar> Default for LineSearchConfig<T> {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            gradient_tolerance: lit(1e-9),
            sufficient_decrease: lit(1e-4),
            backtracking_factor: lit(0.5),
        }
    }
}

impl<T: Scalar> LineSearchConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > T::zero()) || !(self.sufficient_decrease > T::zero()) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if !(self.backtracking_factor > T::zero() && self.backtracking_factor < T::one()) {
            return Err(Error::InvalidArgument(
                "backtracking factor must lie in (0, 1)".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    /// Projected-gradient norm at `x`.
    pub gradient_norm: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Objective returning value and gradient, or `None` where it cannot be
/// evaluated (diverged rollout). Such points are treated as `+∞`.
pub trait Objective<T> {
    fn evaluate(&mut self, x: &[T]) -> Option<(T, Vec<T>)>;
}

impl<T, F> Objective<T> for F
where
    F: FnMut(&[T]) -> Option<(T, Vec<T>)>,
{
    fn evaluate(&mut self, x: &[T]) -> Option<(T, Vec<T>)> {
        self(x)
    }
}

/// Box bounds repeated over consecutive blocks of `block.lower.len()`.
#[derive(Clone, Copy, Debug)]
pub struct Bounds<'a, T> {
    pub block: &'a ControlBox<T>,
}

impl<T: Scalar> Bounds<'_, T> {
    fn project(&self, x: &mut [T]) {
        let n = self.block.lower.len();
        for chunk in x.chunks_mut(n) {
            self.block.project(chunk);
        }
    }

    fn bound(&self, i: usize) -> (T, T) {
        let k = i % self.block.lower.len();
        (self.block.lower[k], self.block.upper[k])
    }
}

fn projected_gradient<T: Scalar>(x: &[T], g: &[T], bounds: Option<Bounds<'_, T>>) -> Vec<T> {
    match bounds {
        None => g.to_vec(),
        Some(b) => {
            let mut step: Vec<T> = x.iter().zip(g).map(|(&xi, &gi)| xi - gi).collect();
            b.project(&mut step);
            x.iter().zip(step).map(|(&xi, si)| xi - si).collect()
        }
    }
}

/// BFGS on the inverse Hessian with backtracking line search. Under a box,
/// components pinned at a bound with the gradient pushing outward are
/// frozen for the step and trial points are projected back.
pub fn minimize<T: Scalar>(
    objective: &mut impl Objective<T>,
    x0: &[T],
    bounds: Option<Bounds<'_, T>>,
    cfg: &LineSearchConfig<T>,
) -> Result<Minimum<T>> {
    cfg.validate()?;
    let n = x0.len();
    let mut x = x0.to_vec();
    if let Some(b) = bounds {
        b.project(&mut x);
    }
    let (mut fx, mut g) = objective
        .evaluate(&x)
        .ok_or_else(|| Error::SolverFailure("objective not finite at starting point".into()))?;
    let mut h = Matrix::<T>::identity(n);
    let mut h_fresh = true;
    let mut iterations = 0;
    let mut pg_norm = norm(&projected_gradient(&x, &g, bounds));

    while iterations < cfg.max_iterations {
        if pg_norm <= cfg.gradient_tolerance {
            break;
        }
        iterations += 1;

        let free: Vec<bool> = (0..n)
            .map(|i| match bounds {
                None => true,
                Some(b) => {
                    let (lo, hi) = b.bound(i);
                    !((x[i] <= lo && g[i] > T::zero()) || (x[i] >= hi && g[i] < T::zero()))
                }
            })
            .collect();
        let g_free: Vec<T> = g
            .iter()
            .zip(&free)
            .map(|(&gi, &f)| if f { gi } else { T::zero() })
            .collect();
        let mut d: Vec<T> = h.mul_vec(&g_free).into_iter().map(|v| -v).collect();
        for (di, &f) in d.iter_mut().zip(&free) {
            if !f {
                *di = T::zero();
            }
        }
        if !(dot(&d, &g_free) < T::zero()) {
            d = g_free.iter().map(|&v| -v).collect();
            h = Matrix::identity(n);
            h_fresh = true;
        }

        match line_search(objective, &x, fx, &g, &d, bounds, cfg) {
            Some((x_new, f_new, g_new)) => {
                let s: Vec<T> = x_new.iter().zip(&x).map(|(&a, &b)| a - b).collect();
                let y: Vec<T> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > T::epsilon() * norm(&s) * norm(&y) {
                    if h_fresh {
                        // Scale the initial inverse Hessian to the observed curvature.
                        h = Matrix::identity(n).scale(sy / dot(&y, &y));
                        h_fresh = false;
                    }
                    bfgs_update(&mut h, &s, &y, sy);
                }
                x = x_new;
                fx = f_new;
                g = g_new;
                pg_norm = norm(&projected_gradient(&x, &g, bounds));
            }
            None if !h_fresh => {
                h = Matrix::identity(n);
                h_fresh = true;
            }
            None => break,
        }
    }

    Ok(Minimum {
        converged: pg_norm <= cfg.gradient_tolerance,
        x,
        value: fx,
        gradient_norm: pg_norm,
        iterations,
    })
}

fn bfgs_update<T: Scalar>(h: &mut Matrix<T>, s: &[T], y: &[T], sy: T) {
    let n = s.len();
    let rho = T::one() / sy;
    let hy = h.mul_vec(y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] += rho * ((T::one() + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
        }
    }
}

#[allow(clippy::type_complexity)]
fn line_search<T: Scalar>(
    objective: &mut impl Objective<T>,
    x: &[T],
    fx: T,
    g: &[T],
    d: &[T],
    bounds: Option<Bounds<'_, T>>,
    cfg: &LineSearchConfig<T>,
) -> Option<(Vec<T>, T, Vec<T>)> {
    let g_norm = norm(g);
    let mut t = T::one();
    for _ in 0..80 {
        let mut trial: Vec<T> = x.iter().zip(d).map(|(&xi, &di)| xi + t * di).collect();
        if let Some(b) = bounds {
            b.project(&mut trial);
        }
        let step: Vec<T> = trial.iter().zip(x).map(|(&a, &b)| a - b).collect();
        if norm(&step) <= T::epsilon() * (T::one() + norm(x)) {
            return None;
        }
        if let Some((ft, gt)) = objective.evaluate(&trial) {
            let decrease = cfg.sufficient_decrease * dot(g, &step);
            if ft <= fx + decrease {
                return Some((trial, ft, gt));
            }
            // Near a minimum the decrease drops under the rounding level of
            // the objective; accept steps that stay level and shrink the gradient.
            let noise = lit::<T>(16.0) * T::epsilon() * fx.abs().max(T::one());
            if ft <= fx + noise && norm(&gt) < g_norm {
                return Some((trial, ft, gt));
            }
        }
        t *= cfg.backtracking_factor;
    }
    None
}

/// Golden-section search for a minimum of a unimodal `f` on `[a, b]`.
pub fn golden_section<T: Scalar>(f: impl Fn(T) -> T, a: T, b: T, tol: T) -> (T, T) {
    let inv_phi = lit::<T>((5f64.sqrt() - 1.0) / 2.0);
    let (mut lo, mut hi) = (a, b);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (hi - lo).abs() <= tol {
            break;
        }
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    let mid = (lo + hi) / lit(2.0);
    let candidates = [(c, fc), (d, fd), (mid, f(mid)), (a, f(a)), (b, f(b))];
    candidates
        .into_iter()
        .filter(|(_, v)| !v.is_nan())
        .fold((mid, T::infinity()), |best, cand| if cand.1 < best.1 { cand } else { best })
}

/// Global-ish scalar minimization on `[a, b]`: a uniform scan picks the
/// best bracket, golden-section refines inside it.
pub fn minimize_scalar<T: Scalar>(f: impl Fn(T) -> T, a: T, b: T, scan_points: usize) -> (T, T) {
    let n = scan_points.max(3);
    let h = (b - a) / lit((n - 1) as f64);
    let (mut best_i, mut best_v) = (0, T::infinity());
    for i in 0..n {
        let v = f(a + h * lit(i as f64));
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let lo = a + h * lit(best_i.saturating_sub(1) as f64);
    let hi = (a + h * lit((best_i + 1) as f64)).min(b);
    let tol = lit::<T>(4.0) * T::epsilon().sqrt() * (T::one() + a.abs().max(b.abs())) * lit(1e-3);
    let (x, v) = golden_section(&f, lo, hi, tol);
    if v <= best_v {
        (x, v)
    } else {
        (a + h * lit(best_i as f64), best_v)
    }
}
