use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, lit, Scalar};

use super::fd_gradient;

/// `φ(x) = xᵀ M x + wᵀ x`
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticLinear<T> {
    pub matrix: Matrix<T>,
    pub linear: Vec<T>,
}

impl<T: Scalar> QuadraticLinear<T> {
    pub fn new(matrix: Matrix<T>, linear: Vec<T>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidArgument("quadratic term must be square".into()));
        }
        check_dim("linear term", matrix.rows(), linear.len())?;
        if !matrix.is_symmetric(lit::<T>(1e-12) * matrix.max_abs().max(T::one())) {
            return Err(Error::InvalidArgument("quadratic term must be symmetric".into()));
        }
        Ok(Self { matrix, linear })
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.matrix.quadratic_form(x) + dot(&self.linear, x)
    }

    /// `2 M x + w` (M symmetric).
    pub fn gradient(&self, x: &[T]) -> Vec<T> {
        let two = lit::<T>(2.0);
        self.matrix
            .mul_vec(x)
            .into_iter()
            .zip(&self.linear)
            .map(|(a, &b)| two * a + b)
            .collect()
    }
}

type ValueFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
type GradFn<T> = Arc<dyn Fn(&[T]) -> Vec<T> + Send + Sync>;

/// A real-valued map on states, optionally carrying a quadratic+linear
/// parametrization that its evaluation follows exactly.
#[derive(Clone)]
pub struct StateFunction<T> {
    n_x: usize,
    value: ValueFn<T>,
    gradient: Option<GradFn<T>>,
    quadratic: Option<QuadraticLinear<T>>,
}

/// Terminal cost `V_f`.
pub type TerminalCost<T> = StateFunction<T>;
/// Storage function `λ` of the dissipation inequality.
pub type StorageFunction<T> = StateFunction<T>;

impl<T> fmt::Debug for StateFunction<T>
where
    T: fmt::Debug,
{
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateFunction")
            .field("n_x", &self.n_x)
            .field("quadratic", &self.quadratic)
            .finish()
    }
}

impl<T: Scalar> StateFunction<T> {
    pub fn zero(n_x: usize) -> Self {
        Self::from_quadratic(QuadraticLinear {
            matrix: Matrix::zeros(n_x, n_x),
            linear: vec![T::zero(); n_x],
        })
    }

    /// `xᵀ P x + νᵀ x`
    pub fn quadratic_linear(matrix: Matrix<T>, linear: Vec<T>) -> Result<Self> {
        Ok(Self::from_quadratic(QuadraticLinear::new(matrix, linear)?))
    }

    pub fn from_quadratic(q: QuadraticLinear<T>) -> Self {
        let n_x = q.linear.len();
        let qv = q.clone();
        let qg = q.clone();
        Self {
            n_x,
            value: Arc::new(move |x| qv.eval(x)),
            gradient: Some(Arc::new(move |x| qg.gradient(x))),
            quadratic: Some(q),
        }
    }

    /// Arbitrary map; gradients fall back to central differences.
    pub fn from_fn(n_x: usize, f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        Self {
            n_x,
            value: Arc::new(f),
            gradient: None,
            quadratic: None,
        }
    }

    pub fn with_gradient(mut self, g: impl Fn(&[T]) -> Vec<T> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn quadratic(&self) -> Option<&QuadraticLinear<T>> {
        self.quadratic.as_ref()
    }

    pub fn eval(&self, x: &[T]) -> T {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[T]) -> Vec<T> {
        match &self.gradient {
            Some(g) => g(x),
            None => fd_gradient(|p| self.eval(p), x),
        }
    }

    /// Pointwise sum; parametrizations add when both sides carry one.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        check_dim("state function", self.n_x, other.n_x)?;
        if let (Some(a), Some(b)) = (&self.quadratic, &other.quadratic) {
            return Ok(Self::from_quadratic(QuadraticLinear {
                matrix: a.matrix.add(&b.matrix),
                linear: a.linear.iter().zip(&b.linear).map(|(&p, &q)| p + q).collect(),
            }));
        }
        let (a, b) = (self.clone(), other.clone());
        let (ga, gb) = (self.clone(), other.clone());
        Ok(Self::from_fn(self.n_x, move |x| a.eval(x) + b.eval(x)).with_gradient(move |x| {
            ga.gradient(x)
                .into_iter()
                .zip(gb.gradient(x))
                .map(|(p, q)| p + q)
                .collect()
        }))
    }

    /// `s · φ`
    pub fn scaled(&self, s: T) -> Self {
        if let Some(q) = &self.quadratic {
            return Self::from_quadratic(QuadraticLinear {
                matrix: q.matrix.scale(s),
                linear: q.linear.iter().map(|&w| w * s).collect(),
            });
        }
        let a = self.clone();
        let g = self.clone();
        Self::from_fn(self.n_x, move |x| s * a.eval(x))
            .with_gradient(move |x| g.gradient(x).into_iter().map(|v| v * s).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parametrized_evaluation_is_exact() {
        let f = StateFunction::quadratic_linear(Matrix::scalar(-1.0), vec![0.5]).unwrap();
        assert_eq!(f.eval(&[2.0]), -4.0 + 1.0);
        assert_eq!(f.gradient(&[2.0]), vec![-3.5]);
    }

    #[test]
    fn sum_and_scale_keep_parametrization() {
        let vf = StateFunction::quadratic_linear(Matrix::scalar(1.0), vec![0.3]).unwrap();
        let lam = StateFunction::quadratic_linear(Matrix::scalar(-1.0), vec![-0.3]).unwrap();
        let s = vf.sum(&lam).unwrap();
        let q = s.quadratic().unwrap();
        assert_eq!(q.matrix[(0, 0)], 0.0);
        assert_eq!(q.linear[0], 0.0);
        assert_eq!(vf.scaled(2.0).eval(&[1.0]), 2.6);
    }

    #[test]
    fn callback_functions_use_finite_differences() {
        let f = StateFunction::from_fn(1, |x: &[f64]| x[0].powi(3));
        let g = f.gradient(&[2.0]);
        assert!((g[0] - 12.0).abs() < 1e-8);
        let s = f.sum(&StateFunction::zero(1)).unwrap();
        assert!(s.quadratic().is_none());
        assert_eq!(s.eval(&[2.0]), 8.0);
    }

    #[test]
    fn rejects_non_symmetric() {
        let m = Matrix::<f64>::from_f64_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(StateFunction::quadratic_linear(m, vec![0.0, 0.0]).is_err());
    }
}
