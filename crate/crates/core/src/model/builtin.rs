//! Built-in systems: the scalar doubling map with control penalty, its
//! cubic nonlinear variant, generic linear-quadratic problems, and scalar
//! bivariate polynomial systems.

use crate::linalg::Matrix;
use crate::lq::LqProblem;
use crate::model::{StorageFunction, SystemModel};
use crate::scalar::{lit, Scalar};

/// `x⁺ = 2x + u`, `ℓ = u²`.
pub fn scalar_lq<T: Scalar>() -> SystemModel<T> {
    let lq = LqProblem::new(
        Matrix::scalar(lit(2.0)),
        Matrix::scalar(T::one()),
        Matrix::scalar(T::zero()),
        Matrix::scalar(T::one()),
        vec![T::zero()],
        vec![T::zero()],
    )
    .expect("scalar_lq data is valid");
    generic_lq(lq).renamed("scalar_lq")
}

/// `x⁺ = 2x + x³ + 1 + u`, `ℓ = u²`.
pub fn cubic<T: Scalar>() -> SystemModel<T> {
    let two = lit::<T>(2.0);
    let three = lit::<T>(3.0);
    SystemModel::new(
        "cubic",
        1,
        1,
        move |x: &[T], u: &[T]| vec![two * x[0] + x[0] * x[0] * x[0] + T::one() + u[0]],
        |_x: &[T], u: &[T]| u[0] * u[0],
    )
    .expect("cubic dimensions are valid")
    .with_jacobian(move |x: &[T], _u: &[T]| {
        (
            Matrix::scalar(two + three * x[0] * x[0]),
            Matrix::scalar(T::one()),
        )
    })
    .with_cost_gradient(move |_x: &[T], u: &[T]| (vec![T::zero()], vec![two * u[0]]))
}

/// `x⁺ = Ax + Bu`, `ℓ = xᵀQx + uᵀRu + sᵀx + rᵀu`.
pub fn generic_lq<T: Scalar>(lq: LqProblem<T>) -> SystemModel<T> {
    let (n_x, n_u) = (lq.n_x(), lq.n_u());
    let dyn_lq = lq.clone();
    let cost_lq = lq.clone();
    let jac_lq = lq.clone();
    let grad_lq = lq.clone();
    SystemModel::new(
        "generic_lq",
        n_x,
        n_u,
        move |x: &[T], u: &[T]| dyn_lq.step(x, u),
        move |x: &[T], u: &[T]| cost_lq.stage_cost(x, u),
    )
    .expect("LqProblem dimensions are positive")
    .with_jacobian(move |_x: &[T], _u: &[T]| (jac_lq.a.clone(), jac_lq.b.clone()))
    .with_cost_gradient(move |x: &[T], u: &[T]| grad_lq.stage_cost_gradient(x, u))
    .with_lq(lq)
}

/// Scalar system whose dynamics and stage cost are bivariate polynomials:
/// `coeffs[i][j]` multiplies `xⁱ uʲ`.
pub fn scalar_poly<T: Scalar>(dynamics: Vec<Vec<T>>, cost: Vec<Vec<T>>) -> SystemModel<T> {
    let (d0, d1) = (dynamics.clone(), dynamics);
    let (c0, c1) = (cost.clone(), cost);
    SystemModel::new(
        "generic_scalar_poly",
        1,
        1,
        move |x: &[T], u: &[T]| vec![poly_eval(&d0, x[0], u[0]).0],
        move |x: &[T], u: &[T]| poly_eval(&c0, x[0], u[0]).0,
    )
    .expect("scalar dimensions are valid")
    .with_jacobian(move |x: &[T], u: &[T]| {
        let (_, dx, du) = poly_eval(&d1, x[0], u[0]);
        (Matrix::scalar(dx), Matrix::scalar(du))
    })
    .with_cost_gradient(move |x: &[T], u: &[T]| {
        let (_, dx, du) = poly_eval(&c1, x[0], u[0]);
        (vec![dx], vec![du])
    })
}

/// Value and partial derivatives of `Σ c_ij xⁱ uʲ`.
fn poly_eval<T: Scalar>(coeffs: &[Vec<T>], x: T, u: T) -> (T, T, T) {
    let (mut v, mut dx, mut du) = (T::zero(), T::zero(), T::zero());
    let mut xi = T::one();
    let mut xi_prev = T::zero();
    for (i, row) in coeffs.iter().enumerate() {
        let mut uj = T::one();
        let mut uj_prev = T::zero();
        for (j, &c) in row.iter().enumerate() {
            v += c * xi * uj;
            dx += c * lit::<T>(i as f64) * xi_prev * uj;
            du += c * lit::<T>(j as f64) * xi * uj_prev;
            uj_prev = uj;
            uj *= u;
        }
        xi_prev = xi;
        xi *= x;
    }
    (v, dx, du)
}

impl<T: Scalar> SystemModel<T> {
    fn renamed(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }
}

/// Closed-form constants of the cubic example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubicConstants<T> {
    /// Real root of `x³ + x + 1 = 0`, the optimal steady state.
    pub x_star: T,
    /// Linear coefficient of the storage `λ(x) = −x² + νx`.
    pub nu: T,
}

pub fn cubic_constants<T: Scalar>() -> CubicConstants<T> {
    let s93 = 93f64.sqrt();
    let a = (108.0 + 12.0 * s93).cbrt();
    let x_star = -(a * a - 12.0) / (6.0 * a);
    let nu = (a * (-8.0 * s93 - 72.0) + a * a * (-6.0 * s93 - 54.0) + 144.0 * s93 + 1392.0)
        / (a * (18.0 * s93 + 174.0) - (a * a - 12.0) * (9.0 + s93));
    CubicConstants {
        x_star: lit(x_star),
        nu: lit(nu),
    }
}

/// `λ(x) = −x² + νx` for the cubic example.
pub fn cubic_storage<T: Scalar>() -> StorageFunction<T> {
    StorageFunction::quadratic_linear(Matrix::scalar(-T::one()), vec![cubic_constants::<T>().nu])
        .expect("scalar storage is symmetric")
}

/// `λ(x) = −c x²` for the scalar LQ example.
pub fn scalar_lq_storage<T: Scalar>(c: T) -> StorageFunction<T> {
    StorageFunction::quadratic_linear(Matrix::scalar(-c), vec![T::zero()])
        .expect("scalar storage is symmetric")
}
