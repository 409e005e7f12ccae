//! Generalized linear-quadratic problems: exact verification of
//! quadratic+linear storage functions and the matrix conditions on
//! quadratic+linear terminal costs.

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::model::StorageFunction;
use crate::scalar::{dot, lit, norm, Scalar};
use crate::steady_state::Equilibrium;

/// Definiteness threshold on eigenvalues.
pub const DEFINITENESS_TOL: f64 = 1e-10;

/// `x⁺ = Ax + Bu`, `ℓ(x,u) = xᵀQx + uᵀRu + sᵀx + rᵀu` with `R ≻ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqProblem<T> {
    pub a: Matrix<T>,
    pub b: Matrix<T>,
    pub q: Matrix<T>,
    pub r: Matrix<T>,
    pub s: Vec<T>,
    pub r_lin: Vec<T>,
}

impl<T: Scalar> LqProblem<T> {
    pub fn new(
        a: Matrix<T>,
        b: Matrix<T>,
        q: Matrix<T>,
        r: Matrix<T>,
        s: Vec<T>,
        r_lin: Vec<T>,
    ) -> Result<Self> {
        let n_x = a.rows();
        let n_u = b.cols();
        if n_x == 0 || n_u == 0 || !a.is_square() {
            return Err(Error::InvalidArgument("A must be square and nonempty".into()));
        }
        check_dim("B rows", n_x, b.rows())?;
        check_dim("Q rows", n_x, q.rows())?;
        check_dim("Q cols", n_x, q.cols())?;
        check_dim("R rows", n_u, r.rows())?;
        check_dim("R cols", n_u, r.cols())?;
        check_dim("s", n_x, s.len())?;
        check_dim("r", n_u, r_lin.len())?;
        let sym_tol = lit::<T>(1e-12);
        if !q.is_symmetric(sym_tol) || !r.is_symmetric(sym_tol) {
            return Err(Error::InvalidArgument("Q and R must be symmetric".into()));
        }
        if !(r.min_eigenvalue()? > T::zero()) {
            return Err(Error::InvalidArgument("R must be positive definite".into()));
        }
        Ok(Self {
            a,
            b,
            q,
            r,
            s,
            r_lin,
        })
    }

    pub fn n_x(&self) -> usize {
        self.a.rows()
    }

    pub fn n_u(&self) -> usize {
        self.b.cols()
    }

    pub fn step(&self, x: &[T], u: &[T]) -> Vec<T> {
        self.a
            .mul_vec(x)
            .into_iter()
            .zip(self.b.mul_vec(u))
            .map(|(p, q)| p + q)
            .collect()
    }

    pub fn stage_cost(&self, x: &[T], u: &[T]) -> T {
        self.q.quadratic_form(x) + self.r.quadratic_form(u) + dot(&self.s, x) + dot(&self.r_lin, u)
    }

    pub fn stage_cost_gradient(&self, x: &[T], u: &[T]) -> (Vec<T>, Vec<T>) {
        let two = lit::<T>(2.0);
        let gx = self
            .q
            .mul_vec(x)
            .into_iter()
            .zip(&self.s)
            .map(|(v, &s)| two * v + s)
            .collect();
        let gu = self
            .r
            .mul_vec(u)
            .into_iter()
            .zip(&self.r_lin)
            .map(|(v, &r)| two * v + r)
            .collect();
        (gx, gu)
    }
}

/// `λ(x) = xᵀΛx + vᵀx`
#[derive(Clone, Debug, PartialEq)]
pub struct LqStorage<T> {
    pub lambda: Matrix<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> LqStorage<T> {
    pub fn new(lambda: Matrix<T>, v: Vec<T>) -> Self {
        Self { lambda, v }
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.lambda.quadratic_form(x) + dot(&self.v, x)
    }

    pub fn to_storage(&self) -> Result<StorageFunction<T>> {
        StorageFunction::quadratic_linear(self.lambda.clone(), self.v.clone())
    }

    pub fn from_storage(storage: &StorageFunction<T>) -> Option<Self> {
        storage
            .quadratic()
            .map(|q| Self::new(q.matrix.clone(), q.linear.clone()))
    }
}

/// Exact quadratic form of the rotated cost
/// `L(z) = zᵀMz + gᵀz + c` in `z = (x, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RotatedQuadratic<T> {
    pub m: Matrix<T>,
    pub g: Vec<T>,
    pub c: T,
}

impl<T: Scalar> RotatedQuadratic<T> {
    pub fn eval(&self, z: &[T]) -> T {
        self.m.quadratic_form(z) + dot(&self.g, z) + self.c
    }
}

/// `L = ℓ − ℓ⋆ + λ(x) − λ(Ax+Bu)` written as a quadratic form in `(x, u)`.
pub fn rotated_quadratic<T: Scalar>(
    lq: &LqProblem<T>,
    storage: &LqStorage<T>,
    stage_cost_star: T,
) -> Result<RotatedQuadratic<T>> {
    let (n_x, n_u) = (lq.n_x(), lq.n_u());
    check_dim("storage matrix", n_x, storage.lambda.rows())?;
    check_dim("storage vector", n_x, storage.v.len())?;
    if !storage.lambda.is_symmetric(lit::<T>(1e-12)) {
        return Err(Error::InvalidArgument("storage matrix must be symmetric".into()));
    }
    let lam = &storage.lambda;
    let at = lq.a.transpose();
    let bt = lq.b.transpose();
    let m_xx = lq.q.add(lam).sub(&at.mul(lam).mul(&lq.a));
    let m_uu = lq.r.sub(&bt.mul(lam).mul(&lq.b));
    let m_xu = at.mul(lam).mul(&lq.b).scale(-T::one());
    let n = n_x + n_u;
    let mut m = Matrix::zeros(n, n);
    for i in 0..n_x {
        for j in 0..n_x {
            m[(i, j)] = m_xx[(i, j)];
        }
        for j in 0..n_u {
            m[(i, n_x + j)] = m_xu[(i, j)];
            m[(n_x + j, i)] = m_xu[(i, j)];
        }
    }
    for i in 0..n_u {
        for j in 0..n_u {
            m[(n_x + i, n_x + j)] = m_uu[(i, j)];
        }
    }
    let atv = lq.a.tr_mul_vec(&storage.v);
    let btv = lq.b.tr_mul_vec(&storage.v);
    let mut g = Vec::with_capacity(n);
    g.extend(lq.s.iter().zip(&storage.v).zip(&atv).map(|((&s, &v), &a)| s + v - a));
    g.extend(lq.r_lin.iter().zip(&btv).map(|(&r, &b)| r - b));
    Ok(RotatedQuadratic {
        m,
        g,
        c: -stage_cost_star,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LqStorageVerdict<T> {
    pub strict: bool,
    /// Eigenvalues of the Hessian `2M` of the rotated cost, ascending.
    pub hessian_spectrum: Vec<T>,
    /// Smallest eigenvalue of `M_xx − M_xu M_uu⁺ M_ux`: `inf_u L` grows at
    /// least like this times `‖x − x̄⋆‖²`.
    pub schur_min_eigenvalue: T,
    pub value_at_equilibrium: T,
    pub gradient_norm_at_equilibrium: T,
}

/// Exact strict-dissipativity test for a quadratic+linear storage.
pub fn verify_lq_storage<T: Scalar>(
    lq: &LqProblem<T>,
    storage: &LqStorage<T>,
    eq: &Equilibrium<T>,
) -> Result<LqStorageVerdict<T>> {
    let rq = rotated_quadratic(lq, storage, eq.cost)?;
    let (n_x, n_u) = (lq.n_x(), lq.n_u());
    let z: Vec<T> = eq.state.iter().chain(&eq.control).copied().collect();
    check_dim("equilibrium", n_x + n_u, z.len())?;

    let value = rq.eval(&z);
    let two = lit::<T>(2.0);
    let grad: Vec<T> = rq
        .m
        .mul_vec(&z)
        .into_iter()
        .zip(&rq.g)
        .map(|(a, &b)| two * a + b)
        .collect();
    let grad_norm = norm(&grad);

    let hessian = rq.m.scale(two);
    let spectrum = hessian.symmetric_eigen()?.values;

    let m_xx = rq.m.block(0, n_x, 0, n_x);
    let m_xu = rq.m.block(0, n_x, n_x, n_x + n_u);
    let m_uu = rq.m.block(n_x, n_x + n_u, n_x, n_x + n_u);
    let uu_pinv = m_uu
        .symmetric_eigen()?
        .pseudo_inverse(lit::<T>(DEFINITENESS_TOL) * m_uu.max_abs().max(T::one()));
    let schur = m_xx.sub(&m_xu.mul(&uu_pinv).mul(&m_xu.transpose()));
    let schur_min = schur.min_eigenvalue()?;

    let scale = T::one() + eq.cost.abs() + rq.m.max_abs() * dot(&z, &z);
    let tol = lit::<T>(1e-7) * scale;
    let def_tol = lit::<T>(DEFINITENESS_TOL);
    let strict = value.abs() <= tol
        && grad_norm <= tol
        && spectrum[0] >= -def_tol
        && schur_min > def_tol;
    Ok(LqStorageVerdict {
        strict,
        hessian_spectrum: spectrum,
        schur_min_eigenvalue: schur_min,
        value_at_equilibrium: value,
        gradient_norm_at_equilibrium: grad_norm,
    })
}

fn symmetric<T: Scalar>(m: &Matrix<T>) -> bool {
    m.is_symmetric(lit::<T>(1e-12) * m.max_abs().max(T::one()))
}

/// `V_f + λ` positive semidefinite at `x̄⋆` for `V_f(x) = xᵀP_f x + νᵀx`:
/// `P_f + Λ ⪰ 0` and `ν = −v − (2Λ + 2P_f) x̄⋆`.
pub fn check_lq_terminal_semidefinite<T: Scalar>(
    storage: &LqStorage<T>,
    p_f: &Matrix<T>,
    nu: &[T],
    x_star: &[T],
) -> bool {
    if !symmetric(p_f) || !symmetric(&storage.lambda) {
        return false;
    }
    let sum = p_f.add(&storage.lambda);
    let Ok(min_eig) = sum.min_eigenvalue() else {
        return false;
    };
    let two = lit::<T>(2.0);
    let shifted = sum.scale(two).mul_vec(x_star);
    let mismatch: Vec<T> = nu
        .iter()
        .zip(&storage.v)
        .zip(&shifted)
        .map(|((&n, &v), &s)| n + v + s)
        .collect();
    let tol = lit::<T>(DEFINITENESS_TOL);
    min_eig >= -tol && norm(&mismatch) <= tol
}

/// `V_f + λ` bounded below: `P_f + Λ ≻ 0` when `v ≠ 0`, `P_f + Λ ⪰ 0`
/// when `v = 0`.
pub fn check_lq_terminal_bounded<T: Scalar>(storage: &LqStorage<T>, p_f: &Matrix<T>) -> bool {
    if !symmetric(p_f) || !symmetric(&storage.lambda) {
        return false;
    }
    let Ok(min_eig) = p_f.add(&storage.lambda).min_eigenvalue() else {
        return false;
    };
    let tol = lit::<T>(DEFINITENESS_TOL);
    if storage.v.iter().any(|&v| v != T::zero()) {
        min_eig > tol
    } else {
        min_eig >= -tol
    }
}

/// Ranges for a storage scan. Every upper-triangular entry of `Λ` sweeps
/// `lambda_range`, every entry of `v` sweeps `v_range`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanBox<T> {
    pub lambda_range: (T, T),
    pub v_range: (T, T),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanCandidate<T> {
    pub storage: LqStorage<T>,
    pub verdict: LqStorageVerdict<T>,
}

fn axis<T: Scalar>(range: (T, T), step: T) -> Vec<T> {
    let (lo, hi) = range;
    if hi <= lo {
        return vec![lo];
    }
    let count = ((hi - lo) / step + lit(1e-9)).floor().to_usize().unwrap_or(0);
    (0..=count).map(|i| lo + step * lit(i as f64)).collect()
}

/// Grid scan over `(Λ, v)` returning every strictly certifying candidate,
/// largest Schur margin first. An empty result means none was found.
pub fn scan_lq_storage<T: Scalar>(
    lq: &LqProblem<T>,
    eq: &Equilibrium<T>,
    scan: &ScanBox<T>,
    resolution: T,
) -> Result<Vec<ScanCandidate<T>>> {
    let n_x = lq.n_x();
    if n_x > 2 {
        return Err(Error::InvalidArgument("storage scan supports n_x ≤ 2".into()));
    }
    if !(resolution > T::zero()) {
        return Err(Error::InvalidArgument("scan resolution must be positive".into()));
    }
    let lam_axis = axis(scan.lambda_range, resolution);
    let v_axis = axis(scan.v_range, resolution);
    let tri: Vec<(usize, usize)> = (0..n_x).flat_map(|i| (i..n_x).map(move |j| (i, j))).collect();
    let dims: Vec<usize> = tri
        .iter()
        .map(|_| lam_axis.len())
        .chain((0..n_x).map(|_| v_axis.len()))
        .collect();
    let total: usize = dims.iter().product();
    let mut out = Vec::new();
    for flat in 0..total {
        let mut rem = flat;
        let mut idx = Vec::with_capacity(dims.len());
        for &d in &dims {
            idx.push(rem % d);
            rem /= d;
        }
        let mut lambda = Matrix::zeros(n_x, n_x);
        for (k, &(i, j)) in tri.iter().enumerate() {
            lambda[(i, j)] = lam_axis[idx[k]];
            lambda[(j, i)] = lam_axis[idx[k]];
        }
        let v = (0..n_x).map(|i| v_axis[idx[tri.len() + i]]).collect();
        let storage = LqStorage::new(lambda, v);
        let verdict = verify_lq_storage(lq, &storage, eq)?;
        if verdict.strict {
            out.push(ScanCandidate { storage, verdict });
        }
    }
    out.sort_by(|a, b| {
        b.verdict
            .schur_min_eigenvalue
            .partial_cmp(&a.verdict.schur_min_eigenvalue)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(out)
}
