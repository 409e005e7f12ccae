//! Optimal steady states: `min ℓ(x̄, ū)` subject to `x̄ = f(x̄, ū)` and
//! `h(x̄, ū) ≤ 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::model::{fd_gradient, fd_jacobian, SystemModel};
use crate::optim::{minimize, LineSearchConfig};
use crate::scalar::{dot, lit, norm, Scalar};

/// Largest fixed-point residual accepted for a returned equilibrium.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Equilibrium<T> {
    pub state: Vec<T>,
    pub control: Vec<T>,
    /// Steady-state cost `ℓ⋆ = ℓ(x̄⋆, ū⋆)`.
    pub cost: T,
    /// `‖x̄⋆ − f(x̄⋆, ū⋆)‖`
    pub residual: T,
}

impl<T: Scalar> Equilibrium<T> {
    pub fn new(state: Vec<T>, control: Vec<T>, cost: T, residual: T) -> Self {
        Self {
            state,
            control,
            cost,
            residual,
        }
    }

    /// Evaluates cost and residual of a known pair.
    pub fn from_pair(model: &SystemModel<T>, state: Vec<T>, control: Vec<T>) -> Result<Self> {
        let next = model.evaluate_dynamics(&state, &control)?;
        let cost = model.evaluate_stage_cost(&state, &control)?;
        let residual = residual_norm(&state, &next);
        Ok(Self::new(state, control, cost, residual))
    }
}

fn residual_norm<T: Scalar>(x: &[T], next: &[T]) -> T {
    norm(&x.iter().zip(next).map(|(&a, &b)| a - b).collect::<Vec<_>>())
}

/// `(0, 0)` followed by `count` uniform draws from `[−2, 2]^{n_x+n_u}`.
pub fn default_starts<T: Scalar>(
    model: &SystemModel<T>,
    count: usize,
    seed: u64,
) -> Vec<(Vec<T>, Vec<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![(vec![T::zero(); model.n_x()], vec![T::zero(); model.n_u()])];
    for _ in 0..count {
        let mut draw = |n: usize| -> Vec<T> {
            (0..n).map(|_| lit(rng.random_range(-2.0..=2.0))).collect()
        };
        let x = draw(model.n_x());
        let u = draw(model.n_u());
        starts.push((x, u));
    }
    starts
}

struct Sop<'a, T> {
    model: &'a SystemModel<T>,
}

impl<T: Scalar> Sop<'_, T> {
    fn split<'z>(&self, z: &'z [T]) -> (&'z [T], &'z [T]) {
        z.split_at(self.model.n_x())
    }

    /// `c(z) = x − f(x, u)`
    fn fixed_point(&self, z: &[T]) -> Vec<T> {
        let (x, u) = self.split(z);
        let next = self.model.f(x, u);
        x.iter().zip(&next).map(|(&a, &b)| a - b).collect()
    }

    /// `[I − f_x, −f_u]`
    fn fixed_point_jacobian(&self, z: &[T]) -> Matrix<T> {
        let (x, u) = self.split(z);
        let (n_x, n_u) = (self.model.n_x(), self.model.n_u());
        let (fx, fu) = self.model.dynamics_jacobian(x, u);
        let mut j = Matrix::zeros(n_x, n_x + n_u);
        for i in 0..n_x {
            for k in 0..n_x {
                j[(i, k)] = if i == k { T::one() } else { T::zero() } - fx[(i, k)];
            }
            for k in 0..n_u {
                j[(i, n_x + k)] = -fu[(i, k)];
            }
        }
        j
    }

    fn cost_gradient(&self, z: &[T]) -> Vec<T> {
        let (x, u) = self.split(z);
        let (gx, gu) = self.model.stage_cost_gradient(x, u);
        gx.into_iter().chain(gu).collect()
    }

    fn inequality(&self, z: &[T]) -> Vec<T> {
        let (x, u) = self.split(z);
        self.model.h(x, u)
    }

    fn inequality_jacobian(&self, z: &[T]) -> Matrix<T> {
        let (x, u) = self.split(z);
        let (hx, hu) = self.model.constraint_jacobian(x, u);
        let (n_x, n_u) = (self.model.n_x(), self.model.n_u());
        let mut j = Matrix::zeros(self.model.n_h(), n_x + n_u);
        for i in 0..self.model.n_h() {
            for k in 0..n_x {
                j[(i, k)] = hx[(i, k)];
            }
            for k in 0..n_u {
                j[(i, n_x + k)] = hu[(i, k)];
            }
        }
        j
    }

    fn penalty(&self, z: &[T], weight: T) -> Option<(T, Vec<T>)> {
        let (x, u) = self.split(z);
        let c = self.fixed_point(z);
        let two = lit::<T>(2.0);
        let mut value = self.model.cost(x, u) + weight * dot(&c, &c);
        let mut grad = self.cost_gradient(z);
        let jc = self.fixed_point_jacobian(z);
        for (g, jtc) in grad.iter_mut().zip(jc.tr_mul_vec(&c)) {
            *g += two * weight * jtc;
        }
        if self.model.n_h() > 0 {
            let viol: Vec<T> = self.inequality(z).into_iter().map(|v| v.max(T::zero())).collect();
            value += weight * dot(&viol, &viol);
            let jh = self.inequality_jacobian(z);
            for (g, jtv) in grad.iter_mut().zip(jh.tr_mul_vec(&viol)) {
                *g += two * weight * jtv;
            }
        }
        (value.is_finite() && grad.iter().all(|g| g.is_finite())).then_some((value, grad))
    }

    /// Equality constraints active at `z`: the fixed point plus inequality
    /// rows within `1e-8` of their bound.
    fn active_constraints(&self, z: &[T]) -> (Vec<T>, Matrix<T>) {
        let mut c = self.fixed_point(z);
        let jc = self.fixed_point_jacobian(z);
        let n = z.len();
        let mut rows: Vec<Vec<T>> = jc.to_rows();
        if self.model.n_h() > 0 {
            let h = self.inequality(z);
            let jh = self.inequality_jacobian(z).to_rows();
            for (hi, row) in h.into_iter().zip(jh) {
                if hi >= -lit::<T>(1e-8) {
                    c.push(hi);
                    rows.push(row);
                }
            }
        }
        let j = if rows.is_empty() {
            Matrix::zeros(0, n)
        } else {
            Matrix::from_rows(&rows).expect("constraint rows share length")
        };
        (c, j)
    }

    /// Newton iteration on the KKT system of the equality-constrained
    /// problem, Lagrangian Hessian by finite differences.
    fn kkt_polish(&self, z0: &[T]) -> Vec<T> {
        let mut z = z0.to_vec();
        let n = z.len();
        for _ in 0..30 {
            let (c, j) = self.active_constraints(&z);
            let m = c.len();
            let g = self.cost_gradient(&z);
            let mult = least_squares_multipliers(&j, &g).unwrap_or_else(|| vec![T::zero(); m]);
            let lagrangian_grad = |p: &[T]| -> Vec<T> {
                let (_, jp) = self.active_constraints(p);
                let mut gp = self.cost_gradient(p);
                if jp.rows() == m {
                    for (a, b) in gp.iter_mut().zip(jp.tr_mul_vec(&mult)) {
                        *a += b;
                    }
                }
                gp
            };
            let mut hess = fd_jacobian(lagrangian_grad, &z, n);
            hess = hess.add(&hess.transpose()).scale(lit(0.5));
            let mut kkt = Matrix::zeros(n + m, n + m);
            for r in 0..n {
                for s in 0..n {
                    kkt[(r, s)] = hess[(r, s)];
                }
            }
            for r in 0..m {
                for s in 0..n {
                    kkt[(n + r, s)] = j[(r, s)];
                    kkt[(s, n + r)] = j[(r, s)];
                }
            }
            let rhs: Vec<T> = g.iter().chain(&c).map(|&v| -v).collect();
            let step: Vec<T> = match kkt.solve(&rhs) {
                Ok(sol) => sol[..n].to_vec(),
                Err(_) => match min_norm_step(&j, &c) {
                    Some(s) => s,
                    None => break,
                },
            };
            if step.iter().any(|s| !s.is_finite()) {
                break;
            }
            let trial: Vec<T> = z.iter().zip(&step).map(|(&a, &b)| a + b).collect();
            let before = norm(&c);
            let after = norm(&self.active_constraints(&trial).0);
            // Newton may stall on rounding; never trade feasibility away.
            if after > before.max(lit(1e-13)) * lit(10.0) {
                break;
            }
            z = trial;
            if norm(&step) <= T::epsilon() * (T::one() + norm(&z)) {
                break;
            }
        }
        z
    }
}

/// Multipliers minimizing `‖g + Jᵀμ‖`.
fn least_squares_multipliers<T: Scalar>(j: &Matrix<T>, g: &[T]) -> Option<Vec<T>> {
    if j.rows() == 0 {
        return Some(Vec::new());
    }
    let jjt = j.mul(&j.transpose());
    let rhs: Vec<T> = j.mul_vec(g).into_iter().map(|v| -v).collect();
    jjt.solve(&rhs).ok()
}

/// Minimum-norm Newton step on `c(z) = 0`.
fn min_norm_step<T: Scalar>(j: &Matrix<T>, c: &[T]) -> Option<Vec<T>> {
    let jjt = j.mul(&j.transpose());
    let w = jjt.solve(&c.iter().map(|&v| -v).collect::<Vec<_>>()).ok()?;
    Some(j.tr_mul_vec(&w))
}

/// Quadratic-penalty continuation on the fixed-point residual (weights
/// `1e2, 1e3, …, 1e10`) followed by a KKT-Newton polish, from every start.
/// The best feasible candidate wins; ties go to the earliest start.
pub fn solve_sop<T: Scalar>(
    model: &SystemModel<T>,
    starts: &[(Vec<T>, Vec<T>)],
) -> Result<Equilibrium<T>> {
    Ok(solve_sop_all(model, starts)?.best)
}

#[derive(Clone, Debug)]
pub struct SopCandidate<T> {
    pub start_index: usize,
    pub equilibrium: Equilibrium<T>,
    pub feasible: bool,
}

#[derive(Clone, Debug)]
pub struct SopResult<T> {
    pub best: Equilibrium<T>,
    pub candidates: Vec<SopCandidate<T>>,
}

/// Like [`solve_sop`] but also returns the per-start candidates.
pub fn solve_sop_all<T: Scalar>(
    model: &SystemModel<T>,
    starts: &[(Vec<T>, Vec<T>)],
) -> Result<SopResult<T>> {
    if starts.is_empty() {
        return Err(Error::InvalidArgument("solve_sop needs at least one start".into()));
    }
    let sop = Sop { model };
    let (n_x, n_u) = (model.n_x(), model.n_u());
    let tol = lit::<T>(FEASIBILITY_TOL);
    let mut candidates = Vec::with_capacity(starts.len());

    for (idx, (x0, u0)) in starts.iter().enumerate() {
        check_dim("start state", n_x, x0.len())?;
        check_dim("start control", n_u, u0.len())?;
        let mut z: Vec<T> = x0.iter().chain(u0).copied().collect();
        let mut ok = true;
        let mut weight = lit::<T>(1e2);
        while weight <= lit(1.5e10) {
            let cfg = LineSearchConfig {
                max_iterations: 500,
                gradient_tolerance: lit::<T>(1e-10) * (T::one() + weight.sqrt()),
                ..LineSearchConfig::default()
            };
            let mut obj = |p: &[T]| sop.penalty(p, weight);
            match minimize(&mut obj, &z, None, &cfg) {
                Ok(m) => z = m.x,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
            weight *= lit(10.0);
        }
        if !ok {
            continue;
        }
        let z = sop.kkt_polish(&z);
        let (x, u) = z.split_at(n_x);
        let (x, u) = (x.to_vec(), u.to_vec());
        let next = model.f(&x, &u);
        let residual = residual_norm(&x, &next);
        let cost = model.cost(&x, &u);
        let h_ok = model.h(&x, &u).iter().all(|&v| v <= tol);
        let feasible = residual <= tol && h_ok && cost.is_finite();
        candidates.push(SopCandidate {
            start_index: idx,
            equilibrium: Equilibrium::new(x, u, cost, residual),
            feasible,
        });
    }

    let best = candidates
        .iter()
        .filter(|c| c.feasible)
        .fold(None::<&SopCandidate<T>>, |best, c| match best {
            None => Some(c),
            Some(b) => {
                let margin = lit::<T>(1e-12) * (T::one() + b.equilibrium.cost.abs());
                if c.equilibrium.cost < b.equilibrium.cost - margin {
                    Some(c)
                } else {
                    Some(b)
                }
            }
        });
    match best {
        Some(b) => Ok(SopResult {
            best: b.equilibrium.clone(),
            candidates,
        }),
        None => {
            let residual = candidates
                .iter()
                .map(|c| c.equilibrium.residual.to_f64().unwrap_or(f64::INFINITY))
                .fold(f64::INFINITY, f64::min);
            Err(Error::Infeasible { residual })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumCheck<T> {
    pub fixed_point_residual: T,
    /// `min_μ ‖∇ℓ + Jᵀμ‖` over multipliers of the fixed-point constraint.
    pub stationarity_residual: T,
    pub stationary: bool,
}

/// Fixed-point residual and a finite-difference first-order check of the
/// steady-state Lagrangian (equality constraint only).
pub fn verify_equilibrium<T: Scalar>(
    model: &SystemModel<T>,
    x: &[T],
    u: &[T],
    tol: T,
) -> Result<EquilibriumCheck<T>> {
    let next = model.evaluate_dynamics(x, u)?;
    let residual = residual_norm(x, &next);
    let z: Vec<T> = x.iter().chain(u).copied().collect();
    let n_x = model.n_x();
    let grad = fd_gradient(|p| model.cost(&p[..n_x], &p[n_x..]), &z);
    let jac = fd_jacobian(
        |p| {
            let f = model.f(&p[..n_x], &p[n_x..]);
            p[..n_x].iter().zip(&f).map(|(&a, &b)| a - b).collect()
        },
        &z,
        n_x,
    );
    let stationarity = match least_squares_multipliers(&jac, &grad) {
        Some(mu) => {
            let r: Vec<T> = grad
                .iter()
                .zip(jac.tr_mul_vec(&mu))
                .map(|(&g, jm)| g + jm)
                .collect();
            norm(&r)
        }
        None => norm(&grad),
    };
    Ok(EquilibriumCheck {
        fixed_point_residual: residual,
        stationarity_residual: stationarity,
        stationary: stationarity <= tol,
    })
}
