//! Finite-horizon optimal control by direct single shooting.
//!
//! The decision variables are the controls `u_0, …, u_{N−1}`; states are
//! eliminated by rollout and the gradient is obtained by one backward
//! adjoint sweep. General constraints `h ≤ 0` enter as a quadratic penalty,
//! control boxes are handled by projection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::model::{unflatten, SystemModel, TerminalCost, Trajectory};
use crate::optim::{minimize, Bounds, LineSearchConfig};
use crate::scalar::{lit, norm, Scalar};

/// Default enumeration budget of [`brute_force_ocp`].
pub const BRUTE_FORCE_BUDGET: f64 = 1e8;

#[derive(Clone, Copy, Debug)]
pub struct OcpProblem<'a, T> {
    pub model: &'a SystemModel<T>,
    pub terminal: &'a TerminalCost<T>,
    pub x0: &'a [T],
    pub horizon: usize,
}

impl<'a, T: Scalar> OcpProblem<'a, T> {
    pub fn new(
        model: &'a SystemModel<T>,
        terminal: &'a TerminalCost<T>,
        x0: &'a [T],
        horizon: usize,
    ) -> Result<Self> {
        let p = Self {
            model,
            terminal,
            x0,
            horizon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        check_dim("initial state", self.model.n_x(), self.x0.len())?;
        check_dim("terminal cost", self.model.n_x(), self.terminal.n_x())?;
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("initial state is not finite".into()));
        }
        Ok(())
    }

    fn n_decision(&self) -> usize {
        self.horizon * self.model.n_u()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InitialGuess {
    /// Every start is built around the zero control sequence.
    #[default]
    Zero,
    /// Starts are built around a supplied sequence when one is given.
    WarmStart,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig<T> {
    pub line_search: LineSearchConfig<T>,
    pub initial_guess: InitialGuess,
    /// Number of starts: the base guess plus `multi_start − 1` perturbations.
    pub multi_start: usize,
    /// Standard deviation of the Gaussian start perturbations.
    pub perturbation_scale: T,
    pub seed: u64,
    /// Weight of the quadratic penalty on `max(h, 0)`.
    pub penalty_weight: T,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            line_search: LineSearchConfig::default(),
            initial_guess: InitialGuess::Zero,
            multi_start: 5,
            perturbation_scale: lit(0.5),
            seed: 42,
            penalty_weight: lit(1e4),
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.line_search.validate()?;
        if self.multi_start == 0 {
            return Err(Error::InvalidArgument("multi_start must be at least 1".into()));
        }
        if !(self.perturbation_scale >= T::zero()) || !self.perturbation_scale.is_finite() {
            return Err(Error::InvalidArgument(
                "perturbation_scale must be finite and nonnegative".into(),
            ));
        }
        if !(self.penalty_weight > T::zero()) {
            return Err(Error::InvalidArgument("penalty_weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcpSolution<T> {
    pub trajectory: Trajectory<T>,
    /// `V_N(x0)`, recomputed from the trajectory.
    pub value: T,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: T,
    /// Largest `max(h_i, 0)` along the trajectory.
    pub constraint_violation: T,
    /// Start that produced this solution.
    pub start_index: usize,
    pub diverged_starts: usize,
}

impl<T: Scalar> OcpSolution<T> {
    pub fn first_control(&self) -> &[T] {
        &self.trajectory.controls[0]
    }
}

/// Shooting objective with its gradient, evaluated at flat controls.
fn shooting<T: Scalar>(
    problem: &OcpProblem<'_, T>,
    flat: &[T],
    penalty_weight: T,
) -> Result<(T, Vec<T>, Trajectory<T>)> {
    let model = problem.model;
    let (n_u, n_h) = (model.n_u(), model.n_h());
    let traj = model.rollout(problem.x0, &unflatten(flat, n_u))?;
    let two = lit::<T>(2.0);
    let n = problem.horizon;

    let mut value = T::zero();
    let mut stage_penalty = Vec::with_capacity(if n_h > 0 { n } else { 0 });
    for (x, u) in traj.states.iter().zip(&traj.controls) {
        value += model.cost(x, u);
        if n_h > 0 {
            let viol: Vec<T> = model.h(x, u).into_iter().map(|v| v.max(T::zero())).collect();
            value += penalty_weight * viol.iter().map(|&v| v * v).sum::<T>();
            stage_penalty.push(viol);
        }
    }
    let x_n = traj.terminal_state();
    value += problem.terminal.eval(x_n);
    if !value.is_finite() {
        return Err(Error::Divergence { step: n });
    }

    let mut grad = vec![T::zero(); n * n_u];
    let mut p = problem.terminal.gradient(x_n);
    for k in (0..n).rev() {
        let (x, u) = (&traj.states[k], &traj.controls[k]);
        let (fx, fu) = model.dynamics_jacobian(x, u);
        let (mut lx, mut lu) = model.stage_cost_gradient(x, u);
        if n_h > 0 && stage_penalty[k].iter().any(|&v| v > T::zero()) {
            let (hx, hu) = model.constraint_jacobian(x, u);
            let w: Vec<T> = stage_penalty[k].iter().map(|&v| two * penalty_weight * v).collect();
            for (a, b) in lx.iter_mut().zip(hx.tr_mul_vec(&w)) {
                *a += b;
            }
            for (a, b) in lu.iter_mut().zip(hu.tr_mul_vec(&w)) {
                *a += b;
            }
        }
        for (j, (a, b)) in lu.iter().zip(fu.tr_mul_vec(&p)).enumerate() {
            grad[k * n_u + j] = *a + b;
        }
        p = lx
            .iter()
            .zip(fx.tr_mul_vec(&p))
            .map(|(&a, b)| a + b)
            .collect();
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { step: n });
    }
    Ok((value, grad, traj))
}

/// Gradient of the shooting objective (trajectory cost plus any constraint
/// penalty at the default weight) with respect to the controls.
pub fn ocp_gradient<T: Scalar>(
    problem: &OcpProblem<'_, T>,
    controls: &[Vec<T>],
) -> Result<Vec<Vec<T>>> {
    ocp_gradient_weighted(problem, controls, SolverConfig::<T>::default().penalty_weight)
}

pub fn ocp_gradient_weighted<T: Scalar>(
    problem: &OcpProblem<'_, T>,
    controls: &[Vec<T>],
    penalty_weight: T,
) -> Result<Vec<Vec<T>>> {
    problem.validate()?;
    check_dim("control sequence", problem.horizon, controls.len())?;
    for u in controls {
        check_dim("control", problem.model.n_u(), u.len())?;
    }
    let flat: Vec<T> = controls.iter().flatten().copied().collect();
    let (_, grad, _) = shooting(problem, &flat, penalty_weight)?;
    Ok(unflatten(&grad, problem.model.n_u()))
}

fn violation<T: Scalar>(model: &SystemModel<T>, traj: &Trajectory<T>) -> T {
    traj.states
        .iter()
        .zip(&traj.controls)
        .flat_map(|(x, u)| model.h(x, u))
        .fold(T::zero(), |m, v| m.max(v))
}

/// Base guess followed by Gaussian perturbations of it. The perturbation
/// stream is drawn in order, so the starts for `k` are a prefix of those
/// for `k + 1`.
fn starting_points<T: Scalar>(
    problem: &OcpProblem<'_, T>,
    config: &SolverConfig<T>,
    guess: Option<&[Vec<T>]>,
) -> Result<Vec<Vec<T>>> {
    let n = problem.n_decision();
    let base: Vec<T> = match (config.initial_guess, guess) {
        (InitialGuess::WarmStart, Some(g)) => {
            check_dim("warm start", problem.horizon, g.len())?;
            let flat: Vec<T> = g.iter().flatten().copied().collect();
            check_dim("warm start controls", n, flat.len())?;
            flat
        }
        _ => vec![T::zero(); n],
    };
    let scale = config.perturbation_scale.to_f64().unwrap_or(0.0);
    let normal = Normal::new(0.0, scale)
        .map_err(|e| Error::InvalidArgument(format!("perturbation scale: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts = vec![base.clone()];
    for _ in 1..config.multi_start {
        starts.push(
            base.iter()
                .map(|&b| b + lit::<T>(normal.sample(&mut rng)))
                .collect(),
        );
    }
    Ok(starts)
}

/// Solves the finite-horizon problem from zero controls (or per the
/// config's guess policy without a supplied guess).
pub fn solve_ocp<T: Scalar>(
    problem: &OcpProblem<'_, T>,
    config: &SolverConfig<T>,
) -> Result<OcpSolution<T>> {
    solve_ocp_from(problem, config, None)
}

/// Multi-start single shooting. Starts whose rollout diverges are counted
/// and discarded; among the rest the lowest objective wins, ties going to
/// the lower start index.
pub fn solve_ocp_from<T: Scalar>(
    problem: &OcpProblem<'_, T>,
    config: &SolverConfig<T>,
    guess: Option<&[Vec<T>]>,
) -> Result<OcpSolution<T>> {
    problem.validate()?;
    config.validate()?;
    let mut starts = starting_points(problem, config, guess)?;
    if problem.horizon > 1 && shooting(problem, &starts[0], config.penalty_weight).is_err() {
        if let Some(base) = continuation_guess(problem, config) {
            let shift: Vec<T> = starts[0].iter().zip(&base).map(|(&s, &b)| b - s).collect();
            for start in &mut starts {
                for (v, d) in start.iter_mut().zip(&shift) {
                    *v += *d;
                }
            }
        }
    }
    let bounds = problem.model.control_box().map(|block| Bounds { block });

    let results: Vec<Option<(T, crate::optim::Minimum<T>)>> = starts
        .par_iter()
        .map(|start| {
            let mut objective = |flat: &[T]| -> Option<(T, Vec<T>)> {
                shooting(problem, flat, config.penalty_weight)
                    .ok()
                    .map(|(v, g, _)| (v, g))
            };
            let min = minimize(&mut objective, start, bounds, &config.line_search).ok()?;
            Some((min.value, min))
        })
        .collect();

    let diverged_starts = results.iter().filter(|r| r.is_none()).count();
    let mut best: Option<(usize, crate::optim::Minimum<T>)> = None;
    for (idx, r) in results.into_iter().enumerate() {
        if let Some((value, min)) = r {
            if best.as_ref().is_none_or(|(_, b)| value < b.value) {
                best = Some((idx, min));
            }
        }
    }
    let (start_index, min) = best.ok_or_else(|| {
        Error::SolverFailure(format!(
            "all {} starts diverged",
            config.multi_start
        ))
    })?;
    let controls = unflatten(&min.x, problem.model.n_u());
    let trajectory = problem.model.rollout(problem.x0, &controls)?;
    let value = problem.model.trajectory_cost(&trajectory, problem.terminal)?;
    Ok(OcpSolution {
        constraint_violation: violation(problem.model, &trajectory),
        trajectory,
        value,
        converged: min.converged,
        iterations: min.iterations,
        gradient_norm: min.gradient_norm,
        start_index,
        diverged_starts,
    })
}

/// Base guess for a horizon whose base rollout diverges: the solution for
/// `N − 1` with its last control repeated.
fn continuation_guess<T: Scalar>(
    problem: &OcpProblem<'_, T>,
    config: &SolverConfig<T>,
) -> Option<Vec<T>> {
    let shorter = OcpProblem {
        horizon: problem.horizon - 1,
        ..*problem
    };
    let cold = SolverConfig {
        initial_guess: InitialGuess::Zero,
        ..config.clone()
    };
    let sol = solve_ocp_from(&shorter, &cold, None).ok()?;
    let mut flat = sol.trajectory.flat_controls();
    let n_u = problem.model.n_u();
    flat.extend_from_slice(&sol.trajectory.controls[shorter.horizon - 1][..n_u]);
    Some(flat)
}

/// `V_N(x0)` as returned by [`solve_ocp`].
pub fn value_function<T: Scalar>(
    model: &SystemModel<T>,
    terminal: &TerminalCost<T>,
    x0: &[T],
    horizon: usize,
    config: &SolverConfig<T>,
) -> Result<T> {
    let problem = OcpProblem::new(model, terminal, x0, horizon)?;
    Ok(solve_ocp(&problem, config)?.value)
}

/// Exhaustive search over control sequences whose components lie on a
/// uniform grid of `grid_points` values in `[u_min, u_max]`.
pub fn brute_force_ocp<T: Scalar>(
    problem: &OcpProblem<'_, T>,
    u_min: T,
    u_max: T,
    grid_points: usize,
) -> Result<OcpSolution<T>> {
    brute_force_ocp_with_budget(problem, u_min, u_max, grid_points, BRUTE_FORCE_BUDGET)
}

/// [`brute_force_ocp`] with an explicit limit on the number of enumerated
/// sequences, `grid_points^(N·n_u)`.
pub fn brute_force_ocp_with_budget<T: Scalar>(
    problem: &OcpProblem<'_, T>,
    u_min: T,
    u_max: T,
    grid_points: usize,
    budget: f64,
) -> Result<OcpSolution<T>> {
    problem.validate()?;
    if problem.horizon > 4 {
        return Err(Error::InvalidArgument(format!(
            "brute force supports N <= 4, got {}",
            problem.horizon
        )));
    }
    if grid_points < 2 || !(u_min < u_max) {
        return Err(Error::InvalidArgument(
            "brute force needs at least 2 grid points on a nonempty interval".into(),
        ));
    }
    let n_u = problem.model.n_u();
    let count = (grid_points as f64).powi((problem.horizon * n_u) as i32);
    if count > budget {
        return Err(Error::InvalidArgument(format!(
            "brute force would enumerate {count:.3e} sequences, budget is {budget:.0e}"
        )));
    }

    let step = (u_max - u_min) / lit((grid_points - 1) as f64);
    let grid: Vec<T> = (0..grid_points)
        .map(|i| if i + 1 == grid_points { u_max } else { u_min + step * lit(i as f64) })
        .collect();
    // all per-stage control vectors, first component slowest
    let stage_controls: Vec<Vec<T>> = (0..grid_points.pow(n_u as u32))
        .map(|mut idx| {
            let mut u = vec![T::zero(); n_u];
            for j in (0..n_u).rev() {
                u[j] = grid[idx % grid_points];
                idx /= grid_points;
            }
            u
        })
        .collect();

    let search = Enumeration {
        problem,
        controls: &stage_controls,
    };
    let best = (0..stage_controls.len())
        .into_par_iter()
        .map(|first| {
            let mut path = vec![first];
            let u0 = &stage_controls[first];
            let x1 = problem.model.f(problem.x0, u0);
            let c0 = problem.model.cost(problem.x0, u0);
            let mut best = Best::none();
            search.descend(&x1, c0, &mut path, &mut best);
            best
        })
        .reduce(Best::none, Best::better);

    let Some(path) = best.path else {
        return Err(Error::SolverFailure(
            "every grid sequence diverged".into(),
        ));
    };
    let controls: Vec<Vec<T>> = path.iter().map(|&i| stage_controls[i].clone()).collect();
    let trajectory = problem.model.rollout(problem.x0, &controls)?;
    let value = problem.model.trajectory_cost(&trajectory, problem.terminal)?;
    let flat = trajectory.flat_controls();
    let gradient_norm = shooting(problem, &flat, SolverConfig::<T>::default().penalty_weight)
        .map(|(_, g, _)| norm(&g))
        .unwrap_or(T::nan());
    Ok(OcpSolution {
        constraint_violation: violation(problem.model, &trajectory),
        trajectory,
        value,
        converged: true,
        iterations: count as usize,
        gradient_norm,
        start_index: 0,
        diverged_starts: 0,
    })
}

struct Enumeration<'p, 'a, T> {
    problem: &'p OcpProblem<'a, T>,
    controls: &'p [Vec<T>],
}

#[derive(Clone, Debug)]
struct Best<T> {
    value: f64,
    path: Option<Vec<usize>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T> Best<T> {
    fn none() -> Self {
        Self {
            value: f64::INFINITY,
            path: None,
            _marker: std::marker::PhantomData,
        }
    }

    /// Lower value wins; equal values go to the lexicographically smaller path.
    fn better(a: Self, b: Self) -> Self {
        match (&a.path, &b.path) {
            (None, _) => b,
            (_, None) => a,
            (Some(pa), Some(pb)) => {
                if b.value < a.value || (b.value == a.value && pb < pa) {
                    b
                } else {
                    a
                }
            }
        }
    }
}

impl<T: Scalar> Enumeration<'_, '_, T> {
    fn descend(&self, x: &[T], cost: T, path: &mut Vec<usize>, best: &mut Best<T>) {
        if !crate::model::within_guard(x) || !cost.is_finite() {
            return;
        }
        let model = self.problem.model;
        if path.len() == self.problem.horizon {
            let total = cost + self.problem.terminal.eval(x);
            let v = total.to_f64().unwrap_or(f64::NAN);
            if v < best.value {
                best.value = v;
                best.path = Some(path.clone());
            }
            return;
        }
        for (i, u) in self.controls.iter().enumerate() {
            let next = model.f(x, u);
            path.push(i);
            self.descend(&next, cost + model.cost(x, u), path, best);
            path.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;
    use crate::model::StateFunction;
    use crate::linalg::Matrix;

    fn quad(a: f64, nu: f64) -> TerminalCost<f64> {
        StateFunction::quadratic_linear(Matrix::scalar(a), vec![nu]).unwrap()
    }

    #[test]
    fn zero_controls_are_stationary_for_scalar_lq() {
        let m = builtin::scalar_lq::<f64>();
        let vf = TerminalCost::zero(1);
        for &x0 in &[-3.0, 0.5, 7.0] {
            let p = OcpProblem::new(&m, &vf, std::slice::from_ref(&x0), 4).unwrap();
            let g = ocp_gradient(&p, &vec![vec![0.0]; 4]).unwrap();
            assert!(g.iter().flatten().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn one_step_gradient_by_hand() {
        let m = builtin::scalar_lq::<f64>();
        let vf = quad(1.0, 0.0);
        let p = OcpProblem::new(&m, &vf, &[1.0], 1).unwrap();
        let g = ocp_gradient(&p, &[vec![0.0]]).unwrap();
        assert!((g[0][0] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn solve_scalar_lq_examples() {
        let m = builtin::scalar_lq::<f64>();
        let cfg = SolverConfig::default();
        let zero = TerminalCost::zero(1);
        let s = solve_ocp(&OcpProblem::new(&m, &zero, &[5.0], 4).unwrap(), &cfg).unwrap();
        assert!(s.trajectory.controls.iter().all(|u| u[0].abs() < 1e-9));
        assert!(s.value.abs() < 1e-15);
        assert!(s.converged);

        let vf = quad(1.0, 0.0);
        let s = solve_ocp(&OcpProblem::new(&m, &vf, &[1.0], 1).unwrap(), &cfg).unwrap();
        assert!((s.first_control()[0] + 1.0).abs() < 1e-9);
        assert!((s.value - 2.0).abs() < 1e-12);
        assert!(s.trajectory.consistency_error(&m) <= 1e-10);
    }

    #[test]
    fn cubic_stays_at_equilibrium_with_matched_terminal_cost() {
        let m = builtin::cubic::<f64>();
        let c = builtin::cubic_constants::<f64>();
        let vf = quad(1.0, -c.nu);
        for n in 1..=4 {
            let s = solve_ocp(
                &OcpProblem::new(&m, &vf, &[c.x_star], n).unwrap(),
                &SolverConfig::default(),
            )
            .unwrap();
            assert!(s.trajectory.controls.iter().all(|u| u[0].abs() < 1e-6), "{s:?}");
            assert!((s.value + c.x_star * c.x_star).abs() < 1e-9);
        }
    }

    #[test]
    fn brute_force_examples() {
        let m = builtin::scalar_lq::<f64>();
        let zero = TerminalCost::zero(1);
        let s = brute_force_ocp(&OcpProblem::new(&m, &zero, &[1.0], 2).unwrap(), -4.0, 4.0, 81)
            .unwrap();
        assert!(s.trajectory.controls.iter().all(|u| u[0] == 0.0));
        assert_eq!(s.value, 0.0);
        assert!(s.converged);

        let vf = quad(1.0, 0.0);
        let s = brute_force_ocp(&OcpProblem::new(&m, &vf, &[1.0], 1).unwrap(), -4.0, 4.0, 801)
            .unwrap();
        assert!((s.first_control()[0] + 1.0).abs() <= 0.01);
    }

    #[test]
    fn brute_force_guards() {
        let m = builtin::scalar_lq::<f64>();
        let zero = TerminalCost::zero(1);
        let p5 = OcpProblem::new(&m, &zero, &[1.0], 5).unwrap();
        assert!(brute_force_ocp(&p5, -1.0, 1.0, 3).is_err());
        let p4 = OcpProblem::new(&m, &zero, &[1.0], 4).unwrap();
        assert!(matches!(
            brute_force_ocp(&p4, -1.0, 1.0, 101),
            Err(Error::InvalidArgument(_))
        ));
        assert!(brute_force_ocp(&p4, -1.0, 1.0, 11).is_ok());
    }

    #[test]
    fn shooting_beats_grid() {
        let m = builtin::cubic::<f64>();
        let vf = quad(2.0, 0.0);
        for &x0 in &[0.0, -1.0, 0.7] {
            let p = OcpProblem::new(&m, &vf, std::slice::from_ref(&x0), 2).unwrap();
            let s = solve_ocp(&p, &SolverConfig::default()).unwrap();
            let b = brute_force_ocp(&p, -4.0, 4.0, 401).unwrap();
            assert!(s.value <= b.value + 1e-8, "{} vs {}", s.value, b.value);
        }
    }

    #[test]
    fn box_is_respected() {
        let m = builtin::scalar_lq::<f64>()
            .with_control_box(crate::model::ControlBox::new(vec![-0.5], vec![0.5]).unwrap())
            .unwrap();
        let vf = quad(1.0, 0.0);
        let s = solve_ocp(&OcpProblem::new(&m, &vf, &[1.0], 1).unwrap(), &SolverConfig::default())
            .unwrap();
        assert_eq!(s.first_control()[0], -0.5);
        assert!(s.converged);
    }

    #[test]
    fn penalty_keeps_constraint_nearly_satisfied() {
        let m = builtin::scalar_lq::<f64>().with_constraints(2, |_x, u| vec![u[0] - 0.5, -u[0] - 0.5]);
        let vf = quad(1.0, 0.0);
        let s = solve_ocp(&OcpProblem::new(&m, &vf, &[1.0], 1).unwrap(), &SolverConfig::default())
            .unwrap();
        // penalty optimum of u² + (2+u)² + 1e4 (u+0.5)²
        let expected = -(4.0 + 1e4) / (4.0 + 2e4);
        assert!((s.first_control()[0] - expected).abs() < 1e-7, "{s:?}");
        assert!(s.constraint_violation > 0.0 && s.constraint_violation < 1e-3);
    }

    #[test]
    fn diverging_starts_fail() {
        let m = builtin::cubic::<f64>();
        let zero = TerminalCost::zero(1);
        let p = OcpProblem::new(&m, &zero, &[389090.0], 3).unwrap();
        assert!(matches!(
            solve_ocp(&p, &SolverConfig::default()),
            Err(Error::SolverFailure(_))
        ));
    }

    #[test]
    fn invalid_problems() {
        let m = builtin::scalar_lq::<f64>();
        let zero = TerminalCost::zero(1);
        assert!(OcpProblem::new(&m, &zero, &[1.0], 0).is_err());
        assert!(OcpProblem::new(&m, &zero, &[1.0, 2.0], 1).is_err());
        let p = OcpProblem::new(&m, &zero, &[1.0], 2).unwrap();
        let cfg = SolverConfig {
            multi_start: 0,
            ..SolverConfig::default()
        };
        assert!(solve_ocp(&p, &cfg).is_err());
        assert!(ocp_gradient(&p, &[vec![0.0]]).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let m = builtin::scalar_lq::<f32>();
        let vf = StateFunction::quadratic_linear(Matrix::scalar(1.0f32), vec![0.0]).unwrap();
        let cfg = SolverConfig::<f32> {
            line_search: LineSearchConfig {
                gradient_tolerance: 1e-4,
                ..LineSearchConfig::default()
            },
            ..SolverConfig::default()
        };
        let s = solve_ocp(&OcpProblem::new(&m, &vf, &[1.0], 1).unwrap(), &cfg).unwrap();
        assert!((s.first_control()[0] + 1.0).abs() < 1e-3);
    }
}
