//! Discrete-time systems `x⁺ = f(x, u)` with stage cost `ℓ(x, u)` and
//! constraint map `h(x, u) ≤ 0`, plus deterministic rollout and cost
//! evaluation along trajectories.

pub mod builtin;
pub mod config;
mod function;

use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::lq::LqProblem;
use crate::scalar::{lit, Scalar};

pub use function::{QuadraticLinear, StateFunction, StorageFunction, TerminalCost};

/// Any state component above this magnitude (or NaN) aborts propagation.
pub const DIVERGENCE_GUARD: f64 = 1e12;

pub type VectorMap<T> = Arc<dyn Fn(&[T], &[T]) -> Vec<T> + Send + Sync>;
pub type ScalarMap<T> = Arc<dyn Fn(&[T], &[T]) -> T + Send + Sync>;
/// Returns `(∂f/∂x, ∂f/∂u)` with shapes `n_x×n_x` and `n_x×n_u`.
pub type JacobianMap<T> = Arc<dyn Fn(&[T], &[T]) -> (Matrix<T>, Matrix<T>) + Send + Sync>;
/// Returns `(∂ℓ/∂x, ∂ℓ/∂u)`.
pub type GradientMap<T> = Arc<dyn Fn(&[T], &[T]) -> (Vec<T>, Vec<T>) + Send + Sync>;

/// Per-component lower/upper bounds on the control.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlBox<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> ControlBox<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        check_dim("control box upper", lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument(
                "control box lower bound exceeds upper bound".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn project(&self, u: &mut [T]) {
        for (i, v) in u.iter_mut().enumerate() {
            *v = v.max(self.lower[i]).min(self.upper[i]);
        }
    }
}

#[derive(Clone)]
pub struct SystemModel<T> {
    name: String,
    n_x: usize,
    n_u: usize,
    n_h: usize,
    dynamics: VectorMap<T>,
    stage_cost: ScalarMap<T>,
    constraints: Option<VectorMap<T>>,
    jacobian: Option<JacobianMap<T>>,
    cost_gradient: Option<GradientMap<T>>,
    control_box: Option<ControlBox<T>>,
    lq: Option<LqProblem<T>>,
}

impl<T> fmt::Debug for SystemModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("n_x", &self.n_x)
            .field("n_u", &self.n_u)
            .field("n_h", &self.n_h)
            .field("closed_form_derivatives", &self.jacobian.is_some())
            .finish()
    }
}

impl<T: Scalar> SystemModel<T> {
    /// Model from callback maps. Derivatives default to central finite
    /// differences until closed forms are attached.
    pub fn new(
        name: impl Into<String>,
        n_x: usize,
        n_u: usize,
        dynamics: impl Fn(&[T], &[T]) -> Vec<T> + Send + Sync + 'static,
        stage_cost: impl Fn(&[T], &[T]) -> T + Send + Sync + 'static,
    ) -> Result<Self> {
        if n_x == 0 || n_u == 0 {
            return Err(Error::InvalidArgument(
                "state and control dimensions must be positive".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            n_x,
            n_u,
            n_h: 0,
            dynamics: Arc::new(dynamics),
            stage_cost: Arc::new(stage_cost),
            constraints: None,
            jacobian: None,
            cost_gradient: None,
            control_box: None,
            lq: None,
        })
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&[T], &[T]) -> (Matrix<T>, Matrix<T>) + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_cost_gradient(
        mut self,
        grad: impl Fn(&[T], &[T]) -> (Vec<T>, Vec<T>) + Send + Sync + 'static,
    ) -> Self {
        self.cost_gradient = Some(Arc::new(grad));
        self
    }

    pub fn with_constraints(
        mut self,
        n_h: usize,
        h: impl Fn(&[T], &[T]) -> Vec<T> + Send + Sync + 'static,
    ) -> Self {
        self.n_h = n_h;
        self.constraints = Some(Arc::new(h));
        self
    }

    pub fn with_control_box(mut self, control_box: ControlBox<T>) -> Result<Self> {
        check_dim("control box", self.n_u, control_box.lower.len())?;
        self.control_box = Some(control_box);
        Ok(self)
    }

    pub(crate) fn with_lq(mut self, lq: LqProblem<T>) -> Self {
        self.lq = Some(lq);
        self
    }

    /// Same system with a replaced stage cost (and its optional gradient).
    pub fn with_stage_cost(
        &self,
        name: impl Into<String>,
        stage_cost: ScalarMap<T>,
        cost_gradient: Option<GradientMap<T>>,
    ) -> Self {
        let mut m = self.clone();
        m.name = name.into();
        m.stage_cost = stage_cost;
        m.cost_gradient = cost_gradient;
        m.lq = None;
        m
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    pub fn control_box(&self) -> Option<&ControlBox<T>> {
        self.control_box.as_ref()
    }

    /// Linear-quadratic data when the model was built from one.
    pub fn lq(&self) -> Option<&LqProblem<T>> {
        self.lq.as_ref()
    }

    pub fn has_closed_form_derivatives(&self) -> bool {
        self.jacobian.is_some() && self.cost_gradient.is_some()
    }

    fn check_xu(&self, x: &[T], u: &[T]) -> Result<()> {
        check_dim("state", self.n_x, x.len())?;
        check_dim("control", self.n_u, u.len())
    }

    /// `f(x, u)` with dimension checks.
    pub fn evaluate_dynamics(&self, x: &[T], u: &[T]) -> Result<Vec<T>> {
        self.check_xu(x, u)?;
        let next = (self.dynamics)(x, u);
        check_dim("dynamics output", self.n_x, next.len())?;
        Ok(next)
    }

    /// `h(x, u)`; empty when the model carries no constraints.
    pub fn evaluate_constraints(&self, x: &[T], u: &[T]) -> Result<Vec<T>> {
        self.check_xu(x, u)?;
        match &self.constraints {
            None => Ok(Vec::new()),
            Some(h) => {
                let out = h(x, u);
                check_dim("constraint output", self.n_h, out.len())?;
                Ok(out)
            }
        }
    }

    pub fn evaluate_stage_cost(&self, x: &[T], u: &[T]) -> Result<T> {
        self.check_xu(x, u)?;
        Ok((self.stage_cost)(x, u))
    }

    #[inline]
    pub(crate) fn f(&self, x: &[T], u: &[T]) -> Vec<T> {
        (self.dynamics)(x, u)
    }

    #[inline]
    pub(crate) fn cost(&self, x: &[T], u: &[T]) -> T {
        (self.stage_cost)(x, u)
    }

    pub(crate) fn h(&self, x: &[T], u: &[T]) -> Vec<T> {
        self.constraints.as_ref().map_or_else(Vec::new, |h| h(x, u))
    }

    /// `(∂f/∂x, ∂f/∂u)`, closed form when available.
    pub fn dynamics_jacobian(&self, x: &[T], u: &[T]) -> (Matrix<T>, Matrix<T>) {
        if let Some(jac) = &self.jacobian {
            return jac(x, u);
        }
        let fx = fd_jacobian(|xp| self.f(xp, u), x, self.n_x);
        let fu = fd_jacobian(|up| self.f(x, up), u, self.n_x);
        (fx, fu)
    }

    /// `(∂ℓ/∂x, ∂ℓ/∂u)`, closed form when available.
    pub fn stage_cost_gradient(&self, x: &[T], u: &[T]) -> (Vec<T>, Vec<T>) {
        if let Some(g) = &self.cost_gradient {
            return g(x, u);
        }
        (
            fd_gradient(|xp| self.cost(xp, u), x),
            fd_gradient(|up| self.cost(x, up), u),
        )
    }

    /// `(∂h/∂x, ∂h/∂u)` by central differences.
    pub(crate) fn constraint_jacobian(&self, x: &[T], u: &[T]) -> (Matrix<T>, Matrix<T>) {
        (
            fd_jacobian(|xp| self.h(xp, u), x, self.n_h),
            fd_jacobian(|up| self.h(x, up), u, self.n_h),
        )
    }

    /// `x₀, f(x₀,u₀), …` for the given control sequence.
    pub fn rollout(&self, x0: &[T], controls: &[Vec<T>]) -> Result<Trajectory<T>> {
        check_dim("initial state", self.n_x, x0.len())?;
        if controls.is_empty() {
            return Err(Error::InvalidArgument("rollout needs at least one control".into()));
        }
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(x0.to_vec());
        for (k, u) in controls.iter().enumerate() {
            let next = self.evaluate_dynamics(&states[k], u)?;
            if !within_guard(&next) {
                return Err(Error::Divergence { step: k + 1 });
            }
            states.push(next);
        }
        Ok(Trajectory {
            states,
            controls: controls.to_vec(),
        })
    }

    /// `Σ ℓ(x_k, u_k) + V_f(x_N)` along the trajectory.
    pub fn trajectory_cost(&self, traj: &Trajectory<T>, terminal: &TerminalCost<T>) -> Result<T> {
        traj.check_lengths()?;
        let mut total = T::zero();
        for (x, u) in traj.states.iter().zip(&traj.controls) {
            total += self.evaluate_stage_cost(x, u)?;
        }
        total += terminal.eval(traj.terminal_state());
        if total.is_finite() {
            Ok(total)
        } else {
            Err(Error::Divergence {
                step: traj.horizon(),
            })
        }
    }
}

/// True when every component is finite and within the divergence guard.
pub fn within_guard<T: Scalar>(v: &[T]) -> bool {
    let guard = lit::<T>(DIVERGENCE_GUARD);
    v.iter().all(|&a| a.is_finite() && a.abs() <= guard)
}

pub(crate) fn fd_gradient<T: Scalar>(f: impl Fn(&[T]) -> T, x: &[T]) -> Vec<T> {
    let h = T::fd_step();
    let two = lit::<T>(2.0);
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let xi = x[i];
            xp[i] = xi + h;
            let fp = f(&xp);
            xp[i] = xi - h;
            let fm = f(&xp);
            xp[i] = xi;
            (fp - fm) / (two * h)
        })
        .collect()
}

pub(crate) fn fd_jacobian<T: Scalar>(f: impl Fn(&[T]) -> Vec<T>, x: &[T], rows: usize) -> Matrix<T> {
    let h = T::fd_step();
    let two = lit::<T>(2.0);
    let mut jac = Matrix::zeros(rows, x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let xj = x[j];
        xp[j] = xj + h;
        let fp = f(&xp);
        xp[j] = xj - h;
        let fm = f(&xp);
        xp[j] = xj;
        for i in 0..rows {
            jac[(i, j)] = (fp[i] - fm[i]) / (two * h);
        }
    }
    jac
}

/// Aligned state (`N+1`) and control (`N`) sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub states: Vec<Vec<T>>,
    pub controls: Vec<Vec<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn terminal_state(&self) -> &[T] {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn check_lengths(&self) -> Result<()> {
        if self.controls.is_empty() || self.states.len() != self.controls.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "trajectory with {} states and {} controls",
                self.states.len(),
                self.controls.len()
            )));
        }
        Ok(())
    }

    /// Largest deviation `‖x_{k+1} − f(x_k,u_k)‖_∞` along the trajectory.
    pub fn consistency_error(&self, model: &SystemModel<T>) -> T {
        self.states
            .windows(2)
            .zip(&self.controls)
            .map(|(w, u)| {
                let next = model.f(&w[0], u);
                crate::scalar::max_abs(
                    &next.iter().zip(&w[1]).map(|(&a, &b)| a - b).collect::<Vec<_>>(),
                )
            })
            .fold(T::zero(), T::max)
    }

    /// Controls flattened stage-major.
    pub fn flat_controls(&self) -> Vec<T> {
        self.controls.iter().flatten().copied().collect()
    }
}

pub(crate) fn unflatten<T: Scalar>(flat: &[T], n_u: usize) -> Vec<Vec<T>> {
    flat.chunks(n_u).map(<[T]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::builtin;
    use super::*;

    #[test]
    fn evaluate_dynamics_examples() {
        let cubic = builtin::cubic::<f64>();
        assert_eq!(cubic.evaluate_dynamics(&[0.0], &[0.0]).unwrap(), vec![1.0]);
        let lq = builtin::scalar_lq::<f64>();
        assert_eq!(lq.evaluate_dynamics(&[1.0], &[0.0]).unwrap(), vec![2.0]);
        let xs = -0.6823278;
        let next = cubic.evaluate_dynamics(&[xs], &[0.0]).unwrap()[0];
        assert!((next - xs).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let lq = builtin::scalar_lq::<f64>();
        assert!(matches!(
            lq.evaluate_dynamics(&[1.0, 2.0], &[0.0]),
            Err(Error::DimensionMismatch { what: "state", .. })
        ));
        assert!(lq.evaluate_constraints(&[1.0], &[]).is_err());
    }

    #[test]
    fn rollout_examples() {
        let lq = builtin::scalar_lq::<f64>();
        let t = lq.rollout(&[1.0], &vec![vec![0.0]; 3]).unwrap();
        assert_eq!(t.states, vec![vec![1.0], vec![2.0], vec![4.0], vec![8.0]]);
        let cubic = builtin::cubic::<f64>();
        let t = cubic.rollout(&[0.0], &[vec![0.0]]).unwrap();
        assert_eq!(t.states, vec![vec![0.0], vec![1.0]]);
        assert!(lq.rollout(&[1.0], &[]).is_err());
    }

    #[test]
    fn rollout_from_equilibrium_is_constant() {
        let generic = builtin::generic_lq::<f64>(
            LqProblem::new(
                Matrix::scalar(0.5),
                Matrix::scalar(1.0),
                Matrix::scalar(1.0),
                Matrix::scalar(1.0),
                vec![0.0],
                vec![0.0],
            )
            .unwrap(),
        );
        let t = generic.rollout(&[0.0], &vec![vec![0.0]; 5]).unwrap();
        assert!(t.states.iter().all(|s| s[0] == 0.0));
    }

    #[test]
    fn rollout_divergence_reports_step() {
        let cubic = builtin::cubic::<f64>();
        // 0 → 1 → 4 → 73 → 389090 → ~5.9e16
        let err = cubic.rollout(&[0.0], &vec![vec![0.0]; 6]).unwrap_err();
        assert_eq!(err, Error::Divergence { step: 5 });
    }

    #[test]
    fn trajectory_cost_examples() {
        let lq = builtin::scalar_lq::<f64>();
        let t = lq.rollout(&[1.0], &vec![vec![0.0]; 2]).unwrap();
        assert_eq!(lq.trajectory_cost(&t, &TerminalCost::zero(1)).unwrap(), 0.0);
        let t = lq.rollout(&[1.0], &[vec![-1.0]]).unwrap();
        let vf = TerminalCost::quadratic_linear(Matrix::scalar(1.0), vec![0.0]).unwrap();
        assert_eq!(lq.trajectory_cost(&t, &vf).unwrap(), 2.0);

        let cubic = builtin::cubic::<f64>();
        let c = builtin::cubic_constants::<f64>();
        let t = cubic.rollout(&[c.x_star], &[vec![0.0]]).unwrap();
        let vf = TerminalCost::quadratic_linear(Matrix::scalar(1.0), vec![-c.nu]).unwrap();
        let v = cubic.trajectory_cost(&t, &vf).unwrap();
        // x̄² − νx̄ with ν = 2x̄ is −x̄²
        assert!((v + c.x_star * c.x_star).abs() < 1e-12);
        assert!((v + 0.4655712).abs() < 1e-6);
    }

    #[test]
    fn constraint_examples() {
        let lq = builtin::scalar_lq::<f64>();
        assert!(lq.evaluate_constraints(&[0.0], &[0.0]).unwrap().is_empty());
        let boxed = builtin::scalar_lq::<f64>().with_constraints(2, |_x, u| vec![u[0] - 1.0, -u[0] - 1.0]);
        assert_eq!(boxed.evaluate_constraints(&[0.0], &[0.0]).unwrap(), vec![-1.0, -1.0]);
        assert_eq!(boxed.evaluate_constraints(&[0.0], &[2.0]).unwrap(), vec![1.0, -3.0]);
    }

    #[test]
    fn fd_derivatives_match_closed_form() {
        let cubic = builtin::cubic::<f64>();
        let (fx, fu) = cubic.dynamics_jacobian(&[0.3], &[0.1]);
        let fd_fx = fd_jacobian(|x| cubic.f(x, &[0.1]), &[0.3], 1);
        assert!((fx[(0, 0)] - fd_fx[(0, 0)]).abs() < 1e-8);
        assert_eq!(fu[(0, 0)], 1.0);
    }

    #[test]
    fn control_box_projection() {
        let b = ControlBox::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let mut u = vec![-3.0, 5.0];
        b.project(&mut u);
        assert_eq!(u, vec![-1.0, 2.0]);
        assert!(ControlBox::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn single_precision_rollout() {
        let lq = builtin::scalar_lq::<f32>();
        let t = lq.rollout(&[1.0], &vec![vec![0.0]; 4]).unwrap();
        assert_eq!(t.terminal_state(), &[16.0f32]);
    }
}
