//! Rotated costs, strict pre-dissipativity certificates on sampled grids,
//! the required supply by dynamic programming, and the checks that relate
//! a storage function to the terminal cost.
//!
//! Strictness is measured against `‖x − x̄⋆‖` throughout.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::lq::{verify_lq_storage, LqStorage, LqStorageVerdict};
use crate::model::{SystemModel, StorageFunction, TerminalCost};
use crate::ocp::{solve_ocp, OcpProblem, OcpSolution, SolverConfig};
use crate::optim::{minimize, minimize_scalar, Bounds, LineSearchConfig};
use crate::model::ControlBox;
use crate::scalar::{distance, lit, Scalar};
use crate::steady_state::Equilibrium;

/// Tolerance for "zero" rotated cost and terminal sums.
pub const ZERO_TOL: f64 = 1e-9;

/// `L(x,u) = ℓ(x,u) − ℓ⋆ + λ(x) − λ(f(x,u))`.
pub fn rotated_cost<T: Scalar>(
    model: &SystemModel<T>,
    storage: &StorageFunction<T>,
    eq: &Equilibrium<T>,
    x: &[T],
    u: &[T],
) -> T {
    let next = model.f(x, u);
    model.cost(x, u) - eq.cost + storage.eval(x) - storage.eval(&next)
}

/// Checked variant of [`rotated_cost`].
pub fn rotated_cost_checked<T: Scalar>(
    model: &SystemModel<T>,
    storage: &StorageFunction<T>,
    eq: &Equilibrium<T>,
    x: &[T],
    u: &[T],
) -> Result<T> {
    check_dim("state", model.n_x(), x.len())?;
    check_dim("control", model.n_u(), u.len())?;
    check_dim("storage", model.n_x(), storage.n_x())?;
    Ok(rotated_cost(model, storage, eq, x, u))
}

/// `V_f + λ`, the terminal cost of the rotated problem.
pub fn adapted_terminal<T: Scalar>(
    storage: &StorageFunction<T>,
    terminal: &TerminalCost<T>,
) -> Result<TerminalCost<T>> {
    terminal.sum(storage)
}

/// The model with stage cost replaced by `L`, gradients by chain rule.
pub fn rotated_model<T: Scalar>(
    model: &SystemModel<T>,
    storage: &StorageFunction<T>,
    eq: &Equilibrium<T>,
) -> SystemModel<T> {
    let (m1, s1, l_star) = (model.clone(), storage.clone(), eq.cost);
    let (m2, s2) = (model.clone(), storage.clone());
    model.with_stage_cost(
        format!("{}_rotated", model.name()),
        Arc::new(move |x: &[T], u: &[T]| {
            let next = m1.f(x, u);
            m1.cost(x, u) - l_star + s1.eval(x) - s1.eval(&next)
        }),
        Some(Arc::new(move |x: &[T], u: &[T]| {
            let next = m2.f(x, u);
            let (fx, fu) = m2.dynamics_jacobian(x, u);
            let (lx, lu) = m2.stage_cost_gradient(x, u);
            let g_here = s2.gradient(x);
            let g_next = s2.gradient(&next);
            let gx = lx
                .iter()
                .zip(&g_here)
                .zip(fx.tr_mul_vec(&g_next))
                .map(|((&a, &b), c)| a + b - c)
                .collect();
            let gu = lu
                .iter()
                .zip(fu.tr_mul_vec(&g_next))
                .map(|(&a, c)| a - c)
                .collect();
            (gx, gu)
        })),
    )
}

/// Rectangular sample set: the cartesian product of per-component axes.
#[derive(Clone, Debug, PartialEq)]
pub struct RectGrid<T> {
    pub state_axes: Vec<Vec<T>>,
    pub control_axes: Vec<Vec<T>>,
}

/// `n` equally spaced values from `lo` to `hi` inclusive.
pub fn linspace<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let last = lit::<T>((n - 1) as f64);
            (0..n)
                .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * lit::<T>(i as f64) / last })
                .collect()
        }
    }
}

/// `n` (odd) equally spaced values on `center ± half_width` whose middle
/// value is exactly `center`.
pub fn centered_axis<T: Scalar>(center: T, half_width: T, n: usize) -> Result<Vec<T>> {
    if n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "centered axis needs an odd node count, got {n}"
        )));
    }
    let m = (n / 2) as f64;
    Ok((0..n)
        .map(|i| {
            let k = i as f64 - m;
            if k == 0.0 {
                center
            } else {
                center + half_width * lit::<T>(k / m)
            }
        })
        .collect())
}

fn cartesian<T: Scalar>(axes: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut points = vec![Vec::with_capacity(axes.len())];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points
}

fn on_axis<T: Scalar>(axis: &[T], v: T) -> bool {
    let tol = lit::<T>(1e-12) * (T::one() + v.abs());
    axis.iter().any(|&a| (a - v).abs() <= tol)
}

impl<T: Scalar> RectGrid<T> {
    pub fn new(state_axes: Vec<Vec<T>>, control_axes: Vec<Vec<T>>) -> Result<Self> {
        if state_axes.is_empty() || control_axes.is_empty() {
            return Err(Error::InvalidArgument("grid needs state and control axes".into()));
        }
        for axis in state_axes.iter().chain(&control_axes) {
            if axis.is_empty() {
                return Err(Error::InvalidArgument("grid axis is empty".into()));
            }
            if axis.iter().any(|v| !v.is_finite()) || axis.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidArgument(
                    "grid axes must be finite and strictly increasing".into(),
                ));
            }
        }
        Ok(Self {
            state_axes,
            control_axes,
        })
    }

    /// Scalar state and control axes from `linspace`.
    pub fn uniform(x: (T, T, usize), u: (T, T, usize)) -> Result<Self> {
        Self::new(vec![linspace(x.0, x.1, x.2)], vec![linspace(u.0, u.1, u.2)])
    }

    /// Axes centered on the equilibrium so that it is a grid node.
    pub fn around(eq: &Equilibrium<T>, state_half_width: T, state_nodes: usize, control_half_width: T, control_nodes: usize) -> Result<Self> {
        let sa = eq
            .state
            .iter()
            .map(|&c| centered_axis(c, state_half_width, state_nodes))
            .collect::<Result<_>>()?;
        let ca = eq
            .control
            .iter()
            .map(|&c| centered_axis(c, control_half_width, control_nodes))
            .collect::<Result<_>>()?;
        Self::new(sa, ca)
    }

    pub fn states(&self) -> Vec<Vec<T>> {
        cartesian(&self.state_axes)
    }

    pub fn controls(&self) -> Vec<Vec<T>> {
        cartesian(&self.control_axes)
    }

    pub fn len(&self) -> usize {
        self.state_axes
            .iter()
            .chain(&self.control_axes)
            .map(Vec::len)
            .product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, x: &[T], u: &[T]) -> bool {
        x.len() == self.state_axes.len()
            && u.len() == self.control_axes.len()
            && self.state_axes.iter().zip(x).all(|(a, &v)| on_axis(a, v))
            && self.control_axes.iter().zip(u).all(|(a, &v)| on_axis(a, v))
    }

    /// Largest gap between neighbouring nodes over all axes.
    pub fn resolution(&self) -> T {
        self.state_axes
            .iter()
            .chain(&self.control_axes)
            .flat_map(|a| a.windows(2).map(|w| w[1] - w[0]))
            .fold(T::zero(), T::max)
    }

    fn control_box(&self) -> (Vec<T>, Vec<T>) {
        (
            self.control_axes.iter().map(|a| a[0]).collect(),
            self.control_axes.iter().map(|a| a[a.len() - 1]).collect(),
        )
    }

    pub fn describe(&self) -> String {
        let fmt = |axes: &[Vec<T>]| -> String {
            axes.iter()
                .map(|a| format!("[{}, {}]x{}", a[0], a[a.len() - 1], a.len()))
                .collect::<Vec<_>>()
                .join(" * ")
        };
        format!("x: {}; u: {}", fmt(&self.state_axes), fmt(&self.control_axes))
    }

    fn check(&self, model: &SystemModel<T>, eq: &Equilibrium<T>) -> Result<()> {
        check_dim("grid state axes", model.n_x(), self.state_axes.len())?;
        check_dim("grid control axes", model.n_u(), self.control_axes.len())?;
        if !self.contains(&eq.state, &eq.control) {
            return Err(Error::InvalidArgument(
                "grid does not contain the equilibrium".into(),
            ));
        }
        Ok(())
    }
}

/// Nondecreasing piecewise-linear function through `(0, 0)` and the
/// breakpoints, constant past the last one.
#[derive(Clone, Debug, PartialEq)]
pub struct KFunctionFit<T> {
    pub radii: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Scalar> KFunctionFit<T> {
    pub fn new(radii: Vec<T>, values: Vec<T>) -> Result<Self> {
        if radii.is_empty() || radii.len() != values.len() {
            return Err(Error::InvalidArgument(
                "class-K fit needs matching, nonempty breakpoints".into(),
            ));
        }
        let ok = radii.windows(2).all(|w| w[0] < w[1])
            && values.windows(2).all(|w| w[0] <= w[1])
            && radii[0] > T::zero()
            && values[0] > T::zero();
        if !ok {
            return Err(Error::InvalidArgument(
                "class-K fit must be increasing in r, nondecreasing and positive".into(),
            ));
        }
        Ok(Self { radii, values })
    }

    pub fn eval(&self, r: T) -> T {
        if r <= T::zero() {
            return T::zero();
        }
        let i = self.radii.partition_point(|&b| b < r);
        if i == self.radii.len() {
            return self.values[i - 1];
        }
        let (r0, v0) = if i == 0 {
            (T::zero(), T::zero())
        } else {
            (self.radii[i - 1], self.values[i - 1])
        };
        let (r1, v1) = (self.radii[i], self.values[i]);
        v0 + (v1 - v0) * (r - r0) / (r1 - r0)
    }
}

/// `inf_u L(x,u)` over the box `[lo, hi]`: a scan refined by golden
/// section for scalar controls, projected BFGS from the best scanned point
/// otherwise.
pub fn inf_rotated_cost<T: Scalar>(
    model: &SystemModel<T>,
    storage: &StorageFunction<T>,
    eq: &Equilibrium<T>,
    x: &[T],
    lo: &[T],
    hi: &[T],
) -> (T, Vec<T>) {
    let l = |u: &[T]| rotated_cost(model, storage, eq, x, u);
    if model.n_u() == 1 {
        let (u, v) = minimize_scalar(|u: T| l(&[u]), lo[0], hi[0], 401);
        return (v, vec![u]);
    }
    let axes: Vec<Vec<T>> = lo.iter().zip(hi).map(|(&a, &b)| linspace(a, b, 11)).collect();
    let (mut best_u, mut best_v) = (Vec::new(), T::infinity());
    for u in cartesian(&axes) {
        let v = l(&u);
        if v < best_v {
            best_v = v;
            best_u = u;
        }
    }
    let Ok(block) = ControlBox::new(lo.to_vec(), hi.to_vec()) else {
        return (best_v, best_u);
    };
    let mut obj = |u: &[T]| -> Option<(T, Vec<T>)> {
        let v = l(u);
        v.is_finite()
            .then(|| (v, crate::model::fd_gradient(|p| l(p), u)))
    };
    let cfg = LineSearchConfig {
        max_iterations: 500,
        gradient_tolerance: lit(1e-10),
        ..LineSearchConfig::default()
    };
    match minimize(&mut obj, &best_u, Some(Bounds { block: &block }), &cfg) {
        Ok(m) if m.value < best_v => (m.value, m.x),
        _ => (best_v, best_u),
    }
}

/// Per-state minimum of `L` over the grid's controls, refined between them.
fn inf_over_controls<T: Scalar>(
    model: &SystemModel<T>,
    storage: &StorageFunction<T>,
    eq: &Equilibrium<T>,
    grid: &RectGrid<T>,
    states: &[Vec<T>],
) -> Vec<T> {
    let controls = grid.controls();
    let (lo, hi) = grid.control_box();
    states
        .par_iter()
        .map(|x| {
            let scanned = controls
                .iter()
                .map(|u| rotated_cost(model, storage, eq, x, u))
                .fold(T::infinity(), T::min);
            let (refined, _) = inf_rotated_cost(model, storage, eq, x, &lo, &hi);
            scanned.min(refined)
        })
        .collect()
}

/// Largest nondecreasing piecewise-linear minorant of the per-radius
/// infimum of `L` over the grid, with breakpoints at the grid radii.
pub fn fit_alpha<T: Scalar>(
    model: &SystemModel<T>,
    storage: &StorageFunction<T>,
    eq: &Equilibrium<T>,
    grid: &RectGrid<T>,
) -> Result<KFunctionFit<T>> {
    grid.check(model, eq)?;
    let states = grid.states();
    let infima = inf_over_controls(model, storage, eq, grid, &states);
    let mut by_radius: Vec<(T, T)> = states
        .iter()
        .zip(infima)
        .map(|(x, m)| (distance(x, &eq.state), m))
        .collect();
    by_radius.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite radii"));

    let merge_tol = |r: T| lit::<T>(1e-9) * (T::one() + r);
    let mut bins: Vec<(T, T)> = Vec::new();
    for (r, m) in by_radius {
        if r <= merge_tol(T::zero()) {
            continue;
        }
        match bins.last_mut() {
            Some((br, bm)) if (r - *br).abs() <= merge_tol(r) => {
                *br = br.max(r);
                *bm = bm.min(m);
            }
            _ => bins.push((r, m)),
        }
    }
    if bins.is_empty() {
        return Err(Error::InvalidArgument(
            "grid has no states away from the equilibrium; α would be identically 0".into(),
        ));
    }
    if let Some(&(r, m)) = bins.iter().find(|(_, m)| !(*m > T::zero())) {
        return Err(Error::FitFailure {
            radius: r.to_f64().unwrap_or(f64::NAN),
            infimum: m.to_f64().unwrap_or(f64::NAN),
        });
    }
    let mut values: Vec<T> = bins.iter().map(|b| b.1).collect();
    for i in (0..values.len().saturating_sub(1)).rev() {
        values[i] = values[i].min(values[i + 1]);
    }
    // keep α strictly below L where the minimum sits on a grid point
    let shrink = T::one() - lit::<T>(1e-9);
    for v in &mut values {
        *v *= shrink;
    }
    KFunctionFit::new(bins.iter().map(|b| b.0).collect(), values)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DissipativityCertificate<T> {
    pub passed: bool,
    /// `min (L − α(‖x − x̄⋆‖))` over the grid without the equilibrium node,
    /// lowered to `−|L(x̄⋆, ū⋆)|` when that exceeds the zero tolerance.
    pub margin: T,
    pub witness: (Vec<T>, Vec<T>),
    pub equilibrium_value: T,
    pub grid: String,
    pub points: usize,
    /// Exact quadratic-form verdict for parametrized storages of LQ models.
    pub exact: Option<LqStorageVerdict<T>>,
}

/// Evaluates `L − α(‖x − x̄⋆‖)` on every grid point.
pub fn certify_pre_dissipativity<T: Scalar>(
    model: &SystemModel<T>,
    storage: &StorageFunction<T>,
    eq: &Equilibrium<T>,
    alpha: impl Fn(T) -> T + Sync,
    grid: &RectGrid<T>,
) -> Result<DissipativityCertificate<T>> {
    grid.check(model, eq)?;
    check_dim("storage", model.n_x(), storage.n_x())?;
    let states = grid.states();
    let controls = grid.controls();
    let eq_tol = lit::<T>(1e-12);
    let is_eq = |x: &[T], u: &[T]| {
        distance(x, &eq.state) <= eq_tol * (T::one() + distance(&eq.state, &vec![T::zero(); x.len()]))
            && distance(u, &eq.control) <= eq_tol * (T::one() + distance(&eq.control, &vec![T::zero(); u.len()]))
    };

    // per state: (margin, control index)
    let per_state: Vec<(T, usize)> = states
        .par_iter()
        .map(|x| {
            let a = alpha(distance(x, &eq.state));
            let mut best = (T::infinity(), usize::MAX);
            for (j, u) in controls.iter().enumerate() {
                if is_eq(x, u) {
                    continue;
                }
                let v = rotated_cost(model, storage, eq, x, u) - a;
                if v < best.0 || v.is_nan() {
                    best = (v, j);
                    if v.is_nan() {
                        break;
                    }
                }
            }
            best
        })
        .collect();

    let mut margin = T::infinity();
    let mut witness = (eq.state.clone(), eq.control.clone());
    for (x, &(m, j)) in states.iter().zip(&per_state) {
        if j != usize::MAX && (m < margin || m.is_nan()) {
            margin = m;
            witness = (x.clone(), controls[j].clone());
            if m.is_nan() {
                break;
            }
        }
    }
    let equilibrium_value = rotated_cost(model, storage, eq, &eq.state, &eq.control);
    if !(equilibrium_value.abs() <= lit(ZERO_TOL)) {
        let m = -equilibrium_value.abs();
        if !(margin <= m) {
            margin = m;
            witness = (eq.state.clone(), eq.control.clone());
        }
    }
    if margin == T::infinity() {
        margin = T::zero();
    }
    if margin.is_nan() {
        margin = T::neg_infinity();
    }

    let exact = match (model.lq(), LqStorage::from_storage(storage)) {
        (Some(lq), Some(st)) => Some(verify_lq_storage(lq, &st, eq)?),
        _ => None,
    };
    Ok(DissipativityCertificate {
        passed: margin >= T::zero(),
        margin,
        witness,
        equilibrium_value,
        grid: grid.describe(),
        points: states.len() * controls.len(),
        exact,
    })
}

/// `s(x,u) = ℓ(x,u) − ℓ⋆ − α(‖x − x̄⋆‖)`.
pub struct SupplyRate<'a, T, A> {
    pub model: &'a SystemModel<T>,
    pub equilibrium: &'a Equilibrium<T>,
    pub alpha: A,
}

impl<T: Scalar, A: Fn(T) -> T> SupplyRate<'_, T, A> {
    pub fn eval(&self, x: &[T], u: &[T]) -> T {
        self.model.cost(x, u)
            - self.equilibrium.cost
            - (self.alpha)(distance(x, &self.equilibrium.state))
    }
}

/// Discretization for [`required_supply`].
#[derive(Clone, Debug, PartialEq)]
pub struct DpConfig<T> {
    /// Half width of the state box around the equilibrium, per component.
    pub state_half_width: T,
    /// Nodes per state axis (odd, so the equilibrium is a node).
    pub state_nodes: usize,
    pub control_lower: Vec<T>,
    pub control_upper: Vec<T>,
    pub control_nodes: usize,
    /// Longest trajectory considered.
    pub max_steps: usize,
}

impl<T: Scalar> DpConfig<T> {
    /// State box `x̄⋆ ± 2` with 81 nodes per axis, controls `[−5, 5]` with
    /// 81 nodes, 30 steps.
    pub fn standard(n_u: usize) -> Self {
        Self {
            state_half_width: lit(2.0),
            state_nodes: 81,
            control_lower: vec![lit(-5.0); n_u],
            control_upper: vec![lit(5.0); n_u],
            control_nodes: 81,
            max_steps: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RequiredSupply<T> {
    /// `λ_rs` at each target's nearest node; `None` when not reachable
    /// within `max_steps` on the grid or outside the box.
    pub values: Vec<Option<T>>,
    /// Trajectory length realizing each value.
    pub steps: Vec<Option<usize>>,
    /// Resolution error bar `L̂ · h`: `L̂` the Lipschitz estimate of the
    /// computed values over neighbouring nodes, `h` the node spacing.
    pub eps_grid: T,
    pub lipschitz: T,
    pub spacing: T,
    axes: Vec<Vec<T>>,
    node_values: Vec<Option<T>>,
}

struct NodeGrid<'a, T> {
    axes: &'a [Vec<T>],
    lower: Vec<T>,
    spacing: Vec<T>,
}

impl<'a, T: Scalar> NodeGrid<'a, T> {
    fn new(axes: &'a [Vec<T>]) -> Self {
        let lower = axes.iter().map(|a| a[0]).collect();
        let spacing = axes
            .iter()
            .map(|a| (a[a.len() - 1] - a[0]) / lit((a.len() - 1) as f64))
            .collect();
        Self { axes, lower, spacing }
    }

    fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    fn point(&self, mut idx: usize) -> Vec<T> {
        let mut x = vec![T::zero(); self.axes.len()];
        for d in (0..self.axes.len()).rev() {
            let n = self.axes[d].len();
            x[d] = self.axes[d][idx % n];
            idx /= n;
        }
        x
    }

    /// Index of the nearest node, `None` outside the box (by more than
    /// half a spacing).
    fn nearest(&self, x: &[T]) -> Option<usize> {
        let mut idx = 0;
        for (d, axis) in self.axes.iter().enumerate() {
            let n = axis.len();
            let k = ((x[d] - self.lower[d]) / self.spacing[d]).round();
            if !k.is_finite() || k < T::zero() || k > lit((n - 1) as f64) {
                return None;
            }
            idx = idx * n + k.to_usize()?;
        }
        Some(idx)
    }

    fn neighbours(&self, idx: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stride = 1;
        let mut rest = idx;
        let mut coords = vec![0; self.axes.len()];
        for d in (0..self.axes.len()).rev() {
            coords[d] = rest % self.axes[d].len();
            rest /= self.axes[d].len();
        }
        for d in (0..self.axes.len()).rev() {
            if coords[d] + 1 < self.axes[d].len() {
                out.push(idx + stride);
            }
            stride *= self.axes[d].len();
        }
        out
    }
}

/// Minimal accumulated supply `Σ s(x_k,u_k)` over grid trajectories from
/// `x̄⋆` to each target in at most `max_steps` steps, by value iteration
/// with nearest-node projection. The zero-length trajectory gives
/// `λ_rs(x̄⋆) = 0` before any relaxation.
pub fn required_supply<T: Scalar>(
    model: &SystemModel<T>,
    eq: &Equilibrium<T>,
    alpha: impl Fn(T) -> T + Sync,
    targets: &[Vec<T>],
    dp: &DpConfig<T>,
) -> Result<RequiredSupply<T>> {
    check_dim("DP control lower bound", model.n_u(), dp.control_lower.len())?;
    check_dim("DP control upper bound", model.n_u(), dp.control_upper.len())?;
    if dp.max_steps == 0 || dp.control_nodes < 2 || !(dp.state_half_width > T::zero()) {
        return Err(Error::InvalidArgument(
            "DP needs max_steps >= 1, >= 2 control nodes and a positive box".into(),
        ));
    }
    for t in targets {
        check_dim("target", model.n_x(), t.len())?;
    }
    let axes: Vec<Vec<T>> = eq
        .state
        .iter()
        .map(|&c| centered_axis(c, dp.state_half_width, dp.state_nodes))
        .collect::<Result<_>>()?;
    let grid = NodeGrid::new(&axes);
    let start = grid
        .nearest(&eq.state)
        .expect("centered grid contains its center");
    let control_axes: Vec<Vec<T>> = dp
        .control_lower
        .iter()
        .zip(&dp.control_upper)
        .map(|(&a, &b)| linspace(a, b, dp.control_nodes))
        .collect();
    let controls = cartesian(&control_axes);
    let supply = SupplyRate {
        model,
        equilibrium: eq,
        alpha: &alpha,
    };

    // cheapest enumerated control per (node, successor), then snapped so
    // the transition lands on the successor node exactly
    let edges: Vec<Vec<(usize, T)>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let mut cand: Vec<(usize, T, &Vec<T>)> = Vec::new();
            for u in &controls {
                let next = model.f(&x, u);
                let Some(j) = grid.nearest(&next) else { continue };
                let s = supply.eval(&x, u);
                if !s.is_finite() {
                    continue;
                }
                match cand.iter_mut().find(|e| e.0 == j) {
                    Some(e) if s < e.1 => *e = (j, s, u),
                    Some(_) => {}
                    None => cand.push((j, s, u)),
                }
            }
            cand.into_iter()
                .filter_map(|(j, _, u)| {
                    let target = grid.point(j);
                    let u = snap_control(model, &x, u, &target, &dp.control_lower, &dp.control_upper)?;
                    let s = supply.eval(&x, &u);
                    s.is_finite().then_some((j, s))
                })
                .collect()
        })
        .collect();

    let n = grid.len();
    let mut value: Vec<Option<T>> = vec![None; n];
    let mut steps: Vec<Option<usize>> = vec![None; n];
    value[start] = Some(T::zero());
    steps[start] = Some(0);
    // trajectories of exactly k steps
    let mut frontier: Vec<Option<T>> = value.clone();
    for k in 1..=dp.max_steps {
        let mut next: Vec<Option<T>> = vec![None; n];
        for (i, fv) in frontier.iter().enumerate() {
            let Some(vi) = fv else { continue };
            for &(j, s) in &edges[i] {
                let cand = *vi + s;
                if next[j].is_none_or(|v| cand < v) {
                    next[j] = Some(cand);
                }
            }
        }
        for j in 0..n {
            if let Some(c) = next[j] {
                if value[j].is_none_or(|v| c < v) {
                    value[j] = Some(c);
                    steps[j] = Some(k);
                }
            }
        }
        frontier = next;
    }

    let spacing = grid.spacing.iter().copied().fold(T::zero(), T::max);
    let mut lipschitz = T::zero();
    for i in 0..n {
        let Some(vi) = value[i] else { continue };
        for j in grid.neighbours(i) {
            if let Some(vj) = value[j] {
                lipschitz = lipschitz.max((vi - vj).abs() / spacing);
            }
        }
    }
    let mut out_values = Vec::with_capacity(targets.len());
    let mut out_steps = Vec::with_capacity(targets.len());
    for t in targets {
        let node = grid.nearest(t);
        let v = node.and_then(|i| value[i]);
        let k = node.and_then(|i| steps[i]);
        out_values.push(v);
        out_steps.push(k);
    }
    Ok(RequiredSupply {
        values: out_values,
        steps: out_steps,
        eps_grid: lipschitz * spacing,
        lipschitz,
        spacing,
        axes,
        node_values: value,
    })
}

/// Gauss-Newton on `f(x, u) = target` from `u0`, kept inside the box.
fn snap_control<T: Scalar>(
    model: &SystemModel<T>,
    x: &[T],
    u0: &[T],
    target: &[T],
    lower: &[T],
    upper: &[T],
) -> Option<Vec<T>> {
    let tol = lit::<T>(1e-12) * (T::one() + crate::scalar::max_abs(target));
    let mut u = u0.to_vec();
    for _ in 0..30 {
        let r: Vec<T> = model.f(x, &u).iter().zip(target).map(|(&a, &b)| a - b).collect();
        if crate::scalar::max_abs(&r) <= tol {
            return u
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
                .then_some(u);
        }
        let (_, fu) = model.dynamics_jacobian(x, &u);
        let jtj = fu.transpose().mul(&fu);
        let step = jtj.solve(&fu.tr_mul_vec(&r)).ok()?;
        for (v, d) in u.iter_mut().zip(step) {
            *v -= d;
        }
    }
    None
}

impl<T: Scalar> RequiredSupply<T> {
    /// Value at the node nearest to `x`.
    pub fn eval(&self, x: &[T]) -> Option<T> {
        let grid = NodeGrid::new(&self.axes);
        grid.nearest(x).and_then(|i| self.node_values[i])
    }

    /// Grid nodes with their values.
    pub fn nodes(&self) -> Vec<(Vec<T>, Option<T>)> {
        let grid = NodeGrid::new(&self.axes);
        (0..grid.len())
            .map(|i| (grid.point(i), self.node_values[i]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport<T> {
    /// `max_k ‖u_k − u_k^λ‖_∞` between the two optimal sequences.
    pub control_deviation: T,
    /// `|V_{λ,N}(x0) − V_N(x0) − λ(x0) + N ℓ⋆|`
    pub value_offset_residual: T,
    pub original: OcpSolution<T>,
    pub rotated: OcpSolution<T>,
}

/// Solves the original problem `(ℓ, V_f)` and the rotated one
/// `(L, V_f + λ)` from `x0` and compares them.
pub fn check_rotated_equivalence<T: Scalar>(
    model: &SystemModel<T>,
    storage: &StorageFunction<T>,
    terminal: &TerminalCost<T>,
    eq: &Equilibrium<T>,
    x0: &[T],
    horizon: usize,
    config: &SolverConfig<T>,
) -> Result<EquivalenceReport<T>> {
    let original = solve_ocp(&OcpProblem::new(model, terminal, x0, horizon)?, config)?;
    let rot_model = rotated_model(model, storage, eq);
    let rot_terminal = adapted_terminal(storage, terminal)?;
    let rotated = solve_ocp(&OcpProblem::new(&rot_model, &rot_terminal, x0, horizon)?, config)?;
    let control_deviation = original
        .trajectory
        .controls
        .iter()
        .flatten()
        .zip(rotated.trajectory.controls.iter().flatten())
        .map(|(&a, &b)| (a - b).abs())
        .fold(T::zero(), T::max);
    let n = lit::<T>(horizon as f64);
    let value_offset_residual =
        (rotated.value - original.value - storage.eval(x0) + n * eq.cost).abs();
    Ok(EquivalenceReport {
        control_deviation,
        value_offset_residual,
        original,
        rotated,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueBoundSample<T> {
    pub state: Vec<T>,
    pub horizon: usize,
    /// `V_N(x) + λ(x) − N ℓ⋆`
    pub lhs: T,
    /// `inf_u L(x, u)`
    pub inf_rotated: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueBound<T> {
    /// False when some `lhs > 0` at a state with `inf_u L = 0`.
    pub feasible: bool,
    /// Smallest `κ ≥ 0` with `lhs ≤ κ · inf_u L` on every sample.
    pub kappa: Option<T>,
    pub samples: Vec<ValueBoundSample<T>>,
}

/// Tests `V_N(x) + λ(x) − N ℓ⋆ ≤ κ · inf_u L(x,u)` on a state grid for
/// every horizon in `horizons`, minimizing over controls in `[lo, hi]`.
#[allow(clippy::too_many_arguments)]
pub fn check_value_bound<T: Scalar>(
    model: &SystemModel<T>,
    storage: &StorageFunction<T>,
    terminal: &TerminalCost<T>,
    eq: &Equilibrium<T>,
    states: &[Vec<T>],
    horizons: &[usize],
    control_box: (&[T], &[T]),
    config: &SolverConfig<T>,
) -> Result<ValueBound<T>> {
    check_dim("control box", model.n_u(), control_box.0.len())?;
    check_dim("control box", model.n_u(), control_box.1.len())?;
    let infima: Vec<T> = states
        .par_iter()
        .map(|x| inf_rotated_cost(model, storage, eq, x, control_box.0, control_box.1).0)
        .collect();
    let jobs: Vec<(usize, usize)> = (0..states.len())
        .flat_map(|i| horizons.iter().map(move |&n| (i, n)))
        .collect();
    let samples: Vec<ValueBoundSample<T>> = jobs
        .par_iter()
        .map(|&(i, n)| {
            let x = &states[i];
            let sol = solve_ocp(&OcpProblem::new(model, terminal, x, n)?, config)?;
            Ok(ValueBoundSample {
                state: x.clone(),
                horizon: n,
                lhs: sol.value + storage.eval(x) - lit::<T>(n as f64) * eq.cost,
                inf_rotated: infima[i],
            })
        })
        .collect::<Result<_>>()?;

    let zero = lit::<T>(ZERO_TOL);
    let mut feasible = true;
    let mut kappa = T::zero();
    for s in &samples {
        if s.inf_rotated <= zero {
            if s.lhs > zero {
                feasible = false;
            }
        } else {
            kappa = kappa.max(s.lhs / s.inf_rotated);
        }
    }
    Ok(ValueBound {
        feasible,
        kappa: feasible.then_some(kappa),
        samples,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerminalConditions<T> {
    /// `|(V_f+λ)(x̄⋆)| ≤ 1e-9` and `V_f + λ ≥ −1e-9` on the grid.
    pub semidefinite_at_eq: bool,
    pub bounded_below: bool,
    /// Grid minimum of `V_f + λ`.
    pub inf_estimate: T,
    /// Whether `bounded_below` came from the exact quadratic test rather
    /// than the growing-grid heuristic.
    pub exact: bool,
}

/// Checks the adapted terminal cost `V_f + λ` for being zero and minimal
/// at `x̄⋆` and for being bounded below.
///
/// For quadratic-plus-linear sums `xᵀMx + wᵀx` boundedness is decided
/// exactly (`M ⪰ 0` and `w` in the range of `M`). Otherwise the grid is
/// scaled about `x̄⋆` by 2 and 4 and the minimum must not keep falling.
pub fn check_terminal_conditions<T: Scalar>(
    storage: &StorageFunction<T>,
    terminal: &TerminalCost<T>,
    eq: &Equilibrium<T>,
    states: &[Vec<T>],
) -> Result<TerminalConditions<T>> {
    let sum = adapted_terminal(storage, terminal)?;
    for x in states {
        check_dim("grid state", sum.n_x(), x.len())?;
    }
    let tol = lit::<T>(ZERO_TOL);
    let grid_min = |scale: T| -> T {
        states
            .iter()
            .map(|x| {
                let y: Vec<T> = x
                    .iter()
                    .zip(&eq.state)
                    .map(|(&a, &c)| c + (a - c) * scale)
                    .collect();
                sum.eval(&y)
            })
            .fold(T::infinity(), T::min)
    };
    let inf_estimate = grid_min(T::one());
    let at_eq = sum.eval(&eq.state);
    let semidefinite_at_eq = at_eq.abs() <= tol && inf_estimate >= -tol;

    let (bounded_below, exact) = match sum.quadratic() {
        Some(q) => {
            let eig = q.matrix.symmetric_eigen()?;
            let dtol = lit::<T>(crate::lq::DEFINITENESS_TOL);
            let scale = q.matrix.max_abs().max(T::one());
            let psd = eig.values.iter().all(|&v| v >= -dtol * scale);
            let in_range = (0..eig.values.len())
                .filter(|&i| eig.values[i].abs() <= dtol * scale)
                .all(|i| {
                    let comp: T = (0..q.linear.len())
                        .map(|r| eig.vectors[(r, i)] * q.linear[r])
                        .sum();
                    comp.abs() <= dtol * (T::one() + crate::scalar::norm(&q.linear))
                });
            (psd && in_range, true)
        }
        None => {
            let m2 = grid_min(lit(2.0));
            let m4 = grid_min(lit(4.0));
            let stable = m4 >= m2 - lit::<T>(1e-6) * (T::one() + m2.abs());
            (stable && m4.is_finite(), false)
        }
    };
    Ok(TerminalConditions {
        semidefinite_at_eq,
        bounded_below,
        inf_estimate,
        exact,
    })
}
