//! Receding-horizon closed loop: solve, apply the first control, repeat.

use std::io::{self, Write};

use crate::error::{check_dim, Error, Result};
use crate::model::{within_guard, SystemModel, TerminalCost};
use crate::ocp::{solve_ocp_from, InitialGuess, OcpProblem, OcpSolution, SolverConfig};
use crate::scalar::{distance, lit, Scalar};

/// Previous optimal sequence shifted by one stage, last element repeated.
pub fn shift_warm_start<T: Scalar>(previous: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut shifted: Vec<Vec<T>> = previous.iter().skip(1).cloned().collect();
    if let Some(last) = previous.last() {
        shifted.push(last.clone());
    }
    shifted
}

/// One closed-loop step: solves the horizon-`N` problem at `x` and returns
/// its first control with the full solution. `previous` is the optimal
/// sequence of the preceding step, shifted here before use.
pub fn mpc_step<T: Scalar>(
    model: &SystemModel<T>,
    terminal: &TerminalCost<T>,
    horizon: usize,
    x: &[T],
    previous: Option<&[Vec<T>]>,
    config: &SolverConfig<T>,
) -> Result<(Vec<T>, OcpSolution<T>)> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("closed-loop state is not finite".into()));
    }
    let problem = OcpProblem::new(model, terminal, x, horizon)?;
    let guess = previous
        .filter(|p| p.len() == horizon)
        .map(shift_warm_start);
    let solution = solve_ocp_from(&problem, config, guess.as_deref())?;
    Ok((solution.first_control().to_vec(), solution))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopConfig<T> {
    pub solver: SolverConfig<T>,
    pub warm_start: bool,
    /// Equilibrium used for the early stop; `None` disables it.
    pub target: Option<Vec<T>>,
    pub early_stop_tolerance: T,
    pub early_stop_steps: usize,
}

impl<T: Scalar> Default for ClosedLoopConfig<T> {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            warm_start: true,
            target: None,
            early_stop_tolerance: lit(1e-12),
            early_stop_steps: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics<T> {
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: T,
    pub start_index: usize,
    pub diverged_starts: usize,
    /// Step copied from its predecessor after the early stop.
    pub filled: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    Completed,
    /// Stayed at the target for the configured number of steps; the
    /// remaining steps repeat the last one.
    Settled { step: usize },
    /// The closed-loop state or every predicted trajectory left the
    /// divergence guard at this step.
    Diverged { step: usize },
    /// The optimizer failed for a reason other than divergence.
    Failed { step: usize, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopRun<T> {
    pub horizon: usize,
    /// `x̂_0, …`; length `applied_controls.len() + 1` unless the run
    /// stopped on a failed solve.
    pub states: Vec<Vec<T>>,
    pub applied_controls: Vec<Vec<T>>,
    /// `V_N(x̂_j)` for each step that was solved.
    pub values: Vec<T>,
    pub diagnostics: Vec<StepDiagnostics<T>>,
    pub termination: Termination,
}

impl<T: Scalar> ClosedLoopRun<T> {
    pub fn diverged(&self) -> bool {
        matches!(self.termination, Termination::Diverged { .. })
    }

    /// Number of closed-loop transitions recorded.
    pub fn steps(&self) -> usize {
        self.applied_controls.len()
    }

    /// Largest `‖x̂_{j+1} − f(x̂_j, u_j)‖_∞` over recorded transitions.
    pub fn consistency_error(&self, model: &SystemModel<T>) -> T {
        self.states
            .windows(2)
            .zip(&self.applied_controls)
            .map(|(w, u)| {
                let next = model.f(&w[0], u);
                next.iter()
                    .zip(&w[1])
                    .map(|(&a, &b)| (a - b).abs())
                    .fold(T::zero(), T::max)
            })
            .fold(T::zero(), T::max)
    }
}

fn diagnostics<T: Scalar>(s: &OcpSolution<T>) -> StepDiagnostics<T> {
    StepDiagnostics {
        converged: s.converged,
        iterations: s.iterations,
        gradient_norm: s.gradient_norm,
        start_index: s.start_index,
        diverged_starts: s.diverged_starts,
        filled: false,
    }
}

/// Runs `steps` closed-loop iterations from `x0`. Divergence and later
/// solver failures end the run early and are recorded in `termination`;
/// only a non-divergence failure at the first step is an error.
pub fn run_closed_loop<T: Scalar>(
    model: &SystemModel<T>,
    terminal: &TerminalCost<T>,
    horizon: usize,
    x0: &[T],
    steps: usize,
    config: &ClosedLoopConfig<T>,
) -> Result<ClosedLoopRun<T>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("closed loop needs at least one step".into()));
    }
    check_dim("initial state", model.n_x(), x0.len())?;
    if let Some(t) = &config.target {
        check_dim("target", model.n_x(), t.len())?;
    }
    let mut solver = config.solver.clone();
    if config.warm_start {
        solver.initial_guess = InitialGuess::WarmStart;
    }

    let mut run = ClosedLoopRun {
        horizon,
        states: vec![x0.to_vec()],
        applied_controls: Vec::with_capacity(steps),
        values: Vec::with_capacity(steps),
        diagnostics: Vec::with_capacity(steps),
        termination: Termination::Completed,
    };
    let mut previous: Option<Vec<Vec<T>>> = None;
    let mut at_target = 0usize;

    for j in 0..steps {
        let x = run.states[j].clone();
        let (u, solution) = match mpc_step(model, terminal, horizon, &x, previous.as_deref(), &solver) {
            Ok(r) => r,
            Err(Error::SolverFailure(_)) | Err(Error::Divergence { .. }) => {
                // every predicted trajectory left the guard
                run.termination = Termination::Diverged { step: j };
                return Ok(run);
            }
            Err(e) if j == 0 => return Err(Error::StepFailure { step: 0, message: e.to_string() }),
            Err(e) => {
                run.termination = Termination::Failed {
                    step: j,
                    message: e.to_string(),
                };
                return Ok(run);
            }
        };
        let next = model.f(&x, &u);
        run.applied_controls.push(u);
        run.values.push(solution.value);
        run.diagnostics.push(diagnostics(&solution));
        let finite = within_guard(&next);
        if next.iter().all(|v| v.is_finite()) {
            run.states.push(next);
        }
        if !finite {
            run.termination = Termination::Diverged { step: j + 1 };
            return Ok(run);
        }
        previous = Some(solution.trajectory.controls);

        if let Some(target) = &config.target {
            if distance(&run.states[j + 1], target) <= config.early_stop_tolerance {
                at_target += 1;
            } else {
                at_target = 0;
            }
            if at_target >= config.early_stop_steps && j + 1 < steps {
                run.termination = Termination::Settled { step: j + 1 };
                let (x, u, v) = (
                    run.states[j + 1].clone(),
                    run.applied_controls[j].clone(),
                    run.values[j],
                );
                let mut d = run.diagnostics[j].clone();
                d.filled = true;
                for _ in j + 1..steps {
                    run.applied_controls.push(u.clone());
                    run.values.push(v);
                    run.diagnostics.push(d.clone());
                    run.states.push(x.clone());
                }
                return Ok(run);
            }
        }
    }
    Ok(run)
}

/// `max ‖x̂_j − x̄‖` over the last `⌈tail_fraction·J⌉` states.
pub fn practical_radius<T: Scalar>(
    run: &ClosedLoopRun<T>,
    equilibrium: &[T],
    tail_fraction: f64,
) -> Result<T> {
    if run.diverged() {
        return Err(Error::InvalidArgument("practical radius of a diverged run".into()));
    }
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tail fraction {tail_fraction} outside (0, 1)"
        )));
    }
    let j = run.states.len() - 1;
    if j == 0 {
        return Err(Error::InvalidArgument("run has no steps".into()));
    }
    check_dim("equilibrium", run.states[0].len(), equilibrium.len())?;
    let tail = ((tail_fraction * j as f64).ceil() as usize).clamp(1, j);
    Ok(run.states[j + 1 - tail..]
        .iter()
        .map(|x| distance(x, equilibrium))
        .fold(T::zero(), T::max))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stability {
    Diverged,
    PracticallyStable,
    AsymptoticallyStable,
    Inconclusive,
}

impl Stability {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Diverged => "diverged",
            Self::PracticallyStable => "practically_stable",
            Self::AsymptoticallyStable => "asymptotically_stable",
            Self::Inconclusive => "inconclusive",
        }
    }
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityThresholds {
    pub asymptotic_tolerance: f64,
    pub practical_tolerance: f64,
    pub tail_fraction: f64,
}

impl Default for StabilityThresholds {
    fn default() -> Self {
        Self {
            asymptotic_tolerance: 1e-6,
            practical_tolerance: 1e-1,
            tail_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport<T> {
    pub classification: Stability,
    /// `δ̂`; `None` for diverged runs.
    pub practical_radius: Option<T>,
    /// First step whose distance to the equilibrium is within the
    /// practical tolerance.
    pub time_to_tail: Option<usize>,
    pub thresholds: StabilityThresholds,
}

pub fn classify_stability<T: Scalar>(
    run: &ClosedLoopRun<T>,
    equilibrium: &[T],
    thresholds: StabilityThresholds,
) -> StabilityReport<T> {
    let mut report = StabilityReport {
        classification: Stability::Inconclusive,
        practical_radius: None,
        time_to_tail: None,
        thresholds,
    };
    if run.diverged() {
        report.classification = Stability::Diverged;
        return report;
    }
    let practical = lit::<T>(thresholds.practical_tolerance);
    report.time_to_tail = run
        .states
        .iter()
        .position(|x| distance(x, equilibrium) <= practical);
    report.practical_radius = practical_radius(run, equilibrium, thresholds.tail_fraction).ok();
    if matches!(run.termination, Termination::Failed { .. }) {
        return report;
    }
    if let (Some(delta), Some(_)) = (report.practical_radius, report.time_to_tail) {
        report.classification = if delta <= lit(thresholds.asymptotic_tolerance) {
            Stability::AsymptoticallyStable
        } else if delta <= practical {
            Stability::PracticallyStable
        } else {
            Stability::Inconclusive
        };
    }
    report
}

/// Writes `j, x…, u…, V_N, distance` rows with 17 significant digits.
/// Control and value columns are empty on the final state.
pub fn write_csv<T: Scalar, W: Write>(
    run: &ClosedLoopRun<T>,
    equilibrium: &[T],
    mut out: W,
) -> io::Result<()> {
    let n_x = run.states.first().map_or(0, Vec::len);
    let n_u = run.applied_controls.first().map_or(0, Vec::len);
    let names = |p: &str, n: usize| -> Vec<String> {
        if n == 1 {
            vec![p.to_string()]
        } else {
            (1..=n).map(|i| format!("{p}{i}")).collect()
        }
    };
    let mut header = vec!["j".to_string()];
    header.extend(names("x", n_x));
    header.extend(names("u", n_u.max(1)));
    header.push("V_N".into());
    header.push("distance".into());
    writeln!(out, "{}", header.join(","))?;

    let fmt = |v: T| format!("{:.16e}", v.to_f64().unwrap_or(f64::NAN));
    for (j, x) in run.states.iter().enumerate() {
        let mut row = vec![j.to_string()];
        row.extend(x.iter().map(|&v| fmt(v)));
        match run.applied_controls.get(j) {
            Some(u) => row.extend(u.iter().map(|&v| fmt(v))),
            None => row.extend(std::iter::repeat_n(String::new(), n_u.max(1))),
        }
        row.push(run.values.get(j).map_or(String::new(), |&v| fmt(v)));
        row.push(fmt(distance(x, equilibrium)));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::{builtin, StateFunction};

    fn quad(a: f64, nu: f64) -> TerminalCost<f64> {
        StateFunction::quadratic_linear(Matrix::scalar(a), vec![nu]).unwrap()
    }

    #[test]
    fn mpc_step_examples() {
        let lq = builtin::scalar_lq::<f64>();
        let cfg = SolverConfig::default();
        let (u, _) = mpc_step(&lq, &TerminalCost::zero(1), 3, &[3.0], None, &cfg).unwrap();
        assert!(u[0].abs() < 1e-12);
        let (u, _) = mpc_step(&lq, &quad(1.0, 0.0), 1, &[1.0], None, &cfg).unwrap();
        assert!((u[0] + 1.0).abs() < 1e-9);
        let cubic = builtin::cubic::<f64>();
        let c = builtin::cubic_constants::<f64>();
        let (u, _) = mpc_step(&cubic, &quad(1.0, -c.nu), 3, &[c.x_star], None, &cfg).unwrap();
        assert!(u[0].abs() < 1e-6);
    }

    #[test]
    fn shift_repeats_last() {
        let s = shift_warm_start(&[vec![1.0], vec![2.0], vec![3.0]]);
        assert_eq!(s, vec![vec![2.0], vec![3.0], vec![3.0]]);
    }

    #[test]
    fn scalar_lq_without_terminal_cost_doubles() {
        let lq = builtin::scalar_lq::<f64>();
        let run = run_closed_loop(&lq, &TerminalCost::zero(1), 3, &[1.0], 6, &Default::default())
            .unwrap();
        let xs: Vec<f64> = run.states.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]);
        assert_eq!(run.consistency_error(&lq), 0.0);
    }

    #[test]
    fn cubic_without_terminal_cost_diverges() {
        let cubic = builtin::cubic::<f64>();
        let run = run_closed_loop(&cubic, &TerminalCost::zero(1), 3, &[0.0], 10, &Default::default())
            .unwrap();
        assert!(run.diverged());
        let c = builtin::cubic_constants::<f64>();
        let r = classify_stability(&run, &[c.x_star], Default::default());
        assert_eq!(r.classification, Stability::Diverged);
        assert!(practical_radius(&run, &[c.x_star], 0.25).is_err());
    }

    #[test]
    fn cubic_caption_terminal_cost_converges() {
        let cubic = builtin::cubic::<f64>();
        let c = builtin::cubic_constants::<f64>();
        let vf = quad(2.0, -2.0 * c.nu);
        let run = run_closed_loop(&cubic, &vf, 3, &[0.0], 20, &Default::default()).unwrap();
        assert!((run.states[20][0] - c.x_star).abs() <= 1e-5, "{:?}", run.states);
    }

    #[test]
    fn early_stop_fills_constant_tail() {
        let lq = builtin::scalar_lq::<f64>();
        let cfg = ClosedLoopConfig {
            target: Some(vec![0.0]),
            ..Default::default()
        };
        let run = run_closed_loop(&lq, &quad(1.0, 0.0), 3, &[0.0], 10, &cfg).unwrap();
        assert_eq!(run.termination, Termination::Settled { step: 3 });
        assert_eq!(run.states.len(), 11);
        assert!(run.diagnostics[9].filled);
        let r = classify_stability(&run, &[0.0], Default::default());
        assert_eq!(r.classification, Stability::AsymptoticallyStable);
        assert_eq!(r.practical_radius, Some(0.0));
    }

    #[test]
    fn radius_uses_ceil_of_tail() {
        let run = ClosedLoopRun {
            horizon: 1,
            states: vec![vec![5.0], vec![3.0], vec![2.0], vec![1.0], vec![0.5]],
            applied_controls: vec![vec![0.0]; 4],
            values: vec![0.0; 4],
            diagnostics: vec![],
            termination: Termination::Completed,
        };
        assert_eq!(practical_radius(&run, &[0.0], 0.25).unwrap(), 0.5);
        assert_eq!(practical_radius(&run, &[0.0], 0.3).unwrap(), 1.0);
        assert!(practical_radius(&run, &[0.0], 1.0).is_err());
        let r = classify_stability(&run, &[0.0], Default::default());
        assert_eq!(r.classification, Stability::Inconclusive);
        assert_eq!(r.time_to_tail, None);
    }

    #[test]
    fn csv_layout() {
        let run = ClosedLoopRun {
            horizon: 1,
            states: vec![vec![1.0], vec![0.5]],
            applied_controls: vec![vec![-1.5]],
            values: vec![2.0],
            diagnostics: vec![],
            termination: Termination::Completed,
        };
        let mut buf = Vec::new();
        write_csv(&run, &[0.0], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "j,x,u,V_N,distance");
        assert_eq!(
            lines[1],
            "0,1.0000000000000000e0,-1.5000000000000000e0,2.0000000000000000e0,1.0000000000000000e0"
        );
        assert_eq!(lines[2], "1,5.0000000000000000e-1,,,5.0000000000000000e-1");
    }
}
