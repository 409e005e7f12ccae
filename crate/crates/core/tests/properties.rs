use proptest::prelude::*;
use rhc_core::dissipativity::{
    certify_pre_dissipativity, check_rotated_equivalence, check_terminal_conditions, fit_alpha,
    linspace, required_supply, rotated_cost, DpConfig, RectGrid, SupplyRate,
};
use rhc_core::linalg::Matrix;
use rhc_core::lq::{check_lq_terminal_semidefinite, scan_lq_storage, verify_lq_storage, LqStorage, ScanBox};
use rhc_core::model::{builtin, StateFunction, SystemModel, TerminalCost};
use rhc_core::mpc::{practical_radius, run_closed_loop, ClosedLoopConfig};
use rhc_core::ocp::{
    brute_force_ocp, ocp_gradient, solve_ocp, solve_ocp_from, InitialGuess, OcpProblem, SolverConfig,
};
use rhc_core::steady_state::{default_starts, solve_sop, Equilibrium};

fn quad(a: f64, lin: f64) -> TerminalCost<f64> {
    StateFunction::quadratic_linear(Matrix::scalar(a), vec![lin]).unwrap()
}

fn cubic_eq() -> Equilibrium<f64> {
    let x = builtin::cubic_constants::<f64>().x_star;
    Equilibrium::from_pair(&builtin::cubic(), vec![x], vec![0.0]).unwrap()
}

fn lq_eq() -> Equilibrium<f64> {
    Equilibrium::new(vec![0.0], vec![0.0], 0.0, 0.0)
}

/// (model, terminal) pairs used across properties.
fn scenario(which: usize) -> (SystemModel<f64>, TerminalCost<f64>) {
    let nu = builtin::cubic_constants::<f64>().nu;
    match which % 4 {
        0 => (builtin::scalar_lq(), TerminalCost::zero(1)),
        1 => (builtin::scalar_lq(), quad(1.0, 0.0)),
        2 => (builtin::cubic(), quad(2.0, 0.0)),
        _ => (builtin::cubic(), quad(1.0, -nu)),
    }
}

fn controls_of(u: &[f64]) -> Vec<Vec<f64>> {
    u.iter().map(|&v| vec![v]).collect()
}

fn cheap() -> ProptestConfig {
    ProptestConfig::with_cases(24)
}

proptest! {
    #[test]
    fn rollout_is_idempotent(which in 0usize..4, x0 in -1.5f64..0.5, u in prop::collection::vec(-1.0f64..1.0, 1..5)) {
        let (m, _) = scenario(which);
        if let Ok(t) = m.rollout(&[x0], &controls_of(&u)) {
            let again = m.rollout(&t.states[0], &t.controls).unwrap();
            prop_assert_eq!(again.states, t.states);
        }
    }

    #[test]
    fn trajectory_cost_is_additive(which in 0usize..4, x0 in -1.5f64..0.5, u in prop::collection::vec(-1.0f64..1.0, 2..5), split in 1usize..4) {
        let (m, vf) = scenario(which);
        let split = split.min(u.len() - 1);
        let Ok(t) = m.rollout(&[x0], &controls_of(&u)) else { return Ok(()) };
        let whole = m.trajectory_cost(&t, &vf).unwrap();
        let head = m.rollout(&[x0], &controls_of(&u[..split])).unwrap();
        let tail = m.rollout(head.terminal_state(), &controls_of(&u[split..])).unwrap();
        let parts = m.trajectory_cost(&head, &TerminalCost::zero(1)).unwrap() + m.trajectory_cost(&tail, &vf).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-12 * (1.0 + whole.abs()));
    }

    #[test]
    fn scalar_lq_zero_controls_double(x0 in -10.0f64..10.0, n in 1usize..20) {
        let t = builtin::scalar_lq::<f64>().rollout(&[x0], &vec![vec![0.0]; n]).unwrap();
        for (k, x) in t.states.iter().enumerate() {
            prop_assert_eq!(x[0], 2f64.powi(k as i32) * x0);
        }
    }

    #[test]
    fn adjoint_gradient_matches_central_differences(which in 0usize..4, x0 in -1.5f64..0.5, u in prop::collection::vec(-1.0f64..1.0, 1..4)) {
        let (m, vf) = scenario(which);
        let controls = controls_of(&u);
        let Ok(t) = m.rollout(&[x0], &controls) else { return Ok(()) };
        let x = [x0];
        let p = OcpProblem::new(&m, &vf, &x, u.len()).unwrap();
        let g: Vec<f64> = ocp_gradient(&p, &controls).unwrap().into_iter().flatten().collect();
        let h = 1e-5;
        let cost = |v: &[f64]| m.trajectory_cost(&m.rollout(&[x0], &controls_of(v)).unwrap(), &vf).unwrap();
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..u.len() {
            let (mut a, mut b) = (u.clone(), u.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (cost(&a) - cost(&b)) / (2.0 * h);
            err += (fd - g[i]).powi(2);
            scale += fd * fd;
        }
        prop_assert!(err.sqrt() <= 1e-5 * scale.sqrt().max(1.0), "{t:?}");
    }
}

proptest! {
    #![proptest_config(cheap())]

    #[test]
    fn solution_value_matches_recomputed_cost(which in 0usize..4, x0 in -1.5f64..1.0, n in 1usize..5) {
        let (m, vf) = scenario(which);
        let x = [x0];
        let p = OcpProblem::new(&m, &vf, &x, n).unwrap();
        let cfg = SolverConfig::default();
        let s = solve_ocp(&p, &cfg).unwrap();
        let again = m.trajectory_cost(&m.rollout(&[x0], &s.trajectory.controls).unwrap(), &vf).unwrap();
        prop_assert!((s.value - again).abs() <= 1e-12 * (1.0 + again.abs()));
        if s.converged {
            prop_assert!(s.gradient_norm <= cfg.line_search.gradient_tolerance * (1.0 + s.value.abs()).max(1.0));
        }
    }

    #[test]
    fn solver_dominates_brute_force(which in 0usize..4, x0 in -1.5f64..1.0, n in 1usize..3) {
        let (m, vf) = scenario(which);
        let x = [x0];
        let p = OcpProblem::new(&m, &vf, &x, n).unwrap();
        let v = solve_ocp(&p, &SolverConfig::default()).unwrap().value;
        let b = brute_force_ocp(&p, -3.0, 3.0, 401).unwrap().value;
        prop_assert!(v <= b + 1e-8, "solver {v} grid {b}");
    }

    #[test]
    fn principle_of_optimality(which in 0usize..4, x0 in -1.5f64..1.0, n in 2usize..5, u in -1.0f64..1.0) {
        let (m, vf) = scenario(which);
        let cfg = SolverConfig::default();
        let x = [x0];
        let v_n = solve_ocp(&OcpProblem::new(&m, &vf, &x, n).unwrap(), &cfg).unwrap().value;
        let next = m.evaluate_dynamics(&x, &[u]).unwrap();
        let v_tail = solve_ocp(&OcpProblem::new(&m, &vf, &next, n - 1).unwrap(), &cfg).unwrap().value;
        let rhs = m.evaluate_stage_cost(&x, &[u]).unwrap() + v_tail;
        prop_assert!(v_n <= rhs + 1e-6, "V_N {v_n} > {rhs}");
    }

    #[test]
    fn closed_loop_transitions_follow_the_dynamics(which in 0usize..4, x0 in -1.0f64..0.5, n in 2usize..5) {
        let (m, vf) = scenario(which);
        let run = run_closed_loop(&m, &vf, n, &[x0], 12, &ClosedLoopConfig::default()).unwrap();
        for (j, u) in run.applied_controls.iter().enumerate() {
            if j + 1 >= run.states.len() {
                break;
            }
            let next = m.evaluate_dynamics(&run.states[j], u).unwrap();
            prop_assert!((next[0] - run.states[j + 1][0]).abs() <= 1e-10 * (1.0 + next[0].abs()));
        }
    }

    #[test]
    fn warm_start_is_not_worse_than_cold(which in 1usize..4, x0 in -1.0f64..0.5, n in 2usize..5) {
        let (m, vf) = scenario(which);
        let run = run_closed_loop(&m, &vf, n, &[x0], 10, &ClosedLoopConfig::default()).unwrap();
        let cold = SolverConfig { initial_guess: InitialGuess::Zero, ..SolverConfig::default() };
        for (j, &v) in run.values.iter().enumerate() {
            if run.diagnostics[j].filled {
                break;
            }
            let p = OcpProblem::new(&m, &vf, &run.states[j], n).unwrap();
            let c = solve_ocp_from(&p, &cold, None).unwrap().value;
            prop_assert!(v <= c + 1e-8 * (1.0 + c.abs()), "step {j}: warm {v} cold {c}");
        }
    }

    #[test]
    fn rotated_cost_telescopes(which in 0usize..4, x0 in -1.5f64..0.5, u in prop::collection::vec(-1.0f64..1.0, 1..6)) {
        let (m, _) = scenario(which);
        let (st, eq) = if which % 4 < 2 { (builtin::scalar_lq_storage(1.0), lq_eq()) } else { (builtin::cubic_storage(), cubic_eq()) };
        let Ok(t) = m.rollout(&[x0], &controls_of(&u)) else { return Ok(()) };
        let n = u.len();
        let lhs: f64 = (0..n).map(|k| rotated_cost(&m, &st, &eq, &t.states[k], &t.controls[k])).sum();
        let stage: f64 = (0..n).map(|k| m.evaluate_stage_cost(&t.states[k], &t.controls[k]).unwrap()).sum();
        let rhs = stage - n as f64 * eq.cost + st.eval(&t.states[0]) - st.eval(&t.states[n]);
        let scale = 1.0 + stage.abs() + st.eval(&t.states[n]).abs();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale);
    }

    #[test]
    fn rotated_problem_is_equivalent(which in 0usize..4, x0 in -1.5f64..1.5, n in 1usize..4) {
        let (m, vf) = scenario(which);
        let (st, eq) = if which % 4 < 2 { (builtin::scalar_lq_storage(1.0), lq_eq()) } else { (builtin::cubic_storage(), cubic_eq()) };
        let r = check_rotated_equivalence(&m, &st, &vf, &eq, &[x0], n, &SolverConfig::default()).unwrap();
        prop_assert!(r.control_deviation <= 1e-6);
        prop_assert!(r.value_offset_residual <= 1e-8);
    }

    #[test]
    fn exact_and_grid_certificates_agree(c in -0.5f64..3.5) {
        let m = builtin::scalar_lq::<f64>();
        let eq = lq_eq();
        let st = builtin::scalar_lq_storage(c);
        let exact = verify_lq_storage(m.lq().unwrap(), &LqStorage::new(Matrix::scalar(-c), vec![0.0]), &eq).unwrap().strict;
        let grid = RectGrid::uniform((-2.0, 2.0, 41), (-5.0, 5.0, 101)).unwrap();
        let sampled = match fit_alpha(&m, &st, &eq, &grid) {
            Ok(fit) => certify_pre_dissipativity(&m, &st, &eq, |r| fit.eval(r), &grid).unwrap().passed,
            Err(_) => false,
        };
        prop_assert_eq!(exact, sampled, "c = {}", c);
    }

    #[test]
    fn required_supply_satisfies_the_dissipation_inequality(which in 0usize..2, x in -1.5f64..1.5, u in -3.0f64..3.0) {
        let (m, st, eq) = if which == 0 {
            (builtin::scalar_lq::<f64>(), builtin::scalar_lq_storage(1.0), lq_eq())
        } else {
            (builtin::cubic::<f64>(), builtin::cubic_storage(), cubic_eq())
        };
        let x = eq.state[0] + x;
        let grid = RectGrid::around(&eq, 2.0, 81, 5.0, 81).unwrap();
        let fit = fit_alpha(&m, &st, &eq, &grid).unwrap();
        let rs = required_supply(&m, &eq, |r| fit.eval(r), &[], &DpConfig::standard(1)).unwrap();
        let next = m.evaluate_dynamics(&[x], &[u]).unwrap();
        let (Some(here), Some(there)) = (rs.eval(&[x]), rs.eval(&next)) else { return Ok(()) };
        let s = SupplyRate { model: &m, equilibrium: &eq, alpha: |r| fit.eval(r) }.eval(&[x], &[u]);
        prop_assert!(here >= there - s - rs.eps_grid, "λ_rs({x}) = {here}, λ_rs(f) = {there}, s = {s}, ε = {}", rs.eps_grid);
    }
}

#[test]
fn cubic_equilibrium_is_a_root() {
    let m = builtin::cubic::<f64>();
    let eq = solve_sop(&m, &default_starts(&m, 8, 42)).unwrap();
    let x = eq.state[0];
    assert!((x * x * x + x + 1.0).abs() <= 1e-9);
    assert!(eq.cost.abs() <= 1e-12);
    let lq = builtin::scalar_lq::<f64>();
    let eq = solve_sop(&lq, &default_starts(&lq, 8, 42)).unwrap();
    assert!(eq.cost.abs() <= 1e-12);
}

#[test]
fn practical_radius_shrinks_with_horizon() {
    let m = builtin::cubic::<f64>();
    let eq = cubic_eq();
    let radii: Vec<f64> = (3..=6)
        .map(|n| {
            let run = run_closed_loop(&m, &quad(2.0, 0.0), n, &[0.0], 30, &ClosedLoopConfig::default()).unwrap();
            practical_radius(&run, &eq.state, 0.25).unwrap()
        })
        .collect();
    for w in radii.windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "{radii:?}");
    }
}

#[test]
fn scanned_lq_candidates_pass_the_grid_certificate() {
    let m = builtin::scalar_lq::<f64>();
    let eq = lq_eq();
    let scan = scan_lq_storage(m.lq().unwrap(), &eq, &ScanBox { lambda_range: (-4.0, 1.0), v_range: (0.0, 0.0) }, 0.1).unwrap();
    assert!(!scan.is_empty());
    let grid = RectGrid::uniform((-2.0, 2.0, 41), (-5.0, 5.0, 101)).unwrap();
    for cand in &scan {
        let st = cand.storage.to_storage().unwrap();
        let fit = fit_alpha(&m, &st, &eq, &grid).unwrap();
        let cert = certify_pre_dissipativity(&m, &st, &eq, |r| fit.eval(r), &grid).unwrap();
        assert!(cert.passed && cand.verdict.strict, "Λ = {:?}", cand.storage.lambda);
    }
}

#[test]
fn lq_terminal_semidefinite_implies_grid_semidefinite() {
    let eq = lq_eq();
    let states: Vec<Vec<f64>> = linspace(-5.0, 5.0, 101).into_iter().map(|x| vec![x]).collect();
    for c in linspace(0.0, 3.0, 31) {
        for a in [0.1, 0.5, 1.0, 2.0, 3.0] {
            let st = LqStorage::new(Matrix::scalar(-c), vec![0.0]);
            if check_lq_terminal_semidefinite(&st, &Matrix::scalar(a), &[0.0], &eq.state) {
                let t = check_terminal_conditions(&st.to_storage().unwrap(), &quad(a, 0.0), &eq, &states).unwrap();
                assert!(t.semidefinite_at_eq, "c = {c}, a = {a}");
            }
        }
    }
}

#[test]
fn every_positive_terminal_weight_has_a_matching_storage() {
    let m = builtin::scalar_lq::<f64>();
    let eq = lq_eq();
    let scan = scan_lq_storage(m.lq().unwrap(), &eq, &ScanBox { lambda_range: (-4.0, 1.0), v_range: (0.0, 0.0) }, 0.05).unwrap();
    for a in [0.1, 0.5, 1.0, 2.0] {
        let found = scan.iter().any(|cand| {
            let c = -cand.storage.lambda[(0, 0)];
            c > 0.0 && c < f64::min(a, 3.0) && check_lq_terminal_semidefinite(&cand.storage, &Matrix::scalar(a), &[0.0], &eq.state)
        });
        assert!(found, "a = {a}");
    }
}
