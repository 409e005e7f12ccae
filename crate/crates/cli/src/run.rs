//! Scenario execution: closed-loop runs, analyses, CSV files and the
//! key-value summary.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use rhc_core::dissipativity::{
    certify_pre_dissipativity, check_terminal_conditions, check_value_bound, fit_alpha,
    required_supply, rotated_cost, KFunctionFit,
};
use rhc_core::linalg::Matrix;
use rhc_core::lq::{
    check_lq_terminal_bounded, check_lq_terminal_semidefinite, scan_lq_storage, verify_lq_storage,
    LqStorage,
};
use rhc_core::mpc::{classify_stability, run_closed_loop, write_csv, Stability, Termination};
use rhc_core::steady_state::{default_starts, solve_sop_all, Equilibrium};

use crate::scenario::{LoadedScenario, Setup};

const SOP_STARTS: usize = 8;

/// Ordered key-value summary plus named pass/fail checks.
#[derive(Debug, Default, Clone)]
pub struct Report {
    pub entries: Vec<(String, String)>,
    pub checks: Vec<(String, bool)>,
}

impl Report {
    pub fn put(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.checks.push((name.into(), ok));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.1)
    }

    pub fn extend(&mut self, other: Report) {
        self.entries.extend(other.entries);
        self.checks.extend(other.checks);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(&format!("{k}={v}\n"));
        }
        for (k, ok) in &self.checks {
            s.push_str(&format!("check.{k}={}\n", if *ok { "pass" } else { "fail" }));
        }
        s.push_str(&format!("status={}\n", if self.passed() { "pass" } else { "fail" }));
        s
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("summary.txt");
        fs::write(&path, self.render()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn vec_str(v: &[f64]) -> String {
    v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(";")
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// The configured equilibrium, else the SOP solution from the default
/// starts seeded by the scenario seed.
pub fn equilibrium(sc: &LoadedScenario, setup: &Setup, report: &mut Report) -> Result<Equilibrium<f64>> {
    if let Some(eq) = &setup.equilibrium {
        report.put("equilibrium.source", "config");
        put_equilibrium(report, eq);
        return Ok(eq.clone());
    }
    let starts = default_starts(&setup.model, SOP_STARTS, sc.seed());
    let sop = solve_sop_all(&setup.model, &starts).context("steady-state optimization")?;
    report.put("equilibrium.source", "sop");
    report.put("equilibrium.starts", starts.len());
    report.put(
        "equilibrium.feasible_candidates",
        sop.candidates.iter().filter(|c| c.feasible).count(),
    );
    put_equilibrium(report, &sop.best);
    Ok(sop.best)
}

fn put_equilibrium(report: &mut Report, eq: &Equilibrium<f64>) {
    report.put("equilibrium.state", vec_str(&eq.state));
    report.put("equilibrium.control", vec_str(&eq.control));
    report.put("equilibrium.cost", num(eq.cost));
    report.put("equilibrium.residual", num(eq.residual));
}

struct RunOutcome {
    horizon: usize,
    index: usize,
    x0: Vec<f64>,
    csv: PathBuf,
    classification: Stability,
    radius: Option<f64>,
    termination: Termination,
    states: Vec<Vec<f64>>,
}

fn termination_str(t: &Termination) -> String {
    match t {
        Termination::Completed => "completed".into(),
        Termination::Settled { step } => format!("settled@{step}"),
        Termination::Diverged { step } => format!("diverged@{step}"),
        Termination::Failed { step, message } => format!("failed@{step}:{message}"),
    }
}

/// All (horizon, initial state) closed-loop runs, in parallel, with one CSV
/// each and the configured expectations as checks.
pub fn simulate(sc: &LoadedScenario, setup: &Setup, eq: &Equilibrium<f64>, dir: &Path) -> Result<Report> {
    let s = &sc.scenario;
    let mut report = Report::default();
    let x0s: Vec<Vec<f64>> = if s.initial_states.is_empty() {
        vec![vec![0.0; setup.model.n_x()]]
    } else {
        s.initial_states.clone()
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let jobs: Vec<(usize, usize)> = s
        .horizons
        .iter()
        .flat_map(|&n| (0..x0s.len()).map(move |i| (n, i)))
        .collect();
    let mut cfg = sc.closed_loop_config();
    cfg.target = Some(eq.state.clone());
    let thresholds = sc.thresholds();
    let outcomes: Vec<Result<RunOutcome>> = jobs
        .par_iter()
        .map(|&(n, i)| {
            let run = run_closed_loop(&setup.model, &setup.terminal, n, &x0s[i], s.steps, &cfg)
                .with_context(|| format!("closed loop N={n}, x0={:?}", x0s[i]))?;
            let csv = if x0s.len() == 1 {
                dir.join(format!("{}_{n}.csv", s.name))
            } else {
                dir.join(format!("{}_{n}_{i}.csv", s.name))
            };
            let mut w = create(&csv)?;
            write_csv(&run, &eq.state, &mut w)?;
            w.flush()?;
            let rep = classify_stability(&run, &eq.state, thresholds);
            Ok(RunOutcome {
                horizon: n,
                index: i,
                x0: x0s[i].clone(),
                csv,
                classification: rep.classification,
                radius: rep.practical_radius,
                termination: run.termination.clone(),
                states: run.states,
            })
        })
        .collect();

    let mut runs = Vec::new();
    for o in outcomes {
        runs.push(o?);
    }
    report.put("runs", runs.len());
    report.put("steps", s.steps);
    for r in &runs {
        let key = format!("run.N{}.x{}", r.horizon, r.index);
        report.put(format!("{key}.x0"), vec_str(&r.x0));
        report.put(format!("{key}.classification"), r.classification);
        report.put(
            format!("{key}.radius"),
            r.radius.map_or_else(|| "none".to_string(), num),
        );
        report.put(format!("{key}.termination"), termination_str(&r.termination));
        report.put(format!("{key}.csv"), r.csv.file_name().unwrap().to_string_lossy());
    }

    let e = &s.expect;
    if let Some(c) = &e.classification {
        for r in &runs {
            report.check(
                format!("run.N{}.x{}.classification", r.horizon, r.index),
                r.classification.as_str() == c,
            );
        }
    }
    if let Some(max) = e.max_radius {
        for r in &runs {
            report.check(
                format!("run.N{}.x{}.radius", r.horizon, r.index),
                r.radius.is_some_and(|d| d <= max),
            );
        }
    }
    if let Some(limit) = e.diverged_within {
        for r in &runs {
            let ok = matches!(r.termination, Termination::Diverged { step } if step <= limit);
            report.check(format!("run.N{}.x{}.diverged_within", r.horizon, r.index), ok);
        }
    }
    if e.doubling {
        for r in &runs {
            let ok = r.states.len() > 10
                && r.states.iter().take(11).enumerate().all(|(j, x)| {
                    x.iter()
                        .zip(&r.x0)
                        .all(|(&v, &v0)| (v - 2f64.powi(j as i32) * v0).abs() <= 1e-8)
                });
            report.check(format!("run.N{}.x{}.doubling", r.horizon, r.index), ok);
        }
    }
    if e.radius_decreasing {
        for i in 0..x0s.len() {
            let mut rs: Vec<(usize, Option<f64>)> = runs
                .iter()
                .filter(|r| r.index == i)
                .map(|r| (r.horizon, r.radius))
                .collect();
            rs.sort_by_key(|r| r.0);
            let ok = rs.windows(2).all(|w| match (w[0].1, w[1].1) {
                (Some(a), Some(b)) => b < a,
                _ => false,
            }) && rs.len() >= 2;
            report.check(format!("radius_decreasing.x{i}"), ok);
        }
    }
    Ok(report)
}

pub fn sop(setup: &Setup, seed: u64) -> Result<Report> {
    let mut report = Report::default();
    let starts = default_starts(&setup.model, SOP_STARTS, seed);
    match solve_sop_all(&setup.model, &starts) {
        Ok(res) => {
            put_equilibrium(&mut report, &res.best);
            for c in &res.candidates {
                let key = format!("candidate.{}", c.start_index);
                report.put(format!("{key}.state"), vec_str(&c.equilibrium.state));
                report.put(format!("{key}.control"), vec_str(&c.equilibrium.control));
                report.put(format!("{key}.cost"), num(c.equilibrium.cost));
                report.put(format!("{key}.feasible"), c.feasible);
            }
            report.check("sop.feasible", true);
        }
        Err(e) => {
            report.put("sop.error", e);
            report.check("sop.feasible", false);
        }
    }
    Ok(report)
}

fn storage(setup: &Setup) -> &rhc_core::StorageFunction {
    setup.storage.as_ref().expect("validated: analyses need a storage")
}

/// Fits α on the scenario grid, then certifies `L ≥ α(‖x − x̄⋆‖)` on it.
/// Writes `<name>_certificate.csv` with the per-state minimum over controls.
pub fn certify(sc: &LoadedScenario, setup: &Setup, eq: &Equilibrium<f64>, dir: &Path) -> Result<(Report, Option<KFunctionFit<f64>>)> {
    let mut report = Report::default();
    let st = storage(setup);
    let grid = sc.grid(eq).context("building the sample grid")?;
    report.put("dissipativity.grid", grid.describe());
    let fit = match fit_alpha(&setup.model, st, eq, &grid) {
        Ok(f) => f,
        Err(e) => {
            report.put("dissipativity.alpha_fit", e);
            report.check("dissipativity.certified", false);
            return Ok((report, None));
        }
    };
    report.put("dissipativity.alpha_fit", "ok");
    let cert = certify_pre_dissipativity(&setup.model, st, eq, |r| fit.eval(r), &grid)?;
    report.put("dissipativity.margin", num(cert.margin));
    report.put("dissipativity.witness.x", vec_str(&cert.witness.0));
    report.put("dissipativity.witness.u", vec_str(&cert.witness.1));
    report.put("dissipativity.points", cert.points);
    if let Some(ex) = &cert.exact {
        report.put("dissipativity.exact.strict", ex.strict);
        report.put("dissipativity.exact.schur_min", num(ex.schur_min_eigenvalue));
    }
    report.check("dissipativity.certified", cert.passed);

    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}_certificate.csv", sc.scenario.name));
    let mut w = create(&path)?;
    writeln!(w, "x,u_min,L_min,alpha,margin")?;
    let controls = grid.controls();
    let rows: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = grid
        .states()
        .par_iter()
        .map(|x| {
            let (u, l) = controls
                .iter()
                .map(|u| (u, rotated_cost(&setup.model, st, eq, x, u)))
                .fold((&controls[0], f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            let r = x.iter().zip(&eq.state).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            (x.clone(), u.clone(), l, fit.eval(r))
        })
        .collect();
    for (x, u, l, a) in rows {
        writeln!(w, "{},{},{},{},{}", vec_str(&x), vec_str(&u), num(l), num(a), num(l - a))?;
    }
    w.flush()?;
    report.put("dissipativity.csv", path.file_name().unwrap().to_string_lossy());
    Ok((report, Some(fit)))
}

/// λ_rs on the targets, compared against the configured storage.
pub fn supply(sc: &LoadedScenario, setup: &Setup, eq: &Equilibrium<f64>, dir: &Path) -> Result<Report> {
    let (mut report, fit) = certify(sc, setup, eq, dir)?;
    let Some(fit) = fit else {
        report.check("required_supply.dominates_storage", false);
        return Ok(report);
    };
    let st = storage(setup);
    let mut targets: Vec<Vec<f64>> = match &sc.scenario.dp.targets {
        Some(r) => r.states(),
        None => sc.grid(eq)?.states(),
    };
    targets.push(eq.state.clone());
    let rs = required_supply(&setup.model, eq, |r| fit.eval(r), &targets, &sc.dp_config(setup.model.n_u()))?;
    let at_eq = rs.values.last().copied().flatten();
    targets.pop();
    report.put("required_supply.eps_grid", num(rs.eps_grid));
    report.put("required_supply.lipschitz", num(rs.lipschitz));
    report.put("required_supply.spacing", num(rs.spacing));
    report.put("required_supply.at_equilibrium", at_eq.map_or_else(|| "unreachable".into(), num));

    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}_required_supply.csv", sc.scenario.name));
    let mut w = create(&path)?;
    writeln!(w, "x,lambda_rs,storage_shifted,gap,steps")?;
    let lam_eq = st.eval(&eq.state);
    let mut worst = f64::INFINITY;
    let mut unreachable = 0;
    for (i, x) in targets.iter().enumerate() {
        let shifted = st.eval(x) - lam_eq;
        match rs.values[i] {
            Some(v) => {
                worst = worst.min(v - shifted);
                writeln!(w, "{},{},{},{},{}", vec_str(x), num(v), num(shifted), num(v - shifted), rs.steps[i].unwrap_or(0))?;
            }
            None => {
                unreachable += 1;
                writeln!(w, "{},,{},,", vec_str(x), num(shifted))?;
            }
        }
    }
    w.flush()?;
    report.put("required_supply.unreachable", unreachable);
    report.put("required_supply.min_gap", num(worst));
    report.put("required_supply.csv", path.file_name().unwrap().to_string_lossy());
    report.check("required_supply.zero_at_equilibrium", at_eq == Some(0.0));
    report.check("required_supply.dominates_storage", worst >= -rs.eps_grid);
    Ok(report)
}

pub fn value_bound(sc: &LoadedScenario, setup: &Setup, eq: &Equilibrium<f64>, dir: &Path) -> Result<Report> {
    let mut report = Report::default();
    let vb_spec = &sc.scenario.value_bound;
    let states = vb_spec.states.states();
    let lo = vec![vb_spec.control_lower; setup.model.n_u()];
    let hi = vec![vb_spec.control_upper; setup.model.n_u()];
    let vb = check_value_bound(
        &setup.model,
        storage(setup),
        &setup.terminal,
        eq,
        &states,
        &vb_spec.horizons,
        (&lo, &hi),
        &sc.solver_config(),
    )?;
    report.put("value_bound.feasible", vb.feasible);
    report.put("value_bound.kappa", vb.kappa.map_or_else(|| "none".into(), num));
    report.put("value_bound.samples", vb.samples.len());
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}_value_bound.csv", sc.scenario.name));
    let mut w = create(&path)?;
    writeln!(w, "x,N,lhs,inf_L,ratio")?;
    for s in &vb.samples {
        let ratio = if s.inf_rotated > 0.0 { num(s.lhs / s.inf_rotated) } else { String::new() };
        writeln!(w, "{},{},{},{},{}", vec_str(&s.state), s.horizon, num(s.lhs), num(s.inf_rotated), ratio)?;
    }
    w.flush()?;
    report.put("value_bound.csv", path.file_name().unwrap().to_string_lossy());
    report.check("value_bound.finite_kappa", vb.kappa.is_some_and(f64::is_finite));
    Ok(report)
}

/// Reported only; the semidefinite and boundedness flags are not checks.
pub fn terminal_conditions(sc: &LoadedScenario, setup: &Setup, eq: &Equilibrium<f64>) -> Result<Report> {
    let mut report = Report::default();
    let states = sc.grid(eq)?.states();
    let t = check_terminal_conditions(storage(setup), &setup.terminal, eq, &states)?;
    report.put("terminal.semidefinite_at_eq", t.semidefinite_at_eq);
    report.put("terminal.bounded_below", t.bounded_below);
    report.put("terminal.bounded_below_exact", t.exact);
    report.put("terminal.inf_estimate", num(t.inf_estimate));
    Ok(report)
}

/// Exact storage verdict, terminal-cost matrix conditions and a storage scan.
pub fn lq_check(sc: &LoadedScenario, setup: &Setup, eq: &Equilibrium<f64>) -> Result<Report> {
    let mut report = Report::default();
    let lq = setup.lq.as_ref().expect("validated: lq_check needs an LQ model");
    let Some(st) = LqStorage::from_storage(storage(setup)) else {
        report.put("lq.error", "storage is not quadratic");
        report.check("lq.strict", false);
        return Ok(report);
    };
    let verdict = verify_lq_storage(lq, &st, eq)?;
    report.put("lq.strict", verdict.strict);
    report.put("lq.schur_min", num(verdict.schur_min_eigenvalue));
    report.put("lq.hessian_min", num(verdict.hessian_spectrum[0]));
    report.put("lq.value_at_equilibrium", num(verdict.value_at_equilibrium));
    if let Some(q) = setup.terminal.quadratic() {
        report.put(
            "lq.terminal_semidefinite",
            check_lq_terminal_semidefinite(&st, &q.matrix, &q.linear, &eq.state),
        );
        report.put("lq.terminal_bounded", check_lq_terminal_bounded(&st, &q.matrix));
    }
    let scan = scan_lq_storage(lq, eq, &sc.scan_box(), sc.scenario.lq.resolution)?;
    report.put("lq.scan.candidates", scan.len());
    if let Some(best) = scan.first() {
        report.put("lq.scan.best.lambda", matrix_str(&best.storage.lambda));
        report.put("lq.scan.best.v", vec_str(&best.storage.v));
        report.put("lq.scan.best.schur_min", num(best.verdict.schur_min_eigenvalue));
    }
    if lq.n_x() == 1 && !scan.is_empty() {
        let diag: Vec<f64> = scan.iter().map(|c| c.storage.lambda[(0, 0)]).collect();
        let lo = diag.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        report.put("lq.scan.lambda_min", num(lo));
        report.put("lq.scan.lambda_max", num(hi));
    }
    report.check("lq.strict", verdict.strict);
    Ok(report)
}

fn matrix_str(m: &Matrix<f64>) -> String {
    m.to_rows().iter().map(|r| vec_str(r)).collect::<Vec<_>>().join("|")
}

/// Which analyses `run_scenario` performs beyond the closed loop.
#[derive(Debug, Clone, Copy, Default)]
pub struct Selection {
    pub simulate: bool,
    pub certify: bool,
    pub required_supply: bool,
    pub value_bound: bool,
    pub terminal_conditions: bool,
    pub lq_check: bool,
}

impl Selection {
    /// Closed loop plus the analyses toggled in the scenario.
    pub fn from_scenario(sc: &LoadedScenario) -> Self {
        let a = &sc.scenario.analyses;
        Self {
            simulate: true,
            certify: a.dissipativity && !a.required_supply,
            required_supply: a.required_supply,
            value_bound: a.value_bound,
            terminal_conditions: a.terminal_conditions,
            lq_check: a.lq_check,
        }
    }
}

/// Runs the selection, writes `summary.txt` and returns the report. Errors
/// after the output directory exists still leave the files written so far.
pub fn run_scenario(sc: &LoadedScenario, sel: Selection) -> Result<Report> {
    let setup = sc.setup()?;
    let dir = sc.out_dir();
    let mut report = Report::default();
    report.put("scenario", &sc.scenario.name);
    report.put("model", sc.scenario.model.kind());
    report.put("seed", sc.seed());
    report.put("horizons", sc.scenario.horizons.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
    let result = (|| -> Result<()> {
        let eq = equilibrium(sc, &setup, &mut report)?;
        if sel.simulate {
            report.extend(simulate(sc, &setup, &eq, &dir)?);
        }
        if sel.certify {
            report.extend(certify(sc, &setup, &eq, &dir)?.0);
        }
        if sel.required_supply {
            report.extend(supply(sc, &setup, &eq, &dir)?);
        }
        if sel.value_bound {
            report.extend(value_bound(sc, &setup, &eq, &dir)?);
        }
        if sel.terminal_conditions {
            report.extend(terminal_conditions(sc, &setup, &eq)?);
        }
        if sel.lq_check {
            report.extend(lq_check(sc, &setup, &eq)?);
        }
        Ok(())
    })();
    if let Err(e) = &result {
        report.put("error", format!("{e:#}"));
        report.check("completed", false);
    }
    report.write(&dir)?;
    result.map(|()| report)
}
