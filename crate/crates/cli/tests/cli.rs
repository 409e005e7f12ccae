use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rhc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rhc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn summary(path: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn every_reproduce_target_passes() {
    let tmp = tempfile::tempdir().unwrap();
    for t in ["fig1", "fig2", "fig3", "example1"] {
        let out = tmp.path().join(t);
        let o = rhc(&["reproduce", t, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{t}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let fig1 = summary(&tmp.path().join("fig1/cubic_zero_terminal/summary.txt"));
    assert_eq!(fig1["run.N3.x0.classification"], "diverged");
    assert_eq!(fig1["seed"], "42");

    let fig2 = summary(&tmp.path().join("fig2/cubic_quadratic_terminal/summary.txt"));
    let r3: f64 = fig2["run.N3.x0.radius"].parse().unwrap();
    let r5: f64 = fig2["run.N5.x0.radius"].parse().unwrap();
    assert!(r5 < r3);
    assert_eq!(fig2["check.radius_decreasing.x0"], "pass");

    let text = summary(&tmp.path().join("fig3/cubic_negated_storage/summary.txt"));
    assert_eq!(text["run.N3.x0.classification"], "asymptotically_stable");
    assert_eq!(text["required_supply.at_equilibrium"], "0.0000000000000000e0");
    let caption = summary(&tmp.path().join("fig3/cubic_negated_storage_x2/summary.txt"));
    assert!(caption.contains_key("run.N3.x0.classification"));

    let unstable = tmp.path().join("example1/lq_zero_terminal");
    for n in [2, 3, 5, 8] {
        assert!(unstable.join(format!("lq_zero_terminal_{n}.csv")).exists());
    }
}

#[test]
fn reproduction_is_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = rhc(&["reproduce", "fig2", "--out", d.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() >= 4);
    assert_eq!(fa, fb);
}

#[test]
fn csv_has_header_and_full_precision() {
    let tmp = tempfile::tempdir().unwrap();
    rhc(&["reproduce", "example1", "--out", tmp.path().to_str().unwrap()]);
    let csv = fs::read_to_string(tmp.path().join("lq_zero_terminal/lq_zero_terminal_2.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "j,x,u,V_N,distance");
    for (j, line) in lines.take(11).enumerate() {
        let x: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((x - 2f64.powi(j as i32)).abs() <= 1e-8, "j={j} x={x}");
    }
}

const LQ: &str = r#"name = "lq"
horizons = [3]
initial_states = [[1.0]]
steps = 20

[model]
kind = "scalar_lq"

[terminal]
kind = "quadratic_linear"
matrix = [[1.0]]

[storage]
kind = "scalar_lq"
c = 1.0
"#;

#[test]
fn simulate_with_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lq.toml", LQ);
    let out = tmp.path().join("o");
    let o = rhc(&[
        "simulate",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--horizon",
        "2,4",
        "--steps",
        "12",
        "--seed",
        "7",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out.join("summary.txt"));
    assert_eq!(s["seed"], "7");
    assert_eq!(s["steps"], "12");
    assert_eq!(s["horizons"], "2,4");
    let csv = fs::read_to_string(out.join("lq_4.csv")).unwrap();
    assert_eq!(csv.lines().count(), 14);
    assert!(out.join("lq_2.csv").exists());
}

#[test]
fn syntax_error_reports_line_and_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "name = \"x\"\n[model]\nkind = \"cubic\"\nbogus = 1\n");
    let o = rhc(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml:4:"), "{err}");
}

#[test]
fn semantic_error_reports_line_and_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let body = LQ.replace("matrix = [[1.0]]", "matrix = [[1.0, 0.0]]");
    let cfg = write_config(tmp.path(), "dims.toml", &body);
    let o = rhc(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dims.toml:11:"), "{err}");
}

#[test]
fn subcommand_requirements_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cubic.toml", "name = \"c\"\n[model]\nkind = \"cubic\"\n");
    let path = cfg.to_str().unwrap();
    assert_eq!(code(&rhc(&["dissipativity", "certify", path])), 2);
    assert_eq!(code(&rhc(&["lq-check", path])), 2);
    assert_eq!(code(&rhc(&["simulate", "/nonexistent/x.toml"])), 2);
}

#[test]
fn sop_reports_cubic_equilibrium() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cfg = write_config(tmp.path(), "cubic.toml", "name = \"c\"\n[model]\nkind = \"cubic\"\n");
    let o = rhc(&["sop", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let s = summary(&out.join("summary.txt"));
    let x: f64 = s["equilibrium.state"].parse().unwrap();
    assert!((x + 0.6823278038280194).abs() < 1e-6);
    assert!(s.contains_key("candidate.0.state"));
}

#[test]
fn lq_check_verdicts_drive_exit_status() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write_config(tmp.path(), "good.toml", LQ);
    let bad = write_config(tmp.path(), "bad.toml", &LQ.replace("c = 1.0", "c = 3.0"));
    let out = tmp.path().join("o");
    let o = rhc(&["lq-check", good.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let s = summary(&out.join("summary.txt"));
    assert_eq!(s["lq.strict"], "true");
    let lo: f64 = s["lq.scan.lambda_min"].parse().unwrap();
    let hi: f64 = s["lq.scan.lambda_max"].parse().unwrap();
    assert!(lo > -3.0 && lo <= -2.9 && (-0.1..0.0).contains(&hi));

    let o = rhc(&["lq-check", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert_eq!(summary(&out.join("summary.txt"))["check.lq.strict"], "fail");
}

#[test]
fn dissipativity_subcommands_write_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lq.toml", LQ);
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    for sub in ["certify", "required-supply", "value-bound"] {
        let r = rhc(&["dissipativity", sub, cfg.to_str().unwrap(), "--out", o]);
        assert_eq!(code(&r), 0, "{sub}: {}", String::from_utf8_lossy(&r.stderr));
    }
    for f in ["lq_certificate.csv", "lq_required_supply.csv", "lq_value_bound.csv"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert!(text.lines().count() > 10, "{f}");
    }
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lq.toml", LQ);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = rhc(&["simulate", cfg.to_str().unwrap(), "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}
