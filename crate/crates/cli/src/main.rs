use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use rhc_cli::reproduce::Target;
use rhc_cli::run::{self, Report, Selection};
use rhc_cli::{exit, ConfigError, LoadedScenario, Overrides};

#[derive(Parser)]
#[command(name = "rhc", version, about = "Receding-horizon control experiments")]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Flags {
    /// Seed for randomized solver starts (default 42).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Closed-loop steps J.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Horizons, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    horizon: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop runs plus the analyses enabled in the scenario.
    Simulate { config: PathBuf },
    /// Steady-state optimization from the default starts.
    Sop { config: PathBuf },
    /// Dissipativity analyses around the optimal equilibrium.
    Dissipativity {
        #[command(subcommand)]
        action: DissipativityAction,
    },
    /// Exact storage verdict and terminal-cost conditions for LQ models.
    LqCheck { config: PathBuf },
    /// Runs a pinned scenario.
    Reproduce {
        #[arg(value_enum)]
        target: Target,
    },
}

#[derive(Subcommand)]
enum DissipativityAction {
    /// Fits α and certifies strict pre-dissipativity on the grid.
    Certify { config: PathBuf },
    /// Required supply by dynamic programming, compared with the storage.
    RequiredSupply { config: PathBuf },
    /// Estimates κ in the value bound.
    ValueBound { config: PathBuf },
}

enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<ConfigError>() {
            Ok(c) => Self::Config(c),
            Err(e) => Self::Runtime(e),
        }
    }
}

fn overrides(f: &Flags) -> Overrides {
    Overrides {
        seed: f.seed,
        out: f.out.clone(),
        steps: f.steps,
        horizons: f.horizon.clone(),
    }
}

/// Loads a scenario, forcing on the analyses a subcommand needs so that
/// validation reports what is missing.
fn load(path: &Path, flags: &Flags, force: impl FnOnce(&mut LoadedScenario)) -> Result<LoadedScenario, ConfigError> {
    let mut sc = LoadedScenario::from_file(path)?;
    force(&mut sc);
    sc.apply(&overrides(flags))?;
    Ok(sc)
}

fn only(sel: impl FnOnce(&mut Selection)) -> Selection {
    let mut s = Selection::default();
    sel(&mut s);
    s
}

fn announce(report: &Report, sc: &LoadedScenario) {
    for (k, ok) in &report.checks {
        if !ok {
            eprintln!("{}: check failed: {k}", sc.scenario.name);
        }
    }
    println!(
        "{}: {} ({})",
        sc.scenario.name,
        if report.passed() { "pass" } else { "fail" },
        sc.out_dir().join("summary.txt").display()
    );
}

fn execute(cli: &Cli) -> Result<bool, Failure> {
    let flags = &cli.flags;
    let scenario_run = |sc: LoadedScenario, sel: Selection| -> Result<bool, Failure> {
        let report = run::run_scenario(&sc, sel)?;
        announce(&report, &sc);
        Ok(report.passed())
    };
    match &cli.command {
        Command::Simulate { config } => {
            let sc = load(config, flags, |_| {})?;
            let sel = Selection::from_scenario(&sc);
            scenario_run(sc, sel)
        }
        Command::Sop { config } => {
            let sc = load(config, flags, |_| {})?;
            let setup = sc.setup()?;
            let mut report = Report::default();
            report.put("scenario", &sc.scenario.name);
            report.put("model", sc.scenario.model.kind());
            report.put("seed", sc.seed());
            report.extend(run::sop(&setup, sc.seed())?);
            report.write(&sc.out_dir())?;
            announce(&report, &sc);
            Ok(report.passed())
        }
        Command::Dissipativity { action } => match action {
            DissipativityAction::Certify { config } => {
                let sc = load(config, flags, |s| s.scenario.analyses.dissipativity = true)?;
                scenario_run(sc, only(|s| s.certify = true))
            }
            DissipativityAction::RequiredSupply { config } => {
                let sc = load(config, flags, |s| s.scenario.analyses.required_supply = true)?;
                scenario_run(sc, only(|s| s.required_supply = true))
            }
            DissipativityAction::ValueBound { config } => {
                let sc = load(config, flags, |s| s.scenario.analyses.value_bound = true)?;
                scenario_run(sc, only(|s| s.value_bound = true))
            }
        },
        Command::LqCheck { config } => {
            let sc = load(config, flags, |s| s.scenario.analyses.lq_check = true)?;
            scenario_run(sc, only(|s| s.lq_check = true))
        }
        Command::Reproduce { target } => {
            let mut all = true;
            for sc in target.scenarios(&overrides(flags))? {
                let sel = Selection::from_scenario(&sc);
                all &= scenario_run(sc, sel)?;
            }
            Ok(all)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::from(exit::OK),
        Ok(false) => ExitCode::from(exit::CHECK_FAILED),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit::CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::RUNTIME)
        }
    }
}
