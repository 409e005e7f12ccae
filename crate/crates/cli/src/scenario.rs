//! Scenario files: TOML describing a model, its terminal cost and storage,
//! the closed-loop runs and the analyses to perform.
//!
//! ```toml
//! name = "cubic_quadratic_terminal"
//! horizons = [3, 5]
//! initial_states = [[0.0]]
//! steps = 30
//!
//! [model]
//! kind = "cubic"
//!
//! [terminal]
//! kind = "quadratic_linear"
//! matrix = [[2.0]]
//!
//! [storage]
//! kind = "cubic"
//!
//! [analyses]
//! dissipativity = true
//!
//! [expect]
//! classification = "practically_stable"
//! radius_decreasing = true
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use rhc_core::dissipativity::{linspace, DpConfig, RectGrid};
use rhc_core::linalg::Matrix;
use rhc_core::lq::{LqProblem, ScanBox};
use rhc_core::model::config::ModelConfig;
use rhc_core::model::{builtin, StateFunction, StorageFunction, SystemModel, TerminalCost};
use rhc_core::mpc::{ClosedLoopConfig, StabilityThresholds};
use rhc_core::ocp::SolverConfig;
use rhc_core::steady_state::Equilibrium;
use serde::Deserialize;

/// A configuration problem, with the source line when it can be located.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub file: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.file, l, self.message),
            None => write!(f, "{}: {}", self.file, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum TerminalSpec {
    #[default]
    Zero,
    QuadraticLinear {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        linear: Option<Vec<f64>>,
    },
    /// `V_f = −scale · λ`, so that `V_f + λ` vanishes for `scale = 1`.
    NegatedStorage {
        #[serde(default = "one")]
        scale: f64,
    },
}


#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StorageSpec {
    /// `−x² + νx`
    Cubic,
    /// `−c x²`
    ScalarLq { c: f64 },
    QuadraticLinear {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        linear: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumSpec {
    pub state: Vec<f64>,
    pub control: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Analyses {
    #[serde(default)]
    pub dissipativity: bool,
    #[serde(default)]
    pub required_supply: bool,
    #[serde(default)]
    pub value_bound: bool,
    #[serde(default)]
    pub terminal_conditions: bool,
    #[serde(default)]
    pub lq_check: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "default_multi_start")]
    pub multi_start: usize,
    #[serde(default = "default_perturbation")]
    pub perturbation_scale: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_gradient_tolerance")]
    pub gradient_tolerance: f64,
    #[serde(default = "default_penalty")]
    pub penalty_weight: f64,
    #[serde(default = "yes")]
    pub warm_start: bool,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            multi_start: default_multi_start(),
            perturbation_scale: default_perturbation(),
            max_iterations: default_max_iterations(),
            gradient_tolerance: default_gradient_tolerance(),
            penalty_weight: default_penalty(),
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySpec {
    #[serde(default = "default_asymptotic")]
    pub asymptotic_tolerance: f64,
    #[serde(default = "default_practical")]
    pub practical_tolerance: f64,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
}

impl Default for StabilitySpec {
    fn default() -> Self {
        Self {
            asymptotic_tolerance: default_asymptotic(),
            practical_tolerance: default_practical(),
            tail_fraction: default_tail(),
        }
    }
}

/// Sample grid centered on the equilibrium.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "two")]
    pub state_half_width: f64,
    #[serde(default = "default_nodes")]
    pub state_nodes: usize,
    #[serde(default = "five")]
    pub control_half_width: f64,
    #[serde(default = "default_nodes")]
    pub control_nodes: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            state_half_width: 2.0,
            state_nodes: default_nodes(),
            control_half_width: 5.0,
            control_nodes: default_nodes(),
        }
    }
}

/// `count` evenly spaced scalar states on `[lower, upper]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl RangeSpec {
    pub fn states(&self) -> Vec<Vec<f64>> {
        linspace(self.lower, self.upper, self.count)
            .into_iter()
            .map(|x| vec![x])
            .collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSpec {
    #[serde(default = "default_dp_steps")]
    pub max_steps: usize,
    /// Targets; defaults to the state grid nodes.
    #[serde(default)]
    pub targets: Option<RangeSpec>,
}

impl Default for DpSpec {
    fn default() -> Self {
        Self {
            max_steps: default_dp_steps(),
            targets: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueBoundSpec {
    #[serde(default = "default_vb_states")]
    pub states: RangeSpec,
    #[serde(default = "default_vb_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "default_vb_lower")]
    pub control_lower: f64,
    #[serde(default = "default_vb_upper")]
    pub control_upper: f64,
}

impl Default for ValueBoundSpec {
    fn default() -> Self {
        Self {
            states: default_vb_states(),
            horizons: default_vb_horizons(),
            control_lower: default_vb_lower(),
            control_upper: default_vb_upper(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqSpec {
    #[serde(default = "default_lambda_range")]
    pub lambda_range: (f64, f64),
    #[serde(default = "default_v_range")]
    pub v_range: (f64, f64),
    #[serde(default = "default_resolution")]
    pub resolution: f64,
}

impl Default for LqSpec {
    fn default() -> Self {
        Self {
            lambda_range: default_lambda_range(),
            v_range: default_v_range(),
            resolution: default_resolution(),
        }
    }
}

/// Assertions on the closed-loop runs. Each one set becomes a check.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    /// Classification every run must receive.
    #[serde(default)]
    pub classification: Option<String>,
    /// Upper bound on every run's practical radius.
    #[serde(default)]
    pub max_radius: Option<f64>,
    /// Radius strictly decreasing in the horizon, per initial state.
    #[serde(default)]
    pub radius_decreasing: bool,
    /// Every run diverges at or before this step.
    #[serde(default)]
    pub diverged_within: Option<usize>,
    /// Runs stay on `x_j = 2^j x_0` for the first ten steps, to 1e-8.
    #[serde(default)]
    pub doubling: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model: ModelConfig,
    #[serde(default)]
    pub terminal: TerminalSpec,
    #[serde(default)]
    pub storage: Option<StorageSpec>,
    #[serde(default)]
    pub equilibrium: Option<EquilibriumSpec>,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default)]
    pub initial_states: Vec<Vec<f64>>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub analyses: Analyses,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub stability: StabilitySpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub dp: DpSpec,
    #[serde(default)]
    pub value_bound: ValueBoundSpec,
    #[serde(default)]
    pub lq: LqSpec,
    #[serde(default)]
    pub expect: Expectations,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn five() -> f64 {
    5.0
}
fn yes() -> bool {
    true
}
fn default_multi_start() -> usize {
    5
}
fn default_perturbation() -> f64 {
    0.5
}
fn default_max_iterations() -> usize {
    2000
}
fn default_gradient_tolerance() -> f64 {
    1e-9
}
fn default_penalty() -> f64 {
    1e4
}
fn default_asymptotic() -> f64 {
    1e-6
}
fn default_practical() -> f64 {
    1e-1
}
fn default_tail() -> f64 {
    0.25
}
fn default_nodes() -> usize {
    81
}
fn default_dp_steps() -> usize {
    30
}
fn default_vb_states() -> RangeSpec {
    RangeSpec {
        lower: -2.0,
        upper: 2.0,
        count: 41,
    }
}
fn default_vb_horizons() -> Vec<usize> {
    vec![2, 3, 5]
}
fn default_vb_lower() -> f64 {
    -10.0
}
fn default_vb_upper() -> f64 {
    10.0
}
fn default_lambda_range() -> (f64, f64) {
    (-4.0, 1.0)
}
fn default_v_range() -> (f64, f64) {
    (0.0, 0.0)
}
fn default_resolution() -> f64 {
    0.05
}
fn default_horizons() -> Vec<usize> {
    vec![3]
}
fn default_steps() -> usize {
    30
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub steps: Option<usize>,
    pub horizons: Option<Vec<usize>>,
}

/// Parsed scenario with its source, for diagnostics.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub file: String,
    source: String,
}

/// Everything a run needs, built from a validated scenario.
pub struct Setup {
    pub model: SystemModel<f64>,
    pub terminal: TerminalCost<f64>,
    pub storage: Option<StorageFunction<f64>>,
    pub lq: Option<LqProblem<f64>>,
    pub equilibrium: Option<Equilibrium<f64>>,
}

impl LoadedScenario {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let file = path.display().to_string();
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            file: file.clone(),
            line: None,
            message: format!("cannot read: {e}"),
        })?;
        Self::from_str(&source, &file)
    }

    pub fn from_str(source: &str, file: &str) -> Result<Self, ConfigError> {
        let scenario: Scenario = toml::from_str(source).map_err(|e| ConfigError {
            file: file.to_string(),
            line: e.span().map(|s| error_line(source, s, e.message())),
            message: e.message().to_string(),
        })?;
        let loaded = Self {
            scenario,
            file: file.to_string(),
            source: source.to_string(),
        };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        let s = &mut self.scenario;
        if let Some(seed) = o.seed {
            s.seed = Some(seed);
        }
        if let Some(out) = &o.out {
            s.out = Some(out.clone());
        }
        if let Some(steps) = o.steps {
            s.steps = steps;
        }
        if let Some(h) = &o.horizons {
            s.horizons = h.clone();
        }
        self.validate()
    }

    pub fn seed(&self) -> u64 {
        self.scenario.seed.unwrap_or(42)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.scenario
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(&self.scenario.name))
    }

    fn err(&self, path: &[&str], message: impl Into<String>) -> ConfigError {
        ConfigError {
            file: self.file.clone(),
            line: locate(&self.source, path),
            message: format!("{}: {}", path.join("."), message.into()),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.scenario;
        if s.name.is_empty() || s.name.contains(['/', '\\']) {
            return Err(self.err(&["name"], "must be a nonempty file-name-safe string"));
        }
        let model = s
            .model
            .build::<f64>()
            .map_err(|e| self.err(&["model"], e.to_string()))?;
        let n_x = model.n_x();
        if s.horizons.is_empty() || s.horizons.contains(&0) {
            return Err(self.err(&["horizons"], "needs at least one horizon, all >= 1"));
        }
        if s.steps == 0 {
            return Err(self.err(&["steps"], "must be >= 1"));
        }
        for (i, x) in s.initial_states.iter().enumerate() {
            if x.len() != n_x {
                return Err(self.err(
                    &["initial_states"],
                    format!("entry {i} has {} components, model has n_x = {n_x}", x.len()),
                ));
            }
        }
        if let TerminalSpec::QuadraticLinear { matrix, linear } = &s.terminal {
            check_quadratic(matrix, linear.as_deref(), n_x)
                .map_err(|m| self.err(&["terminal", "matrix"], m))?;
        }
        if let Some(StorageSpec::QuadraticLinear { matrix, linear }) = &s.storage {
            check_quadratic(matrix, linear.as_deref(), n_x)
                .map_err(|m| self.err(&["storage", "matrix"], m))?;
        }
        if matches!(s.storage, Some(StorageSpec::Cubic | StorageSpec::ScalarLq { .. })) && n_x != 1 {
            return Err(self.err(&["storage", "kind"], "built-in storages are scalar"));
        }
        if matches!(s.terminal, TerminalSpec::NegatedStorage { .. }) && s.storage.is_none() {
            return Err(self.err(&["terminal", "kind"], "negated_storage needs a [storage] table"));
        }
        if let Some(eq) = &s.equilibrium {
            if eq.state.len() != n_x || eq.control.len() != model.n_u() {
                return Err(self.err(&["equilibrium"], "state/control dimensions do not match the model"));
            }
        }
        let a = &s.analyses;
        let needs_storage = a.dissipativity || a.required_supply || a.value_bound || a.terminal_conditions || a.lq_check;
        if needs_storage && s.storage.is_none() {
            return Err(self.err(&["analyses"], "the requested analyses need a [storage] table"));
        }
        if a.lq_check {
            let lq = s.model.lq_problem::<f64>().map_err(|e| self.err(&["model"], e.to_string()))?;
            if lq.is_none() {
                return Err(self.err(&["analyses", "lq_check"], "needs a scalar_lq or generic_lq model"));
            }
        }
        let st = &s.stability;
        if !(st.asymptotic_tolerance > 0.0 && st.asymptotic_tolerance <= st.practical_tolerance) {
            return Err(self.err(&["stability"], "need 0 < asymptotic_tolerance <= practical_tolerance"));
        }
        if !(st.tail_fraction > 0.0 && st.tail_fraction < 1.0) {
            return Err(self.err(&["stability", "tail_fraction"], "must lie in (0, 1)"));
        }
        if s.grid.state_nodes.is_multiple_of(2) || s.grid.control_nodes.is_multiple_of(2) {
            return Err(self.err(&["grid"], "node counts must be odd so the equilibrium is a node"));
        }
        if let Some(c) = &s.expect.classification {
            if !["diverged", "practically_stable", "asymptotically_stable", "inconclusive"].contains(&c.as_str()) {
                return Err(self.err(&["expect", "classification"], format!("unknown classification `{c}`")));
            }
        }
        if s.solver.multi_start == 0 {
            return Err(self.err(&["solver", "multi_start"], "must be >= 1"));
        }
        if (a.value_bound && n_x != 1) || (s.dp.targets.is_some() && n_x != 1) {
            return Err(self.err(&["analyses"], "state ranges are only supported for scalar models"));
        }
        Ok(())
    }

    /// Builds model, terminal, storage and (if given) the equilibrium.
    pub fn setup(&self) -> Result<Setup, ConfigError> {
        let s = &self.scenario;
        let model = s
            .model
            .build::<f64>()
            .map_err(|e| self.err(&["model"], e.to_string()))?;
        let n_x = model.n_x();
        let storage = match &s.storage {
            None => None,
            Some(StorageSpec::Cubic) => Some(builtin::cubic_storage()),
            Some(StorageSpec::ScalarLq { c }) => Some(builtin::scalar_lq_storage(*c)),
            Some(StorageSpec::QuadraticLinear { matrix, linear }) => Some(
                quadratic(matrix, linear.as_deref(), n_x).map_err(|m| self.err(&["storage"], m))?,
            ),
        };
        let terminal = match &s.terminal {
            TerminalSpec::Zero => TerminalCost::zero(n_x),
            TerminalSpec::QuadraticLinear { matrix, linear } => {
                quadratic(matrix, linear.as_deref(), n_x).map_err(|m| self.err(&["terminal"], m))?
            }
            TerminalSpec::NegatedStorage { scale } => storage
                .as_ref()
                .expect("validated")
                .scaled(-*scale),
        };
        let lq = s
            .model
            .lq_problem::<f64>()
            .map_err(|e| self.err(&["model"], e.to_string()))?;
        let equilibrium = match &s.equilibrium {
            None => None,
            Some(e) => Some(
                Equilibrium::from_pair(&model, e.state.clone(), e.control.clone())
                    .map_err(|err| self.err(&["equilibrium"], err.to_string()))?,
            ),
        };
        Ok(Setup {
            model,
            terminal,
            storage,
            lq,
            equilibrium,
        })
    }

    pub fn solver_config(&self) -> SolverConfig<f64> {
        let s = &self.scenario.solver;
        let mut cfg = SolverConfig::<f64> {
            multi_start: s.multi_start,
            perturbation_scale: s.perturbation_scale,
            seed: self.seed(),
            penalty_weight: s.penalty_weight,
            ..SolverConfig::default()
        };
        cfg.line_search.max_iterations = s.max_iterations;
        cfg.line_search.gradient_tolerance = s.gradient_tolerance;
        cfg
    }

    pub fn closed_loop_config(&self) -> ClosedLoopConfig<f64> {
        ClosedLoopConfig {
            solver: self.solver_config(),
            warm_start: self.scenario.solver.warm_start,
            ..ClosedLoopConfig::default()
        }
    }

    pub fn thresholds(&self) -> StabilityThresholds {
        let s = &self.scenario.stability;
        StabilityThresholds {
            asymptotic_tolerance: s.asymptotic_tolerance,
            practical_tolerance: s.practical_tolerance,
            tail_fraction: s.tail_fraction,
        }
    }

    pub fn grid(&self, eq: &Equilibrium<f64>) -> rhc_core::Result<RectGrid<f64>> {
        let g = &self.scenario.grid;
        RectGrid::around(eq, g.state_half_width, g.state_nodes, g.control_half_width, g.control_nodes)
    }

    pub fn dp_config(&self, n_u: usize) -> DpConfig<f64> {
        let g = &self.scenario.grid;
        DpConfig {
            state_half_width: g.state_half_width,
            state_nodes: g.state_nodes,
            control_lower: vec![-g.control_half_width; n_u],
            control_upper: vec![g.control_half_width; n_u],
            control_nodes: g.control_nodes,
            max_steps: self.scenario.dp.max_steps,
        }
    }

    pub fn scan_box(&self) -> ScanBox<f64> {
        ScanBox {
            lambda_range: self.scenario.lq.lambda_range,
            v_range: self.scenario.lq.v_range,
        }
    }
}

fn check_quadratic(matrix: &[Vec<f64>], linear: Option<&[f64]>, n_x: usize) -> Result<(), String> {
    if matrix.len() != n_x || matrix.iter().any(|r| r.len() != n_x) {
        return Err(format!("must be {n_x}x{n_x}"));
    }
    if let Some(l) = linear {
        if l.len() != n_x {
            return Err(format!("linear term must have {n_x} entries"));
        }
    }
    Ok(())
}

fn quadratic(matrix: &[Vec<f64>], linear: Option<&[f64]>, n_x: usize) -> Result<StateFunction<f64>, String> {
    let m = Matrix::from_f64_rows(matrix).map_err(|e| e.to_string())?;
    let l = linear.map_or_else(|| vec![0.0; n_x], <[f64]>::to_vec);
    StateFunction::quadratic_linear(m, l).map_err(|e| e.to_string())
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Tagged tables report errors at their header; an unknown key is narrowed
/// to its own line within that table.
fn error_line(source: &str, span: std::ops::Range<usize>, message: &str) -> usize {
    let start = line_of_offset(source, span.start);
    let field = message
        .strip_prefix("unknown field `")
        .and_then(|m| m.split('`').next());
    if let Some(field) = field {
        let text = &source[span.start.min(source.len())..];
        for (i, l) in text.lines().enumerate() {
            if i > 0 && l.trim_start().starts_with('[') {
                break;
            }
            let rest = l.trim_start().strip_prefix(field);
            if rest.is_some_and(|r| r.trim_start().starts_with('=')) {
                return start + i;
            }
        }
    }
    start
}

/// Best-effort line of a dotted key: the `[table]` header line, then the
/// first `key =` line inside it.
fn locate(source: &str, path: &[&str]) -> Option<usize> {
    let lines: Vec<&str> = source.lines().map(str::trim).collect();
    let key_line = |from: usize, key: &str| {
        lines[from..]
            .iter()
            .take_while(|l| from == 0 || !l.starts_with('['))
            .position(|l| {
                l.strip_prefix(key)
                    .is_some_and(|rest| rest.trim_start().starts_with('=') || rest.starts_with('.'))
            })
            .map(|p| p + from)
    };
    let top = path.first()?;
    let header = lines
        .iter()
        .position(|l| l.trim_start_matches('[').trim_end_matches(']') == *top && l.starts_with('['));
    let found = match (header, path.get(1)) {
        (Some(h), Some(k)) => key_line(h + 1, k).or(Some(h)),
        (Some(h), None) => Some(h),
        (None, _) => key_line(0, top),
    };
    found.map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBIC: &str = r#"
name = "cubic_quadratic_terminal"
horizons = [3, 5]
initial_states = [[0.0]]

[model]
kind = "cubic"

[terminal]
kind = "quadratic_linear"
matrix = [[2.0]]
"#;

    #[test]
    fn parses_and_builds() {
        let s = LoadedScenario::from_str(CUBIC, "cubic.toml").unwrap();
        assert_eq!(s.scenario.horizons, vec![3, 5]);
        assert_eq!(s.seed(), 42);
        let setup = s.setup().unwrap();
        assert_eq!(setup.terminal.eval(&[1.0]), 2.0);
        assert!(setup.storage.is_none());
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let bad = CUBIC.replace("horizons = [3, 5]", "horizons = [3,, 5]");
        let e = LoadedScenario::from_str(&bad, "x.toml").unwrap_err();
        assert_eq!(e.line, Some(3), "{e}");
        let unknown = CUBIC.replace("steps", "stepz").replace("initial_states", "initial_statez");
        let e = LoadedScenario::from_str(&unknown, "x.toml").unwrap_err();
        assert_eq!(e.line, Some(4), "{e}");
    }

    #[test]
    fn semantic_errors_carry_lines() {
        let bad = CUBIC.replace("matrix = [[2.0]]", "matrix = [[2.0, 0.0], [0.0, 1.0]]");
        let e = LoadedScenario::from_str(&bad, "x.toml").unwrap_err();
        assert_eq!(e.line, Some(11), "{e}");
        assert!(e.to_string().contains("terminal.matrix"));

        let bad = CUBIC.replace("[[0.0]]", "[[0.0, 1.0]]");
        let e = LoadedScenario::from_str(&bad, "x.toml").unwrap_err();
        assert_eq!(e.line, Some(4), "{e}");

        let bad = format!("{CUBIC}\n[analyses]\ndissipativity = true\n");
        let e = LoadedScenario::from_str(&bad, "x.toml").unwrap_err();
        assert!(e.message.contains("storage"), "{e}");
    }

    #[test]
    fn overrides_apply() {
        let mut s = LoadedScenario::from_str(CUBIC, "cubic.toml").unwrap();
        s.apply(&Overrides {
            seed: Some(7),
            steps: Some(5),
            horizons: Some(vec![4]),
            out: None,
        })
        .unwrap();
        assert_eq!((s.seed(), s.scenario.steps, s.scenario.horizons.clone()), (7, 5, vec![4]));
        assert!(s.apply(&Overrides { steps: Some(0), ..Overrides::default() }).is_err());
    }

    #[test]
    fn negated_storage_terminal() {
        let src = CUBIC.replace(
            "kind = \"quadratic_linear\"\nmatrix = [[2.0]]",
            "kind = \"negated_storage\"\n\n[storage]\nkind = \"cubic\"",
        );
        let s = LoadedScenario::from_str(&src, "x.toml").unwrap();
        let setup = s.setup().unwrap();
        let st = setup.storage.unwrap();
        assert!((setup.terminal.eval(&[0.7]) + st.eval(&[0.7])).abs() < 1e-15);
    }
}
