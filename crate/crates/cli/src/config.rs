//! Experiment configuration: TOML (or a JSON run sidecar), `--set`
//! overrides, and per-task defaults.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use gdlab::lyapunov::PerturbationConfig;
use gdlab::model::Activation;
use gdlab::sharpness::{DEFAULT_PI_ITERS, DEFAULT_PI_TOL};
use gdlab::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Iris,
    Mnist,
    MnistDeep,
    MnistCnn,
    Cifar10,
}

impl Task {
    pub fn target_accuracy(self) -> f64 {
        match self {
            Task::Iris | Task::Mnist | Task::MnistDeep => 0.9,
            Task::MnistCnn => 0.8,
            Task::Cifar10 => 0.3,
        }
    }

    pub fn eval_every(self) -> usize {
        match self {
            Task::Iris => 1,
            _ => 5,
        }
    }

    pub fn n_inits(self) -> usize {
        match self {
            Task::MnistCnn => 40,
            _ => 50,
        }
    }

    pub fn default_data(self) -> &'static str {
        match self {
            Task::Iris => "data/iris.csv",
            Task::Mnist | Task::MnistDeep | Task::MnistCnn => "data/mnist-subset",
            Task::Cifar10 => "data/cifar-10-batches-bin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: Task,
    /// Hidden-layer activation of the MLP tasks.
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Hidden-layer widths replacing the task's default MLP (not valid for
    /// `mnist_cnn`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    /// Iris CSV file, MNIST IDX directory or CIFAR-10 binary directory.
    pub data: PathBuf,
    /// Iris: training-split size. MNIST/CIFAR-10: keep only the first
    /// `n_train` training samples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub etas: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            etas: vec![0.01, 0.1, 1.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweetSpotSection {
    pub eta_lo: f64,
    pub eta_hi: f64,
    pub rho_target: f64,
    pub tol: f64,
}

impl Default for SweetSpotSection {
    fn default() -> Self {
        Self {
            eta_lo: 1.0,
            eta_hi: 10.0,
            rho_target: 95.0,
            tol: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SharpnessSection {
    pub every: usize,
    pub pi_iters: usize,
    pub pi_tol: f64,
}

impl Default for SharpnessSection {
    fn default() -> Self {
        Self {
            every: 10,
            pi_iters: DEFAULT_PI_ITERS,
            pi_tol: DEFAULT_PI_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyMapSection {
    /// Explicit learning rates; when empty the grid
    /// `linspace(eta_min, eta_max, grid_points)` is used.
    pub etas: Vec<f64>,
    pub eta_min: f64,
    pub eta_max: f64,
    pub grid_points: usize,
    pub n_transient: usize,
    pub n_record: usize,
    pub n_lyapunov: usize,
}

impl Default for ToyMapSection {
    fn default() -> Self {
        Self {
            etas: Vec::new(),
            eta_min: 0.0,
            eta_max: 3.0,
            grid_points: 2000,
            n_transient: 1000,
            n_record: 200,
            n_lyapunov: 100_000,
        }
    }
}

impl ToyMapSection {
    pub fn grid(&self) -> Vec<f64> {
        if self.etas.is_empty() {
            gdlab::toymap::linspace(self.eta_min, self.eta_max, self.grid_points)
        } else {
            self.etas.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub master_seed: u64,
    /// Initializations per learning rate (lyap, sweep, sweetspot).
    #[serde(default = "default_n_inits")]
    pub n_inits: usize,
    /// Which initialization `train` and `sharpness` use.
    #[serde(default)]
    pub init_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub sweetspot: SweetSpotSection,
    #[serde(default)]
    pub sharpness: SharpnessSection,
    #[serde(default)]
    pub toymap: ToyMapSection,
}

fn default_n_inits() -> usize {
    50
}

impl ExperimentConfig {
    pub fn task(&self) -> Result<&TaskConfig> {
        self.task
            .as_ref()
            .ok_or_else(|| anyhow!("this subcommand needs a [task] section"))
    }
}

/// Parse a `--set` value as a TOML literal, falling back to a bare string.
fn parse_literal(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Apply `key.path=value` to a table, creating intermediate tables.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not of the form key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty component");
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => bail!("override `{key}`: `{p}` is not a table"),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_literal(raw.trim()));
    Ok(())
}

fn set_default(table: &mut Table, section: &str, key: &str, value: Value) {
    let sec = table
        .entry(section.to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    if let Value::Table(t) = sec {
        t.entry(key.to_string()).or_insert(value);
    }
}

/// Fill task-dependent defaults that the file and overrides left unset.
fn apply_task_defaults(table: &mut Table) -> Result<()> {
    let Some(Value::Table(task)) = table.get("task") else {
        return Ok(());
    };
    let name = task
        .get("name")
        .cloned()
        .ok_or_else(|| anyhow!("task.name is required"))?;
    let task = Task::deserialize(name).map_err(|e| anyhow!("invalid config at `task.name`: {e}"))?;
    set_default(table, "task", "data", Value::String(task.default_data().into()));
    set_default(table, "train", "target_accuracy", Value::Float(task.target_accuracy()));
    set_default(table, "train", "eval_every", Value::Integer(task.eval_every() as i64));
    table
        .entry("n_inits".to_string())
        .or_insert(Value::Integer(task.n_inits() as i64));
    Ok(())
}

/// Read a TOML config, or the `resolved_config` of a JSON run sidecar.
pub fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let mut json: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("{} is not valid JSON", path.display()))?;
        if let Some(inner) = json.get_mut("resolved_config") {
            json = inner.take();
        }
        return match Value::try_from(json) {
            Ok(Value::Table(t)) => Ok(t),
            Ok(_) => bail!("{}: resolved_config is not an object", path.display()),
            Err(e) => Err(anyhow!("{}: {e}", path.display())),
        };
    }
    toml::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

/// Resolve the final configuration from an optional file and overrides.
pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table = match path {
        Some(p) => read_table(p)?,
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    apply_task_defaults(&mut table)?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(Value::Table(table))
        .map_err(|e| {
            let msg = e.inner().to_string();
            let first = msg.lines().next().unwrap_or_default().to_string();
            anyhow!("invalid config at `{}`: {first}", e.path())
        })?;
    cfg.train.validate()?;
    cfg.perturbation.validate()?;
    if cfg.n_inits == 0 {
        bail!("n_inits must be at least 1");
    }
    Ok(cfg)
}
