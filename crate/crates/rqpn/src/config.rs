//! Run configuration: a TOML file layered over the task's default settings,
//! then command-line overrides on top.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rqpn_core::hilbert::{BasisState, Layout};
use rqpn_core::model::NonlinearKind;
use rqpn_core::optimize::RunSettings;
use rqpn_core::tasks::{self, TaskSpec, Terms};
use rqpn_core::Complex64;
use serde::{Deserialize, Serialize};

/// Bad input from the user: unknown keys, missing task, invalid values.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Keys of a config file that are not part of [`RunSettings`].
const RUN_KEYS: [&str; 4] = ["task", "task_file", "out", "fixed_duration"];
const SETTINGS_KEYS: [&str; 6] = [
    "num_bins",
    "bounds",
    "weights",
    "init",
    "trainable",
    "optimizer",
];

/// Everything needed to start a run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: TaskSource,
    pub out: Option<PathBuf>,
    pub fixed_duration: Option<f64>,
    pub settings: RunSettings,
}

/// Where the task definition comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSource {
    Builtin(String),
    File(PathBuf),
}

impl TaskSource {
    pub fn load(&self) -> anyhow::Result<TaskSpec> {
        match self {
            TaskSource::Builtin(name) => tasks::by_name(name).map_err(|e| {
                bad(format!(
                    "{e}; known tasks: {}",
                    tasks::TASK_NAMES.join(", ")
                ))
            }),
            TaskSource::File(path) => load_task_file(path),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub task: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub fixed_duration: Option<f64>,
    pub max_epochs: Option<u64>,
    pub restarts: Option<usize>,
}

/// Recursively overlays `patch` onto `base`; tables merge, everything else
/// replaces.
fn merge(base: &mut toml::Value, patch: toml::Value) {
    match (base, patch) {
        (toml::Value::Table(b), toml::Value::Table(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies a partial settings table to `defaults`.
pub fn overlay_settings(defaults: &RunSettings, patch: toml::Table) -> anyhow::Result<RunSettings> {
    let mut base = toml::Value::try_from(defaults)?;
    merge(&mut base, toml::Value::Table(patch));
    let settings: RunSettings = base
        .try_into()
        .map_err(|e: toml::de::Error| bad(format!("invalid settings: {}", e.message())))?;
    settings.validate().map_err(|e| bad(e.to_string()))?;
    Ok(settings)
}

/// Resolves a config file (optional) plus overrides into a [`RunConfig`].
pub fn resolve(file: Option<&Path>, ov: &Overrides) -> anyhow::Result<(RunConfig, TaskSpec)> {
    let mut table = match file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| bad(format!("{}: {}", path.display(), e.message())))?
        }
        None => toml::Table::new(),
    };
    for key in table.keys() {
        if !RUN_KEYS.contains(&key.as_str()) && !SETTINGS_KEYS.contains(&key.as_str()) {
            return Err(bad(format!("unknown config key '{key}'")));
        }
    }
    let base_dir = file.and_then(Path::parent).unwrap_or(Path::new("."));
    let str_key = |t: &mut toml::Table, k: &str| -> anyhow::Result<Option<String>> {
        match t.remove(k) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(bad(format!("'{k}' must be a string"))),
        }
    };
    let file_task = str_key(&mut table, "task")?;
    let task_file = str_key(&mut table, "task_file")?;
    let file_out = str_key(&mut table, "out")?;
    let file_fixed = match table.remove("fixed_duration") {
        None => None,
        Some(v) => Some(
            v.as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .ok_or_else(|| bad("'fixed_duration' must be a number"))?,
        ),
    };
    let source = match (&ov.task, file_task, task_file) {
        (Some(name), _, _) => TaskSource::Builtin(name.clone()),
        (None, Some(_), Some(_)) => return Err(bad("give either 'task' or 'task_file', not both")),
        (None, Some(name), None) => TaskSource::Builtin(name),
        (None, None, Some(path)) => TaskSource::File(base_dir.join(path)),
        (None, None, None) => {
            return Err(bad("no task given (use --task or a config with 'task')"))
        }
    };
    let task = source.load()?;
    let mut settings = overlay_settings(&task.defaults, table)?;
    if let Some(seed) = ov.seed {
        settings.optimizer.seed = seed;
    }
    if let Some(e) = ov.max_epochs {
        settings.optimizer.max_epochs = e;
    }
    if let Some(r) = ov.restarts {
        settings.optimizer.restarts = r;
    }
    let fixed_duration = ov.fixed_duration.or(file_fixed);
    if let Some(t) = fixed_duration {
        if !(t > 0.0 && t.is_finite()) {
            return Err(bad(format!("fixed duration must be positive, got {t}")));
        }
        settings = settings.with_fixed_duration(t);
    }
    settings.validate().map_err(|e| bad(e.to_string()))?;
    let out = ov
        .out
        .clone()
        .or_else(|| file_out.map(|o| base_dir.join(o)));
    Ok((
        RunConfig {
            task: source,
            out,
            fixed_duration,
            settings,
        },
        task,
    ))
}

/// One basis term of a state in a task file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermFile {
    occupations: Vec<u32>,
    #[serde(default)]
    emitters: Vec<bool>,
    #[serde(default = "one")]
    re: f64,
    #[serde(default)]
    im: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairFile {
    #[serde(default)]
    label: Option<String>,
    input: Vec<TermFile>,
    target: Vec<TermFile>,
}

/// Custom task description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    name: String,
    modes: usize,
    kind: NonlinearKind,
    #[serde(default)]
    cutoff: Option<usize>,
    #[serde(default)]
    normalize: bool,
    pairs: Vec<PairFile>,
}

/// Settings used for custom tasks before the config overrides them.
pub fn custom_defaults(kind: NonlinearKind) -> RunSettings {
    let base = tasks::cz_qubit_qubit().expect("built-in task").defaults;
    match kind {
        NonlinearKind::Spm => base,
        NonlinearKind::Tle => RunSettings {
            bounds: rqpn_core::controls::Bounds {
                tau_min: 3.5 / 50.0,
                tau_max: 4.0 / 50.0,
                dc: 5.0,
                de: 5.0,
                k: 5.0,
            },
            ..base
        },
    }
}

fn terms(list: &[TermFile], normalize: bool) -> Terms {
    let norm = if normalize {
        list.iter()
            .map(|t| t.re * t.re + t.im * t.im)
            .sum::<f64>()
            .sqrt()
    } else {
        1.0
    };
    list.iter()
        .map(|t| {
            (
                Complex64::new(t.re / norm, t.im / norm),
                BasisState::new(t.occupations.clone(), t.emitters.clone()),
            )
        })
        .collect()
}

/// Reads a custom task from a TOML file.
pub fn load_task_file(path: &Path) -> anyhow::Result<TaskSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| bad(format!("cannot read task file {}: {e}", path.display())))?;
    let file: TaskFile =
        toml::from_str(&text).map_err(|e| bad(format!("{}: {}", path.display(), e.message())))?;
    let max_n = file
        .pairs
        .iter()
        .flat_map(|p| p.input.iter().chain(&p.target))
        .map(|t| {
            t.occupations.iter().sum::<u32>() as usize + t.emitters.iter().filter(|e| **e).count()
        })
        .max()
        .unwrap_or(0);
    let cutoff = file.cutoff.unwrap_or(max_n);
    let layout = match file.kind {
        NonlinearKind::Spm => Layout::photonic(file.modes, cutoff),
        NonlinearKind::Tle => Layout::with_emitters(file.modes, cutoff),
    };
    let pairs = file
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            (
                p.label.clone().unwrap_or_else(|| format!("pair{i}")),
                terms(&p.input, file.normalize),
                terms(&p.target, file.normalize),
            )
        })
        .collect();
    TaskSpec::custom(
        &file.name,
        layout,
        file.kind,
        pairs,
        custom_defaults(file.kind),
    )
    .map_err(|e| bad(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_overlay_keeps_defaults() {
        let task = tasks::cz_qubit_qubit().unwrap();
        let patch: toml::Table = "num_bins = 20\n[optimizer]\nlearning_rate = 0.02\n"
            .parse()
            .unwrap();
        let s = overlay_settings(&task.defaults, patch).unwrap();
        assert_eq!(s.num_bins, 20);
        assert_eq!(s.optimizer.learning_rate, 0.02);
        assert_eq!(s.optimizer.max_epochs, task.defaults.optimizer.max_epochs);
        assert_eq!(s.bounds, task.defaults.bounds);
    }

    #[test]
    fn unknown_nested_key_rejected() {
        let task = tasks::cz_qubit_qubit().unwrap();
        let patch: toml::Table = "[bounds]\nkk = 1.0\n".parse().unwrap();
        let err = overlay_settings(&task.defaults, patch).unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }

    #[test]
    fn overrides_win() {
        let ov = Overrides {
            task: Some("toffoli".into()),
            seed: Some(9),
            fixed_duration: Some(2.0),
            ..Overrides::default()
        };
        let (cfg, task) = resolve(None, &ov).unwrap();
        assert_eq!(task.name, "toffoli");
        assert_eq!(cfg.settings.optimizer.seed, 9);
        assert_eq!(cfg.settings.bounds.tau_min, 2.0 / 80.0);
        assert!(!cfg.settings.trainable.x);
    }

    #[test]
    fn missing_task_is_config_error() {
        let err = resolve(None, &Overrides::default()).unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }
}
