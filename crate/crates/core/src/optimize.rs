//! Adam descent with restarts and resumable checkpoints.
//!
//! Each restart draws fresh parameters from the initialization recipe with
//! seed `optimizer.seed + i`, then alternates evaluation and Adam updates.
//! An epoch evaluates the cost at the current point, records it, stops when
//! `I < I_th` or the epoch budget is spent, and otherwise takes one step.
//! With `max_epochs = 0` the run is a single evaluation of the initial point.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::controls::{
    initialize, materialize, Bounds, ControlParams, InitSpec, Schedule, Shape, Trainable,
};
use crate::model::NonlinearKind;
use crate::objective::{CostBreakdown, Objective, Weights};
use crate::tasks::TaskSpec;
use crate::{Error, Result};

/// Version tag of [`RunCheckpoint`]; bumped on any layout change.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Adam and stopping settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Per-restart ceiling on Adam updates.
    pub max_epochs: u64,
    #[serde(default = "default_threshold")]
    pub infidelity_threshold: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    /// Emit a checkpoint after every this many updates; 0 disables.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Skip the remaining restarts once one reaches the threshold.
    #[serde(default = "default_true")]
    pub stop_on_success: bool,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_threshold() -> f64 {
    1e-3
}
fn default_restarts() -> usize {
    1
}
fn default_true() -> bool {
    true
}

impl OptimizerConfig {
    pub fn new(learning_rate: f64, max_epochs: u64, infidelity_threshold: f64) -> Self {
        Self {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            max_epochs,
            infidelity_threshold,
            restarts: 1,
            seed: 0,
            checkpoint_every: 0,
            stop_on_success: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.infidelity_threshold > 0.0
            && self.infidelity_threshold < 1.0
            && self.restarts >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

/// Everything that defines a run apart from the task itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub num_bins: usize,
    pub bounds: Bounds,
    pub weights: Weights,
    /// Its `seed` is replaced by `optimizer.seed + restart`.
    pub init: InitSpec,
    pub trainable: Trainable,
    pub optimizer: OptimizerConfig,
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.num_bins == 0 {
            return Err(Error::Validation("num_bins must be positive".into()));
        }
        self.bounds.validate()?;
        self.optimizer.validate()
    }

    /// Pins every bin to `total / num_bins` and freezes the time-step group.
    pub fn with_fixed_duration(mut self, total: f64) -> Self {
        self.bounds = self.bounds.with_fixed_duration(total, self.num_bins);
        self.trainable.x = false;
        self.init.x = crate::controls::GroupInit::new(0.0, 0.0);
        self
    }

    pub fn restart_seed(&self, restart: usize) -> u64 {
        self.optimizer.seed.wrapping_add(restart as u64)
    }
}

/// Adam first/second moments and step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One Adam step on `theta`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], cfg: &OptimizerConfig) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - Float::powi(cfg.beta1, t);
        let bc2 = 1.0 - Float::powi(cfg.beta2, t);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            theta[i] -= cfg.learning_rate * mh / (Float::sqrt(vh) + cfg.epsilon);
        }
    }
}

/// One line of the cost history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub infidelity: f64,
    pub cost: f64,
    /// Lowest infidelity seen so far in this restart.
    pub best_infidelity: f64,
}

/// How a restart ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RestartStatus {
    Converged,
    MaxEpochs,
    Aborted {
        epoch: u64,
        reason: String,
    },
    /// Not started because an earlier restart already converged.
    Skipped,
}

/// In-flight state of one restart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartState {
    pub index: usize,
    pub seed: u64,
    /// Number of updates applied so far; the next evaluation is this epoch.
    pub epoch: u64,
    pub params: ControlParams,
    pub adam: AdamState,
    pub history: Vec<EpochRecord>,
    pub best_infidelity: f64,
    pub best_params: ControlParams,
}

/// Finished restart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub index: usize,
    pub seed: u64,
    pub status: RestartStatus,
    pub epochs: u64,
    pub best_infidelity: f64,
    pub best_params: Option<ControlParams>,
    pub history: Vec<EpochRecord>,
}

/// Resumable snapshot of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunCheckpoint {
    pub version: u32,
    pub task: String,
    pub settings: RunSettings,
    pub completed: Vec<RestartRecord>,
    /// `None` once the run has finished.
    pub current: Option<RestartState>,
    /// Restart indices still to be started after `current`.
    pub pending: Vec<usize>,
}

impl RunCheckpoint {
    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        self.settings.validate()?;
        if let Some(cur) = &self.current {
            cur.params.validate()?;
            let len = cur.params.shape.flat_len();
            if cur.adam.m.len() != len || cur.adam.v.len() != len {
                return Err(Error::Checkpoint(
                    "Adam moments do not match the parameters".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn is_finished(&self) -> bool {
        self.current.is_none() && self.pending.is_empty()
    }
}

/// Summary of one restart inside a [`RunRecord`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub index: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub status: RestartStatus,
    pub epochs: u64,
    pub best_infidelity: f64,
}

/// Result of a run: the best restart plus a summary of all of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: String,
    pub kind: NonlinearKind,
    pub settings: RunSettings,
    pub best_restart: usize,
    pub seed: u64,
    pub best_params: ControlParams,
    pub final_infidelity: f64,
    pub final_cost: CostBreakdown,
    /// `T_η = Σ Δt_p`.
    pub duration: f64,
    pub converged: bool,
    pub schedule: Schedule,
    pub cost_history: Vec<EpochRecord>,
    pub restarts: Vec<RestartSummary>,
}

/// Progress callbacks.
pub trait Observer {
    fn on_epoch(&mut self, _restart: usize, _record: &EpochRecord) {}

    /// Called every `checkpoint_every` updates and once when the run ends.
    fn on_checkpoint(&mut self, _checkpoint: &RunCheckpoint) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct Silent;

impl Observer for Silent {}

fn shape_of(task: &TaskSpec, settings: &RunSettings) -> Shape {
    Shape {
        num_modes: task.layout.num_modes,
        num_bins: settings.num_bins,
        kind: task.kind,
    }
}

fn start_restart(task: &TaskSpec, settings: &RunSettings, index: usize) -> Result<RestartState> {
    let seed = settings.restart_seed(index);
    let init = InitSpec {
        seed,
        ..settings.init
    };
    let params = initialize(&init, shape_of(task, settings), settings.trainable)?;
    let len = params.shape.flat_len();
    Ok(RestartState {
        index,
        seed,
        epoch: 0,
        best_params: params.clone(),
        params,
        adam: AdamState::new(len),
        history: Vec::new(),
        best_infidelity: f64::INFINITY,
    })
}

/// Runs all restarts of `settings.optimizer` on `task`.
pub fn run(
    task: &TaskSpec,
    settings: &RunSettings,
    observer: &mut dyn Observer,
) -> Result<RunRecord> {
    run_restarts(
        task,
        settings,
        (0..settings.optimizer.restarts).collect(),
        observer,
    )
}

/// Runs the given restart indices in order; used to split restarts across
/// workers.
pub fn run_restarts(
    task: &TaskSpec,
    settings: &RunSettings,
    indices: Vec<usize>,
    observer: &mut dyn Observer,
) -> Result<RunRecord> {
    settings.validate()?;
    let mut pending = indices;
    if pending.is_empty() {
        return Err(Error::Validation("no restarts to run".into()));
    }
    let first = pending.remove(0);
    let cp = RunCheckpoint {
        version: CHECKPOINT_VERSION,
        task: task.name.clone(),
        settings: *settings,
        completed: Vec::new(),
        current: Some(start_restart(task, settings, first)?),
        pending,
    };
    drive(task, cp, observer)
}

/// Continues a checkpointed run exactly where it stopped.
pub fn resume(
    task: &TaskSpec,
    checkpoint: RunCheckpoint,
    observer: &mut dyn Observer,
) -> Result<RunRecord> {
    checkpoint.validate()?;
    if checkpoint.task != task.name {
        return Err(Error::Checkpoint(format!(
            "checkpoint belongs to task '{}', not '{}'",
            checkpoint.task, task.name
        )));
    }
    if let Some(cur) = &checkpoint.current {
        if cur.params.shape != shape_of(task, &checkpoint.settings) {
            return Err(Error::Checkpoint(
                "checkpoint parameters do not fit the task".into(),
            ));
        }
    }
    drive(task, checkpoint, observer)
}

fn drive(task: &TaskSpec, mut cp: RunCheckpoint, observer: &mut dyn Observer) -> Result<RunRecord> {
    let settings = cp.settings;
    let objective = Objective::new(&task.batch, task.kind, settings.bounds, settings.weights)?;
    while let Some(state) = cp.current.take() {
        let record = optimize_restart(&objective, &mut cp, state, observer)?;
        let converged = record.status == RestartStatus::Converged;
        cp.completed.push(record);
        if converged && settings.optimizer.stop_on_success {
            for index in cp.pending.drain(..) {
                cp.completed.push(RestartRecord {
                    index,
                    seed: settings.restart_seed(index),
                    status: RestartStatus::Skipped,
                    epochs: 0,
                    best_infidelity: f64::INFINITY,
                    best_params: None,
                    history: Vec::new(),
                });
            }
        }
        if !cp.pending.is_empty() {
            let next = cp.pending.remove(0);
            cp.current = Some(start_restart(task, &settings, next)?);
        }
    }
    observer.on_checkpoint(&cp)?;
    assemble(task, &objective, &cp)
}

fn optimize_restart(
    objective: &Objective,
    cp: &mut RunCheckpoint,
    mut state: RestartState,
    observer: &mut dyn Observer,
) -> Result<RestartRecord> {
    let cfg = cp.settings.optimizer;
    let mask = state.params.trainable_mask();
    let mut theta = state.params.to_flat();
    let status = loop {
        let (cb, mut grad) = match objective.cost_and_gradient(&state.params) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => {
                break RestartStatus::Aborted {
                    epoch: state.epoch,
                    reason: "non-finite cost".into(),
                }
            }
            Err(e) => return Err(e),
        };
        if !cb.total.is_finite()
            || !cb.infidelity.is_finite()
            || grad.iter().any(|g| !g.is_finite())
        {
            break RestartStatus::Aborted {
                epoch: state.epoch,
                reason: format!(
                    "non-finite cost or gradient (I = {}, E = {})",
                    cb.infidelity, cb.total
                ),
            };
        }
        if cb.infidelity < state.best_infidelity {
            state.best_infidelity = cb.infidelity;
            state.best_params = state.params.clone();
        }
        let rec = EpochRecord {
            epoch: state.epoch,
            infidelity: cb.infidelity,
            cost: cb.total,
            best_infidelity: state.best_infidelity,
        };
        state.history.push(rec);
        observer.on_epoch(state.index, &rec);
        if cb.infidelity < cfg.infidelity_threshold {
            break RestartStatus::Converged;
        }
        if state.epoch >= cfg.max_epochs {
            break RestartStatus::MaxEpochs;
        }
        for (g, t) in grad.iter_mut().zip(&mask) {
            if !t {
                *g = 0.0;
            }
        }
        state.adam.step(&mut theta, &grad, &cfg);
        state.params.set_flat(&theta)?;
        state.epoch += 1;
        if cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 {
            materialize(&state.params, &cp.settings.bounds)?
                .check_bounds(&cp.settings.bounds, 1e-12)?;
            cp.current = Some(state);
            observer.on_checkpoint(cp)?;
            state = cp.current.take().expect("just stored");
        }
    };
    let evaluated = !state.history.is_empty();
    Ok(RestartRecord {
        index: state.index,
        seed: state.seed,
        status,
        epochs: state.epoch,
        best_infidelity: state.best_infidelity,
        best_params: evaluated.then_some(state.best_params),
        history: state.history,
    })
}

fn assemble(task: &TaskSpec, objective: &Objective, cp: &RunCheckpoint) -> Result<RunRecord> {
    let best = cp
        .completed
        .iter()
        .filter(|r| r.best_params.is_some() && r.best_infidelity.is_finite())
        .min_by(|a, b| {
            a.best_infidelity
                .partial_cmp(&b.best_infidelity)
                .expect("finite")
                .then(a.index.cmp(&b.index))
        })
        .ok_or(Error::AllRestartsFailed(cp.completed.len()))?;
    let params = best.best_params.clone().expect("filtered");
    let final_cost = objective.cost(&params)?;
    let schedule = materialize(&params, &cp.settings.bounds)?;
    let threshold = cp.settings.optimizer.infidelity_threshold;
    let mut restarts: Vec<RestartSummary> = cp
        .completed
        .iter()
        .map(|r| RestartSummary {
            index: r.index,
            seed: r.seed,
            status: r.status.clone(),
            epochs: r.epochs,
            best_infidelity: r.best_infidelity,
        })
        .collect();
    restarts.sort_by_key(|r| r.index);
    Ok(RunRecord {
        task: task.name.clone(),
        kind: task.kind,
        settings: cp.settings,
        best_restart: best.index,
        seed: best.seed,
        final_infidelity: final_cost.infidelity,
        converged: final_cost.infidelity <= threshold,
        duration: schedule.duration(),
        final_cost,
        schedule,
        best_params: params,
        cost_history: best.history.clone(),
        restarts,
    })
}
