//! Gate and repeater tasks as input/target batches with default settings.
//!
//! Mode and emitter indices are 0-based. A dual-rail qubit `k` occupies modes
//! `2k` (logical 0) and `2k + 1` (logical 1).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use core::f64::consts::FRAC_1_SQRT_2;

use crate::controls::{Bounds, GroupInit, InitSpec, Schedule, Trainable};
use crate::hilbert::{build_space, BasisState, HilbertSpace, Layout, StateVector};
use crate::linalg::complete_unitary;
use crate::model::{NonlinearKind, SectorModel};
use crate::objective::{TaskBatch, Weights, NORM_TOL};
use crate::optimize::{OptimizerConfig, RunSettings};
use crate::propagate::{evolve_with, Propagator};
use crate::{CMatrix, Complex64, Error, Result};

/// A weighted sum of basis states, `Σ c_i |occ_i, em_i⟩`.
pub type Terms = Vec<(Complex64, BasisState)>;

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Logical states as sums of occupation patterns.
#[derive(Clone, Debug, PartialEq)]
pub struct LogicalEncoding {
    pub name: String,
    pub num_modes: usize,
    /// Entry `j` is logical `|j⟩`.
    pub states: Vec<Vec<(Complex64, Vec<u32>)>>,
}

impl LogicalEncoding {
    /// One photon in two rails.
    pub fn dual_rail_qubit() -> Self {
        Self {
            name: "dual-rail qubit".into(),
            num_modes: 2,
            states: vec![vec![(re(1.0), vec![1, 0])], vec![(re(1.0), vec![0, 1])]],
        }
    }

    /// One photon in three rails.
    pub fn dual_rail_qutrit() -> Self {
        Self {
            name: "dual-rail qutrit".into(),
            num_modes: 3,
            states: vec![
                vec![(re(1.0), vec![1, 0, 0])],
                vec![(re(1.0), vec![0, 1, 0])],
                vec![(re(1.0), vec![0, 0, 1])],
            ],
        }
    }

    /// Two-mode code `|0⟩ = (|4,0⟩ + |0,4⟩)/√2`, `|1⟩ = |2,2⟩`.
    pub fn bosonic_code() -> Self {
        Self {
            name: "bosonic code".into(),
            num_modes: 2,
            states: vec![
                vec![
                    (re(FRAC_1_SQRT_2), vec![4, 0]),
                    (re(FRAC_1_SQRT_2), vec![0, 4]),
                ],
                vec![(re(1.0), vec![2, 2])],
            ],
        }
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    /// Tensor product of one logical state per encoding, modes concatenated.
    pub fn product(parts: &[(&LogicalEncoding, usize)]) -> Vec<(Complex64, Vec<u32>)> {
        let mut acc: Vec<(Complex64, Vec<u32>)> = vec![(re(1.0), Vec::new())];
        for (enc, label) in parts {
            let mut next = Vec::new();
            for (c, occ) in &acc {
                for (d, more) in &enc.states[*label] {
                    let mut o = occ.clone();
                    o.extend_from_slice(more);
                    next.push((c * d, o));
                }
            }
            acc = next;
        }
        acc
    }
}

/// A labeled input/target pair used for tracing.
#[derive(Clone, Debug)]
pub struct Probe {
    pub label: String,
    pub input: StateVector,
    pub target: StateVector,
}

/// A named transformation plus the settings used to optimize it.
#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub name: String,
    pub layout: Layout,
    pub kind: NonlinearKind,
    pub batch: TaskBatch,
    /// Training pairs in order, followed by any extra superposition probes.
    pub probes: Vec<Probe>,
    pub defaults: RunSettings,
}

/// Builds states on per-sector spaces that share one layout.
struct Builder {
    layout: Layout,
    spaces: BTreeMap<usize, Arc<HilbertSpace>>,
}

impl Builder {
    fn new(layout: Layout) -> Self {
        Self {
            layout,
            spaces: BTreeMap::new(),
        }
    }

    fn space(&mut self, n: usize) -> Result<Arc<HilbertSpace>> {
        if let Some(s) = self.spaces.get(&n) {
            return Ok(s.clone());
        }
        let s = Arc::new(build_space(self.layout, n)?);
        self.spaces.insert(n, s.clone());
        Ok(s)
    }

    fn state(&mut self, terms: &Terms) -> Result<StateVector> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Validation("state has no terms".into()))?;
        let n = first.1.excitation();
        let space = self.space(n)?;
        crate::hilbert::superposition(&space, terms)
    }
}

fn photons(terms: &[(Complex64, Vec<u32>)]) -> Terms {
    terms
        .iter()
        .map(|(c, o)| (*c, BasisState::photons(o)))
        .collect()
}

fn with_ancilla(terms: &[(Complex64, Vec<u32>)], extra: u32) -> Terms {
    terms
        .iter()
        .map(|(c, o)| {
            let mut o = o.clone();
            o.push(extra);
            (*c, BasisState::photons(&o))
        })
        .collect()
}

fn with_emitters(terms: &[(Complex64, Vec<u32>)], emitters: [bool; 2]) -> Terms {
    terms
        .iter()
        .map(|(c, o)| (*c, BasisState::new(o.clone(), emitters.to_vec())))
        .collect()
}

fn scale(terms: &Terms, c: Complex64) -> Terms {
    terms.iter().map(|(a, s)| (a * c, s.clone())).collect()
}

fn add(a: &Terms, b: &Terms) -> Terms {
    let mut out = a.clone();
    out.extend(b.iter().cloned());
    out
}

impl TaskSpec {
    /// Assembles a task from labeled `(input, target)` term lists.
    pub fn custom(
        name: &str,
        layout: Layout,
        kind: NonlinearKind,
        pairs: Vec<(String, Terms, Terms)>,
        defaults: RunSettings,
    ) -> Result<Self> {
        Self::with_probes(name, layout, kind, pairs, Vec::new(), defaults)
    }

    fn with_probes(
        name: &str,
        layout: Layout,
        kind: NonlinearKind,
        pairs: Vec<(String, Terms, Terms)>,
        extra: Vec<(String, Terms, Terms)>,
        defaults: RunSettings,
    ) -> Result<Self> {
        layout.validate()?;
        if kind == NonlinearKind::Tle && layout.num_emitters != layout.num_modes {
            return Err(Error::InvalidLayout(
                "emitter tasks need one emitter per mode".into(),
            ));
        }
        defaults.validate()?;
        let num_pairs = pairs.len();
        let mut b = Builder::new(layout);
        let mut probes = Vec::with_capacity(num_pairs + extra.len());
        for (label, input, target) in pairs.into_iter().chain(extra) {
            let input = b.state(&input)?;
            let target = b.state(&target)?;
            for (what, s) in [("input", &input), ("target", &target)] {
                if (s.norm() - 1.0).abs() > NORM_TOL {
                    return Err(Error::Validation(format!(
                        "{label}: {what} has norm {}",
                        s.norm()
                    )));
                }
            }
            probes.push(Probe {
                label,
                input,
                target,
            });
        }
        let batch = TaskBatch::from_pairs(
            probes[..num_pairs]
                .iter()
                .map(|p| (p.input.clone(), p.target.clone()))
                .collect(),
        )?;
        Ok(Self {
            name: name.to_string(),
            layout,
            kind,
            batch,
            probes,
            defaults,
        })
    }

    /// The training pairs (the first `batch.num_pairs()` probes).
    pub fn training_probes(&self) -> &[Probe] {
        &self.probes[..self.batch.num_pairs()]
    }
}

#[allow(clippy::too_many_arguments)]
fn settings(
    num_bins: usize,
    window: (f64, f64),
    dc: f64,
    de: f64,
    k: f64,
    init: InitSpec,
    trainable: Trainable,
    weights: Weights,
    optimizer: OptimizerConfig,
) -> RunSettings {
    RunSettings {
        num_bins,
        bounds: Bounds {
            tau_min: window.0 / num_bins as f64,
            tau_max: window.1 / num_bins as f64,
            dc,
            de,
            k,
        },
        weights,
        init,
        trainable,
        optimizer,
    }
}

fn optimizer(lr: f64, max_epochs: u64, threshold: f64) -> OptimizerConfig {
    OptimizerConfig {
        restarts: 5,
        ..OptimizerConfig::new(lr, max_epochs, threshold)
    }
}

fn gate_init(c_noise: f64) -> InitSpec {
    InitSpec {
        x: GroupInit::new(0.0, 0.1),
        d_c: GroupInit::new(0.0, 0.1),
        d_e: GroupInit::default(),
        k: GroupInit::new(0.0, 0.1),
        c: GroupInit::new(0.0, c_noise),
        seed: 0,
    }
}

fn label(parts: &[usize]) -> String {
    let digits: String = parts.iter().map(|d| char::from(b'0' + *d as u8)).collect();
    format!("|{digits}>")
}

fn gate_pairs(
    encodings: &[&LogicalEncoding],
    map: impl Fn(&[usize]) -> (Vec<usize>, f64),
) -> Vec<(String, Terms, Terms)> {
    let mut labels: Vec<Vec<usize>> = vec![Vec::new()];
    for enc in encodings {
        labels = labels
            .into_iter()
            .flat_map(|l| {
                (0..enc.dim()).map(move |j| {
                    let mut l = l.clone();
                    l.push(j);
                    l
                })
            })
            .collect();
    }
    labels
        .into_iter()
        .map(|l| {
            let (out, sign) = map(&l);
            let input = LogicalEncoding::product(
                &encodings
                    .iter()
                    .copied()
                    .zip(l.iter().copied())
                    .collect::<Vec<_>>(),
            );
            let target = LogicalEncoding::product(
                &encodings
                    .iter()
                    .copied()
                    .zip(out.iter().copied())
                    .collect::<Vec<_>>(),
            );
            (
                label(&l),
                photons(&input),
                scale(&photons(&target), re(sign)),
            )
        })
        .collect()
}

/// Dual-rail CZ on two qubits: `M = 4`, SPM, four pairs.
pub fn cz_qubit_qubit() -> Result<TaskSpec> {
    let q = LogicalEncoding::dual_rail_qubit();
    let pairs = gate_pairs(&[&q, &q], |l| {
        (l.to_vec(), if l == [1, 1] { -1.0 } else { 1.0 })
    });
    TaskSpec::custom(
        "cz-spm",
        Layout::photonic(4, 2),
        NonlinearKind::Spm,
        pairs,
        settings(
            50,
            (0.725, 0.775),
            15.0,
            0.0,
            15.0,
            gate_init(1.0),
            Trainable::default(),
            Weights::default(),
            optimizer(0.01, 50_000, 1e-3),
        ),
    )
}

/// CZ between a dual-rail qubit (modes 0, 1) and a qutrit (modes 2, 3, 4):
/// only `|1,1⟩` picks up a sign.
pub fn cz_qubit_qutrit() -> Result<TaskSpec> {
    let q = LogicalEncoding::dual_rail_qubit();
    let t = LogicalEncoding::dual_rail_qutrit();
    let pairs = gate_pairs(&[&q, &t], |l| {
        (l.to_vec(), if l == [1, 1] { -1.0 } else { 1.0 })
    });
    TaskSpec::custom(
        "cz-qutrit",
        Layout::photonic(5, 2),
        NonlinearKind::Spm,
        pairs,
        settings(
            50,
            (0.84, 0.89),
            15.0,
            0.0,
            15.0,
            gate_init(1.0),
            Trainable::default(),
            Weights::default(),
            optimizer(0.01, 60_000, 1e-3),
        ),
    )
}

/// Three-qubit Toffoli: the third qubit flips when the first two are `|1⟩`.
pub fn toffoli() -> Result<TaskSpec> {
    let q = LogicalEncoding::dual_rail_qubit();
    let pairs = gate_pairs(&[&q, &q, &q], |l| {
        let mut out = l.to_vec();
        if l[0] == 1 && l[1] == 1 {
            out[2] = 1 - l[2];
        }
        (out, 1.0)
    });
    let init = InitSpec {
        x: GroupInit::new(0.0, 0.0),
        d_c: GroupInit::new(0.0, 0.0),
        ..gate_init(1.0)
    };
    let trainable = Trainable {
        x: false,
        ..Trainable::default()
    };
    TaskSpec::custom(
        "toffoli",
        Layout::photonic(6, 3),
        NonlinearKind::Spm,
        pairs,
        settings(
            80,
            (1.6, 2.4),
            150.0,
            0.0,
            150.0,
            init,
            trainable,
            Weights::default(),
            optimizer(0.012, 60_000, 3e-3),
        ),
    )
}

fn code(label: usize) -> Vec<(Complex64, Vec<u32>)> {
    LogicalEncoding::bosonic_code().states[label].clone()
}

fn fock2(a: u32, b: u32) -> Vec<(Complex64, Vec<u32>)> {
    vec![(re(1.0), vec![a, b])]
}

/// Loss-error branches instantiated at the logical basis amplitudes:
/// `E1 = α|3,0⟩ + β|1,2⟩`, `E2 = α|0,3⟩ + β|2,1⟩`.
fn error_state(branch: usize, label: usize) -> Vec<(Complex64, Vec<u32>)> {
    match (branch, label) {
        (1, 0) => fock2(3, 0),
        (1, _) => fock2(1, 2),
        (2, 0) => fock2(0, 3),
        _ => fock2(2, 1),
    }
}

fn half_half(a: &Terms, b: &Terms) -> Terms {
    add(&scale(a, re(FRAC_1_SQRT_2)), &scale(b, re(FRAC_1_SQRT_2)))
}

/// Superpositions at `α = β = 1/√2` of every branch that appears in `pairs`,
/// taken from consecutive `(α, β)` pairs.
fn superposition_probes(
    pairs: &[(String, Terms, Terms)],
    branches: &[&str],
) -> Vec<(String, Terms, Terms)> {
    branches
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let (a, b) = (&pairs[2 * i], &pairs[2 * i + 1]);
            (
                format!("{name} (a=b)"),
                half_half(&a.1, &b.1),
                half_half(&a.2, &b.2),
            )
        })
        .collect()
}

fn repeater_init() -> InitSpec {
    InitSpec {
        x: GroupInit::new(0.0, 0.0),
        d_c: GroupInit::new(1.0, 0.01),
        d_e: GroupInit::new(1.0, 0.01),
        k: GroupInit::new(0.0, 0.01),
        c: GroupInit::new(1.0, 0.0),
        seed: 0,
    }
}

/// First repeater step, SPM, ancilla in mode 2: restores loss in mode 0 and
/// leaves the ancilla empty; code and mode-1-loss inputs pass unchanged.
pub fn repeater_spm_step1() -> Result<TaskSpec> {
    let mut pairs = Vec::new();
    for l in 0..2 {
        let c = with_ancilla(&code(l), 1);
        pairs.push((format!("C{l}"), c.clone(), c));
    }
    for l in 0..2 {
        pairs.push((
            format!("E1{l}"),
            with_ancilla(&error_state(1, l), 1),
            with_ancilla(&code(l), 0),
        ));
    }
    for l in 0..2 {
        let e = with_ancilla(&error_state(2, l), 1);
        pairs.push((format!("E2{l}"), e.clone(), e));
    }
    let extra = superposition_probes(&pairs, &["C", "E1", "E2"]);
    repeater_spm_task(
        "repeater-spm-step1",
        pairs,
        extra,
        (5.06, 5.12),
        0.006,
        0.015,
    )
}

/// Second repeater step with a fresh ancilla photon: restores loss in mode 1.
pub fn repeater_spm_step2() -> Result<TaskSpec> {
    let mut pairs = Vec::new();
    for l in 0..2 {
        let c = with_ancilla(&code(l), 1);
        pairs.push((format!("C{l}"), c.clone(), c));
    }
    for l in 0..2 {
        pairs.push((
            format!("E2{l}"),
            with_ancilla(&error_state(2, l), 1),
            with_ancilla(&code(l), 0),
        ));
    }
    let extra = superposition_probes(&pairs, &["C", "E2"]);
    repeater_spm_task(
        "repeater-spm-step2",
        pairs,
        extra,
        (3.78, 3.84),
        0.0035,
        0.01,
    )
}

fn repeater_spm_task(
    name: &str,
    pairs: Vec<(String, Terms, Terms)>,
    extra: Vec<(String, Terms, Terms)>,
    window: (f64, f64),
    w_dc: f64,
    w_k: f64,
) -> Result<TaskSpec> {
    let trainable = Trainable {
        x: false,
        c: false,
        ..Trainable::default()
    };
    TaskSpec::with_probes(
        name,
        Layout::photonic(3, REPEATER_CUTOFF),
        NonlinearKind::Spm,
        pairs,
        extra,
        settings(
            640,
            window,
            10.0,
            0.0,
            10.0,
            repeater_init(),
            trainable,
            Weights {
                kappa: w_k,
                delta_c: w_dc,
                delta_e: 0.0,
            },
            optimizer(0.01, 30_000, 5e-4),
        ),
    )
}

/// Full repeater with one emitter per cavity as the ancilla: `|e,e⟩` marks
/// no loss, `|g,e⟩` loss in mode 0, `|e,g⟩` loss in mode 1.
pub fn repeater_tle() -> Result<TaskSpec> {
    const EE: [bool; 2] = [true, true];
    const GE: [bool; 2] = [false, true];
    const EG: [bool; 2] = [true, false];
    let mut pairs = Vec::new();
    for l in 0..2 {
        let c = with_emitters(&code(l), EE);
        pairs.push((format!("C{l}"), c.clone(), c));
    }
    for (branch, anc) in [(1, GE), (2, EG)] {
        for l in 0..2 {
            pairs.push((
                format!("E{branch}{l}"),
                with_emitters(&error_state(branch, l), EE),
                with_emitters(&code(l), anc),
            ));
        }
    }
    let extra = superposition_probes(&pairs, &["C", "E1", "E2"]);
    let trainable = Trainable {
        c: false,
        ..Trainable::default()
    };
    let init = InitSpec {
        x: GroupInit::new(0.0, 0.01),
        ..repeater_init()
    };
    TaskSpec::with_probes(
        "repeater-tle",
        Layout::with_emitters(2, 6),
        NonlinearKind::Tle,
        pairs,
        extra,
        settings(
            640,
            (16.72, 18.32),
            5.0,
            5.0,
            5.0,
            init,
            trainable,
            Weights {
                kappa: 0.002,
                delta_c: 0.005,
                delta_e: 0.005,
            },
            optimizer(0.01, 20_000, 1e-3),
        ),
    )
}

/// Names accepted by [`by_name`].
pub const TASK_NAMES: [&str; 6] = [
    "cz-spm",
    "cz-qutrit",
    "toffoli",
    "repeater-spm-step1",
    "repeater-spm-step2",
    "repeater-tle",
];

pub fn by_name(name: &str) -> Result<TaskSpec> {
    match name {
        "cz-spm" => cz_qubit_qubit(),
        "cz-qutrit" => cz_qubit_qutrit(),
        "toffoli" => toffoli(),
        "repeater-spm-step1" => repeater_spm_step1(),
        "repeater-spm-step2" => repeater_spm_step2(),
        "repeater-tle" => repeater_tle(),
        other => Err(Error::UnknownTask(other.to_string())),
    }
}

/// Per-mode cutoff of the SPM repeater layout; one above the largest sector
/// so a failed reset can still be represented.
pub const REPEATER_CUTOFF: usize = 6;

/// Outcome of chaining the two SPM repeater steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Composition {
    pub infidelity: f64,
    /// Lowest ancilla purity over all branches after step 1.
    pub min_purity: f64,
    /// Set when some branch left the ancilla entangled with the code modes.
    pub impure_ancilla: bool,
}

/// Purity below which [`compose_repeater`] raises `impure_ancilla`.
pub const PURITY_TOL: f64 = 1e-6;

enum Step<'a> {
    Schedule(&'a Schedule, BTreeMap<usize, Propagator>),
    Fixed(&'a [Propagator]),
}

impl Step<'_> {
    fn apply(&mut self, v: &StateVector) -> Result<StateVector> {
        let n = v.space.total_excitation();
        match self {
            Step::Schedule(schedule, cache) => {
                if let alloc::collections::btree_map::Entry::Vacant(e) = cache.entry(n) {
                    let model = SectorModel::new(v.space.clone(), NonlinearKind::Spm)?;
                    let u = evolve_with(&model, &schedule.bins, &schedule.coupling)?;
                    e.insert(u);
                }
                cache[&n].apply(v)
            }
            Step::Fixed(props) => props
                .iter()
                .find(|p| p.space.total_excitation() == n)
                .ok_or(Error::SectorMismatch {
                    expected: props.first().map_or(0, |p| p.space.total_excitation()),
                    found: n,
                })?
                .apply(v),
        }
    }
}

/// Applies step 1, empties and refills the ancilla (mode 2) with one photon,
/// applies step 2, and scores the result against the code state with the
/// ancilla left in `|1⟩` (no loss, loss in mode 0) or `|0⟩` (loss in mode 1).
///
/// The reset keeps, per branch, the component with the most probable ancilla
/// photon number, unnormalized so lost weight still counts against fidelity.
pub fn compose_repeater(step1: &Schedule, step2: &Schedule) -> Result<Composition> {
    for s in [step1, step2] {
        if s.kind != NonlinearKind::Spm || s.num_modes() != 3 {
            return Err(Error::Validation(
                "repeater composition needs two three-mode SPM schedules".into(),
            ));
        }
    }
    compose(
        Step::Schedule(step1, BTreeMap::new()),
        Step::Schedule(step2, BTreeMap::new()),
    )
}

/// [`compose_repeater`] with per-sector step propagators.
pub fn compose_repeater_propagators(
    step1: &[Propagator],
    step2: &[Propagator],
) -> Result<Composition> {
    compose(Step::Fixed(step1), Step::Fixed(step2))
}

fn compose(mut first: Step, mut second: Step) -> Result<Composition> {
    let mut b = Builder::new(Layout::photonic(3, REPEATER_CUTOFF));
    let mut sum = Complex64::new(0.0, 0.0);
    let mut min_purity = 1.0f64;
    let mut count = 0usize;
    for (branch, final_anc) in [(0usize, 1u32), (1, 1), (2, 0)] {
        for l in 0..2 {
            let input = if branch == 0 {
                code(l)
            } else {
                error_state(branch, l)
            };
            let v = b.state(&with_ancilla(&input, 1))?;
            let out1 = first.apply(&v)?;
            let n_total = out1.space.total_excitation();
            let mut probs = vec![0.0f64; n_total + 1];
            for (s, a) in out1.space.basis().iter().zip(out1.amplitudes.iter()) {
                probs[s.occupations[2] as usize] += a.norm_sqr();
            }
            let total: f64 = probs.iter().sum();
            let purity = probs.iter().map(|p| p * p).sum::<f64>() / (total * total);
            min_purity = min_purity.min(purity);
            let keep = probs
                .iter()
                .enumerate()
                .fold(0, |best, (i, p)| if *p > probs[best] { i } else { best });
            let refilled_n = n_total - keep + 1;
            let space = b.space(refilled_n)?;
            let mut refilled = StateVector::zeros(space.clone());
            for (s, a) in out1.space.basis().iter().zip(out1.amplitudes.iter()) {
                if s.occupations[2] as usize == keep {
                    let mut occ = s.occupations.clone();
                    occ[2] = 1;
                    let idx = space
                        .index_of(&BasisState::photons(&occ))
                        .ok_or_else(|| Error::Validation("refilled state exceeds cutoff".into()))?;
                    refilled.amplitudes[idx] = *a;
                }
            }
            let target_terms = with_ancilla(&code(l), final_anc);
            if target_terms[0].1.excitation() == refilled_n {
                let out2 = second.apply(&refilled)?;
                let target = b.state(&target_terms)?;
                sum += target.inner(&out2)?;
            }
            count += 1;
        }
    }
    let f = sum / count as f64;
    Ok(Composition {
        infidelity: (1.0 - f.norm_sqr()).max(0.0),
        min_purity,
        impure_ancilla: min_purity < 1.0 - PURITY_TOL,
    })
}

/// Exact unitary realizing a task on every sector it touches, built by
/// completing its input→target isometry. Used to check compositions.
pub fn ideal_propagators(task: &TaskSpec) -> Result<Vec<Propagator>> {
    task.batch
        .sectors()
        .iter()
        .map(|s| {
            let d = s.space.dim();
            let k = s.inputs.len();
            let cols = |v: &[StateVector]| CMatrix::from_fn(d, k, |i, j| v[j].amplitudes[i]);
            let a = complete_unitary(&cols(&s.inputs));
            let t = complete_unitary(&cols(&s.targets));
            Ok(Propagator {
                space: s.space.clone(),
                matrix: t * a.adjoint(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::ket;
    use crate::objective::infidelity;

    fn all() -> Vec<TaskSpec> {
        TASK_NAMES.iter().map(|n| by_name(n).unwrap()).collect()
    }

    fn overlaps_match(task: &TaskSpec) -> f64 {
        let probes = task.training_probes();
        let mut worst = 0.0f64;
        for a in probes {
            for b in probes {
                if a.input.space.total_excitation() != b.input.space.total_excitation() {
                    continue;
                }
                let i = a.input.inner(&b.input).unwrap();
                let t = a.target.inner(&b.target).unwrap();
                worst = worst.max((i - t).norm());
            }
        }
        worst
    }

    #[test]
    fn targets_are_isometric_images() {
        for task in all() {
            assert!(overlaps_match(&task) < 1e-14, "{}", task.name);
        }
    }

    #[test]
    fn inputs_are_orthonormal() {
        for task in all() {
            let p = task.training_probes();
            for (i, a) in p.iter().enumerate() {
                for (j, b) in p.iter().enumerate() {
                    if a.input.space.total_excitation() != b.input.space.total_excitation() {
                        continue;
                    }
                    let o = a.input.inner(&b.input).unwrap().norm();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((o - want).abs() < 1e-14, "{} {i} {j}", task.name);
                }
            }
        }
    }

    #[test]
    fn encodings_are_orthonormal() {
        for enc in [
            LogicalEncoding::dual_rail_qubit(),
            LogicalEncoding::dual_rail_qutrit(),
            LogicalEncoding::bosonic_code(),
        ] {
            for a in 0..enc.dim() {
                for b in 0..enc.dim() {
                    let mut dot = Complex64::new(0.0, 0.0);
                    for (ca, oa) in &enc.states[a] {
                        for (cb, ob) in &enc.states[b] {
                            if oa == ob {
                                dot += ca.conj() * cb;
                            }
                        }
                    }
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((dot.norm() - want).abs() < 1e-15, "{}", enc.name);
                }
            }
        }
    }

    #[test]
    fn sizes_and_sectors() {
        let dims = |t: &TaskSpec| -> Vec<(usize, usize)> {
            t.batch
                .sectors()
                .iter()
                .map(|s| (s.space.total_excitation(), s.space.dim()))
                .collect()
        };
        let cz = cz_qubit_qubit().unwrap();
        assert_eq!((cz.batch.num_pairs(), dims(&cz)), (4, vec![(2, 10)]));
        let qt = cz_qubit_qutrit().unwrap();
        assert_eq!((qt.batch.num_pairs(), dims(&qt)), (6, vec![(2, 15)]));
        let tof = toffoli().unwrap();
        assert_eq!((tof.batch.num_pairs(), dims(&tof)), (8, vec![(3, 56)]));
        let r1 = repeater_spm_step1().unwrap();
        assert_eq!(
            (r1.batch.num_pairs(), dims(&r1)),
            (6, vec![(5, 21), (4, 15)])
        );
        let r2 = repeater_spm_step2().unwrap();
        assert_eq!(r2.batch.num_pairs(), 4);
        let tle = repeater_tle().unwrap();
        assert_eq!(tle.batch.num_pairs(), 6);
        assert_eq!(dims(&tle)[0], (6, 24));
        assert_eq!(dims(&tle)[1].0, 5);
    }

    fn probe<'a>(t: &'a TaskSpec, label: &str) -> &'a Probe {
        t.probes.iter().find(|p| p.label == label).unwrap()
    }

    #[test]
    fn gate_truth_tables() {
        let cz = cz_qubit_qubit().unwrap();
        let p = probe(&cz, "|11>");
        assert_eq!(p.target.amplitudes, -p.input.amplitudes.clone());
        let p = probe(&cz, "|01>");
        assert_eq!(p.target.amplitudes, p.input.amplitudes);
        let s = &p.input.space;
        assert_eq!(
            p.input.amplitudes,
            ket(s, &[1, 0, 0, 1], &[]).unwrap().amplitudes
        );

        let qt = cz_qubit_qutrit().unwrap();
        assert_eq!(qt.probes[5].label, "|12>");
        assert_eq!(
            qt.probes[5].target.amplitudes,
            qt.probes[5].input.amplitudes
        );
        let p = probe(&qt, "|11>");
        assert_eq!(p.target.amplitudes, -p.input.amplitudes.clone());

        let tof = toffoli().unwrap();
        let a = probe(&tof, "|110>");
        let b = probe(&tof, "|111>");
        assert_eq!(a.target.amplitudes, b.input.amplitudes);
        assert_eq!(b.target.amplitudes, a.input.amplitudes);
        let c = probe(&tof, "|011>");
        assert_eq!(c.target.amplitudes, c.input.amplitudes);
    }

    #[test]
    fn repeater_branches() {
        let r1 = repeater_spm_step1().unwrap();
        let p = probe(&r1, "E10");
        let s5 = &r1.batch.sectors()[0].space;
        let s4 = p.input.space.clone();
        assert_eq!(
            p.input.amplitudes,
            ket(&s4, &[3, 0, 1], &[]).unwrap().amplitudes
        );
        let h = FRAC_1_SQRT_2;
        let want = ket(&s4, &[4, 0, 0], &[]).unwrap().amplitudes * re(h)
            + ket(&s4, &[0, 4, 0], &[]).unwrap().amplitudes * re(h);
        assert!((&p.target.amplitudes - want).norm() < 1e-15);
        assert_eq!(s5.total_excitation(), 5);
        for l in ["E20", "E21", "C0", "C1"] {
            let p = probe(&r1, l);
            assert_eq!(p.input.amplitudes, p.target.amplitudes);
        }

        let tle = repeater_tle().unwrap();
        let p = probe(&tle, "E11");
        let s = p.input.space.clone();
        assert_eq!(
            p.input.amplitudes,
            ket(&s, &[1, 2], &[true, true]).unwrap().amplitudes
        );
        assert_eq!(
            p.target.amplitudes,
            ket(&s, &[2, 2], &[false, true]).unwrap().amplitudes
        );
        assert_eq!(tle.probes.len(), 9);
    }

    #[test]
    fn ideal_unitaries_solve_their_tasks() {
        for task in all() {
            let props = ideal_propagators(&task).unwrap();
            assert!(
                infidelity(&task.batch, &props).unwrap() < 1e-14,
                "{}",
                task.name
            );
            for p in &props {
                assert!(p.unitarity_error() < 1e-12);
            }
        }
    }

    #[test]
    fn composition_of_ideal_steps_is_exact() {
        let u1 = ideal_propagators(&repeater_spm_step1().unwrap()).unwrap();
        let u2 = ideal_propagators(&repeater_spm_step2().unwrap()).unwrap();
        let c = compose_repeater_propagators(&u1, &u2).unwrap();
        assert!(c.infidelity < 1e-14, "{c:?}");
        assert!(!c.impure_ancilla);

        let id: Vec<Propagator> = u2
            .iter()
            .map(|p| Propagator::identity(p.space.clone()))
            .collect();
        let c = compose_repeater_propagators(&u1, &id).unwrap();
        let want = 1.0 - (4.0f64 / 6.0).powi(2);
        assert!((c.infidelity - want).abs() < 1e-12, "{c:?}");
        assert!(c.infidelity > 0.1);
    }

    #[test]
    fn unknown_task_name() {
        assert!(matches!(by_name("nope"), Err(Error::UnknownTask(_))));
    }
}
