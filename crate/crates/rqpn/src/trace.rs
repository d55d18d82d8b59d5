//! Observable time series along a schedule.
//!
//! Each bin is split into `⌈Δt/δt⌉` equal sub-steps. The Hamiltonian is
//! constant inside a bin, so every sub-step is an exact exponential and the
//! samples at bin edges agree with the full propagator.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rqpn_core::controls::Schedule;
use rqpn_core::hilbert::{
    excited_probability, mean_occupation, occupation_probability, StateVector,
};
use rqpn_core::model::{ControlBin, NonlinearKind, SectorModel};
use rqpn_core::propagate::bin_propagator;
use rqpn_core::tasks::{Probe, TaskSpec};
use rqpn_core::CMatrix;

/// One sample of one probe.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub bin: usize,
    pub kappa: Vec<f64>,
    pub delta_c: Vec<f64>,
    pub delta_e: Vec<f64>,
    /// `populations[m][n] = P(n_m = n)` for `n = 0..=N`.
    pub populations: Vec<Vec<f64>>,
    pub mean_photons: Vec<f64>,
    pub excited: Vec<f64>,
    /// `|⟨target|ψ(t)⟩|²`.
    pub target_overlap: f64,
}

/// Trace of one probe state.
#[derive(Debug, Clone)]
pub struct ProbeTrace {
    pub label: String,
    pub excitation: usize,
    pub samples: Vec<Sample>,
}

fn observe(
    state: &StateVector,
    target: &StateVector,
    time: f64,
    bin: usize,
    controls: &ControlBin,
    kind: NonlinearKind,
) -> anyhow::Result<Sample> {
    let m = state.space.layout().num_modes;
    let n = state.space.total_excitation();
    Ok(Sample {
        time,
        bin,
        kappa: controls.kappa.clone(),
        delta_c: controls.delta_c.clone(),
        delta_e: controls.delta_e.clone(),
        populations: (0..m)
            .map(|i| {
                (0..=n as u32)
                    .map(|k| occupation_probability(state, i, k))
                    .collect()
            })
            .collect(),
        mean_photons: (0..m).map(|i| mean_occupation(state, i)).collect(),
        excited: match kind {
            NonlinearKind::Spm => Vec::new(),
            NonlinearKind::Tle => (0..m).map(|i| excited_probability(state, i)).collect(),
        },
        target_overlap: target.inner(state)?.norm_sqr(),
    })
}

/// Re-propagates every probe of `task` through `schedule` at resolution
/// `resolution` (in units of 1/Γ_NL).
pub fn trace(
    task: &TaskSpec,
    schedule: &Schedule,
    resolution: f64,
) -> anyhow::Result<Vec<ProbeTrace>> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        bail!("resolution must be positive, got {resolution}");
    }
    if schedule.kind != task.kind || schedule.num_modes() != task.layout.num_modes {
        bail!(
            "schedule ({:?}, {} modes) does not fit task '{}' ({:?}, {} modes)",
            schedule.kind,
            schedule.num_modes(),
            task.name,
            task.kind,
            task.layout.num_modes
        );
    }
    // Sub-step propagators per (sector, bin), shared by probes of a sector.
    let mut steps: HashMap<usize, Vec<(usize, CMatrix)>> = HashMap::new();
    let mut out = Vec::new();
    for Probe {
        label,
        input,
        target,
    } in &task.probes
    {
        let n = input.space.total_excitation();
        if let std::collections::hash_map::Entry::Vacant(e) = steps.entry(n) {
            let model = SectorModel::new(input.space.clone(), task.kind)?;
            let mut per_bin = Vec::with_capacity(schedule.bins.len());
            for bin in &schedule.bins {
                let k = (bin.dt / resolution).ceil().max(1.0) as usize;
                let sub = ControlBin {
                    dt: bin.dt / k as f64,
                    ..bin.clone()
                };
                per_bin.push((k, bin_propagator(&model, &sub, &schedule.coupling)?));
            }
            e.insert(per_bin);
        }
        let per_bin = &steps[&n];
        let mut state = input.clone();
        let mut t = 0.0;
        let mut samples = vec![observe(&state, target, t, 0, &schedule.bins[0], task.kind)?];
        for (p, (bin, (k, u))) in schedule.bins.iter().zip(per_bin).enumerate() {
            let start = t;
            for j in 1..=*k {
                state.amplitudes = u * &state.amplitudes;
                t = if j == *k {
                    start + bin.dt
                } else {
                    start + bin.dt * j as f64 / *k as f64
                };
                samples.push(observe(&state, target, t, p, bin, task.kind)?);
            }
        }
        out.push(ProbeTrace {
            label: label.clone(),
            excitation: n,
            samples,
        });
    }
    Ok(out)
}

fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

/// Writes one CSV per probe, `trace-<label>.csv`.
pub fn write_traces(dir: &Path, traces: &[ProbeTrace]) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut paths = Vec::new();
    for (i, tr) in traces.iter().enumerate() {
        let path = dir.join(format!("trace-{i:02}-{}.csv", file_label(&tr.label)));
        let mut w = csv::Writer::from_path(&path)?;
        let first = &tr.samples[0];
        let m = first.kappa.len();
        let mut header = vec!["time".to_string(), "bin".into()];
        header.extend((0..m).map(|i| format!("kappa_{i}")));
        header.extend((0..m).map(|i| format!("delta_c_{i}")));
        header.extend((0..first.delta_e.len()).map(|i| format!("delta_e_{i}")));
        header.extend((0..m).map(|i| format!("mean_n_{i}")));
        for i in 0..m {
            header.extend((0..=tr.excitation).map(|n| format!("p{n}_{i}")));
        }
        header.extend((0..first.excited.len()).map(|i| format!("excited_{i}")));
        header.push("target_overlap".into());
        w.write_record(&header)?;
        for s in &tr.samples {
            let mut row = vec![format!("{}", s.time), s.bin.to_string()];
            let nums = s
                .kappa
                .iter()
                .chain(&s.delta_c)
                .chain(&s.delta_e)
                .chain(&s.mean_photons)
                .chain(s.populations.iter().flatten())
                .chain(&s.excited)
                .chain(std::iter::once(&s.target_overlap));
            row.extend(nums.map(|x| format!("{x}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}
