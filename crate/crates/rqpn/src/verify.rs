//! Oracle suite behind `rqpn verify`: every check compares the production
//! code against an independent construction or a closed form.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::sync::Arc;

use rqpn_core::bounds::{analytic_cz_circuit, cz_min_duration, phase_offset_infidelity};
use rqpn_core::controls::{initialize, materialize, Bounds, GroupInit, InitSpec, Shape, Trainable};
use rqpn_core::hilbert::{
    annihilation, build_space, ket, number, sigma, HilbertSpace, Layout, Operator,
};
use rqpn_core::mixing::{coupling_from_scattering, scattering_from_coupling, CouplingMatrix};
use rqpn_core::model::{build_hamiltonian, ControlBin, NonlinearKind};
use rqpn_core::objective::{infidelity, Objective, TaskBatch, Weights};
use rqpn_core::propagate::{expm_step, Propagator};
use rqpn_core::tasks::cz_qubit_qubit;
use rqpn_core::{CMatrix, Complex64};

/// `exp(−iH dt)`; swappable so tests can inject a faulty exponential.
pub type ExpmFn = fn(&Operator, f64) -> rqpn_core::Result<Propagator>;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Worst observed error.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }

    fn failed(name: impl Into<String>, why: &str) -> Self {
        Self {
            name: format!("{} ({why})", name.into()),
            value: f64::NAN,
            tolerance: 0.0,
            passed: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub expm: ExpmFn,
    pub gradient_instances: usize,
    pub coupling_cases: usize,
    pub unitarity_bins: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            expm: expm_step,
            gradient_instances: 20,
            coupling_cases: 100,
            unitarity_bins: 640,
            seed: 2024,
        }
    }
}

fn unit(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn max_abs(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

fn unitarity_error(u: &CMatrix) -> f64 {
    max_abs(&(u.adjoint() * u), &CMatrix::identity(u.nrows(), u.ncols()))
}

fn spec(seed: u64, noise: f64) -> InitSpec {
    let g = GroupInit::new(0.0, noise);
    InitSpec {
        x: g,
        d_c: g,
        d_e: g,
        k: g,
        c: g,
        seed,
    }
}

fn random_bins(
    seed: u64,
    num_modes: usize,
    num_bins: usize,
    kind: NonlinearKind,
) -> rqpn_core::Result<rqpn_core::controls::Schedule> {
    let shape = Shape {
        num_modes,
        num_bins,
        kind,
    };
    let params = initialize(&spec(seed, 1.5), shape, Trainable::default())?;
    let bounds = Bounds {
        tau_min: 0.005,
        tau_max: 0.02,
        dc: 10.0,
        de: 10.0,
        k: 10.0,
    };
    materialize(&params, &bounds)
}

/// Analytic CZ circuit and duration bound.
pub fn check_bounds() -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.push(CheckResult::new(
        "cz_min_duration(0.001) vs 0.7537",
        (cz_min_duration(1e-3).unwrap_or(f64::NAN) - 0.7537).abs(),
        5e-4,
    ));
    let task = match cz_qubit_qubit() {
        Ok(t) => t,
        Err(e) => return vec![CheckResult::failed("cz task", &e.to_string())],
    };
    let cz_inf = |phase: f64| -> f64 {
        analytic_cz_circuit(phase, true)
            .and_then(|u| infidelity(&task.batch, &[u]))
            .unwrap_or(f64::NAN)
    };
    out.push(CheckResult::new(
        "analytic CZ at phase pi/2",
        cz_inf(FRAC_PI_2),
        1e-12,
    ));
    let worst = (0..50)
        .map(|i| {
            let x = 0.2 * f64::from(i) / 49.0;
            (cz_inf(FRAC_PI_2 - x) - phase_offset_infidelity(x)).abs()
        })
        .fold(0.0, f64::max);
    out.push(CheckResult::new(
        "analytic CZ offset law, 50 points",
        worst,
        1e-12,
    ));
    let inverse = (0..=50)
        .map(|i| {
            let x = FRAC_PI_2 * f64::from(i) / 50.0;
            (cz_min_duration(phase_offset_infidelity(x)).unwrap_or(f64::NAN)
                - (FRAC_PI_4 - x / 2.0))
                .abs()
        })
        .fold(0.0, f64::max);
    out.push(CheckResult::new(
        "bound and offset law are inverse",
        inverse,
        1e-12,
    ));
    out
}

/// `C → S → C` round trips and real symmetry of `C(S)`.
pub fn check_coupling(opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut sym = 0.0f64;
    let mut trip = 0.0f64;
    let mut failures = 0usize;
    for case in 0..opts.coupling_cases {
        let m = 2 + case % 5;
        let shape = Shape {
            num_modes: m,
            num_bins: 1,
            kind: NonlinearKind::Spm,
        };
        let drawn = initialize(
            &spec(opts.seed ^ (0x5eed + case as u64), 1.0),
            shape,
            Trainable::default(),
        )
        .and_then(|p| p.coupling());
        let c = match drawn {
            Ok(c) => c,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        match scattering_from_coupling(&c).and_then(|s| Ok((coupling_from_scattering(&s)?, s))) {
            Ok((back, s)) => {
                let e = c.entries();
                let b = back.entries();
                trip = trip.max((e - b).abs().max() / e.abs().max().max(1.0));
                // Independent construction of C from S: (M − M†)/2i with M = S_RL (1 − S_RL)⁻¹.
                let srl = s.entries().transpose() * s.entries();
                let id = CMatrix::identity(m, m);
                if let Some(inv) = (&id - &srl).try_inverse() {
                    let mm = &srl * inv;
                    let cc = (&mm - mm.adjoint()) / Complex64::new(0.0, 2.0);
                    let asym = max_abs(&cc, &cc.transpose());
                    let imag = cc.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
                    sym = sym.max(asym.max(imag));
                } else {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    let mut out = vec![
        CheckResult::new(
            format!("C(S) real symmetric, {} cases", opts.coupling_cases),
            sym,
            1e-10,
        ),
        CheckResult::new(
            format!("C -> S -> C round trip, {} cases", opts.coupling_cases),
            trip,
            1e-8,
        ),
    ];
    if failures > 0 {
        out.push(CheckResult::failed(
            "coupling round trips",
            &format!("{failures} cases errored"),
        ));
    }
    out
}

/// A small task with a cyclic-shift target on the lowest sector kets.
fn gradient_task(m: usize, kind: NonlinearKind) -> rqpn_core::Result<TaskBatch> {
    let (layout, n) = match kind {
        NonlinearKind::Spm => (Layout::photonic(m, 2), 2),
        NonlinearKind::Tle => (Layout::with_emitters(m, 2), 2),
    };
    let space: Arc<HilbertSpace> = Arc::new(build_space(layout, n)?);
    let basis: Vec<_> = space.basis().iter().take(3).cloned().collect();
    let kets = basis
        .iter()
        .map(|b| ket(&space, &b.occupations, &b.emitters))
        .collect::<rqpn_core::Result<Vec<_>>>()?;
    let k = kets.len();
    let pairs = (0..k)
        .map(|j| {
            let phase = Complex64::from_polar(1.0, 0.7 * j as f64);
            (kets[j].clone(), kets[(j + 1) % k].scaled(phase))
        })
        .collect();
    TaskBatch::from_pairs(pairs)
}

/// Relative error of the analytic gradient against central differences on
/// one random instance.
pub fn gradient_error(instance: usize, seed: u64) -> rqpn_core::Result<f64> {
    let kind = if instance % 2 == 0 {
        NonlinearKind::Spm
    } else {
        NonlinearKind::Tle
    };
    let m = 2 + (instance / 2) % 2;
    let num_bins = 3 + instance % 3;
    let trainable = Trainable {
        c: instance % 4 < 2,
        x: instance % 5 != 4,
        ..Trainable::default()
    };
    let batch = gradient_task(m, kind)?;
    let bounds = Bounds {
        tau_min: 0.1,
        tau_max: 0.3,
        dc: 4.0,
        de: 3.0,
        k: 5.0,
    };
    let weights = Weights {
        kappa: 0.02,
        delta_c: 0.01,
        delta_e: 0.03,
    };
    let objective = Objective::new(&batch, kind, bounds, weights)?;
    let shape = Shape {
        num_modes: m,
        num_bins,
        kind,
    };
    let mut params = initialize(
        &spec(seed.wrapping_add(instance as u64), 0.8),
        shape,
        trainable,
    )?;
    let (_, grad) = objective.cost_and_gradient(&params)?;
    let mask = params.trainable_mask();
    let theta = params.to_flat();
    let h = 1e-6;
    let mut fd = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        if !mask[i] {
            continue;
        }
        let mut t = theta.clone();
        t[i] = theta[i] + h;
        params.set_flat(&t)?;
        let up = objective.cost(&params)?.total;
        t[i] = theta[i] - h;
        params.set_flat(&t)?;
        let down = objective.cost(&params)?.total;
        fd[i] = (up - down) / (2.0 * h);
    }
    let scale = fd.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-3);
    let frozen_leak = grad
        .iter()
        .zip(&mask)
        .filter(|(_, t)| !**t)
        .map(|(g, _)| g.abs())
        .fold(0.0, f64::max);
    let err = grad
        .iter()
        .zip(&fd)
        .map(|(g, f)| (g - f).abs())
        .fold(0.0, f64::max);
    Ok(if frozen_leak > 0.0 {
        f64::INFINITY
    } else {
        err / scale
    })
}

pub fn check_gradients(opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut worst = 0.0f64;
    for i in 0..opts.gradient_instances {
        match gradient_error(i, opts.seed) {
            Ok(e) => worst = worst.max(e),
            Err(e) => {
                return vec![CheckResult::failed(
                    "gradient vs finite differences",
                    &e.to_string(),
                )]
            }
        }
    }
    vec![CheckResult::new(
        format!(
            "gradient vs central differences, {} instances (SPM/TLE, C on/off)",
            opts.gradient_instances
        ),
        worst,
        1e-5,
    )]
}

/// Unitarity of a long product of bin exponentials computed by `opts.expm`.
pub fn check_unitarity(opts: &VerifyOptions) -> Vec<CheckResult> {
    let run = || -> rqpn_core::Result<f64> {
        let mut worst = 0.0f64;
        for (kind, layout, n) in [
            (NonlinearKind::Spm, Layout::photonic(3, 3), 3),
            (NonlinearKind::Tle, Layout::with_emitters(2, 3), 3),
        ] {
            let space = Arc::new(build_space(layout, n)?);
            let schedule = random_bins(opts.seed, layout.num_modes, opts.unitarity_bins, kind)?;
            let d = space.dim();
            let mut u = CMatrix::identity(d, d);
            for bin in &schedule.bins {
                let h = build_hamiltonian(&space, &schedule.coupling, bin, kind)?;
                u = (opts.expm)(&h, bin.dt)?.matrix * u;
            }
            worst = worst.max(unitarity_error(&u));
        }
        Ok(worst)
    };
    let name = format!("unitarity over {}-bin products", opts.unitarity_bins);
    match run() {
        Ok(v) => vec![CheckResult::new(name, v, 1e-9)],
        Err(e) => vec![CheckResult::failed(name, &e.to_string())],
    }
}

/// Sector Hamiltonians against a construction from ladder operators that
/// pass through the neighbouring sectors, plus evolved excitation number.
pub fn check_conservation(opts: &VerifyOptions) -> Vec<CheckResult> {
    let run = || -> rqpn_core::Result<f64> {
        let mut worst = 0.0f64;
        for (kind, layout, n) in [
            (NonlinearKind::Spm, Layout::photonic(3, 3), 3),
            (NonlinearKind::Tle, Layout::with_emitters(2, 3), 3),
        ] {
            let m = layout.num_modes;
            let space = Arc::new(build_space(layout, n)?);
            let schedule = random_bins(opts.seed ^ 0xc0, m, 3, kind)?;
            let bin: &ControlBin = &schedule.bins[1];
            let c: &CouplingMatrix = &schedule.coupling;
            let lower = (0..m)
                .map(|i| annihilation(&space, i))
                .collect::<rqpn_core::Result<Vec<_>>>()?;
            let d = space.dim();
            let mut h = CMatrix::zeros(d, d);
            for i in 0..m {
                h += number(&space, i)?.matrix * unit(bin.delta_c[i]);
                for j in 0..m {
                    let g = c.get(i, j) * (bin.kappa[i] * bin.kappa[j]).sqrt();
                    h += lower[i].matrix.adjoint() * &lower[j].matrix * unit(g);
                }
                match kind {
                    NonlinearKind::Spm => {
                        let mid = lower[i].to.clone().expect("sector above vacuum");
                        let twice = annihilation(&mid, i)?;
                        let aa = &twice.matrix * &lower[i].matrix;
                        h -= aa.adjoint() * aa;
                    }
                    NonlinearKind::Tle => {
                        let s = sigma(&space, i)?;
                        let x = lower[i].matrix.adjoint() * &s.matrix;
                        h += &x + x.adjoint();
                        h += s.matrix.adjoint() * &s.matrix * unit(bin.delta_e[i]);
                    }
                }
            }
            let model = build_hamiltonian(&space, c, bin, kind)?;
            worst = worst.max(max_abs(&h, &model.matrix));
            let u = (opts.expm)(&model, bin.dt)?;
            let first = space.basis()[0].clone();
            let psi = u.apply(&ket(&space, &first.occupations, &first.emitters)?)?;
            let excitation: f64 = space
                .basis()
                .iter()
                .zip(psi.amplitudes.iter())
                .map(|(b, a)| b.excitation() as f64 * a.norm_sqr())
                .sum();
            worst = worst.max((excitation / psi.norm().powi(2) - n as f64).abs());
        }
        Ok(worst)
    };
    let name = "excitation conservation (ladder-operator Hamiltonian)";
    match run() {
        Ok(v) => vec![CheckResult::new(name, v, 1e-12)],
        Err(e) => vec![CheckResult::failed(name, &e.to_string())],
    }
}

/// Infidelity is blind to a phase common to all pairs.
pub fn check_global_phase(opts: &VerifyOptions) -> Vec<CheckResult> {
    let run = || -> rqpn_core::Result<f64> {
        let task = cz_qubit_qubit()?;
        let space = task.batch.sectors()[0].space.clone();
        let schedule = random_bins(opts.seed ^ 0xfa, 4, 5, NonlinearKind::Spm)?;
        let model = rqpn_core::model::SectorModel::new(space, NonlinearKind::Spm)?;
        let u = rqpn_core::propagate::evolve_with(&model, &schedule.bins, &schedule.coupling)?;
        let base = infidelity(&task.batch, std::slice::from_ref(&u))?;
        let mut worst = 0.0f64;
        for phi in [0.3, 1.7, -2.9] {
            let shifted = Propagator {
                space: u.space.clone(),
                matrix: &u.matrix * Complex64::from_polar(1.0, phi),
            };
            worst = worst.max((infidelity(&task.batch, &[shifted])? - base).abs());
        }
        Ok(worst)
    };
    let name = "infidelity global-phase invariance";
    match run() {
        Ok(v) => vec![CheckResult::new(name, v, 1e-14)],
        Err(e) => vec![CheckResult::failed(name, &e.to_string())],
    }
}

/// Every check in order.
pub fn run_all(opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut out = check_bounds();
    out.extend(check_coupling(opts));
    out.extend(check_gradients(opts));
    out.extend(check_unitarity(opts));
    out.extend(check_conservation(opts));
    out.extend(check_global_phase(opts));
    out
}

/// Fixed-width pass/fail table.
pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(10);
    let mut s = String::new();
    for r in results {
        s.push_str(&format!(
            "{:<4}  {:<width$}  {:>10.3e}  (tol {:.0e})\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.value,
            r.tolerance,
        ));
    }
    s
}
