//! End-to-end properties across tasks, controls, propagation and the
//! optimizer.

use std::f64::consts::FRAC_PI_2;

use proptest::prelude::*;
use rqpn_core::bounds::{analytic_cz_circuit, phase_offset_infidelity};
use rqpn_core::controls::{initialize, materialize, GroupInit, InitSpec, Shape, Trainable};
use rqpn_core::hilbert::{BasisState, Layout};
use rqpn_core::model::NonlinearKind;
use rqpn_core::objective::{infidelity, schedule_infidelity, Objective, Weights};
use rqpn_core::optimize::{run, OptimizerConfig, Silent};
use rqpn_core::propagate::evolve;
use rqpn_core::tasks::{self, TaskSpec};
use rqpn_core::Complex64;

fn identity_task() -> TaskSpec {
    let one = Complex64::new(1.0, 0.0);
    let pair = |occ: [u32; 4]| {
        let t = vec![(one, BasisState::photons(&occ))];
        (format!("{occ:?}"), t.clone(), t)
    };
    let mut defaults = tasks::cz_qubit_qubit().unwrap().defaults;
    defaults.num_bins = 8;
    defaults.init = InitSpec {
        x: GroupInit::new(0.0, 0.1),
        d_c: GroupInit::new(0.0, 0.1),
        d_e: GroupInit::new(0.0, 0.0),
        k: GroupInit::new(-30.0, 0.1),
        c: GroupInit::new(0.0, 0.1),
        seed: 3,
    };
    defaults.optimizer = OptimizerConfig::new(0.01, 100, 1e-6);
    TaskSpec::custom(
        "identity",
        Layout::photonic(4, 2),
        NonlinearKind::Spm,
        vec![
            pair([1, 0, 1, 0]),
            pair([1, 0, 0, 1]),
            pair([0, 1, 1, 0]),
            pair([0, 1, 0, 1]),
        ],
        defaults,
    )
    .unwrap()
}

#[test]
fn identity_target_converges_fast() {
    let task = identity_task();
    let rec = run(&task, &task.defaults, &mut Silent).unwrap();
    assert!(rec.converged);
    assert!(rec.final_infidelity < 1e-6);
    assert!(rec.cost_history.len() <= 101);
}

#[test]
fn gradient_of_infidelity_vanishes_at_optimum() {
    // Slightly off-identity start so the trajectory has a gradient to lose.
    let task = identity_task();
    let mut settings = task.defaults;
    settings.init.k = GroupInit::new(-1.0, 0.3);
    settings.optimizer.max_epochs = 3000;
    let objective =
        Objective::new(&task.batch, task.kind, settings.bounds, Weights::default()).unwrap();
    let rec = run(&task, &settings, &mut Silent).unwrap();
    assert!(rec.final_infidelity < 1e-6, "I = {}", rec.final_infidelity);
    // With zero weights, E = ln I, so ∇I = I ∇E.
    let grad_i = |p: &rqpn_core::controls::ControlParams| {
        let (cb, g) = objective.cost_and_gradient(p).unwrap();
        g.iter()
            .map(|x| x * cb.infidelity)
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    };
    let start = initialize(
        &InitSpec {
            seed: settings.optimizer.seed,
            ..settings.init
        },
        rec.best_params.shape,
        settings.trainable,
    )
    .unwrap();
    let g0 = grad_i(&start);
    let g1 = grad_i(&rec.best_params);
    assert!(
        g1 < 1e-2 * g0,
        "|grad I| {g1:e} at optimum vs {g0:e} at start"
    );
}

#[test]
fn analytic_cz_cost_is_log_of_offset_law() {
    let task = tasks::cz_qubit_qubit().unwrap();
    for x in [0.02, 0.1, 0.3] {
        let u = analytic_cz_circuit(FRAC_PI_2 - x, true).unwrap();
        let i = infidelity(&task.batch, &[u]).unwrap();
        assert!((i.ln() - phase_offset_infidelity(x).ln()).abs() < 1e-9);
    }
}

#[test]
fn every_task_is_unreached_by_idle_controls_except_trivial_branches() {
    for name in tasks::TASK_NAMES {
        let task = tasks::by_name(name).unwrap();
        let shape = Shape {
            num_modes: task.layout.num_modes,
            num_bins: 2,
            kind: task.kind,
        };
        let p = initialize(&task.defaults.init, shape, task.defaults.trainable).unwrap();
        let mut b = task.defaults.bounds;
        b.tau_min = 1e-6;
        b.tau_max = 2e-6;
        let s = materialize(&p, &b).unwrap();
        let i = schedule_infidelity(&task.batch, &s).unwrap();
        assert!((0.0..=1.0).contains(&i), "{name}: {i}");
        assert!(
            i > 1e-3,
            "{name}: a near-instant schedule should not solve the task"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_schedules_stay_in_bounds_and_unitary(seed in 0u64..10_000, bins in 1usize..6, tle in any::<bool>()) {
        let kind = if tle { NonlinearKind::Tle } else { NonlinearKind::Spm };
        let task = if tle { tasks::repeater_tle().unwrap() } else { tasks::cz_qubit_qubit().unwrap() };
        let shape = Shape { num_modes: task.layout.num_modes, num_bins: bins, kind };
        let spec = InitSpec {
            x: GroupInit::new(0.0, 2.0),
            d_c: GroupInit::new(0.0, 2.0),
            d_e: GroupInit::new(0.0, 2.0),
            k: GroupInit::new(0.0, 2.0),
            c: GroupInit::new(0.0, 1.0),
            seed,
        };
        let p = initialize(&spec, shape, Trainable::default()).unwrap();
        let bounds = task.defaults.bounds;
        let s = materialize(&p, &bounds).unwrap();
        prop_assert!(s.check_bounds(&bounds, 1e-12).is_ok());
        let t = s.duration();
        let n = bins as f64;
        prop_assert!(t >= n * bounds.tau_min * (1.0 - 1e-12) && t <= n * bounds.tau_max * (1.0 + 1e-12));
        for sector in task.batch.sectors() {
            let u = evolve(&s.bins, &s.coupling, kind, &sector.space).unwrap();
            prop_assert!(u.unitarity_error() < 1e-10);
        }
        let i = schedule_infidelity(&task.batch, &s).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&i));
    }

    #[test]
    fn frozen_groups_never_move(seed in 0u64..1000) {
        let task = identity_task();
        let mut settings = task.defaults;
        settings.optimizer.seed = seed;
        settings.optimizer.max_epochs = 5;
        settings.optimizer.infidelity_threshold = 1e-12;
        settings.init.k = GroupInit::new(0.0, 0.3);
        settings.optimizer.restarts = 1;
        settings.trainable = Trainable { x: false, d_c: true, d_e: false, k: false, c: true };
        let start = initialize(&InitSpec { seed, ..settings.init }, Shape {
            num_modes: 4, num_bins: settings.num_bins, kind: NonlinearKind::Spm }, settings.trainable).unwrap();
        let rec = run(&task, &settings, &mut Silent).unwrap();
        prop_assert_eq!(&rec.best_params.x, &start.x);
        prop_assert_eq!(&rec.best_params.k, &start.k);
    }
}
