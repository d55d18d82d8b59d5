//! Command-line behaviour: exit codes, file round trips, resume and trace.

use std::path::Path;
use std::process::Command;

use rqpn::files::{self, CHECKPOINT_FILE, COUPLING_FILE, RECORD_FILE, SCHEDULE_FILE};
use rqpn::verify::{check_unitarity, VerifyOptions};
use rqpn_core::hilbert::Operator;
use rqpn_core::objective::schedule_infidelity;
use rqpn_core::optimize::{self, Observer, RunCheckpoint};
use rqpn_core::propagate::{expm_step, Propagator};
use rqpn_core::tasks;

fn rqpn(args: &[&str], dir: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_rqpn"))
        .args(args)
        .current_dir(dir)
        .env("RQPN_THREADS", "1")
        .output()
        .expect("binary runs");
    let text =
        String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

const SHORT_CZ: &str = "task = \"cz-spm\"\nnum_bins = 10\n[optimizer]\nmax_epochs = 30\nrestarts = 2\ncheckpoint_every = 10\n";

const IDENTITY_TASK: &str = r#"
name = "two-mode identity"
modes = 2
kind = "spm"

[[pairs]]
input = [{ occupations = [1, 0] }]
target = [{ occupations = [1, 0] }]

[[pairs]]
input = [{ occupations = [0, 1] }]
target = [{ occupations = [0, 1] }]
"#;

const IDENTITY_RUN: &str = r#"
task_file = "identity.toml"
num_bins = 4
[init.k]
offset = -40.0
noise = 0.0
[optimizer]
max_epochs = 50
restarts = 1
"#;

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(rqpn(&["optimize", "--task", "no-such-task"], d).0, 2);
    assert_eq!(rqpn(&["optimize"], d).0, 2);
    assert_eq!(rqpn(&["optimize", "--task", "cz-spm", "--wat"], d).0, 2);
    std::fs::write(d.join("bad.toml"), "task = \"cz-spm\"\nnum_binz = 3\n").unwrap();
    assert_eq!(rqpn(&["optimize", "--config", "bad.toml"], d).0, 2);
    std::fs::write(
        d.join("bad2.toml"),
        "task = \"cz-spm\"\n[bounds]\ntau_min = -1.0\n",
    )
    .unwrap();
    assert_eq!(rqpn(&["optimize", "--config", "bad2.toml"], d).0, 2);
    assert_eq!(rqpn(&["resume", "nothing-here"], d).0, 2);

    std::fs::write(d.join("short.toml"), SHORT_CZ).unwrap();
    let (code, text) = rqpn(
        &["optimize", "--config", "short.toml", "--out", "short", "-q"],
        d,
    );
    assert_eq!(code, 3, "{text}");

    std::fs::write(d.join("identity.toml"), IDENTITY_TASK).unwrap();
    std::fs::write(d.join("id-run.toml"), IDENTITY_RUN).unwrap();
    let (code, text) = rqpn(
        &["optimize", "--config", "id-run.toml", "--out", "id", "-q"],
        d,
    );
    assert_eq!(code, 0, "{text}");
    assert_eq!(rqpn(&["tasks"], d).0, 0);
    assert_eq!(rqpn(&["bounds", "--out", "b"], d).0, 0);
    assert!(d.join("b/bounds.csv").exists() && d.join("b/decomposition.csv").exists());
    assert_eq!(rqpn(&["bounds", "--infidelity", "1.5"], d).0, 2);
}

#[test]
fn outputs_reingest_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("short.toml"), SHORT_CZ).unwrap();
    rqpn(
        &["optimize", "--config", "short.toml", "--out", "run", "-q"],
        d,
    );
    let run = d.join("run");
    let record = files::read_record(&run.join(RECORD_FILE)).unwrap();
    let schedule =
        files::read_schedule(&run.join(SCHEDULE_FILE), &run.join(COUPLING_FILE)).unwrap();
    assert_eq!(schedule.bins.len(), record.schedule.bins.len());
    let mut worst = 0.0f64;
    for (a, b) in schedule.bins.iter().zip(&record.schedule.bins) {
        worst = worst.max((a.dt - b.dt).abs());
        for (x, y) in a
            .kappa
            .iter()
            .chain(&a.delta_c)
            .zip(b.kappa.iter().chain(&b.delta_c))
        {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst <= 1e-12, "schedule drift {worst:e}");
    assert!(
        (schedule.coupling.entries() - record.schedule.coupling.entries())
            .abs()
            .max()
            <= 1e-12
    );
    let task = tasks::cz_qubit_qubit().unwrap();
    let i = schedule_infidelity(&task.batch, &schedule).unwrap();
    assert!((i - record.final_infidelity).abs() <= 1e-12);
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), record.cost_history.len() + 1);
}

/// Keeps only the first checkpoint, as if the process died right after it.
struct FirstCheckpoint(Option<RunCheckpoint>);

impl Observer for FirstCheckpoint {
    fn on_checkpoint(&mut self, cp: &RunCheckpoint) -> rqpn_core::Result<()> {
        if self.0.is_none() {
            self.0 = Some(cp.clone());
        }
        Ok(())
    }
}

#[test]
fn resume_from_disk_is_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("short.toml"), SHORT_CZ).unwrap();
    rqpn(
        &["optimize", "--config", "short.toml", "--out", "full", "-q"],
        d,
    );
    let full = files::read_record(&d.join("full").join(RECORD_FILE)).unwrap();

    let task = tasks::cz_qubit_qubit().unwrap();
    let mut obs = FirstCheckpoint(None);
    optimize::run(&task, &full.settings, &mut obs).unwrap();
    let cp = obs.0.unwrap();
    assert_eq!(cp.current.as_ref().unwrap().epoch, 10);
    let part = d.join("part");
    std::fs::create_dir_all(&part).unwrap();
    files::write_json(&part.join(CHECKPOINT_FILE), &cp).unwrap();
    let (code, text) = rqpn(&["resume", "part", "-q"], d);
    assert_eq!(code, 3, "{text}");
    let resumed = files::read_record(&part.join(RECORD_FILE)).unwrap();
    assert_eq!(
        resumed.final_infidelity.to_bits(),
        full.final_infidelity.to_bits()
    );
    assert_eq!(resumed.best_params, full.best_params);
    assert_eq!(resumed.cost_history, full.cost_history);
    assert_eq!(resumed.restarts, full.restarts);
}

#[test]
fn parallel_restarts_match_serial() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("short.toml"), SHORT_CZ).unwrap();
    rqpn(
        &[
            "optimize",
            "--config",
            "short.toml",
            "--out",
            "serial",
            "-q",
        ],
        d,
    );
    let out = Command::new(env!("CARGO_BIN_EXE_rqpn"))
        .args(["optimize", "--config", "short.toml", "--out", "par", "-q"])
        .current_dir(d)
        .env("RQPN_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(d.join("par/checkpoint-1.json").exists());
    let a = files::read_record(&d.join("serial").join(RECORD_FILE)).unwrap();
    let b = files::read_record(&d.join("par").join(RECORD_FILE)).unwrap();
    assert_eq!(a.best_restart, b.best_restart);
    assert_eq!(a.final_infidelity.to_bits(), b.final_infidelity.to_bits());
    assert_eq!(a.restarts, b.restarts);
}

#[test]
fn trace_endpoints_match_inputs_and_propagator() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("short.toml"), SHORT_CZ).unwrap();
    rqpn(
        &["optimize", "--config", "short.toml", "--out", "run", "-q"],
        d,
    );
    let (code, text) = rqpn(&["trace", "run", "--resolution", "0.003"], d);
    assert_eq!(code, 0, "{text}");
    let run = d.join("run");
    let schedule =
        files::read_schedule(&run.join(SCHEDULE_FILE), &run.join(COUPLING_FILE)).unwrap();
    let task = tasks::cz_qubit_qubit().unwrap();
    let traces = rqpn::trace::trace(&task, &schedule, 0.003).unwrap();
    assert_eq!(traces.len(), task.probes.len());
    for (tr, probe) in traces.iter().zip(&task.probes) {
        let first = &tr.samples[0];
        let last = tr.samples.last().unwrap();
        assert_eq!(first.time, 0.0);
        assert!((last.time - schedule.duration()).abs() < 1e-12);
        let start = probe.target.inner(&probe.input).unwrap().norm_sqr();
        assert!((first.target_overlap - start).abs() < 1e-14);
        let u = rqpn_core::propagate::evolve(
            &schedule.bins,
            &schedule.coupling,
            task.kind,
            &probe.input.space,
        )
        .unwrap();
        let end = probe
            .target
            .inner(&u.apply(&probe.input).unwrap())
            .unwrap()
            .norm_sqr();
        assert!(
            (last.target_overlap - end).abs() < 1e-10,
            "{} {}",
            last.target_overlap,
            end
        );
        let total: f64 = last.mean_photons.iter().sum();
        assert!((total - 2.0).abs() < 1e-10);
    }
    let files: Vec<_> = std::fs::read_dir(run.join("trace")).unwrap().collect();
    assert_eq!(files.len(), task.probes.len());
}

fn leaky_expm(h: &Operator, dt: f64) -> rqpn_core::Result<Propagator> {
    let mut u = expm_step(h, dt)?;
    u.matrix *= rqpn_core::Complex64::new(1.0 + 1e-9, 0.0);
    Ok(u)
}

#[test]
fn unitarity_check_catches_a_faulty_exponential() {
    let good = VerifyOptions {
        unitarity_bins: 64,
        ..VerifyOptions::default()
    };
    assert!(check_unitarity(&good)[0].passed);
    let bad = VerifyOptions {
        expm: leaky_expm,
        ..good
    };
    let r = &check_unitarity(&bad)[0];
    assert!(!r.passed, "{r:?}");
}
