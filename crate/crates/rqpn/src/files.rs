//! On-disk formats: JSON for records and checkpoints, CSV for time series.
//!
//! Floats are written in shortest round-trip form, so a file read back
//! reproduces the values bit for bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use rqpn_core::controls::Schedule;
use rqpn_core::mixing::CouplingMatrix;
use rqpn_core::model::{ControlBin, NonlinearKind};
use rqpn_core::optimize::{EpochRecord, RunCheckpoint, RunRecord};
use rqpn_core::RMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const RECORD_FILE: &str = "record.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const COUPLING_FILE: &str = "coupling.csv";

/// Writes through a temporary file and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f =
            fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_record(path: &Path) -> anyhow::Result<RunRecord> {
    read_json(path)
}

pub fn read_checkpoint(path: &Path) -> anyhow::Result<RunCheckpoint> {
    let cp: RunCheckpoint = read_json(path)?;
    cp.validate()
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    Ok(cp)
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn num(x: f64) -> String {
    format!("{x}")
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "infidelity", "cost", "best_infidelity"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            num(h.infidelity),
            num(h.cost),
            num(h.best_infidelity),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Column names for per-mode signals.
fn signal_header(kind: NonlinearKind, m: usize) -> Vec<String> {
    let mut h = Vec::new();
    for name in ["kappa", "delta_c"] {
        h.extend((0..m).map(|i| format!("{name}_{i}")));
    }
    if kind == NonlinearKind::Tle {
        h.extend((0..m).map(|i| format!("delta_e_{i}")));
    }
    h
}

fn signal_values(bin: &ControlBin) -> impl Iterator<Item = f64> + '_ {
    bin.kappa
        .iter()
        .chain(&bin.delta_c)
        .chain(&bin.delta_e)
        .copied()
}

/// Physical controls per bin: `bin, t_start, dt, kappa_*, delta_c_*[, delta_e_*]`.
pub fn write_schedule(path: &Path, schedule: &Schedule) -> anyhow::Result<()> {
    let m = schedule.num_modes();
    let mut w = csv_writer(path)?;
    let mut header = vec!["bin".to_string(), "t_start".into(), "dt".into()];
    header.extend(signal_header(schedule.kind, m));
    w.write_record(&header)?;
    let mut t = 0.0;
    for (p, bin) in schedule.bins.iter().enumerate() {
        let mut row = vec![p.to_string(), num(t), num(bin.dt)];
        row.extend(signal_values(bin).map(num));
        w.write_record(&row)?;
        t += bin.dt;
    }
    w.flush()?;
    Ok(())
}

pub fn write_coupling(path: &Path, c: &CouplingMatrix) -> anyhow::Result<()> {
    let m = c.num_modes();
    let mut w = csv_writer(path)?;
    w.write_record((0..m).map(|j| format!("c_{j}")))?;
    for i in 0..m {
        w.write_record((0..m).map(|j| num(c.get(i, j))))?;
    }
    w.flush()?;
    Ok(())
}

fn parse(field: &str, path: &Path) -> anyhow::Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .with_context(|| format!("{}: bad number '{field}'", path.display()))
}

pub fn read_coupling(path: &Path) -> anyhow::Result<CouplingMatrix> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let m = r.headers()?.len();
    let mut values = Vec::with_capacity(m * m);
    for row in r.records() {
        let row = row?;
        if row.len() != m {
            bail!("{}: ragged coupling row", path.display());
        }
        for f in row.iter() {
            values.push(parse(f, path)?);
        }
    }
    if values.len() != m * m {
        bail!("{}: expected {m} rows", path.display());
    }
    CouplingMatrix::new(RMatrix::from_row_slice(m, m, &values))
        .map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// Reads a schedule written by [`write_schedule`] and [`write_coupling`].
pub fn read_schedule(schedule: &Path, coupling: &Path) -> anyhow::Result<Schedule> {
    let mut r = csv::Reader::from_path(schedule)
        .with_context(|| format!("reading {}", schedule.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let m = header.iter().filter(|h| h.starts_with("kappa_")).count();
    let kind = if header.iter().any(|h| h.starts_with("delta_e_")) {
        NonlinearKind::Tle
    } else {
        NonlinearKind::Spm
    };
    let mut expected = vec!["bin".to_string(), "t_start".into(), "dt".into()];
    expected.extend(signal_header(kind, m));
    if header != expected {
        bail!("{}: unexpected header {header:?}", schedule.display());
    }
    let mut bins = Vec::new();
    for row in r.records() {
        let row = row?;
        let v: Vec<f64> = row
            .iter()
            .skip(1)
            .map(|f| parse(f, schedule))
            .collect::<anyhow::Result<_>>()?;
        let s = &v[2..];
        bins.push(ControlBin {
            dt: v[1],
            kappa: s[..m].to_vec(),
            delta_c: s[m..2 * m].to_vec(),
            delta_e: if kind == NonlinearKind::Tle {
                s[2 * m..3 * m].to_vec()
            } else {
                Vec::new()
            },
        });
    }
    let coupling = read_coupling(coupling)?;
    if coupling.num_modes() != m {
        bail!(
            "coupling matrix has {} modes, schedule {m}",
            coupling.num_modes()
        );
    }
    Ok(Schedule {
        kind,
        bins,
        coupling,
    })
}

/// Writes the record plus its CSV exports into `dir`.
pub fn write_outputs(dir: &Path, record: &RunRecord) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let files = [
        dir.join(RECORD_FILE),
        dir.join(HISTORY_FILE),
        dir.join(SCHEDULE_FILE),
        dir.join(COUPLING_FILE),
    ];
    write_json(&files[0], record)?;
    write_history(&files[1], &record.cost_history)?;
    write_schedule(&files[2], &record.schedule)?;
    write_coupling(&files[3], &record.schedule.coupling)?;
    Ok(files.to_vec())
}
