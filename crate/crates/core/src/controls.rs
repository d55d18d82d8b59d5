//! Bounded parameterization of the control schedule.
//!
//! Raw parameters are unconstrained reals. Per bin `p` and mode `m`:
//!
//! * `Δt_p = τ_min + (τ_max − τ_min)·sigmoid(X_p)`
//! * `δᶜ_{m,p} = τ_min·Dᶜ·atan(d_{m,p})/π` (renormalized, likewise `δᵉ` with `Dᵉ`)
//! * `κ_{m,p} = τ_min·K·(atan(k_{m,p})/π + ½)` (renormalized)
//!
//! Physical rates are the renormalized values divided by `Δt_p`, so every
//! bound holds whatever the raw values are. The coupling matrix has zero
//! diagonal and is filled from its raw, unsquashed upper triangle.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::neumaier_sum;
use crate::mixing::CouplingMatrix;
use crate::model::{ControlBin, NonlinearKind};
use crate::{Error, Result};

use core::f64::consts::PI;

/// Parameterization limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub tau_min: f64,
    pub tau_max: f64,
    /// Full cavity-detuning range; physical values lie in `[−Dᶜ/2, Dᶜ/2]`.
    pub dc: f64,
    /// Full emitter-detuning range.
    #[serde(default)]
    pub de: f64,
    /// Largest coupling rate.
    pub k: f64,
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.tau_min, self.tau_max, self.dc, self.de, self.k]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Validation("bounds must be finite".into()));
        }
        if !(self.tau_min > 0.0 && self.tau_min <= self.tau_max) {
            return Err(Error::Validation(format!(
                "need 0 < tau_min <= tau_max, got [{}, {}]",
                self.tau_min, self.tau_max
            )));
        }
        if self.dc < 0.0 || self.de < 0.0 || self.k < 0.0 {
            return Err(Error::Validation(
                "Dc, De and K must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Same limits with every bin pinned to `total / num_bins`.
    pub fn with_fixed_duration(mut self, total: f64, num_bins: usize) -> Self {
        let tau = total / num_bins as f64;
        self.tau_min = tau;
        self.tau_max = tau;
        self
    }
}

/// Which parameter groups the optimizer may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trainable {
    pub x: bool,
    pub d_c: bool,
    pub d_e: bool,
    pub k: bool,
    pub c: bool,
}

impl Default for Trainable {
    fn default() -> Self {
        Self {
            x: true,
            d_c: true,
            d_e: true,
            k: true,
            c: true,
        }
    }
}

/// Sizes of a parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub num_modes: usize,
    pub num_bins: usize,
    pub kind: NonlinearKind,
}

impl Shape {
    pub fn num_upper(&self) -> usize {
        self.num_modes * self.num_modes.saturating_sub(1) / 2
    }

    fn per_mode(&self) -> usize {
        self.num_modes * self.num_bins
    }

    fn emitter_len(&self) -> usize {
        match self.kind {
            NonlinearKind::Spm => 0,
            NonlinearKind::Tle => self.per_mode(),
        }
    }

    /// Length of the flat parameter vector.
    pub fn flat_len(&self) -> usize {
        self.num_bins + 2 * self.per_mode() + self.emitter_len() + self.num_upper()
    }
}

/// Raw trainable parameters.
///
/// Per-mode groups are stored row-major as `M × N_bin`: entry `(m, p)` sits
/// at `m * N_bin + p`. The flat vector concatenates `x, d_c, d_e, k, c_upper`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlParams {
    pub shape: Shape,
    pub x: Vec<f64>,
    pub d_c: Vec<f64>,
    #[serde(default)]
    pub d_e: Vec<f64>,
    pub k: Vec<f64>,
    pub c_upper: Vec<f64>,
    pub trainable: Trainable,
}

impl ControlParams {
    pub fn validate(&self) -> Result<()> {
        let s = &self.shape;
        let ok = self.x.len() == s.num_bins
            && self.d_c.len() == s.per_mode()
            && self.d_e.len() == s.emitter_len()
            && self.k.len() == s.per_mode()
            && self.c_upper.len() == s.num_upper();
        if !ok {
            return Err(Error::DimensionMismatch(format!(
                "parameter groups do not match shape {s:?}"
            )));
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite control parameter".into()));
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.shape.flat_len());
        out.extend_from_slice(&self.x);
        out.extend_from_slice(&self.d_c);
        out.extend_from_slice(&self.d_e);
        out.extend_from_slice(&self.k);
        out.extend_from_slice(&self.c_upper);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.shape.flat_len() {
            return Err(Error::DimensionMismatch(format!(
                "flat vector of length {} for {} parameters",
                flat.len(),
                self.shape.flat_len()
            )));
        }
        let mut rest = flat;
        for group in [
            &mut self.x,
            &mut self.d_c,
            &mut self.d_e,
            &mut self.k,
            &mut self.c_upper,
        ] {
            let (head, tail) = rest.split_at(group.len());
            group.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Per-entry trainability in flat order.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let t = self.trainable;
        let mut out = Vec::with_capacity(self.shape.flat_len());
        out.extend(core::iter::repeat(t.x).take(self.x.len()));
        out.extend(core::iter::repeat(t.d_c).take(self.d_c.len()));
        out.extend(core::iter::repeat(t.d_e).take(self.d_e.len()));
        out.extend(core::iter::repeat(t.k).take(self.k.len()));
        out.extend(core::iter::repeat(t.c).take(self.c_upper.len()));
        out
    }

    /// Offsets of each group in the flat vector: `[x, d_c, d_e, k, c]`.
    pub(crate) fn offsets(&self) -> [usize; 5] {
        let a = self.x.len();
        let b = a + self.d_c.len();
        let c = b + self.d_e.len();
        let d = c + self.k.len();
        [0, a, b, c, d]
    }

    pub fn coupling(&self) -> Result<CouplingMatrix> {
        CouplingMatrix::from_upper(self.shape.num_modes, &self.c_upper)
    }
}

/// Offset and noise of one parameter group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupInit {
    pub offset: f64,
    pub noise: f64,
}

impl GroupInit {
    pub const fn new(offset: f64, noise: f64) -> Self {
        Self { offset, noise }
    }
}

/// Initialization recipe: each value is `offset + noise·z`, `z ~ N(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub x: GroupInit,
    pub d_c: GroupInit,
    #[serde(default)]
    pub d_e: GroupInit,
    pub k: GroupInit,
    pub c: GroupInit,
    pub seed: u64,
}

/// Draws a parameter set. Normal deviates are consumed in the order
/// `x, d_c, d_e, k, c_upper`, row-major within each group, from a ChaCha20
/// stream seeded with `spec.seed`; frozen groups consume draws too, so the
/// trainability flags never shift the stream.
pub fn initialize(spec: &InitSpec, shape: Shape, trainable: Trainable) -> Result<ControlParams> {
    for g in [spec.x, spec.d_c, spec.d_e, spec.k, spec.c] {
        if !(g.noise >= 0.0) || !g.offset.is_finite() || !g.noise.is_finite() {
            return Err(Error::Validation(format!(
                "initialization needs finite offset and noise >= 0, got {g:?}"
            )));
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut draw = |g: GroupInit, n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                g.offset + g.noise * z
            })
            .collect()
    };
    let x = draw(spec.x, shape.num_bins);
    let d_c = draw(spec.d_c, shape.per_mode());
    let d_e = draw(spec.d_e, shape.emitter_len());
    let k = draw(spec.k, shape.per_mode());
    let c_upper = draw(spec.c, shape.num_upper());
    Ok(ControlParams {
        shape,
        x,
        d_c,
        d_e,
        k,
        c_upper,
        trainable,
    })
}

/// Materialized physical schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: NonlinearKind,
    pub bins: Vec<ControlBin>,
    pub coupling: CouplingMatrix,
}

impl Schedule {
    /// `T_η = Σ Δt_p`, compensated so that equal steps add up exactly.
    pub fn duration(&self) -> f64 {
        neumaier_sum(self.bins.iter().map(|b| b.dt))
    }

    pub fn num_modes(&self) -> usize {
        self.coupling.num_modes()
    }

    /// Checks every bin against the bounds, with relative slack `tol`.
    pub fn check_bounds(&self, bounds: &Bounds, tol: f64) -> Result<()> {
        let slack = |x: f64| x.abs() * tol + tol;
        for (p, b) in self.bins.iter().enumerate() {
            let fail = |what: &str, v: f64| {
                Err(Error::Validation(format!(
                    "bin {p}: {what} = {v} outside its bounds"
                )))
            };
            if b.dt < bounds.tau_min - slack(bounds.tau_min)
                || b.dt > bounds.tau_max + slack(bounds.tau_max)
            {
                return fail("dt", b.dt);
            }
            for &k in &b.kappa {
                if k < 0.0 || k > bounds.k + slack(bounds.k) {
                    return fail("kappa", k);
                }
            }
            for &d in &b.delta_c {
                if d.abs() > bounds.dc / 2.0 + slack(bounds.dc) {
                    return fail("delta_c", d);
                }
            }
            for &d in &b.delta_e {
                if d.abs() > bounds.de / 2.0 + slack(bounds.de) {
                    return fail("delta_e", d);
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + Float::exp(-x))
    } else {
        let e = Float::exp(x);
        e / (1.0 + e)
    }
}

/// Renormalized per-bin quantities and their derivatives with respect to
/// the raw parameters. Per-mode arrays share the `m * N_bin + p` layout.
#[derive(Debug, Clone)]
pub(crate) struct Renormalized {
    pub dt: Vec<f64>,
    pub ddt_dx: Vec<f64>,
    pub delta_c: Vec<f64>,
    pub ddelta_c: Vec<f64>,
    pub delta_e: Vec<f64>,
    pub ddelta_e: Vec<f64>,
    /// Renormalized coupling `κ·Δt`.
    pub kappa: Vec<f64>,
    pub dkappa: Vec<f64>,
    /// `√(κ·Δt)`.
    pub amp: Vec<f64>,
}

pub(crate) fn renormalize(params: &ControlParams, bounds: &Bounds) -> Renormalized {
    let span = bounds.tau_max - bounds.tau_min;
    let mut dt = Vec::with_capacity(params.x.len());
    let mut ddt_dx = Vec::with_capacity(params.x.len());
    for &x in &params.x {
        let s = sigmoid(x);
        dt.push(bounds.tau_min + span * s);
        ddt_dx.push(span * s * (1.0 - s));
    }
    let det = |raw: &[f64], range: f64| -> (Vec<f64>, Vec<f64>) {
        let a = bounds.tau_min * range / PI;
        raw.iter()
            .map(|&d| (a * Float::atan(d), a / (1.0 + d * d)))
            .unzip()
    };
    let (delta_c, ddelta_c) = det(&params.d_c, bounds.dc);
    let (delta_e, ddelta_e) = det(&params.d_e, bounds.de);
    let a = bounds.tau_min * bounds.k;
    let (kappa, dkappa): (Vec<f64>, Vec<f64>) = params
        .k
        .iter()
        .map(|&k| {
            let v = a * (Float::atan(k) / PI + 0.5);
            (v.max(0.0), a / (PI * (1.0 + k * k)))
        })
        .unzip();
    let amp = kappa.iter().map(|&v| Float::sqrt(v)).collect();
    Renormalized {
        dt,
        ddt_dx,
        delta_c,
        ddelta_c,
        delta_e,
        ddelta_e,
        kappa,
        dkappa,
        amp,
    }
}

/// Physical schedule described by `params`.
pub fn materialize(params: &ControlParams, bounds: &Bounds) -> Result<Schedule> {
    params.validate()?;
    bounds.validate()?;
    let r = renormalize(params, bounds);
    let n = params.shape.num_bins;
    let m = params.shape.num_modes;
    let bins = (0..n)
        .map(|p| {
            let dt = r.dt[p];
            let col = |v: &[f64]| -> Vec<f64> {
                if v.is_empty() {
                    Vec::new()
                } else {
                    (0..m).map(|i| v[i * n + p] / dt).collect()
                }
            };
            ControlBin {
                kappa: col(&r.kappa),
                delta_c: col(&r.delta_c),
                delta_e: col(&r.delta_e),
                dt,
            }
        })
        .collect();
    Ok(Schedule {
        kind: params.shape.kind,
        bins,
        coupling: params.coupling()?,
    })
}

/// Parameter set with every group at a constant value (tests, sanity runs).
pub fn constant_params(shape: Shape, value: f64, trainable: Trainable) -> ControlParams {
    ControlParams {
        shape,
        x: vec![value; shape.num_bins],
        d_c: vec![value; shape.per_mode()],
        d_e: vec![value; shape.emitter_len()],
        k: vec![value; shape.per_mode()],
        c_upper: vec![value; shape.num_upper()],
        trainable,
    }
}
