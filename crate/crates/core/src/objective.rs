//! Cost function and its exact gradient.
//!
//! The cost is `E = ln I + Σ_u w_u (1/M) Σ_m P(u_m)` where `I` is the
//! coherently averaged infidelity over all task pairs and `P` is the
//! discrete smoothness penalty of each physical control signal.
//!
//! The gradient is computed backwards through the bins. For a bin generator
//! `h = V diag(λ) Vᵀ` the derivative of `exp(−i h)` along a direction `E`
//! is `V (L ∘ VᵀEV) Vᵀ` with the divided-difference kernel
//! `L_jk = −i e^{−i(λ_j+λ_k)/2} sinc((λ_j−λ_k)/2)`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::controls::{renormalize, Bounds, ControlParams, Renormalized, Schedule};
use crate::hilbert::{HilbertSpace, StateVector};
use crate::linalg::sym_eigen;
use crate::model::{NonlinearKind, SectorModel};
use crate::propagate::{evolve_with, Propagator};
use crate::{Complex64, Error, RMatrix, Result};

/// Infidelities below this are treated as zero inside the logarithm.
pub const INFIDELITY_FLOOR: f64 = 1e-16;
/// Tolerance on input/target normalization.
pub const NORM_TOL: f64 = 1e-10;

/// Task pairs of one excitation sector.
#[derive(Debug, Clone)]
pub struct SectorBatch {
    pub space: Arc<HilbertSpace>,
    pub inputs: Vec<StateVector>,
    pub targets: Vec<StateVector>,
}

/// Input/target pairs grouped by excitation sector, in order of first
/// appearance.
#[derive(Debug, Clone)]
pub struct TaskBatch {
    sectors: Vec<SectorBatch>,
}

impl TaskBatch {
    pub fn from_pairs(pairs: Vec<(StateVector, StateVector)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut sectors: Vec<SectorBatch> = Vec::new();
        for (i, (input, target)) in pairs.into_iter().enumerate() {
            if input.space.dim() != target.space.dim()
                || input.space.total_excitation() != target.space.total_excitation()
            {
                return Err(Error::SectorMismatch {
                    expected: input.space.total_excitation(),
                    found: target.space.total_excitation(),
                });
            }
            for (what, s) in [("input", &input), ("target", &target)] {
                if (s.norm() - 1.0).abs() > NORM_TOL {
                    return Err(Error::Validation(format!(
                        "pair {i}: {what} has norm {}",
                        s.norm()
                    )));
                }
            }
            let n = input.space.total_excitation();
            match sectors.iter_mut().find(|s| s.space.total_excitation() == n) {
                Some(sector) => {
                    if *sector.space != *input.space {
                        return Err(Error::DimensionMismatch(format!(
                            "pair {i} uses a different layout for sector {n}"
                        )));
                    }
                    sector.inputs.push(input);
                    sector.targets.push(target);
                }
                None => sectors.push(SectorBatch {
                    space: input.space.clone(),
                    inputs: vec![input],
                    targets: vec![target],
                }),
            }
        }
        Ok(Self { sectors })
    }

    pub fn sectors(&self) -> &[SectorBatch] {
        &self.sectors
    }

    pub fn num_pairs(&self) -> usize {
        self.sectors.iter().map(|s| s.inputs.len()).sum()
    }

    /// Every pair in sector order.
    pub fn pairs(&self) -> impl Iterator<Item = (&StateVector, &StateVector)> {
        self.sectors
            .iter()
            .flat_map(|s| s.inputs.iter().zip(s.targets.iter()))
    }
}

/// `(1/N) Σ_n ⟨t_n|U|i_n⟩` given one propagator per sector.
pub fn average_overlap(batch: &TaskBatch, props: &[Propagator]) -> Result<Complex64> {
    if props.len() != batch.sectors.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} propagators for {} sectors",
            props.len(),
            batch.sectors.len()
        )));
    }
    let mut sum = Complex64::new(0.0, 0.0);
    for (sector, u) in batch.sectors.iter().zip(props) {
        if u.matrix.nrows() != sector.space.dim() {
            return Err(Error::DimensionMismatch(format!(
                "propagator of dim {} for sector of dim {}",
                u.matrix.nrows(),
                sector.space.dim()
            )));
        }
        for (i, t) in sector.inputs.iter().zip(&sector.targets) {
            sum += t.amplitudes.dotc(&(&u.matrix * &i.amplitudes));
        }
    }
    Ok(sum / batch.num_pairs() as f64)
}

/// `I = 1 − |(1/N) Σ_n ⟨t_n|U|i_n⟩|²`, one propagator per sector.
pub fn infidelity(batch: &TaskBatch, props: &[Propagator]) -> Result<f64> {
    let f = average_overlap(batch, props)?;
    Ok((1.0 - f.norm_sqr()).max(0.0))
}

/// Infidelity of a physical schedule.
pub fn schedule_infidelity(batch: &TaskBatch, schedule: &Schedule) -> Result<f64> {
    let props = batch
        .sectors
        .iter()
        .map(|s| {
            let model = SectorModel::new(s.space.clone(), schedule.kind)?;
            evolve_with(&model, &schedule.bins, &schedule.coupling)
        })
        .collect::<Result<Vec<_>>>()?;
    infidelity(batch, &props)
}

/// Discrete derivative energy `Σ_{p=1}^{N+1} |u_p − u_{p−1}|² / (½(Δt_p + Δt_{p−1}))`
/// with `u_0 = u_{N+1} = 0`, `Δt_0 = Δt_1`, `Δt_{N+1} = Δt_N`.
fn derivative_energy(u: &[f64], dt: &[f64]) -> f64 {
    let n = u.len();
    (0..=n)
        .map(|j| {
            let (prev, dprev) = if j == 0 {
                (0.0, dt[0])
            } else {
                (u[j - 1], dt[j - 1])
            };
            let (cur, dcur) = if j == n {
                (0.0, dt[n - 1])
            } else {
                (u[j], dt[j])
            };
            let diff = cur - prev;
            2.0 * diff * diff / (dcur + dprev)
        })
        .sum()
}

fn signal_energy(u: &[f64], dt: &[f64]) -> f64 {
    u.iter().zip(dt).map(|(x, d)| x * x * d).sum()
}

fn check_signal(u: &[f64], dt: &[f64]) -> Result<()> {
    if u.is_empty() || u.len() != dt.len() {
        return Err(Error::DimensionMismatch(format!(
            "signal of length {} with {} durations",
            u.len(),
            dt.len()
        )));
    }
    Ok(())
}

/// Smoothness penalty `Σ|Δu|²/Δt̄ / (1 + Σ u² Δt)`.
pub fn smoothness_penalty(u: &[f64], dt: &[f64]) -> Result<f64> {
    check_signal(u, dt)?;
    Ok(derivative_energy(u, dt) / (1.0 + signal_energy(u, dt)))
}

/// Effective bandwidth `√(Σ|Δu|²/Δt̄ / Σ u² Δt)`.
pub fn effective_bandwidth(u: &[f64], dt: &[f64]) -> Result<f64> {
    check_signal(u, dt)?;
    let energy = signal_energy(u, dt);
    if !(energy > 0.0) {
        return Err(Error::UndefinedBandwidth);
    }
    Ok(Float::sqrt(derivative_energy(u, dt) / energy))
}

/// Penalty value and its partial derivatives with respect to `u` and `dt`.
fn penalty_with_gradient(u: &[f64], dt: &[f64], du: &mut [f64], ddt: &mut [f64]) -> f64 {
    let n = u.len();
    let num = derivative_energy(u, dt);
    let den = 1.0 + signal_energy(u, dt);
    du.iter_mut().for_each(|x| *x = 0.0);
    ddt.iter_mut().for_each(|x| *x = 0.0);
    for j in 0..=n {
        let (prev, iprev) = if j == 0 { (0.0, 0) } else { (u[j - 1], j - 1) };
        let (cur, icur) = if j == n { (0.0, n - 1) } else { (u[j], j) };
        let s = dt[icur] + dt[iprev];
        let diff = cur - prev;
        let g = 4.0 * diff / s / den;
        if j < n {
            du[j] += g;
        }
        if j > 0 {
            du[j - 1] -= g;
        }
        let gd = -2.0 * diff * diff / (s * s) / den;
        ddt[icur] += gd;
        ddt[iprev] += gd;
    }
    let q = num / (den * den);
    for p in 0..n {
        du[p] -= q * 2.0 * u[p] * dt[p];
        ddt[p] -= q * u[p] * u[p];
    }
    num / den
}

/// Bandwidth-penalty weights per signal type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub kappa: f64,
    pub delta_c: f64,
    #[serde(default)]
    pub delta_e: f64,
}

/// Mode-averaged smoothness penalty per signal type (unweighted).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    pub kappa: f64,
    pub delta_c: f64,
    pub delta_e: f64,
}

/// Per-mode effective bandwidths; `None` for identically zero signals.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub kappa: Vec<Option<f64>>,
    pub delta_c: Vec<Option<f64>>,
    pub delta_e: Vec<Option<f64>>,
}

/// Every term of the cost at one parameter point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub infidelity: f64,
    pub log_infidelity: f64,
    /// `true` when the infidelity hit the logarithm floor.
    pub clamped: bool,
    pub smoothness: Smoothness,
    pub total: f64,
    pub bandwidths: Bandwidths,
}

struct SectorData {
    model: SectorModel,
    /// Inputs as `[Re | Im]`, `d × 2n`.
    inputs: RMatrix,
    targets: RMatrix,
    num_pairs: usize,
    /// Nonzero entries of the unit-rate nonlinear term.
    nonlinear: Vec<(usize, usize, f64)>,
}

fn split_columns(states: &[StateVector]) -> RMatrix {
    let d = states[0].space.dim();
    let n = states.len();
    RMatrix::from_fn(d, 2 * n, |r, c| {
        if c < n {
            states[c].amplitudes[r].re
        } else {
            states[c - n].amplitudes[r].im
        }
    })
}

/// Precomputed cost evaluator for one task.
#[derive(Debug)]
pub struct Objective {
    kind: NonlinearKind,
    num_modes: usize,
    bounds: Bounds,
    weights: Weights,
    sectors: Vec<SectorData>,
    num_pairs: usize,
}

impl core::fmt::Debug for SectorData {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("SectorData")
            .field("dim", &self.model.dim())
            .field("num_pairs", &self.num_pairs)
            .finish()
    }
}

/// Forward-pass record of one sector.
struct Forward {
    eigvals: Vec<Vec<f64>>,
    eigvecs: Vec<RMatrix>,
    /// `Vᵀ ψ_{p−1}` for each bin, `[Re | Im]`.
    rotated: Vec<RMatrix>,
    overlap: Complex64,
}

impl Objective {
    pub fn new(
        batch: &TaskBatch,
        kind: NonlinearKind,
        bounds: Bounds,
        weights: Weights,
    ) -> Result<Self> {
        bounds.validate()?;
        if batch.sectors.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let num_modes = batch.sectors[0].space.layout().num_modes;
        let sectors = batch
            .sectors
            .iter()
            .map(|s| {
                let model = SectorModel::new(s.space.clone(), kind)?;
                let mut nonlinear = Vec::new();
                for r in 0..model.dim() {
                    for c in 0..model.dim() {
                        let v = model.nonlinear[(r, c)];
                        if v != 0.0 {
                            nonlinear.push((r, c, v));
                        }
                    }
                }
                Ok(SectorData {
                    inputs: split_columns(&s.inputs),
                    targets: split_columns(&s.targets),
                    num_pairs: s.inputs.len(),
                    model,
                    nonlinear,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind,
            num_modes,
            bounds,
            weights,
            sectors,
            num_pairs: batch.num_pairs(),
        })
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn kind(&self) -> NonlinearKind {
        self.kind
    }

    fn check(&self, params: &ControlParams) -> Result<()> {
        params.validate()?;
        if params.shape.kind != self.kind || params.shape.num_modes != self.num_modes {
            return Err(Error::DimensionMismatch(format!(
                "parameters for {:?} with {} modes, task is {:?} with {} modes",
                params.shape.kind, params.shape.num_modes, self.kind, self.num_modes
            )));
        }
        Ok(())
    }

    pub fn cost(&self, params: &ControlParams) -> Result<CostBreakdown> {
        self.check(params)?;
        let r = renormalize(params, &self.bounds);
        let coupling = params.coupling()?;
        let mut overlap = Complex64::new(0.0, 0.0);
        for sector in &self.sectors {
            overlap += self
                .forward(sector, params, &r, coupling.entries(), false)
                .overlap;
        }
        Ok(self.breakdown(params, &r, overlap / self.num_pairs as f64, None))
    }

    /// Cost and its gradient over the full flat parameter vector; entries of
    /// frozen groups are exactly zero.
    pub fn cost_and_gradient(&self, params: &ControlParams) -> Result<(CostBreakdown, Vec<f64>)> {
        self.check(params)?;
        let r = renormalize(params, &self.bounds);
        let coupling = params.coupling()?;
        let forwards: Vec<Forward> = self
            .sectors
            .iter()
            .map(|s| self.forward(s, params, &r, coupling.entries(), true))
            .collect();
        let f = forwards.iter().map(|fw| fw.overlap).sum::<Complex64>() / self.num_pairs as f64;

        let n = params.shape.num_bins;
        let m = self.num_modes;
        let mut acc = Accum {
            delta_c: vec![0.0; m * n],
            delta_e: vec![
                0.0;
                if self.kind == NonlinearKind::Tle {
                    m * n
                } else {
                    0
                }
            ],
            amp: vec![0.0; m * n],
            dt: vec![0.0; n],
            c: vec![0.0; params.c_upper.len()],
        };
        for (sector, fw) in self.sectors.iter().zip(&forwards) {
            self.backward(sector, fw, f, &r, coupling.entries(), n, &mut acc);
        }
        let mut grad = vec![0.0; params.shape.flat_len()];
        let breakdown = self.breakdown(params, &r, f, Some((&acc, &mut grad)));
        let mask = params.trainable_mask();
        for (g, t) in grad.iter_mut().zip(mask) {
            if !t {
                *g = 0.0;
            }
        }
        Ok((breakdown, grad))
    }

    fn forward(
        &self,
        sector: &SectorData,
        params: &ControlParams,
        r: &Renormalized,
        coupling: &RMatrix,
        keep: bool,
    ) -> Forward {
        let n = params.shape.num_bins;
        let m = self.num_modes;
        let d = sector.model.dim();
        let cols = 2 * sector.num_pairs;
        let half = sector.num_pairs;
        let mut h = RMatrix::zeros(d, d);
        let mut psi = sector.inputs.clone();
        let mut dc = vec![0.0; m];
        let mut de = vec![
            0.0;
            if self.kind == NonlinearKind::Tle {
                m
            } else {
                0
            }
        ];
        let mut amp = vec![0.0; m];
        let mut fw = Forward {
            eigvals: Vec::with_capacity(if keep { n } else { 0 }),
            eigvecs: Vec::with_capacity(if keep { n } else { 0 }),
            rotated: Vec::with_capacity(if keep { n } else { 0 }),
            overlap: Complex64::new(0.0, 0.0),
        };
        for p in 0..n {
            for i in 0..m {
                dc[i] = r.delta_c[i * n + p];
                amp[i] = r.amp[i * n + p];
                if !de.is_empty() {
                    de[i] = r.delta_e[i * n + p];
                }
            }
            sector
                .model
                .assemble(&mut h, &dc, &amp, coupling, r.dt[p], &de);
            let (lam, v) = sym_eigen(h.clone());
            let rot = v.tr_mul(&psi);
            let mut phased = rot.clone();
            for j in 0..d {
                let (s, c) = Float::sin_cos(lam[j]);
                for col in 0..half {
                    let a = rot[(j, col)];
                    let b = rot[(j, col + half)];
                    phased[(j, col)] = a * c + b * s;
                    phased[(j, col + half)] = b * c - a * s;
                }
            }
            psi = &v * phased;
            debug_assert_eq!(psi.ncols(), cols);
            if keep {
                fw.eigvals.push(lam.iter().copied().collect());
                fw.eigvecs.push(v);
                fw.rotated.push(rot);
            }
        }
        let t = &sector.targets;
        let mut re = 0.0;
        let mut im = 0.0;
        for col in 0..half {
            for j in 0..d {
                let (tr, ti) = (t[(j, col)], t[(j, col + half)]);
                let (pr, pi) = (psi[(j, col)], psi[(j, col + half)]);
                re += tr * pr + ti * pi;
                im += tr * pi - ti * pr;
            }
        }
        fw.overlap = Complex64::new(re, im);
        fw
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        sector: &SectorData,
        fw: &Forward,
        f: Complex64,
        r: &Renormalized,
        coupling: &RMatrix,
        n: usize,
        acc: &mut Accum,
    ) {
        let m = self.num_modes;
        let d = sector.model.dim();
        let half = sector.num_pairs;
        let scale = 1.0 / self.num_pairs as f64;
        let mut x = sector.targets.clone();
        let mut y = RMatrix::zeros(d, d);
        let mut half_sin = vec![0.0; d];
        let mut half_cos = vec![0.0; d];
        let mut q = vec![0.0; m * m];
        for p in (0..n).rev() {
            let lam = &fw.eigvals[p];
            let v = &fw.eigvecs[p];
            let a = &fw.rotated[p];
            let b = v.tr_mul(&x);
            let (ar, ai) = (a.columns(0, half), a.columns(half, half));
            let (br, bi) = (b.columns(0, half), b.columns(half, half));
            let g_re = br * ar.transpose() + bi * ai.transpose();
            let g_im = br * ai.transpose() - bi * ar.transpose();
            for j in 0..d {
                let (s, c) = Float::sin_cos(0.5 * lam[j]);
                half_sin[j] = s;
                half_cos[j] = c;
            }
            // z_jk = conj(F)·(−i)·e^{−i(λj+λk)/2}/N; Y = Re(z ∘ sinc ∘ G)
            let fz = f.conj() * Complex64::new(0.0, -scale);
            for k in 0..d {
                for j in 0..d {
                    // e^{−i(λj+λk)/2} = (cj − i sj)(ck − i sk)
                    let ph = Complex64::new(
                        half_cos[j] * half_cos[k] - half_sin[j] * half_sin[k],
                        -(half_sin[j] * half_cos[k] + half_cos[j] * half_sin[k]),
                    );
                    let delta = lam[j] - lam[k];
                    let sinc = if delta.abs() < 1e-3 {
                        let d2 = delta * delta;
                        1.0 - d2 / 24.0 + d2 * d2 / 1920.0
                    } else {
                        (half_sin[j] * half_cos[k] - half_cos[j] * half_sin[k]) / (0.5 * delta)
                    };
                    let z = fz * ph;
                    y[(j, k)] = sinc * (z.re * g_re[(j, k)] - z.im * g_im[(j, k)]);
                }
            }
            let rmat = v * &y * v.transpose();
            // dI/dθ = −2 Σ_ab (∂h/∂θ)_ab R_ab
            let model = &sector.model;
            for to in 0..m {
                for from in 0..m {
                    if to == from {
                        continue;
                    }
                    q[to * m + from] = model.hops[to * m + from]
                        .iter()
                        .map(|&(r0, c0, val)| val * rmat[(r0, c0)])
                        .sum();
                }
            }
            let diag_dot =
                |w: &[f64]| -> f64 { w.iter().enumerate().map(|(i, x)| x * rmat[(i, i)]).sum() };
            let occ: Vec<f64> = (0..m).map(|i| diag_dot(&model.occ[i])).collect();
            for i in 0..m {
                acc.delta_c[i * n + p] -= 2.0 * occ[i];
                if !acc.delta_e.is_empty() {
                    acc.delta_e[i * n + p] -= 2.0 * diag_dot(&model.exc[i]);
                }
                let mut g = 2.0 * coupling[(i, i)] * r.amp[i * n + p] * occ[i];
                for j in 0..m {
                    if j != i {
                        g += coupling[(j, i)] * r.amp[j * n + p] * (q[j * m + i] + q[i * m + j]);
                    }
                }
                acc.amp[i * n + p] -= 2.0 * g;
            }
            let nl: f64 = sector
                .nonlinear
                .iter()
                .map(|&(r0, c0, val)| val * rmat[(r0, c0)])
                .sum();
            acc.dt[p] -= 2.0 * nl;
            let mut idx = 0;
            for i in 0..m {
                for j in i + 1..m {
                    acc.c[idx] -=
                        2.0 * r.amp[i * n + p] * r.amp[j * n + p] * (q[i * m + j] + q[j * m + i]);
                    idx += 1;
                }
            }
            // costate step: X ← U_p† X = V (e^{iλ} ∘ B̃)
            let mut bp = b;
            for j in 0..d {
                let (s, c) = Float::sin_cos(lam[j]);
                for col in 0..half {
                    let re = bp[(j, col)];
                    let im = bp[(j, col + half)];
                    bp[(j, col)] = re * c - im * s;
                    bp[(j, col + half)] = re * s + im * c;
                }
            }
            x = v * bp;
        }
    }

    fn breakdown(
        &self,
        params: &ControlParams,
        r: &Renormalized,
        overlap: Complex64,
        grad: Option<(&Accum, &mut Vec<f64>)>,
    ) -> CostBreakdown {
        let infidelity = (1.0 - overlap.norm_sqr()).max(0.0);
        let clamped = infidelity <= INFIDELITY_FLOOR;
        let log_infidelity = Float::ln(infidelity.max(INFIDELITY_FLOOR));
        let n = params.shape.num_bins;
        let m = self.num_modes;
        let mut smooth = Smoothness::default();
        let mut bandwidths = Bandwidths::default();

        let mut grad = grad;
        let inv_i = if clamped { 0.0 } else { 1.0 / infidelity };
        let offs = params.offsets();
        if let Some((acc, g)) = grad.as_mut() {
            for p in 0..n {
                g[offs[0] + p] = inv_i * acc.dt[p] * r.ddt_dx[p];
            }
            for idx in 0..m * n {
                g[offs[1] + idx] = inv_i * acc.delta_c[idx] * r.ddelta_c[idx];
                if !acc.delta_e.is_empty() {
                    g[offs[2] + idx] = inv_i * acc.delta_e[idx] * r.ddelta_e[idx];
                }
                let a = r.amp[idx];
                g[offs[3] + idx] = if a > 0.0 {
                    inv_i * acc.amp[idx] * r.dkappa[idx] / (2.0 * a)
                } else {
                    0.0
                };
            }
            for (i, c) in acc.c.iter().enumerate() {
                g[offs[4] + i] = inv_i * c;
            }
        }

        let mut u = vec![0.0; n];
        let mut du = vec![0.0; n];
        let mut ddt = vec![0.0; n];
        let kinds: [(&[f64], &[f64], f64, usize); 3] = [
            (&r.kappa, &r.dkappa, self.weights.kappa, offs[3]),
            (&r.delta_c, &r.ddelta_c, self.weights.delta_c, offs[1]),
            (&r.delta_e, &r.ddelta_e, self.weights.delta_e, offs[2]),
        ];
        for (t, (renorm, jac, w, off)) in kinds.into_iter().enumerate() {
            if renorm.is_empty() {
                continue;
            }
            let mut total = 0.0;
            let mut bws = Vec::with_capacity(m);
            for i in 0..m {
                for p in 0..n {
                    u[p] = renorm[i * n + p] / r.dt[p];
                }
                let pen = penalty_with_gradient(&u, &r.dt, &mut du, &mut ddt);
                total += pen;
                bws.push(effective_bandwidth(&u, &r.dt).ok());
                if let Some((_, g)) = grad.as_mut() {
                    if w != 0.0 {
                        let c = w / m as f64;
                        for p in 0..n {
                            let dt = r.dt[p];
                            g[off + i * n + p] += c * du[p] / dt * jac[i * n + p];
                            g[offs[0] + p] += c * (ddt[p] - du[p] * u[p] / dt) * r.ddt_dx[p];
                        }
                    }
                }
            }
            let avg = total / m as f64;
            match t {
                0 => {
                    smooth.kappa = avg;
                    bandwidths.kappa = bws;
                }
                1 => {
                    smooth.delta_c = avg;
                    bandwidths.delta_c = bws;
                }
                _ => {
                    smooth.delta_e = avg;
                    bandwidths.delta_e = bws;
                }
            }
        }
        let total = log_infidelity
            + self.weights.kappa * smooth.kappa
            + self.weights.delta_c * smooth.delta_c
            + self.weights.delta_e * smooth.delta_e;
        CostBreakdown {
            infidelity,
            log_infidelity,
            clamped,
            smoothness: smooth,
            total,
            bandwidths,
        }
    }
}

/// Gradient of the infidelity with respect to renormalized quantities.
struct Accum {
    delta_c: Vec<f64>,
    delta_e: Vec<f64>,
    amp: Vec<f64>,
    dt: Vec<f64>,
    c: Vec<f64>,
}

/// One-shot cost evaluation.
pub fn cost(
    params: &ControlParams,
    bounds: &Bounds,
    batch: &TaskBatch,
    weights: &Weights,
) -> Result<CostBreakdown> {
    Objective::new(batch, params.shape.kind, *bounds, *weights)?.cost(params)
}

/// One-shot gradient over the full flat parameter vector.
pub fn gradient(
    params: &ControlParams,
    bounds: &Bounds,
    batch: &TaskBatch,
    weights: &Weights,
) -> Result<Vec<f64>> {
    Ok(Objective::new(batch, params.shape.kind, *bounds, *weights)?
        .cost_and_gradient(params)?
        .1)
}
