//! Analytic CZ limits: the minimum SPM duration at a given infidelity, the
//! infidelity of a conditional-phase offset, and an exact linear-optics plus
//! SPM circuit used as a cross-check for the optimizer.
//!
//! Durations are in units of `1/χ₃`.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use alloc::{format, vec};

use core::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::hilbert::{build_space, hopping, number, HilbertSpace, Layout};
use crate::linalg::expm_hermitian;
use crate::propagate::Propagator;
use crate::{CMatrix, Complex64, Error, Result};

/// Minimum duration for a target infidelity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub infidelity_target: f64,
    pub min_duration: f64,
}

/// `T_min(I) = π/4 − asin(√I)`; also bounds the qubit-qutrit CZ.
pub fn cz_min_duration(infidelity: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&infidelity) {
        return Err(Error::Domain(format!(
            "infidelity must lie in [0, 1), got {infidelity}"
        )));
    }
    Ok(FRAC_PI_4 - Float::asin(Float::sqrt(infidelity)))
}

pub fn cz_bound(infidelity: f64) -> Result<BoundResult> {
    Ok(BoundResult {
        infidelity_target: infidelity,
        min_duration: cz_min_duration(infidelity)?,
    })
}

/// Infidelity of a CZ whose single-excitation phases are off by `x`:
/// `sin²(x/2)`.
pub fn phase_offset_infidelity(x: f64) -> f64 {
    let s = Float::sin(x / 2.0);
    s * s
}

/// `exp(iθ n̂_m)`.
fn phase(space: &Arc<HilbertSpace>, m: usize, theta: f64) -> Result<CMatrix> {
    Ok(expm_hermitian(&number(space, m)?.matrix, -theta))
}

/// `e^{i n̂_ℓ π/2} e^{−i(â_u†â_ℓ + h.c.)π/4} e^{i n̂_ℓ π/2}`, the 50:50
/// splitter `[[1, 1], [1, −1]]/√2` on ports `(u, ℓ)`.
fn beam_splitter(space: &Arc<HilbertSpace>, u: usize, l: usize) -> Result<CMatrix> {
    let hop = hopping(space, u, l)?;
    let gen = &hop.matrix + hop.matrix.adjoint();
    let p = phase(space, l, FRAC_PI_2)?;
    Ok(&p * expm_hermitian(&gen, FRAC_PI_4) * &p)
}

/// Four-mode, two-photon CZ from fixed optics around one SPM layer:
/// phase shifters `e^{−iπ/2}` on modes 1 and 3, splitters on mode pairs
/// (0, 3) and (1, 2), the diagonal `exp(i·φ/2·Σ n(n−1))`, then the same
/// splitters again. At `spm_phase = π/2` this is exactly CZ on the dual-rail
/// basis; below that, `|01⟩` and `|10⟩` lag by `π/2 − spm_phase`.
///
/// Without phase shifters and at zero phase the circuit is the identity.
pub fn analytic_cz_circuit(spm_phase: f64, with_phase_shifters: bool) -> Result<Propagator> {
    let space = Arc::new(build_space(Layout::photonic(4, 2), 2)?);
    let d = space.dim();
    let mut u = CMatrix::identity(d, d);
    if with_phase_shifters {
        u = phase(&space, 3, -FRAC_PI_2)? * phase(&space, 1, -FRAC_PI_2)? * u;
    }
    let splitters = beam_splitter(&space, 1, 2)? * beam_splitter(&space, 0, 3)?;
    u = &splitters * u;
    let spm = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        d,
        space.basis().iter().map(|s| {
            let pairs: u32 = s.occupations.iter().map(|n| n * n.saturating_sub(1)).sum();
            Complex64::from_polar(1.0, spm_phase / 2.0 * f64::from(pairs))
        }),
    ));
    u = &splitters * spm * u;
    Ok(Propagator { space, matrix: u })
}

/// One line of the gate-decomposition comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub pipeline: String,
    pub per_gate_source: String,
    pub gates: u32,
    pub per_gate: f64,
    pub total: f64,
}

/// Optimized RQPN qubit-qubit CZ duration.
pub const CZ_OPTIMIZED: f64 = 0.773;
/// Optimized RQPN qubit-qutrit CZ duration.
pub const CZ_QUTRIT_OPTIMIZED: f64 = 0.89;
/// Direct RQPN Toffoli duration.
pub const TOFFOLI_DIRECT: f64 = 2.0;

/// Toffoli built from six qubit-qubit CZ gates or three qubit-qutrit CZ
/// gates, with optimized and analytic per-gate durations.
pub fn decomposition_durations() -> Vec<DecompositionRow> {
    let bound_01 = cz_min_duration(1e-3).expect("in domain");
    let bound_0 = cz_min_duration(0.0).expect("in domain");
    let row = |pipeline: &str, source: &str, gates: u32, per_gate: f64| DecompositionRow {
        pipeline: pipeline.into(),
        per_gate_source: source.into(),
        gates,
        per_gate,
        total: f64::from(gates) * per_gate,
    };
    vec![
        row("6 x qubit-qubit CZ", "optimized", 6, CZ_OPTIMIZED),
        row("6 x qubit-qubit CZ", "bound I=0.1%", 6, bound_01),
        row("3 x qubit-qutrit CZ", "optimized", 3, CZ_QUTRIT_OPTIMIZED),
        row("3 x qubit-qutrit CZ", "bound I=0", 3, bound_0),
        row("3 x qubit-qutrit CZ", "bound I=0.1%", 3, bound_01),
    ]
}

/// Speedup of the direct Toffoli over each optimized decomposition:
/// `(qubit-qubit, qubit-qutrit)`.
pub fn toffoli_speedups() -> (f64, f64) {
    (
        6.0 * CZ_OPTIMIZED / TOFFOLI_DIRECT,
        3.0 * CZ_QUTRIT_OPTIMIZED / TOFFOLI_DIRECT,
    )
}
