//! Fixed-excitation Hilbert-space sectors over bosonic modes and two-level
//! emitters.
//!
//! Every Hamiltonian in this crate conserves the total excitation number
//! `Σ n_m + Σ e_m`, so each sector is simulated on its own. A sector basis is
//! ordered lexicographically on `(occupations, emitter bits)`; that ordering
//! fixes every matrix layout and text dump downstream.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use num_traits::{Float, Zero};
use serde::{Deserialize, Serialize};

use crate::{CMatrix, CVector, Complex64, Error, Result};

/// Mode/emitter layout of a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub num_modes: usize,
    /// Either 0 or `num_modes`; emitter `m` sits in cavity `m`.
    pub num_emitters: usize,
    /// Largest photon number allowed in any single mode.
    pub per_mode_cutoff: usize,
}

impl Layout {
    /// Photons only, cutoff large enough for any sector up to `cutoff`.
    pub fn photonic(num_modes: usize, cutoff: usize) -> Self {
        Self {
            num_modes,
            num_emitters: 0,
            per_mode_cutoff: cutoff,
        }
    }

    /// One emitter per cavity.
    pub fn with_emitters(num_modes: usize, cutoff: usize) -> Self {
        Self {
            num_modes,
            num_emitters: num_modes,
            per_mode_cutoff: cutoff,
        }
    }

    pub fn has_emitters(&self) -> bool {
        self.num_emitters > 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_modes == 0 {
            return Err(Error::InvalidLayout("at least one mode is required".into()));
        }
        if self.num_emitters != 0 && self.num_emitters != self.num_modes {
            return Err(Error::InvalidLayout(format!(
                "num_emitters must be 0 or {} (got {})",
                self.num_modes, self.num_emitters
            )));
        }
        Ok(())
    }
}

/// One occupation-number basis state.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BasisState {
    pub occupations: Vec<u32>,
    /// `true` means the emitter is excited.
    #[serde(default)]
    pub emitters: Vec<bool>,
}

impl BasisState {
    pub fn new(occupations: Vec<u32>, emitters: Vec<bool>) -> Self {
        Self {
            occupations,
            emitters,
        }
    }

    pub fn photons(occupations: &[u32]) -> Self {
        Self::new(occupations.to_vec(), Vec::new())
    }

    pub fn excitation(&self) -> usize {
        self.occupations.iter().map(|&n| n as usize).sum::<usize>()
            + self.emitters.iter().filter(|&&e| e).count()
    }
}

impl fmt::Display for BasisState {
    /// `n1 n2 ... nM | e1 ... eM`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.occupations.iter().enumerate() {
            if i > 0 {
                f.write_char(' ')?;
            }
            write!(f, "{n}")?;
        }
        f.write_str(" |")?;
        for e in &self.emitters {
            write!(f, " {}", u8::from(*e))?;
        }
        Ok(())
    }
}

/// The basis of one total-excitation sector.
#[derive(Debug, Clone, PartialEq)]
pub struct HilbertSpace {
    layout: Layout,
    total_excitation: usize,
    basis: Vec<BasisState>,
    index_of: BTreeMap<BasisState, usize>,
}

impl HilbertSpace {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn total_excitation(&self) -> usize {
        self.total_excitation
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[BasisState] {
        &self.basis
    }

    pub fn index_of(&self, state: &BasisState) -> Option<usize> {
        self.index_of.get(state).copied()
    }

    /// Text dump, one line per basis state in index order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for state in &self.basis {
            let _ = writeln!(out, "{state}");
        }
        out
    }

    fn check_mode(&self, m: usize) -> Result<()> {
        if m >= self.layout.num_modes {
            return Err(Error::IndexOutOfRange {
                what: "mode",
                index: m,
                count: self.layout.num_modes,
            });
        }
        Ok(())
    }

    fn check_emitter(&self, m: usize) -> Result<()> {
        if m >= self.layout.num_emitters {
            return Err(Error::IndexOutOfRange {
                what: "emitter",
                index: m,
                count: self.layout.num_emitters,
            });
        }
        Ok(())
    }
}

/// Enumerates all basis states with exactly `total_excitation` excitations.
pub fn build_space(layout: Layout, total_excitation: usize) -> Result<HilbertSpace> {
    layout.validate()?;
    let m = layout.num_modes;
    let mut basis = Vec::new();
    for mask in 0u64..(1u64 << layout.num_emitters) {
        let emitters: Vec<bool> = (0..layout.num_emitters)
            .map(|i| mask >> i & 1 == 1)
            .collect();
        let excited = mask.count_ones() as usize;
        if excited > total_excitation {
            continue;
        }
        let photons = total_excitation - excited;
        let mut occ = vec![0u32; m];
        compositions(photons, 0, layout.per_mode_cutoff, &mut occ, &mut |occ| {
            basis.push(BasisState::new(occ.to_vec(), emitters.clone()));
        });
    }
    if basis.is_empty() {
        return Err(Error::EmptySpace(format!(
            "no states with {total_excitation} excitations in {} modes (cutoff {}, {} emitters)",
            m, layout.per_mode_cutoff, layout.num_emitters
        )));
    }
    basis.sort();
    let index_of = basis
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();
    Ok(HilbertSpace {
        layout,
        total_excitation,
        basis,
        index_of,
    })
}

fn compositions(
    remaining: usize,
    mode: usize,
    cutoff: usize,
    occ: &mut [u32],
    emit: &mut impl FnMut(&[u32]),
) {
    if mode + 1 == occ.len() {
        if remaining <= cutoff {
            occ[mode] = remaining as u32;
            emit(occ);
        }
        return;
    }
    for n in 0..=remaining.min(cutoff) {
        occ[mode] = n as u32;
        compositions(remaining - n, mode + 1, cutoff, occ, emit);
    }
    occ[mode] = 0;
}

/// Square matrix acting within one sector.
#[derive(Debug, Clone)]
pub struct Operator {
    pub space: Arc<HilbertSpace>,
    pub matrix: CMatrix,
}

impl Operator {
    pub fn new(space: Arc<HilbertSpace>, matrix: CMatrix) -> Result<Self> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix for a space of dim {d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { space, matrix })
    }

    pub fn zeros(space: Arc<HilbertSpace>) -> Self {
        let d = space.dim();
        Self {
            space,
            matrix: CMatrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn adjoint(&self) -> Self {
        Self {
            space: self.space.clone(),
            matrix: self.matrix.adjoint(),
        }
    }

    /// Largest entry of `|A - A†|`.
    pub fn hermiticity_error(&self) -> f64 {
        crate::linalg::max_abs_diff(&self.matrix, &self.matrix.adjoint())
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        same_space(&self.space, &state.space)?;
        Ok(StateVector {
            space: self.space.clone(),
            amplitudes: &self.matrix * &state.amplitudes,
        })
    }

    /// Frobenius norm of `[A, B]`.
    pub fn commutator_norm(&self, other: &Operator) -> f64 {
        let c = &self.matrix * &other.matrix - &other.matrix * &self.matrix;
        c.norm()
    }
}

/// Rectangular map from sector N to sector N-1 (lowering operators).
#[derive(Debug, Clone)]
pub struct LadderMap {
    pub from: Arc<HilbertSpace>,
    /// `None` when lowering the vacuum sector: the image is the zero space.
    pub to: Option<Arc<HilbertSpace>>,
    pub matrix: CMatrix,
}

impl LadderMap {
    /// Applies the map; returns `None` when the image space is empty.
    pub fn apply(&self, state: &StateVector) -> Result<Option<StateVector>> {
        same_space(&self.from, &state.space)?;
        Ok(self.to.as_ref().map(|to| StateVector {
            space: to.clone(),
            amplitudes: &self.matrix * &state.amplitudes,
        }))
    }

    /// The raising map in the opposite direction (matrix adjoint).
    pub fn adjoint_matrix(&self) -> CMatrix {
        self.matrix.adjoint()
    }
}

fn lower_space(space: &HilbertSpace) -> Result<Option<Arc<HilbertSpace>>> {
    if space.total_excitation == 0 {
        return Ok(None);
    }
    match build_space(space.layout, space.total_excitation - 1) {
        Ok(s) => Ok(Some(Arc::new(s))),
        Err(Error::EmptySpace(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Photon annihilation operator `â_m` as a map from sector N to N-1.
pub fn annihilation(space: &Arc<HilbertSpace>, m: usize) -> Result<LadderMap> {
    space.check_mode(m)?;
    let to = lower_space(space)?;
    let rows = to.as_ref().map_or(0, |s| s.dim());
    let mut matrix = CMatrix::zeros(rows, space.dim());
    if let Some(lower) = &to {
        for (col, state) in space.basis.iter().enumerate() {
            let n = state.occupations[m];
            if n == 0 {
                continue;
            }
            let mut target = state.clone();
            target.occupations[m] -= 1;
            if let Some(row) = lower.index_of(&target) {
                matrix[(row, col)] = Complex64::new(Float::sqrt(f64::from(n)), 0.0);
            }
        }
    }
    Ok(LadderMap {
        from: space.clone(),
        to,
        matrix,
    })
}

/// Emitter lowering operator `σ_m = |g⟩⟨e|` as a map from sector N to N-1.
pub fn sigma(space: &Arc<HilbertSpace>, m: usize) -> Result<LadderMap> {
    space.check_emitter(m)?;
    let to = lower_space(space)?;
    let rows = to.as_ref().map_or(0, |s| s.dim());
    let mut matrix = CMatrix::zeros(rows, space.dim());
    if let Some(lower) = &to {
        for (col, state) in space.basis.iter().enumerate() {
            if !state.emitters[m] {
                continue;
            }
            let mut target = state.clone();
            target.emitters[m] = false;
            if let Some(row) = lower.index_of(&target) {
                matrix[(row, col)] = Complex64::new(1.0, 0.0);
            }
        }
    }
    Ok(LadderMap {
        from: space.clone(),
        to,
        matrix,
    })
}

/// `â_m† â_m`.
pub fn number(space: &Arc<HilbertSpace>, m: usize) -> Result<Operator> {
    space.check_mode(m)?;
    let diag: Vec<f64> = space
        .basis
        .iter()
        .map(|s| f64::from(s.occupations[m]))
        .collect();
    Ok(diagonal(space, &diag))
}

/// `σ_m† σ_m`.
pub fn emitter_number(space: &Arc<HilbertSpace>, m: usize) -> Result<Operator> {
    space.check_emitter(m)?;
    let diag: Vec<f64> = space
        .basis
        .iter()
        .map(|s| if s.emitters[m] { 1.0 } else { 0.0 })
        .collect();
    Ok(diagonal(space, &diag))
}

/// Total excitation operator; equals `N·I` on a sector.
pub fn total_excitation(space: &Arc<HilbertSpace>) -> Operator {
    let diag: Vec<f64> = space.basis.iter().map(|s| s.excitation() as f64).collect();
    diagonal(space, &diag)
}

/// `â_to† â_from` within the sector.
pub fn hopping(space: &Arc<HilbertSpace>, to: usize, from: usize) -> Result<Operator> {
    space.check_mode(to)?;
    space.check_mode(from)?;
    let mut op = Operator::zeros(space.clone());
    for (row, col, value) in hopping_elements(space, to, from) {
        op.matrix[(row, col)] += Complex64::new(value, 0.0);
    }
    Ok(op)
}

/// Nonzero `(row, col, value)` entries of `â_to† â_from`.
pub(crate) fn hopping_elements(
    space: &HilbertSpace,
    to: usize,
    from: usize,
) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (col, state) in space.basis.iter().enumerate() {
        let n_from = state.occupations[from];
        if n_from == 0 {
            continue;
        }
        if to == from {
            out.push((col, col, f64::from(n_from)));
            continue;
        }
        let n_to = state.occupations[to];
        let mut target = state.clone();
        target.occupations[from] -= 1;
        target.occupations[to] += 1;
        if let Some(row) = space.index_of(&target) {
            out.push((
                row,
                col,
                Float::sqrt(f64::from(n_from) * f64::from(n_to + 1)),
            ));
        }
    }
    out
}

/// Nonzero entries of `σ_m â_m†` (emitter relaxes, photon created).
pub(crate) fn emission_elements(space: &HilbertSpace, m: usize) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (col, state) in space.basis.iter().enumerate() {
        if !state.emitters[m] {
            continue;
        }
        let mut target = state.clone();
        target.emitters[m] = false;
        target.occupations[m] += 1;
        if let Some(row) = space.index_of(&target) {
            out.push((row, col, Float::sqrt(f64::from(target.occupations[m]))));
        }
    }
    out
}

/// Jaynes–Cummings exchange `σ_m â_m† + σ_m† â_m` within the sector.
pub fn jc_exchange(space: &Arc<HilbertSpace>, m: usize) -> Result<Operator> {
    space.check_emitter(m)?;
    let mut op = Operator::zeros(space.clone());
    for (row, col, v) in emission_elements(space, m) {
        op.matrix[(row, col)] += Complex64::new(v, 0.0);
        op.matrix[(col, row)] += Complex64::new(v, 0.0);
    }
    Ok(op)
}

fn diagonal(space: &Arc<HilbertSpace>, diag: &[f64]) -> Operator {
    let mut op = Operator::zeros(space.clone());
    for (i, &v) in diag.iter().enumerate() {
        op.matrix[(i, i)] = Complex64::new(v, 0.0);
    }
    op
}

pub(crate) fn same_space(a: &Arc<HilbertSpace>, b: &Arc<HilbertSpace>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "operands live in different sectors (N = {} vs N = {})",
            a.total_excitation, b.total_excitation
        )))
    }
}

/// A pure state in one sector.
#[derive(Debug, Clone)]
pub struct StateVector {
    pub space: Arc<HilbertSpace>,
    pub amplitudes: CVector,
}

impl StateVector {
    pub fn zeros(space: Arc<HilbertSpace>) -> Self {
        let d = space.dim();
        Self {
            space,
            amplitudes: CVector::zeros(d),
        }
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.amplitudes /= Complex64::new(n, 0.0);
        }
        self
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        same_space(&self.space, &other.space)?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// `self + c·other`, in place.
    pub fn add_scaled(&mut self, c: Complex64, other: &StateVector) -> Result<()> {
        same_space(&self.space, &other.space)?;
        self.amplitudes
            .axpy(c, &other.amplitudes, Complex64::new(1.0, 0.0));
        Ok(())
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            space: self.space.clone(),
            amplitudes: &self.amplitudes * c,
        }
    }
}

/// Unit basis vector for the given occupation pattern.
pub fn ket(
    space: &Arc<HilbertSpace>,
    occupations: &[u32],
    emitters: &[bool],
) -> Result<StateVector> {
    let layout = space.layout();
    if occupations.len() != layout.num_modes || emitters.len() != layout.num_emitters {
        return Err(Error::DimensionMismatch(format!(
            "state has {} modes / {} emitters, layout has {} / {}",
            occupations.len(),
            emitters.len(),
            layout.num_modes,
            layout.num_emitters
        )));
    }
    let state = BasisState::new(occupations.to_vec(), emitters.to_vec());
    let found = state.excitation();
    if found != space.total_excitation() {
        return Err(Error::SectorMismatch {
            expected: space.total_excitation(),
            found,
        });
    }
    let idx = space
        .index_of(&state)
        .ok_or_else(|| Error::Validation(format!("state [{state}] exceeds the per-mode cutoff")))?;
    let mut v = StateVector::zeros(space.clone());
    v.amplitudes[idx] = Complex64::new(1.0, 0.0);
    Ok(v)
}

/// Probability of finding exactly `n` photons in mode `m`.
pub fn occupation_probability(state: &StateVector, m: usize, n: u32) -> f64 {
    state
        .space
        .basis()
        .iter()
        .zip(state.amplitudes.iter())
        .filter(|(s, _)| s.occupations.get(m) == Some(&n))
        .map(|(_, a)| a.norm_sqr())
        .sum()
}

/// `⟨n̂_m⟩`.
pub fn mean_occupation(state: &StateVector, m: usize) -> f64 {
    state
        .space
        .basis()
        .iter()
        .zip(state.amplitudes.iter())
        .map(|(s, a)| f64::from(s.occupations.get(m).copied().unwrap_or(0)) * a.norm_sqr())
        .sum()
}

/// Probability that emitter `m` is excited.
pub fn excited_probability(state: &StateVector, m: usize) -> f64 {
    state
        .space
        .basis()
        .iter()
        .zip(state.amplitudes.iter())
        .filter(|(s, _)| s.emitters.get(m) == Some(&true))
        .map(|(_, a)| a.norm_sqr())
        .sum()
}

/// Amplitude-weighted sum of basis kets, `Σ c_i |state_i⟩`.
pub fn superposition(
    space: &Arc<HilbertSpace>,
    terms: &[(Complex64, BasisState)],
) -> Result<StateVector> {
    let mut out = StateVector::zeros(space.clone());
    for (c, s) in terms {
        let k = ket(space, &s.occupations, &s.emitters)?;
        out.add_scaled(*c, &k)?;
    }
    if out.amplitudes.iter().all(|a| a.is_zero()) {
        return Err(Error::Validation("superposition is the zero vector".into()));
    }
    Ok(out)
}
