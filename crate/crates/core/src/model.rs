//! Per-bin network Hamiltonian.
//!
//! `H = Σ δᶜ_m n_m + Σ_{n,m} C_nm √(κ_n κ_m) a_n† a_m + H_NL` where `H_NL` is
//! either self-phase modulation `-Σ a_m† a_m† a_m a_m` or the Jaynes–Cummings
//! exchange `Σ (σ_m a_m† + σ_m† a_m)` plus emitter detunings `Σ δᵉ_m σ_m† σ_m`.
//! The nonlinear rate is the unit of frequency.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::hilbert::{emission_elements, hopping_elements, HilbertSpace, Operator};
use crate::mixing::CouplingMatrix;
use crate::{Complex64, Error, RMatrix, Result};

/// Which nonlinearity the cavities carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearKind {
    /// Self-phase modulation (Kerr), rate χ₃.
    Spm,
    /// One two-level emitter per cavity, Jaynes–Cummings rate g.
    Tle,
}

/// Piecewise-constant controls of one time bin, in physical units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlBin {
    pub kappa: Vec<f64>,
    pub delta_c: Vec<f64>,
    /// Emitter detunings; empty for SPM networks.
    #[serde(default)]
    pub delta_e: Vec<f64>,
    pub dt: f64,
}

impl ControlBin {
    /// All rates zero.
    pub fn idle(num_modes: usize, kind: NonlinearKind, dt: f64) -> Self {
        Self {
            kappa: alloc::vec![0.0; num_modes],
            delta_c: alloc::vec![0.0; num_modes],
            delta_e: match kind {
                NonlinearKind::Spm => Vec::new(),
                NonlinearKind::Tle => alloc::vec![0.0; num_modes],
            },
            dt,
        }
    }

    pub(crate) fn validate(&self, num_modes: usize, kind: NonlinearKind) -> Result<()> {
        if self.kappa.len() != num_modes || self.delta_c.len() != num_modes {
            return Err(Error::DimensionMismatch(format!(
                "control bin has {} kappa / {} delta_c entries for {num_modes} modes",
                self.kappa.len(),
                self.delta_c.len()
            )));
        }
        if let Some(k) = self.kappa.iter().find(|k| !(**k >= 0.0) || !k.is_finite()) {
            return Err(Error::Validation(format!(
                "kappa must be finite and >= 0, got {k}"
            )));
        }
        if self.delta_c.iter().any(|d| !d.is_finite()) {
            return Err(Error::Validation("non-finite cavity detuning".into()));
        }
        match kind {
            NonlinearKind::Spm if !self.delta_e.is_empty() => Err(Error::Validation(
                "emitter detunings supplied for a self-phase-modulation network".into(),
            )),
            NonlinearKind::Tle if self.delta_e.len() != num_modes => {
                Err(Error::DimensionMismatch(format!(
                    "control bin has {} delta_e entries for {num_modes} emitters",
                    self.delta_e.len()
                )))
            }
            NonlinearKind::Tle if self.delta_e.iter().any(|d| !d.is_finite()) => {
                Err(Error::Validation("non-finite emitter detuning".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Matrix elements of every Hamiltonian term on one sector, precomputed so
/// that per-bin assembly is a handful of scatter-adds into a real matrix.
///
/// Every term has real matrix elements in the occupation basis, so all
/// Hamiltonians here are real symmetric.
#[derive(Debug, Clone)]
pub struct SectorModel {
    pub(crate) space: Arc<HilbertSpace>,
    pub(crate) kind: NonlinearKind,
    pub(crate) num_modes: usize,
    /// `occ[m][i]` = photons in mode `m` of basis state `i`.
    pub(crate) occ: Vec<Vec<f64>>,
    /// `exc[m][i]` = 1 if emitter `m` is excited in basis state `i`.
    pub(crate) exc: Vec<Vec<f64>>,
    /// Nonlinear term at unit rate, without emitter detunings.
    pub(crate) nonlinear: RMatrix,
    /// `hops[to * M + from]`: entries of `a_to† a_from`, `to ≠ from`.
    pub(crate) hops: Vec<Vec<(usize, usize, f64)>>,
}

impl SectorModel {
    pub fn new(space: Arc<HilbertSpace>, kind: NonlinearKind) -> Result<Self> {
        let layout = *space.layout();
        let m = layout.num_modes;
        if kind == NonlinearKind::Tle && layout.num_emitters != m {
            return Err(Error::InvalidLayout(format!(
                "emitter networks need one emitter per cavity ({} modes, {} emitters)",
                m, layout.num_emitters
            )));
        }
        let d = space.dim();
        let occ: Vec<Vec<f64>> = (0..m)
            .map(|mode| {
                space
                    .basis()
                    .iter()
                    .map(|s| f64::from(s.occupations[mode]))
                    .collect()
            })
            .collect();
        let exc: Vec<Vec<f64>> = (0..layout.num_emitters)
            .map(|e| {
                space
                    .basis()
                    .iter()
                    .map(|s| if s.emitters[e] { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut nonlinear = RMatrix::zeros(d, d);
        match kind {
            NonlinearKind::Spm => {
                for (i, s) in space.basis().iter().enumerate() {
                    nonlinear[(i, i)] = -s
                        .occupations
                        .iter()
                        .map(|&n| f64::from(n) * (f64::from(n) - 1.0))
                        .sum::<f64>();
                }
            }
            NonlinearKind::Tle => {
                for e in 0..m {
                    for (r, c, v) in emission_elements(&space, e) {
                        nonlinear[(r, c)] += v;
                        nonlinear[(c, r)] += v;
                    }
                }
            }
        }
        let mut hops = Vec::with_capacity(m * m);
        for to in 0..m {
            for from in 0..m {
                hops.push(if to == from {
                    Vec::new()
                } else {
                    hopping_elements(&space, to, from)
                });
            }
        }
        Ok(Self {
            space,
            kind,
            num_modes: m,
            occ,
            exc,
            nonlinear,
            hops,
        })
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn kind(&self) -> NonlinearKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Writes `Σ δ_m n_m + Σ C_nm s_n s_m a_n†a_m + η·H_NL + Σ ε_m σ_m†σ_m`
    /// into `out`.
    ///
    /// With `s = √κ`, `η = 1` this is the physical Hamiltonian; with the
    /// renormalized amplitudes and `η = Δt` it is the dimensionless bin
    /// generator `H·Δt`.
    pub(crate) fn assemble(
        &self,
        out: &mut RMatrix,
        delta_c: &[f64],
        amp: &[f64],
        coupling: &RMatrix,
        nl_scale: f64,
        delta_e: &[f64],
    ) {
        out.copy_from(&self.nonlinear);
        if nl_scale != 1.0 {
            out.scale_mut(nl_scale);
        }
        let m = self.num_modes;
        for mode in 0..m {
            let diag = delta_c[mode] + coupling[(mode, mode)] * amp[mode] * amp[mode];
            if diag != 0.0 {
                for (i, n) in self.occ[mode].iter().enumerate() {
                    out[(i, i)] += diag * n;
                }
            }
        }
        for (e, eps) in delta_e.iter().enumerate() {
            if *eps != 0.0 {
                for (i, x) in self.exc[e].iter().enumerate() {
                    out[(i, i)] += eps * x;
                }
            }
        }
        for to in 0..m {
            for from in 0..m {
                if to == from {
                    continue;
                }
                let w = coupling[(to, from)] * amp[to] * amp[from];
                if w == 0.0 {
                    continue;
                }
                for &(r, c, v) in &self.hops[to * m + from] {
                    out[(r, c)] += w * v;
                }
            }
        }
    }

    /// Physical Hamiltonian of one bin as a real symmetric matrix.
    pub fn real_hamiltonian(&self, coupling: &CouplingMatrix, bin: &ControlBin) -> Result<RMatrix> {
        if coupling.num_modes() != self.num_modes {
            return Err(Error::DimensionMismatch(format!(
                "{}-mode coupling matrix for a {}-mode network",
                coupling.num_modes(),
                self.num_modes
            )));
        }
        bin.validate(self.num_modes, self.kind)?;
        let amp: Vec<f64> = bin.kappa.iter().map(|k| Float::sqrt(*k)).collect();
        let d = self.dim();
        let mut h = RMatrix::zeros(d, d);
        self.assemble(
            &mut h,
            &bin.delta_c,
            &amp,
            coupling.entries(),
            1.0,
            &bin.delta_e,
        );
        Ok(h)
    }
}

/// Physical Hamiltonian of one control bin on a sector.
pub fn build_hamiltonian(
    space: &Arc<HilbertSpace>,
    coupling: &CouplingMatrix,
    bin: &ControlBin,
    kind: NonlinearKind,
) -> Result<Operator> {
    let model = SectorModel::new(space.clone(), kind)?;
    let h = model.real_hamiltonian(coupling, bin)?;
    Operator::new(space.clone(), h.map(|x| Complex64::new(x, 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{
        annihilation, build_space, emitter_number, hopping, jc_exchange, ket, number,
        total_excitation, Layout,
    };
    use crate::CMatrix;
    use alloc::vec;
    use proptest::prelude::*;

    fn photonic(m: usize, n: usize) -> Arc<HilbertSpace> {
        Arc::new(build_space(Layout::photonic(m, n), n).unwrap())
    }

    fn element(
        op: &Operator,
        a: &crate::hilbert::StateVector,
        b: &crate::hilbert::StateVector,
    ) -> Complex64 {
        a.inner(&op.apply(b).unwrap()).unwrap()
    }

    #[test]
    fn spm_diagonal_examples() {
        let s = photonic(2, 2);
        let bin = ControlBin::idle(2, NonlinearKind::Spm, 1.0);
        let h = build_hamiltonian(&s, &CouplingMatrix::zeros(2), &bin, NonlinearKind::Spm).unwrap();
        let two = ket(&s, &[2, 0], &[]).unwrap();
        assert_eq!(element(&h, &two, &two).re, -2.0);
        let s1 = photonic(3, 1);
        let h1 = build_hamiltonian(
            &s1,
            &CouplingMatrix::zeros(3),
            &ControlBin::idle(3, NonlinearKind::Spm, 1.0),
            NonlinearKind::Spm,
        )
        .unwrap();
        for i in 0..3 {
            assert_eq!(h1.matrix[(i, i)].re, 0.0);
        }
    }

    #[test]
    fn linear_coupling_element() {
        let s = photonic(2, 1);
        let bin = ControlBin {
            kappa: vec![4.0, 1.0],
            delta_c: vec![0.0, 0.0],
            delta_e: vec![],
            dt: 1.0,
        };
        let c = CouplingMatrix::from_upper(2, &[1.0]).unwrap();
        let h = build_hamiltonian(&s, &c, &bin, NonlinearKind::Spm).unwrap();
        let a = ket(&s, &[1, 0], &[]).unwrap();
        let b = ket(&s, &[0, 1], &[]).unwrap();
        assert!((element(&h, &a, &b).re - 2.0).abs() < 1e-15);
    }

    #[test]
    fn jaynes_cummings_element() {
        let s = Arc::new(build_space(Layout::with_emitters(1, 1), 1).unwrap());
        let bin = ControlBin::idle(1, NonlinearKind::Tle, 1.0);
        let h = build_hamiltonian(&s, &CouplingMatrix::zeros(1), &bin, NonlinearKind::Tle).unwrap();
        let g1 = ket(&s, &[1], &[false]).unwrap();
        let e0 = ket(&s, &[0], &[true]).unwrap();
        assert_eq!(element(&h, &g1, &e0).re, 1.0);
        assert_eq!(element(&h, &e0, &g1).re, 1.0);
    }

    #[test]
    fn validation_errors() {
        let s = photonic(2, 1);
        let c = CouplingMatrix::zeros(2);
        let mut bin = ControlBin::idle(2, NonlinearKind::Spm, 1.0);
        bin.kappa[0] = -1.0;
        assert!(matches!(
            build_hamiltonian(&s, &c, &bin, NonlinearKind::Spm),
            Err(Error::Validation(_))
        ));
        let mut bin = ControlBin::idle(2, NonlinearKind::Spm, 1.0);
        bin.delta_e = vec![0.0, 0.0];
        assert!(matches!(
            build_hamiltonian(&s, &c, &bin, NonlinearKind::Spm),
            Err(Error::Validation(_))
        ));
        let bin = ControlBin::idle(2, NonlinearKind::Tle, 1.0);
        assert!(build_hamiltonian(&s, &c, &bin, NonlinearKind::Tle).is_err());
    }

    /// Independent assembly from ladder-operator products.
    fn oracle_hamiltonian(
        space: &Arc<HilbertSpace>,
        c: &CouplingMatrix,
        bin: &ControlBin,
        kind: NonlinearKind,
    ) -> CMatrix {
        let m = c.num_modes();
        let d = space.dim();
        let mut h = CMatrix::zeros(d, d);
        for a in 0..m {
            h += number(space, a).unwrap().matrix * Complex64::new(bin.delta_c[a], 0.0);
            for b in 0..m {
                let w = c.get(a, b) * (bin.kappa[a] * bin.kappa[b]).sqrt();
                h += hopping(space, a, b).unwrap().matrix * Complex64::new(w, 0.0);
            }
        }
        match kind {
            NonlinearKind::Spm => {
                for a in 0..m {
                    let low = annihilation(space, a).unwrap();
                    if let Some(lower) = &low.to {
                        let low2 = annihilation(lower, a).unwrap();
                        if low2.to.is_some() {
                            let aa = &low2.matrix * &low.matrix;
                            h -= aa.adjoint() * aa;
                        }
                    }
                }
            }
            NonlinearKind::Tle => {
                for a in 0..m {
                    h += jc_exchange(space, a).unwrap().matrix;
                    h += emitter_number(space, a).unwrap().matrix
                        * Complex64::new(bin.delta_e[a], 0.0);
                }
            }
        }
        h
    }

    fn random_case() -> impl Strategy<Value = (usize, usize, bool, Vec<f64>)> {
        (2usize..=4, 1usize..=3, any::<bool>()).prop_flat_map(|(m, n, tle)| {
            (
                Just(m),
                Just(n),
                Just(tle),
                proptest::collection::vec(-3.0f64..3.0, 4 * m + m * m),
            )
        })
    }

    fn unpack(m: usize, tle: bool, v: &[f64]) -> (CouplingMatrix, ControlBin, NonlinearKind) {
        let kind = if tle {
            NonlinearKind::Tle
        } else {
            NonlinearKind::Spm
        };
        let kappa = v[..m].iter().map(|x| x.abs()).collect();
        let delta_c = v[m..2 * m].to_vec();
        let delta_e = if tle {
            v[2 * m..3 * m].to_vec()
        } else {
            vec![]
        };
        let raw = RMatrix::from_row_slice(m, m, &v[4 * m..]);
        let c = CouplingMatrix::new((&raw + raw.transpose()) * 0.5).unwrap();
        (
            c,
            ControlBin {
                kappa,
                delta_c,
                delta_e,
                dt: 1.0,
            },
            kind,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_ladder_oracle_and_conserves_excitation((m, n, tle, v) in random_case()) {
            let (c, bin, kind) = unpack(m, tle, &v);
            let layout = if tle { Layout::with_emitters(m, n) } else { Layout::photonic(m, n) };
            let space = Arc::new(build_space(layout, n).unwrap());
            let h = build_hamiltonian(&space, &c, &bin, kind).unwrap();
            let oracle = oracle_hamiltonian(&space, &c, &bin, kind);
            prop_assert!(crate::linalg::max_abs_diff(&h.matrix, &oracle) < 1e-12);
            prop_assert!(h.hermiticity_error() < 1e-12);
            let total = total_excitation(&space);
            prop_assert!(h.commutator_norm(&total) < 1e-12);
        }

        #[test]
        fn linear_in_coupling((m, n, tle, v) in random_case(), w in proptest::collection::vec(-2.0f64..2.0, 6)) {
            let (c1, bin, kind) = unpack(m, tle, &v);
            let c2 = CouplingMatrix::from_upper(m, &w[..m * (m - 1) / 2]).unwrap();
            let sum = CouplingMatrix::new(c1.entries() + c2.entries()).unwrap();
            let layout = if tle { Layout::with_emitters(m, n) } else { Layout::photonic(m, n) };
            let space = Arc::new(build_space(layout, n).unwrap());
            let h = |c: &CouplingMatrix| build_hamiltonian(&space, c, &bin, kind).unwrap().matrix;
            let z = CouplingMatrix::zeros(m);
            let resid = h(&sum) - h(&c1) - h(&c2) + h(&z);
            prop_assert!(resid.iter().all(|z| z.norm() < 1e-12));
        }

        #[test]
        fn diagonal_coupling_equals_detuning((m, n, _tle, v) in random_case()) {
            let (c, mut bin, kind) = unpack(m, false, &v);
            let space = photonic(m, n);
            let diag: Vec<f64> = (0..m).map(|i| v[2 * m + i]).collect();
            let mut cd = c.entries().clone();
            for i in 0..m { cd[(i, i)] += diag[i]; }
            let with_diag = build_hamiltonian(&space, &CouplingMatrix::new(cd).unwrap(), &bin, kind).unwrap();
            for i in 0..m { bin.delta_c[i] += diag[i] * bin.kappa[i]; }
            let shifted = build_hamiltonian(&space, &c, &bin, kind).unwrap();
            prop_assert!(crate::linalg::max_abs_diff(&with_diag.matrix, &shifted.matrix) < 1e-12);
        }
    }
}
