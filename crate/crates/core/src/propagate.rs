//! Exact piecewise-constant time evolution.

use alloc::format;
use alloc::sync::Arc;

use crate::hilbert::{HilbertSpace, Operator, StateVector};
use crate::linalg::{expm_from_real_eigen, expm_hermitian, sym_eigen, unitarity_error};
use crate::mixing::CouplingMatrix;
use crate::model::{ControlBin, NonlinearKind, SectorModel};
use crate::{CMatrix, Error, Result};

/// Hermiticity tolerance, relative to the largest entry (absolute below 1).
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Unitary evolution operator on one sector.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub space: Arc<HilbertSpace>,
    pub matrix: CMatrix,
}

impl Propagator {
    pub fn identity(space: Arc<HilbertSpace>) -> Self {
        let d = space.dim();
        Self {
            space,
            matrix: CMatrix::identity(d, d),
        }
    }

    /// Largest entry of `|U†U - I|`.
    pub fn unitarity_error(&self) -> f64 {
        unitarity_error(&self.matrix)
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        crate::hilbert::same_space(&self.space, &state.space)?;
        Ok(StateVector {
            space: self.space.clone(),
            amplitudes: &self.matrix * &state.amplitudes,
        })
    }

    /// `later · self`: first `self`, then `later`.
    pub fn then(&self, later: &Propagator) -> Result<Propagator> {
        if self.space.dim() != later.space.dim() {
            return Err(Error::DimensionMismatch(format!(
                "composing propagators of dim {} and {}",
                self.space.dim(),
                later.space.dim()
            )));
        }
        Ok(Propagator {
            space: self.space.clone(),
            matrix: &later.matrix * &self.matrix,
        })
    }
}

/// `exp(-i H dt)` by Hermitian eigendecomposition.
pub fn expm_step(h: &Operator, dt: f64) -> Result<Propagator> {
    let scale = h.matrix.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let err = h.hermiticity_error();
    if !(err <= HERMITIAN_TOL * scale) {
        return Err(Error::NotHermitian(err));
    }
    if !dt.is_finite() {
        return Err(Error::Validation(format!(
            "time step must be finite, got {dt}"
        )));
    }
    Ok(Propagator {
        space: h.space.clone(),
        matrix: expm_hermitian(&h.matrix, dt),
    })
}

/// `U = U_N ⋯ U_2 U_1` for the given bins; the first bin acts first.
pub fn evolve(
    bins: &[ControlBin],
    coupling: &CouplingMatrix,
    kind: NonlinearKind,
    space: &Arc<HilbertSpace>,
) -> Result<Propagator> {
    let model = SectorModel::new(space.clone(), kind)?;
    evolve_with(&model, bins, coupling)
}

/// [`evolve`] on a prebuilt sector model.
pub fn evolve_with(
    model: &SectorModel,
    bins: &[ControlBin],
    coupling: &CouplingMatrix,
) -> Result<Propagator> {
    if bins.is_empty() {
        return Err(Error::Validation(
            "evolution needs at least one time bin".into(),
        ));
    }
    let mut u = CMatrix::identity(model.dim(), model.dim());
    for bin in bins {
        u = bin_propagator(model, bin, coupling)? * u;
    }
    Ok(Propagator {
        space: model.space().clone(),
        matrix: u,
    })
}

/// `exp(-i H dt)` for one bin.
pub fn bin_propagator(
    model: &SectorModel,
    bin: &ControlBin,
    coupling: &CouplingMatrix,
) -> Result<CMatrix> {
    if !(bin.dt > 0.0) || !bin.dt.is_finite() {
        return Err(Error::Validation(format!(
            "bin duration must be positive, got {}",
            bin.dt
        )));
    }
    let h = model.real_hamiltonian(coupling, bin)? * bin.dt;
    let (lam, v) = sym_eigen(h);
    Ok(expm_from_real_eigen(&lam, &v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{build_space, hopping, ket, Layout};
    use crate::linalg::max_abs_diff;
    use crate::model::build_hamiltonian;
    use crate::Complex64;
    use alloc::vec;
    use alloc::vec::Vec;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    fn photonic(m: usize, n: usize) -> Arc<HilbertSpace> {
        Arc::new(build_space(Layout::photonic(m, n), n).unwrap())
    }

    #[test]
    fn zero_hamiltonian_gives_identity() {
        let s = photonic(3, 2);
        let u = expm_step(&Operator::zeros(s.clone()), 0.7).unwrap();
        assert!(max_abs_diff(&u.matrix, &CMatrix::identity(s.dim(), s.dim())) == 0.0);
    }

    #[test]
    fn diagonal_phase() {
        let s = photonic(2, 1);
        let mut h = Operator::zeros(s.clone());
        h.matrix[(0, 0)] = Complex64::new(1.3, 0.0);
        let u = expm_step(&h, 0.4).unwrap();
        let expect = Complex64::from_polar(1.0, -1.3 * 0.4);
        assert!((u.matrix[(0, 0)] - expect).norm() < 1e-15);
        assert!((u.matrix[(1, 1)] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn two_mode_swap() {
        let s = photonic(2, 1);
        let kappa = 2.0;
        let h = Operator {
            space: s.clone(),
            matrix: (hopping(&s, 0, 1).unwrap().matrix + hopping(&s, 1, 0).unwrap().matrix)
                * Complex64::new(kappa, 0.0),
        };
        let u = expm_step(&h, PI / 2.0 / kappa).unwrap();
        let out = u.apply(&ket(&s, &[1, 0], &[]).unwrap()).unwrap();
        let target = ket(&s, &[0, 1], &[]).unwrap();
        let amp = target.inner(&out).unwrap();
        assert!((amp - Complex64::new(0.0, -1.0)).norm() < 1e-14);
    }

    #[test]
    fn rejects_non_hermitian() {
        let s = photonic(2, 1);
        let mut h = Operator::zeros(s);
        h.matrix[(0, 1)] = Complex64::new(1.0, 0.0);
        assert!(matches!(expm_step(&h, 1.0), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn spm_phase_on_two_photons() {
        let s = photonic(1, 2);
        let bins = [ControlBin::idle(1, NonlinearKind::Spm, PI / 4.0)];
        let u = evolve(&bins, &CouplingMatrix::zeros(1), NonlinearKind::Spm, &s).unwrap();
        assert!((u.matrix[(0, 0)] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn empty_bins_rejected() {
        let s = photonic(2, 1);
        assert!(evolve(&[], &CouplingMatrix::zeros(2), NonlinearKind::Spm, &s).is_err());
    }

    #[test]
    fn idle_bins_give_identity_for_one_photon() {
        let s = photonic(3, 1);
        let bins = vec![ControlBin::idle(3, NonlinearKind::Spm, 0.1); 50];
        let u = evolve(
            &bins,
            &CouplingMatrix::all_to_all(3),
            NonlinearKind::Spm,
            &s,
        )
        .unwrap();
        assert!(max_abs_diff(&u.matrix, &CMatrix::identity(3, 3)) < 1e-15);
    }

    fn random_bin(m: usize, kind: NonlinearKind, v: &[f64]) -> ControlBin {
        ControlBin {
            kappa: v[..m].iter().map(|x| x.abs()).collect(),
            delta_c: v[m..2 * m].to_vec(),
            delta_e: if kind == NonlinearKind::Tle {
                v[2 * m..3 * m].to_vec()
            } else {
                vec![]
            },
            dt: 0.05 + v[3 * m].abs(),
        }
    }

    #[test]
    fn composition_order_and_inverse() {
        let s = Arc::new(build_space(Layout::with_emitters(2, 3), 3).unwrap());
        let c = CouplingMatrix::from_upper(2, &[0.7]).unwrap();
        let kind = NonlinearKind::Tle;
        let b1 = random_bin(2, kind, &[1.0, 2.0, -0.3, 0.4, 0.2, -1.0, 0.3]);
        let b2 = random_bin(2, kind, &[0.5, 0.1, 1.3, -0.4, 0.9, 0.6, 0.2]);
        let u = evolve(&[b1.clone(), b2.clone()], &c, kind, &s).unwrap();
        let u1 = expm_step(&build_hamiltonian(&s, &c, &b1, kind).unwrap(), b1.dt).unwrap();
        let u2 = expm_step(&build_hamiltonian(&s, &c, &b2, kind).unwrap(), b2.dt).unwrap();
        assert!(max_abs_diff(&u.matrix, &(&u2.matrix * &u1.matrix)) < 1e-13);
        assert!(max_abs_diff(&u.matrix, &u1.then(&u2).unwrap().matrix) < 1e-13);

        let h = build_hamiltonian(&s, &c, &b1, kind).unwrap();
        let fwd = expm_step(&h, 0.8).unwrap();
        let back = expm_step(&h, -0.8).unwrap();
        let prod = &back.matrix * &fwd.matrix;
        assert!(max_abs_diff(&prod, &CMatrix::identity(s.dim(), s.dim())) < 1e-13);
    }

    #[test]
    fn long_composition_stays_unitary() {
        let s = photonic(3, 3);
        let c = CouplingMatrix::all_to_all(3);
        let mut x = 0.37f64;
        let mut next = || {
            x = (x * 97.31 + 0.123).fract();
            4.0 * x - 2.0
        };
        let bins: Vec<ControlBin> = (0..640)
            .map(|_| {
                let v: Vec<f64> = (0..10).map(|_| next()).collect();
                random_bin(3, NonlinearKind::Spm, &v)
            })
            .collect();
        let u = evolve(&bins, &c, NonlinearKind::Spm, &s).unwrap();
        assert!(u.unitarity_error() < 1e-9);
        let psi = ket(&s, &[1, 1, 1], &[]).unwrap();
        assert!((u.apply(&psi).unwrap().norm() - 1.0).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn bin_unitary(v in proptest::collection::vec(-5.0f64..5.0, 13)) {
            let s = photonic(4, 2);
            let c = CouplingMatrix::from_upper(4, &v[7..13]).unwrap();
            let bin = random_bin(2, NonlinearKind::Spm, &v[..7]);
            let bin = ControlBin { kappa: [bin.kappa.clone(), bin.kappa].concat(), delta_c: [bin.delta_c.clone(), bin.delta_c].concat(), delta_e: vec![], dt: bin.dt };
            let u = evolve(&[bin], &c, NonlinearKind::Spm, &s).unwrap();
            prop_assert!(u.unitarity_error() < 1e-12);
        }
    }
}
