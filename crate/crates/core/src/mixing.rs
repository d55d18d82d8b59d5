//! Mixing circuit algebra: the symmetric unitary round-trip product of the
//! scattering matrix and the real symmetric coupling matrix it induces.
//!
//! Convention: `S_RL = S_Rᵀ S_R` (round trip right-to-left). The product
//! `S_R S_Rᵀ` is equally symmetric unitary and generates the same set of
//! coupling matrices; only this form is implemented.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::linalg::{asymmetry, sym_eigen, unitarity_error};
use crate::{CMatrix, Complex64, Error, RMatrix, Result};

/// Unitary tolerance on scattering matrices.
pub const UNITARY_TOL: f64 = 1e-10;
/// Smallest admissible distance of an `S_RL` eigenvalue from 1.
pub const SINGULAR_TOL: f64 = 1e-8;

/// Scattering matrix `S_R` of the linear mixing circuit.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatteringMatrix(CMatrix);

impl ScatteringMatrix {
    pub fn new(entries: CMatrix) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "scattering matrix must be square and non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let err = unitarity_error(&entries);
        if !(err <= UNITARY_TOL) {
            return Err(Error::NotUnitary(err));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &CMatrix {
        &self.0
    }

    pub fn num_modes(&self) -> usize {
        self.0.nrows()
    }

    /// `S_RL = S_Rᵀ S_R`.
    pub fn round_trip(&self) -> CMatrix {
        self.0.transpose() * &self.0
    }
}

/// Real symmetric cavity–cavity coupling matrix `C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct CouplingMatrix(RMatrix);

/// Symmetry tolerance, relative to the largest entry (absolute below 1).
pub const SYMMETRY_TOL: f64 = 1e-12;

impl CouplingMatrix {
    pub fn new(entries: RMatrix) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "coupling matrix must be square and non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation(
                "coupling matrix has non-finite entries".into(),
            ));
        }
        let scale = entries.amax().max(1.0);
        let asym = asymmetry(&entries);
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::Validation(format!(
                "coupling matrix is not symmetric (max |C - Cᵀ| = {asym:e})"
            )));
        }
        Ok(Self(entries))
    }

    pub fn zeros(num_modes: usize) -> Self {
        Self(RMatrix::zeros(num_modes, num_modes))
    }

    /// Zero diagonal, symmetric fill from the row-major strict upper triangle
    /// `(0,1), (0,2), …, (1,2), …`.
    pub fn from_upper(num_modes: usize, upper: &[f64]) -> Result<Self> {
        let expected = num_modes * num_modes.saturating_sub(1) / 2;
        if upper.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} upper-triangle entries for {num_modes} modes (expected {expected})",
                upper.len()
            )));
        }
        let mut c = RMatrix::zeros(num_modes, num_modes);
        let mut it = upper.iter();
        for r in 0..num_modes {
            for col in r + 1..num_modes {
                let v = *it.next().expect("length checked above");
                c[(r, col)] = v;
                c[(col, r)] = v;
            }
        }
        Self::new(c)
    }

    /// All off-diagonal entries one, diagonal zero.
    pub fn all_to_all(num_modes: usize) -> Self {
        Self(RMatrix::from_fn(num_modes, num_modes, |r, c| {
            if r == c {
                0.0
            } else {
                1.0
            }
        }))
    }

    /// Row-major strict upper triangle.
    pub fn upper(&self) -> Vec<f64> {
        let m = self.num_modes();
        let mut out = Vec::with_capacity(m * m.saturating_sub(1) / 2);
        for r in 0..m {
            for c in r + 1..m {
                out.push(self.0[(r, c)]);
            }
        }
        out
    }

    pub fn entries(&self) -> &RMatrix {
        &self.0
    }

    pub fn num_modes(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0[(r, c)]
    }
}

impl From<CouplingMatrix> for Vec<Vec<f64>> {
    fn from(c: CouplingMatrix) -> Self {
        c.0.row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for CouplingMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch(
                "coupling matrix rows are ragged".into(),
            ));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::new(RMatrix::from_row_slice(m, m, &flat))
    }
}

/// `C = (M - M†)/2i` with `M = S_RL (I - S_RL)⁻¹`.
pub fn coupling_from_scattering(s: &ScatteringMatrix) -> Result<CouplingMatrix> {
    let m = s.num_modes();
    let s_rl = s.round_trip();
    let gap = CMatrix::identity(m, m) - &s_rl;
    let sv = gap.clone().singular_values();
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smallest < SINGULAR_TOL {
        return Err(Error::Singular(smallest));
    }
    let inv = gap.try_inverse().ok_or(Error::Singular(smallest))?;
    let mm = &s_rl * inv;
    let c = (&mm - mm.adjoint()) / Complex64::new(0.0, 2.0);
    let scale = c.iter().map(|z| z.re.abs()).fold(1.0, f64::max);
    let residue = c.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if residue > UNITARY_TOL * scale {
        return Err(Error::Validation(format!(
            "derived coupling matrix has imaginary residue {residue:e}"
        )));
    }
    let re = c.map(|z| z.re);
    let sym = (&re + re.transpose()) * 0.5;
    CouplingMatrix::new(sym)
}

/// A scattering matrix whose round trip reproduces `c`.
///
/// Diagonalizes `C = O diag(λ) Oᵀ`, picks `θ = 2·atan2(1, 2λ) ∈ (0, 2π)` so
/// that `cot(θ/2)/2 = λ`, and returns `S_R = O diag(e^{iθ/2}) Oᵀ`.
pub fn scattering_from_coupling(c: &CouplingMatrix) -> Result<ScatteringMatrix> {
    let (lam, o) = sym_eigen(c.entries().clone());
    let m = c.num_modes();
    let half: Vec<Complex64> = lam
        .iter()
        .map(|&l| {
            let half_theta = Float::atan2(1.0, 2.0 * l);
            Complex64::from_polar(1.0, half_theta)
        })
        .collect();
    let oc = o.map(|x| Complex64::new(x, 0.0));
    let mut scaled = oc.clone();
    for (j, p) in half.iter().enumerate() {
        for x in scaled.column_mut(j).iter_mut() {
            *x *= p;
        }
    }
    let s = scaled * oc.transpose();
    debug_assert_eq!(s.nrows(), m);
    ScatteringMatrix::new(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use alloc::vec;
    use proptest::prelude::*;

    fn haar(m: usize, entries: &[(f64, f64)]) -> CMatrix {
        let z = CMatrix::from_iterator(m, m, entries.iter().map(|&(a, b)| Complex64::new(a, b)));
        let qr = z.qr();
        let (q, r) = (qr.q(), qr.r());
        // fix column phases so the distribution is Haar
        let mut q = q;
        for j in 0..m {
            let d = r[(j, j)];
            let ph = if d.norm() > 0.0 {
                d / d.norm()
            } else {
                Complex64::new(1.0, 0.0)
            };
            for x in q.column_mut(j).iter_mut() {
                *x *= ph;
            }
        }
        q
    }

    #[test]
    fn identity_times_i_gives_zero_coupling() {
        let s = ScatteringMatrix::new(CMatrix::identity(3, 3) * Complex64::new(0.0, 1.0)).unwrap();
        let c = coupling_from_scattering(&s).unwrap();
        assert!(c.entries().amax() < 1e-15);
    }

    #[test]
    fn identity_is_singular() {
        let s = ScatteringMatrix::new(CMatrix::identity(2, 2)).unwrap();
        assert!(matches!(
            coupling_from_scattering(&s),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn non_unitary_rejected() {
        let bad = CMatrix::identity(2, 2) * Complex64::new(1.1, 0.0);
        assert!(matches!(
            ScatteringMatrix::new(bad),
            Err(Error::NotUnitary(_))
        ));
    }

    #[test]
    fn asymmetric_coupling_rejected() {
        let c = RMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0]);
        assert!(CouplingMatrix::new(c).is_err());
    }

    #[test]
    fn zero_coupling_maps_to_i() {
        let s = scattering_from_coupling(&CouplingMatrix::zeros(2)).unwrap();
        let target = CMatrix::identity(2, 2) * Complex64::new(0.0, 1.0);
        assert!(max_abs_diff(s.entries(), &target) < 1e-15);
    }

    #[test]
    fn swap_and_all_to_all_round_trip() {
        let swap = CouplingMatrix::from_upper(2, &[1.0]).unwrap();
        let rep = CouplingMatrix::all_to_all(3);
        assert_eq!(
            rep,
            CouplingMatrix::from_upper(3, &[1.0, 1.0, 1.0]).unwrap()
        );
        for c in [swap, rep] {
            let back = coupling_from_scattering(&scattering_from_coupling(&c).unwrap()).unwrap();
            let diff = (back.entries() - c.entries()).amax();
            assert!(diff < 1e-8, "{diff}");
        }
    }

    #[test]
    fn upper_triangle_round_trip() {
        let c = CouplingMatrix::from_upper(4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(c.get(0, 3), 3.0);
        assert_eq!(c.get(3, 0), 3.0);
        assert_eq!(c.get(2, 3), 6.0);
        assert_eq!(c.upper(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    fn sym_entries() -> impl Strategy<Value = (usize, Vec<f64>)> {
        prop_oneof![Just(2usize), Just(3), Just(4), Just(6)]
            .prop_flat_map(|m| (Just(m), proptest::collection::vec(-5.0f64..5.0, m * m)))
    }

    fn unitary_entries() -> impl Strategy<Value = (usize, Vec<(f64, f64)>)> {
        prop_oneof![Just(2usize), Just(3), Just(4), Just(6)].prop_flat_map(|m| {
            (
                Just(m),
                proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), m * m),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn random_unitaries_give_real_symmetric_coupling((m, e) in unitary_entries()) {
            let s = ScatteringMatrix::new(haar(m, &e)).unwrap();
            match coupling_from_scattering(&s) {
                Ok(c) => prop_assert!(asymmetry(c.entries()) <= 1e-10),
                Err(Error::Singular(_)) => {}
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
            }
        }

        #[test]
        fn coupling_round_trip((m, e) in sym_entries()) {
            let raw = RMatrix::from_row_slice(m, m, &e);
            let c = CouplingMatrix::new((&raw + raw.transpose()) * 0.5).unwrap();
            let s = scattering_from_coupling(&c).unwrap();
            prop_assert!(unitarity_error(s.entries()) < 1e-10);
            let rt = s.round_trip();
            prop_assert!(max_abs_diff(&rt, &rt.transpose()) < 1e-12);
            let back = coupling_from_scattering(&s).unwrap();
            prop_assert!((back.entries() - c.entries()).amax() < 1e-8);
        }
    }
}
