//! Small dense-matrix helpers shared by the physics modules.

use alloc::vec::Vec;

use nalgebra::{DVector, SymmetricEigen};
use num_traits::Float;

use crate::{CMatrix, Complex64, RMatrix};

/// Largest entrywise modulus of `a - b`. Shapes must agree.
pub(crate) fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Largest entrywise modulus of `U†U - I`.
pub(crate) fn unitarity_error(u: &CMatrix) -> f64 {
    let g = u.adjoint() * u;
    let mut worst = 0.0f64;
    for ((r, c), v) in g
        .iter()
        .enumerate()
        .map(|(i, v)| ((i % g.nrows(), i / g.nrows()), v))
    {
        let target = if r == c { 1.0 } else { 0.0 };
        worst = worst.max((v - Complex64::new(target, 0.0)).norm());
    }
    worst
}

/// Largest entrywise modulus of `A - Aᵀ` for a real matrix.
pub(crate) fn asymmetry(a: &RMatrix) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            worst = worst.max((a[(r, c)] - a[(c, r)]).abs());
        }
    }
    worst
}

/// Eigendecomposition of a real symmetric matrix: `(λ, V)` with `A = V diag(λ) Vᵀ`.
pub(crate) fn sym_eigen(a: RMatrix) -> (DVector<f64>, RMatrix) {
    let e = SymmetricEigen::new(a);
    (e.eigenvalues, e.eigenvectors)
}

/// Eigendecomposition of a Hermitian matrix: `(λ, V)` with `A = V diag(λ) V†`.
pub(crate) fn herm_eigen(a: CMatrix) -> (DVector<f64>, CMatrix) {
    let e = SymmetricEigen::new(a);
    (e.eigenvalues, e.eigenvectors)
}

/// `exp(-i A t)` for Hermitian `A`.
pub(crate) fn expm_hermitian(a: &CMatrix, t: f64) -> CMatrix {
    let (lam, v) = herm_eigen(a.clone());
    let mut scaled = v.clone();
    for (j, l) in lam.iter().enumerate() {
        let ph = Complex64::from_polar(1.0, -l * t);
        for x in scaled.column_mut(j).iter_mut() {
            *x *= ph;
        }
    }
    scaled * v.adjoint()
}

/// `exp(-i A)` for real symmetric `A`, given its eigendecomposition.
pub(crate) fn expm_from_real_eigen(lam: &DVector<f64>, v: &RMatrix) -> CMatrix {
    let d = v.nrows();
    let mut vc = v.clone();
    let mut vs = v.clone();
    for (j, l) in lam.iter().enumerate() {
        let (s, c) = Float::sin_cos(*l);
        vc.column_mut(j).scale_mut(c);
        vs.column_mut(j).scale_mut(s);
    }
    let re = &vc * v.transpose();
    let im = -(&vs * v.transpose());
    CMatrix::from_fn(d, d, |r, c| Complex64::new(re[(r, c)], im[(r, c)]))
}

/// Sum with Neumaier compensation; exact for short sums of equal terms such
/// as `80 × 0.025`.
pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Gram–Schmidt completion of orthonormal columns to a full unitary.
///
/// Columns of `partial` must already be orthonormal. Standard basis vectors
/// are appended in order and kept when they contribute a new direction.
pub(crate) fn complete_unitary(partial: &CMatrix) -> CMatrix {
    let d = partial.nrows();
    let mut cols: Vec<nalgebra::DVector<Complex64>> =
        partial.column_iter().map(|c| c.into_owned()).collect();
    for k in 0..d {
        if cols.len() == d {
            break;
        }
        let mut v = nalgebra::DVector::<Complex64>::zeros(d);
        v[k] = Complex64::new(1.0, 0.0);
        for _ in 0..2 {
            for c in &cols {
                let p = c.dotc(&v);
                v -= c * p;
            }
        }
        let n = v.norm();
        if n > 1e-8 {
            cols.push(v / Complex64::new(n, 0.0));
        }
    }
    CMatrix::from_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_repeated_step() {
        assert_eq!(neumaier_sum(core::iter::repeat(0.025).take(80)), 2.0);
        assert_eq!(neumaier_sum([1e16, 1.0, -1e16]), 1.0);
    }

    #[test]
    fn real_and_complex_exponentials_agree() {
        let a = RMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, -0.5, 0.7, -0.2, 0.7, 0.1]);
        let (lam, v) = sym_eigen(a.clone());
        let u1 = expm_from_real_eigen(&lam, &v);
        let ac = a.map(|x| Complex64::new(x, 0.0));
        let u2 = expm_hermitian(&ac, 1.0);
        assert!(max_abs_diff(&u1, &u2) < 1e-13);
        assert!(unitarity_error(&u1) < 1e-13);
    }

    #[test]
    fn completion_is_unitary() {
        let h = 0.5f64.sqrt();
        let partial = CMatrix::from_column_slice(
            3,
            1,
            &[
                Complex64::new(h, 0.0),
                Complex64::new(0.0, h),
                Complex64::new(0.0, 0.0),
            ],
        );
        let u = complete_unitary(&partial);
        assert_eq!(u.ncols(), 3);
        assert!(unitarity_error(&u) < 1e-14);
        assert_eq!(u.column(0), partial.column(0));
    }
}
