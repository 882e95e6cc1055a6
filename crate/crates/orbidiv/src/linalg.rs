//! Dense linear algebra helpers shared across modules.
//!
//! Everything here operates on small matrices (group elements are n x n with
//! n <= 4, Hessians are 2n x 2n), so we use dynamically sized nalgebra types
//! throughout and do not chase further performance.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::cvec::CVec;

/// Maximum absolute entry of `a - b`; the metric used for matrix dedup.
pub fn max_abs_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let mut m: f64 = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        m = m.max((x - y).norm());
    }
    m
}

/// Deviation of `u` from unitarity, `max |(u* u - id)_{ij}|`.
pub fn unitarity_defect(u: &DMatrix<Complex64>) -> f64 {
    let n = u.nrows();
    let prod = u.adjoint() * u;
    let mut m: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { Complex64::ONE } else { Complex64::ZERO };
            m = m.max((prod[(i, j)] - target).norm());
        }
    }
    m
}

/// Applies an n x n complex matrix to an inline vector.
pub fn apply(mat: &DMatrix<Complex64>, v: &CVec) -> CVec {
    let n = v.dim();
    debug_assert_eq!(mat.ncols(), n);
    let mut out = vec![Complex64::ZERO; n];
    for i in 0..n {
        let mut acc = Complex64::ZERO;
        for j in 0..n {
            acc += mat[(i, j)] * v[j];
        }
        out[i] = acc;
    }
    CVec::from_slice(&out)
}

/// Orthonormal basis of the kernel of `m`, keeping right singular vectors
/// whose singular values fall below `cutoff`.
pub fn kernel_basis(m: &DMatrix<Complex64>, cutoff: f64) -> Vec<DVector<Complex64>> {
    let ncols = m.ncols();
    if m.nrows() == 0 {
        // Kernel of the empty map is everything.
        return (0..ncols)
            .map(|j| DVector::from_fn(ncols, |i, _| if i == j { Complex64::ONE } else { Complex64::ZERO }))
            .collect();
    }
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("svd requested v_t");
    let mut out = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s < cutoff {
            out.push(vt.row(i).adjoint());
        }
    }
    // Rows of v_t beyond the number of singular values (wide kernels) are
    // already covered: nalgebra returns min(nrows, ncols) singular values and
    // v_t has that many rows, so a rank-deficient wide matrix needs padding.
    if m.nrows() < ncols {
        // Recompute via the Gram matrix to capture the full kernel.
        let gram = m.adjoint() * m;
        let svd = gram.svd(false, true);
        let vt = svd.v_t.expect("svd requested v_t");
        let mut full = Vec::new();
        for (i, s) in svd.singular_values.iter().enumerate() {
            if s.sqrt() < cutoff {
                full.push(vt.row(i).adjoint());
            }
        }
        return full;
    }
    out
}

/// Largest principal-angle sine between two orthonormal column families.
///
/// Returns 1 when dimensions differ. Computed as the spectral norm of the
/// projection residual `b - a (a* b)`, which equals sin of the largest
/// principal angle and stays accurate near zero (unlike deriving the sine
/// from cosines).
pub fn subspace_gap(a: &[DVector<Complex64>], b: &[DVector<Complex64>]) -> f64 {
    if a.len() != b.len() {
        return 1.0;
    }
    if a.is_empty() {
        return 0.0;
    }
    let n = a[0].len();
    let ma = DMatrix::from_fn(n, a.len(), |i, j| a[j][i]);
    let mb = DMatrix::from_fn(n, b.len(), |i, j| b[j][i]);
    let residual = &mb - &ma * (ma.adjoint() * &mb);
    let svd = residual.svd(false, false);
    svd.singular_values.iter().fold(0.0f64, |m, s| m.max(*s)).min(1.0)
}

/// Eigenvalues and orthonormal eigenvectors of a real symmetric matrix,
/// sorted ascending by eigenvalue.
pub fn symmetric_eigen_sorted(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let se = m.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..se.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let vals: Vec<f64> = idx.iter().map(|&i| se.eigenvalues[i]).collect();
    let n = m.nrows();
    let vecs = DMatrix::from_fn(n, n, |r, c| se.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn unitarity_defect_detects_scaling() {
        let u = dmatrix![c(0.0, 1.0)];
        assert!(unitarity_defect(&u) < 1e-15);
        let bad = dmatrix![c(0.0, 1.1)];
        assert!(unitarity_defect(&bad) > 0.1);
    }

    #[test]
    fn kernel_of_reflection_difference() {
        // diag(-1, 1) - id has kernel spanned by e_2.
        let m = dmatrix![
            c(-2.0, 0.0), c(0.0, 0.0);
            c(0.0, 0.0), c(0.0, 0.0)
        ];
        let ker = kernel_basis(&m, 1e-9);
        assert_eq!(ker.len(), 1);
        assert!(ker[0][0].norm() < 1e-12);
        assert!((ker[0][1].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn subspace_gap_zero_for_equal_spans() {
        let e1 = DVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let rot = DVector::from_vec(vec![c(0.0, 1.0), c(0.0, 0.0)]);
        // Same complex line, different phase.
        assert!(subspace_gap(&[e1.clone()], &[rot]) < 1e-12);
        let e2 = DVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(subspace_gap(&[e1], &[e2]) > 0.99);
    }

    #[test]
    fn symmetric_eigen_sorts_ascending() {
        let m = dmatrix![2.0, 0.0; 0.0, -3.0];
        let (vals, _) = symmetric_eigen_sorted(&m);
        assert_eq!(vals.len(), 2);
        assert!(vals[0] < vals[1]);
        assert!((vals[0] + 3.0).abs() < 1e-12 && (vals[1] - 2.0).abs() < 1e-12);
    }
}
