//! Dense linear-algebra plumbing: Hermitian matrices, eigensolvers with a fixed
//! eigenvector phase convention, and diagonalization of (near-)unitary matrices.
//!
//! Eigendecompositions are delegated to `faer`.

use faer::{Mat, Side};
pub use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Relative tolerance for accepting a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// A validated dense Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianMatrix(Mat<C64>);

impl HermitianMatrix {
    /// Wraps `mat`, rejecting it if `|M - M†|` exceeds [`HERMITIAN_TOL`]
    /// relative to the largest entry.
    pub fn new(mat: Mat<C64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::InvalidParameter(format!(
                "matrix must be square, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let n = mat.nrows();
        let mut scale: f64 = 1.0;
        let mut dev: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                scale = scale.max(mat[(i, j)].norm());
                if i <= j {
                    dev = dev.max((mat[(i, j)] - mat[(j, i)].conj()).norm());
                }
            }
        }
        if dev > HERMITIAN_TOL * scale {
            return Err(Error::NotHermitian { deviation: dev });
        }
        Ok(Self(mat))
    }

    pub fn from_real_symmetric(mat: &Mat<f64>) -> Result<Self> {
        Self::new(Mat::from_fn(mat.nrows(), mat.ncols(), |i, j| {
            C64::new(mat[(i, j)], 0.0)
        }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &Mat<C64> {
        &self.0
    }

    pub fn into_mat(self) -> Mat<C64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    fn is_real(&self) -> bool {
        let n = self.dim();
        (0..n).all(|j| (0..n).all(|i| self.0[(i, j)].im == 0.0))
    }
}

/// Eigenvalues in ascending order with eigenvectors as the matching columns.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Mat<C64>,
}

/// Rotates `v` so that its largest-magnitude component is real and positive.
///
/// Ties (within 1e-9 relative) go to the lowest index so the result is
/// deterministic for symmetric states.
pub fn fix_phase(v: &mut [C64]) {
    let max = v.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    if max == 0.0 {
        return;
    }
    let pivot = v
        .iter()
        .position(|c| c.norm() >= max * (1.0 - 1e-9))
        .unwrap_or(0);
    let phase = v[pivot].conj() / v[pivot].norm();
    for c in v.iter_mut() {
        *c *= phase;
    }
}

fn fix_column_phases(vectors: &mut Mat<C64>) {
    let mut buf = vec![C64::new(0.0, 0.0); vectors.nrows()];
    for j in 0..vectors.ncols() {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = vectors[(i, j)];
        }
        fix_phase(&mut buf);
        for (i, b) in buf.iter().enumerate() {
            vectors[(i, j)] = *b;
        }
    }
}

/// Lowest `n_levels` eigenpairs of a Hermitian matrix.
pub fn hermitian_eigen(h: &HermitianMatrix, n_levels: usize) -> Result<EigenPairs> {
    let n = h.dim();
    if n_levels == 0 || n_levels > n {
        return Err(Error::InvalidParameter(format!(
            "requested {n_levels} levels from a {n}-dimensional matrix"
        )));
    }
    let (values, mut vectors) = if h.is_real() {
        let real = Mat::<f64>::from_fn(n, n, |i, j| h.0[(i, j)].re);
        let evd = real
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Eigen(format!("{e:?}")))?;
        let s = evd.S().column_vector();
        let values: Vec<f64> = (0..n_levels).map(|k| s[k]).collect();
        let u = evd.U();
        let vectors = Mat::<C64>::from_fn(n, n_levels, |i, j| C64::new(u[(i, j)], 0.0));
        (values, vectors)
    } else {
        let evd = h
            .0
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Eigen(format!("{e:?}")))?;
        let s = evd.S().column_vector();
        let values: Vec<f64> = (0..n_levels).map(|k| s[k].re).collect();
        let u = evd.U();
        let vectors = Mat::<C64>::from_fn(n, n_levels, |i, j| u[(i, j)]);
        (values, vectors)
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    fix_column_phases(&mut vectors);
    Ok(EigenPairs { values, vectors })
}

/// Eigenvalues and orthonormalized eigenvectors of a (near-)unitary matrix.
///
/// Eigenvectors are Löwdin-orthonormalized, which removes the small
/// non-orthogonality left by the general eigensolver for near-degenerate
/// eigenvalues, and then phase-fixed with [`fix_phase`].
pub fn unitary_eigen(u: &Mat<C64>) -> Result<(Vec<C64>, Mat<C64>)> {
    let n = u.nrows();
    let evd = u.eigen().map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let values: Vec<C64> = (0..n).map(|k| s[k]).collect();
    let raw = evd.U();
    let mut v = Mat::<C64>::from_fn(n, n, |i, j| raw[(i, j)]);
    for j in 0..n {
        let norm = (0..n).map(|i| v[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Eigen("degenerate eigenvector".into()));
        }
        for i in 0..n {
            v[(i, j)] /= norm;
        }
    }
    let mut v = lowdin_orthonormalize(&v)?;
    fix_column_phases(&mut v);
    Ok((values, v))
}

/// Returns `V (V†V)^{-1/2}`, the orthonormal basis closest to the columns of `V`.
pub fn lowdin_orthonormalize(v: &Mat<C64>) -> Result<Mat<C64>> {
    let n = v.ncols();
    let s = v.adjoint() * v;
    let mut dev: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((s[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    if dev < 1e-14 {
        return Ok(v.clone());
    }
    let herm = Mat::<C64>::from_fn(n, n, |i, j| (s[(i, j)] + s[(j, i)].conj()) * 0.5);
    let evd = herm
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let w = evd.S().column_vector();
    let q = evd.U();
    let mut inv_sqrt = Mat::<C64>::zeros(n, n);
    for k in 0..n {
        let lam = w[k].re;
        if lam <= 1e-12 {
            return Err(Error::Eigen(
                "eigenvectors are linearly dependent; cannot orthonormalize".into(),
            ));
        }
        let f = 1.0 / lam.sqrt();
        for j in 0..n {
            for i in 0..n {
                inv_sqrt[(i, j)] += q[(i, k)] * q[(j, k)].conj() * f;
            }
        }
    }
    Ok(v * &inv_sqrt)
}

/// `max |(A†A - I)_{ij}|`.
pub fn unitarity_defect(u: &Mat<C64>) -> f64 {
    let p = u.adjoint() * u;
    let n = p.nrows();
    let mut dev: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((p[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    dev
}

/// `⟨a|b⟩` for column slices.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn column(m: &Mat<C64>, j: usize) -> Vec<C64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn diagonal_two_by_two() {
        let h = HermitianMatrix::new(Mat::from_fn(2, 2, |i, j| {
            if i == j {
                c(i as f64, 0.0)
            } else {
                c(0.0, 0.0)
            }
        }))
        .unwrap();
        let e = hermitian_eigen(&h, 2).unwrap();
        assert_eq!(e.values, vec![0.0, 1.0]);
        for j in 0..2 {
            for i in 0..2 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((e.vectors[(i, j)] - c(expected, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = Mat::from_fn(2, 2, |i, j| if i < j { c(1.0, 0.0) } else { c(0.0, 0.0) });
        assert!(matches!(
            HermitianMatrix::new(m),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn complex_hermitian_phase_convention() {
        let m = Mat::from_fn(3, 3, |i, j| match (i, j) {
            (0, 0) => c(1.0, 0.0),
            (1, 1) => c(2.0, 0.0),
            (2, 2) => c(-0.5, 0.0),
            (0, 1) => c(0.3, 0.4),
            (1, 0) => c(0.3, -0.4),
            (1, 2) => c(0.0, -0.2),
            (2, 1) => c(0.0, 0.2),
            _ => c(0.0, 0.0),
        });
        let h = HermitianMatrix::new(m.clone()).unwrap();
        let e = hermitian_eigen(&h, 3).unwrap();
        for k in 0..3 {
            let v = column(&e.vectors, k);
            let hv: Vec<C64> = (0..3)
                .map(|i| (0..3).map(|j| m[(i, j)] * v[j]).sum())
                .collect();
            for i in 0..3 {
                assert!((hv[i] - v[i] * e.values[k]).norm() < 1e-12);
            }
            let pivot = v
                .iter()
                .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
                .unwrap();
            assert!(pivot.im.abs() < 1e-14 && pivot.re > 0.0);
        }
    }

    #[test]
    fn unitary_eigen_of_identity() {
        let u = Mat::<C64>::from_fn(4, 4, |i, j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) });
        let (vals, vecs) = unitary_eigen(&u).unwrap();
        for v in vals {
            assert!((v - c(1.0, 0.0)).norm() < 1e-14);
        }
        assert!(unitarity_defect(&vecs) < 1e-12);
    }
}
