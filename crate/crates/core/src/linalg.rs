//! Dense linear-algebra helpers on top of nalgebra.
//!
//! Everything here works on `DMatrix<f64>`; the symmetric eigensolver output is
//! put into a canonical form (descending eigenvalues, sign-normalized vectors)
//! so downstream results are reproducible.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Absolute symmetry tolerance, scaled by `max(1, max|S_ij|)`.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues above `-PSD_TOL * max(1, lambda_max)` are clamped to zero.
pub const PSD_TOL: f64 = 1e-10;

/// Canonical eigensystem of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    /// Non-increasing.
    pub values: DVector<f64>,
    /// Column `i` pairs with `values[i]`.
    pub vectors: DMatrix<f64>,
}

impl Eigensystem {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        spectral_map(self, |v| v)
    }
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// `max_ij |a_ij - a_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "{what} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
///
/// Ties keep the solver's order (stable sort). Each eigenvector is flipped so
/// that its largest-magnitude entry is positive.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<Eigensystem> {
    check_square(m, "matrix")?;
    check_symmetric(m)?;
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let mut pivot = 0;
        for k in 1..n {
            if col[k].abs() > col[pivot].abs() {
                pivot = k;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok(Eigensystem { values, vectors })
}

/// `U f(diag(lambda)) U^T`.
pub fn spectral_map(eig: &Eigensystem, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let u = &eig.vectors;
    let mut scaled = u.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(eig.values[j]);
    }
    symmetrize(&(scaled * u.transpose()))
}

/// Principal square root of a symmetric positive semi-definite matrix.
pub fn symmetric_psd_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(s)?;
    check_psd(&eig)?;
    Ok(spectral_map(&eig, |v| v.max(0.0).sqrt()))
}

pub(crate) fn check_psd(eig: &Eigensystem) -> Result<()> {
    let scale = eig.values.amax().max(1.0);
    if let Some(&bad) = eig.values.iter().find(|&&v| v < -PSD_TOL * scale) {
        return Err(Error::NotPsd { eigenvalue: bad });
    }
    Ok(())
}

/// Thin singular value decomposition with singular values sorted descending.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows x k`, `k = min(rows, cols)`.
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// `k x cols`.
    pub v_t: DMatrix<f64>,
}

pub fn svd(m: &DMatrix<f64>) -> Svd {
    let raw = m.clone().svd(true, true);
    let k = raw.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        raw.singular_values[b]
            .partial_cmp(&raw.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let u_raw = raw.u.expect("requested u");
    let vt_raw = raw.v_t.expect("requested v_t");
    let mut u = DMatrix::zeros(m.nrows(), k);
    let mut v_t = DMatrix::zeros(k, m.ncols());
    let mut s = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u_raw.column(src));
        v_t.set_row(dst, &vt_raw.row(src));
        s[dst] = raw.singular_values[src];
    }
    Svd {
        u,
        singular_values: s,
        v_t,
    }
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let s = svd(m).singular_values;
    let top = s[0];
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * top).count()
}

/// Moore-Penrose pseudo-inverse; singular values at or below
/// `rel_cutoff * sigma_max` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let dec = svd(m);
    let top = dec.singular_values.get(0).copied().unwrap_or(0.0);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    if top == 0.0 {
        return out;
    }
    for (i, &s) in dec.singular_values.iter().enumerate() {
        if s > rel_cutoff * top {
            let v = dec.v_t.row(i).transpose();
            let u = dec.u.column(i);
            out += (v * u.transpose()) / s;
        }
    }
    out
}

/// Orthonormal basis (as columns) of the row space of `m`.
pub fn row_space_basis(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let dec = svd(m);
    let top = dec.singular_values.get(0).copied().unwrap_or(0.0);
    let rank = if top == 0.0 {
        0
    } else {
        dec.singular_values
            .iter()
            .filter(|&&s| s > rel_tol * top)
            .count()
    };
    dec.v_t.rows(0, rank).transpose()
}

/// Squared norm of `v - Q Q^T v` for a matrix `Q` with orthonormal columns.
pub fn projection_residual_sq(basis: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    if basis.ncols() == 0 {
        return v.norm_squared();
    }
    let coeffs = basis.tr_mul(v);
    (v - basis * coeffs).norm_squared()
}

/// Relative Frobenius distance `||a - b|| / max(||b||, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}

pub fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    let cols = m.ncols().max(1) as f64;
    m.column_sum() / cols
}

pub fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_mean(m);
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col -= &mean;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_of_diagonal() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = symmetric_psd_sqrt(&s).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert!((r - expected).norm() < 1e-14);
    }

    #[test]
    fn sqrt_of_identity() {
        let r = symmetric_psd_sqrt(&DMatrix::identity(3, 3)).unwrap();
        assert!((r - DMatrix::<f64>::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn sqrt_of_two_by_two_matches_explicit_eigendecomposition() {
        // eigenvalues 3 and 1, eigenvectors (1,1)/sqrt2 and (1,-1)/sqrt2
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let r = symmetric_psd_sqrt(&s).unwrap();
        let a = (3.0_f64.sqrt() + 1.0) / 2.0;
        let b = (3.0_f64.sqrt() - 1.0) / 2.0;
        let expected = DMatrix::from_row_slice(2, 2, &[a, b, b, a]);
        assert!((&r - expected).norm() < 1e-14);
        assert!(rel_frobenius(&(&r * &r), &s) < 1e-12);
        assert!(asymmetry(&r) < 1e-15);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(symmetric_psd_sqrt(&s), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(sym_eigen(&s), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn tiny_negative_eigenvalue_is_clamped() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-13]));
        let r = symmetric_psd_sqrt(&s).unwrap();
        assert_eq!(r[(1, 1)], 0.0);
    }

    #[test]
    fn eigenvectors_are_sign_normalized_and_sorted() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 3.0, 0.1, 0.0, 0.1, 2.0]);
        let eig = sym_eigen(&s).unwrap();
        assert!(eig.values[0] >= eig.values[1] && eig.values[1] >= eig.values[2]);
        for col in eig.vectors.column_iter() {
            let pivot = col.iter().cloned().fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(pivot > 0.0);
        }
        assert!(rel_frobenius(&eig.reconstruct(), &s) < 1e-12);
    }

    #[test]
    fn pseudo_inverse_of_projection_block() {
        let mut w = DMatrix::zeros(2, 4);
        w[(0, 0)] = 1.0;
        w[(1, 1)] = 1.0;
        let p = pseudo_inverse(&w, 1e-12);
        assert!((p - w.transpose()).norm() < 1e-14);
    }

    #[test]
    fn pseudo_inverse_penrose_identities() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 4.0]);
        let p = pseudo_inverse(&w, 1e-12);
        assert!(rel_frobenius(&(&w * &p * &w), &w) < 1e-12);
        assert!(rel_frobenius(&(&p * &w * &p), &p) < 1e-12);
        assert!(asymmetry(&(&w * &p)) < 1e-12);
        assert!(asymmetry(&(&p * &w)) < 1e-12);
    }

    #[test]
    fn rank_of_duplicated_rows() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert_eq!(numerical_rank(&w, 1e-8), 1);
        assert_eq!(numerical_rank(&DMatrix::zeros(2, 3), 1e-8), 0);
    }

    #[test]
    fn svd_is_sorted() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, 0.0, 0.0, 0.0, 5.0, 0.0]);
        let dec = svd(&m);
        assert!(dec.singular_values[0] >= dec.singular_values[1]);
        let back = &dec.u * DMatrix::from_diagonal(&dec.singular_values) * &dec.v_t;
        assert!((back - m).norm() < 1e-14);
    }
}
