//! Dense linear algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Scalar};

/// Replaces `m` by `(m + m^T) / 2`.
pub fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let half = lit::<T>(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized<T: Scalar>(mut m: DMatrix<T>) -> DMatrix<T> {
    symmetrize(&mut m);
    m
}

pub fn cholesky<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<Cholesky<T, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::not_pd(what))
}

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
pub fn spd_inverse<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    Ok(symmetrized(cholesky(m, what)?.inverse()))
}

/// Lower-triangular Cholesky factor `L` with `L L^T = m`.
pub fn cholesky_lower<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    Ok(cholesky(m, what)?.unpack())
}

/// `ln det m` for symmetric positive definite `m`.
pub fn log_det_spd<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<T> {
    let l = cholesky(m, what)?.unpack();
    let two = lit::<T>(2.0);
    Ok(l.diagonal().iter().fold(T::zero(), |acc, d| acc + two * d.ln()))
}

/// Block diagonal matrix built from square or rectangular blocks.
pub fn block_diag<T: Scalar>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Stacks blocks vertically. All blocks must share their column count.
pub fn vstack<T: Scalar>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), cols);
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Stacks vectors end to end.
pub fn vcat<T: Scalar>(parts: &[&DVector<T>]) -> DVector<T> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.len()).copy_from(*p);
        r += p.len();
    }
    out
}

/// Numerical rank: singular values below `rel_tol * sigma_max` count as zero.
pub fn numerical_rank<T: Scalar>(m: &DMatrix<T>, rel_tol: T) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().fold(T::zero(), |a, &b| a.max(b));
    if max <= T::zero() {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius<T: Scalar>(m: &DMatrix<T>) -> T {
    m.complex_eigenvalues()
        .iter()
        .fold(T::zero(), |acc, z| acc.max((z.re * z.re + z.im * z.im).sqrt()))
}

/// Eigenvalues of a symmetric matrix, in no particular order.
pub fn sym_eigenvalues<T: Scalar>(m: &DMatrix<T>) -> DVector<T> {
    SymmetricEigen::new(m.clone()).eigenvalues
}

pub fn min_sym_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m)
        .iter()
        .fold(T::max_value().unwrap_or_else(|| lit(f64::MAX)), |a, &b| a.min(b))
}

/// Square root of a symmetric positive semidefinite matrix.
///
/// Negative eigenvalues from round-off are clamped to zero, so a singular
/// covariance still yields a valid sampling factor.
pub fn psd_sqrt<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(T::zero()).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Frobenius norm of `a - b`.
pub fn frobenius_distance<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    (a - b).norm()
}

/// Relative Frobenius error `|a - b| / max(|b|, tiny)`.
pub fn relative_error<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> f64 {
    let denom = to_f64(b.norm()).max(f64::MIN_POSITIVE);
    to_f64(frobenius_distance(a, b)) / denom
}

/// Condition number estimate from the extreme eigenvalues of a symmetric matrix.
pub fn sym_condition<T: Scalar>(m: &DMatrix<T>) -> f64 {
    let eig = sym_eigenvalues(m);
    let max = eig.iter().map(|&x| to_f64(x).abs()).fold(0.0, f64::max);
    let min = eig.iter().map(|&x| to_f64(x).abs()).fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub(crate) fn check_square<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::dims(
            what,
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(m.nrows())
}

pub(crate) fn check_shape<T: Scalar>(m: &DMatrix<T>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::dims(
            what,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

pub(crate) fn check_len<T: Scalar>(v: &DVector<T>, len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return Err(Error::dims(what, len, v.len()));
    }
    Ok(())
}
