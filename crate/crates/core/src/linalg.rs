//! Small dense linear-algebra helpers over `ndarray`, with decompositions
//! delegated to `nalgebra`.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Result, SoblError};

pub(crate) fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Lower Cholesky factor `L` with `a = L Lᵀ`.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    square(a, "cholesky")?;
    let chol = nalgebra::Cholesky::new(to_na(a))
        .ok_or_else(|| SoblError::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    Ok(from_na(&chol.l()))
}

/// Solves `a X = b` for a general square `a` by LU with partial pivoting.
pub fn solve(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    square(a, "solve")?;
    if b.nrows() != a.nrows() {
        return Err(SoblError::DimensionMismatch(format!(
            "solve: lhs is {}x{}, rhs has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let lu = to_na(a).lu();
    let x = lu
        .solve(&to_na(b))
        .ok_or_else(|| SoblError::Singular("LU solve hit a zero pivot".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SoblError::Singular("LU solve produced non-finite values".into()));
    }
    Ok(from_na(&x))
}

pub fn inverse(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    solve(a, Array2::eye(n).view())
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted in decreasing order.
/// Eigenvectors are the columns of the returned matrix.
pub fn symmetric_eigen(a: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    square(a, "symmetric_eigen")?;
    let eig = nalgebra::SymmetricEigen::new(to_na(a));
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = Array2::from_shape_fn((a.nrows(), a.nrows()), |(r, c)| {
        eig.eigenvectors[(r, order[c])]
    });
    Ok((values, vectors))
}

/// Flips the sign of a vector so that its first non-negligible coordinate is positive.
pub fn canonical_sign(mut v: ndarray::ArrayViewMut1<f64>) {
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return;
    }
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * scale) {
        if *first < 0.0 {
            v.mapv_inplace(|x| -x);
        }
    }
}

/// `‖V‖_∞`: maximum absolute row sum.
pub fn inf_norm(a: ArrayView2<f64>) -> f64 {
    a.rows()
        .into_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn l2(v: ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn row_norms(a: ArrayView2<f64>) -> Array1<f64> {
    a.map_axis(Axis(1), |r| l2(r))
}

/// `‖V‖_{∞,2}`: maximum row ℓ₂ norm (0 for an empty matrix).
pub fn inf2_norm(a: ArrayView2<f64>) -> f64 {
    row_norms(a).iter().copied().fold(0.0, f64::max)
}

/// `n` points spaced evenly on a log scale from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![hi],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        hi
                    } else if i == 0 {
                        lo
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Selects rows and columns of a square matrix.
pub fn submatrix(a: ArrayView2<f64>, rows: &[usize], cols: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| a[[rows[i], cols[j]]])
}

fn square(a: ArrayView2<f64>, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(SoblError::DimensionMismatch(format!(
            "{what}: matrix is {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}
