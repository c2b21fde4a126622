//! Small dense linear algebra on generic scalars.
//!
//! The systems here are tiny (state-space sized), so plain Gaussian
//! elimination with partial pivoting is exact enough and keeps the crate
//! generic over the scalar type.

use ndarray::{Array1, Array2};

use crate::error::{MimicError, Result};
use crate::scalar::{real, Scalar};

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub(crate) fn solve<S: Scalar>(mut a: Array2<S>, mut b: Array1<S>) -> Result<Array1<S>> {
    let n = b.len();
    assert_eq!(a.nrows(), n);
    assert_eq!(a.ncols(), n);
    let scale = a.iter().fold(S::zero(), |m, &v| m.max(v.abs())).max(S::one());
    let tiny = scale * real::<S>(1e-14) * real::<S>(n as f64 + 1.0);
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[[row, col]].abs() > a[[pivot, col]].abs() {
                pivot = row;
            }
        }
        if a[[pivot, col]].abs() <= tiny {
            return Err(MimicError::SingularSystem);
        }
        if pivot != col {
            for k in 0..n {
                let t = a[[col, k]];
                a[[col, k]] = a[[pivot, k]];
                a[[pivot, k]] = t;
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[[row, col]] / a[[col, col]];
            if f == S::zero() {
                continue;
            }
            for k in col..n {
                let v = a[[col, k]] * f;
                a[[row, k]] = a[[row, k]] - v;
            }
            let v = b[col] * f;
            b[row] = b[row] - v;
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc = acc - a[[row, k]] * x[k];
        }
        x[row] = acc / a[[row, row]];
    }
    Ok(x)
}

/// Solves the symmetric positive semidefinite system `g y = r` where `r` is
/// known to lie in the range of `g`. Rank-deficient pivots are skipped and the
/// corresponding coordinates set to zero, which picks one valid solution.
pub(crate) fn solve_consistent<S: Scalar>(mut g: Array2<S>, mut r: Array1<S>) -> Array1<S> {
    let n = r.len();
    let scale = g.iter().fold(S::zero(), |m, &v| m.max(v.abs())).max(S::one());
    let tiny = scale * real::<S>(1e-12);
    let mut pivot_of_col: Vec<Option<usize>> = vec![None; n];
    let mut used = vec![false; n];
    for col in 0..n {
        let mut pivot = None;
        let mut best = tiny;
        for row in 0..n {
            if !used[row] && g[[row, col]].abs() > best {
                best = g[[row, col]].abs();
                pivot = Some(row);
            }
        }
        let Some(p) = pivot else { continue };
        used[p] = true;
        pivot_of_col[col] = Some(p);
        for row in 0..n {
            if row == p || g[[row, col]] == S::zero() {
                continue;
            }
            let f = g[[row, col]] / g[[p, col]];
            for k in 0..n {
                let v = g[[p, k]] * f;
                g[[row, k]] = g[[row, k]] - v;
            }
            let v = r[p] * f;
            r[row] = r[row] - v;
        }
    }
    let mut y = Array1::zeros(n);
    for col in 0..n {
        if let Some(p) = pivot_of_col[col] {
            y[col] = r[p] / g[[p, col]];
        }
    }
    y
}

/// Cholesky-style factorization of a symmetric nonnegative-definite matrix.
/// Returns lower-triangular `l` with `l lᵀ = a`. Semidefinite inputs are
/// accepted: a vanishing pivot forces the rest of its column to vanish.
pub(crate) fn cholesky_psd<S: Scalar>(a: &Array2<S>) -> Result<Array2<S>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(MimicError::NotPsd);
    }
    let scale = a.iter().fold(S::zero(), |m, &v| m.max(v.abs())).max(S::one());
    let tol = scale * real::<S>(1e-10);
    for i in 0..n {
        for j in 0..i {
            if (a[[i, j]] - a[[j, i]]).abs() > tol {
                return Err(MimicError::NotPsd);
            }
        }
    }
    let mut l: Array2<S> = Array2::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d = d - l[[j, k]] * l[[j, k]];
        }
        if d < -tol {
            return Err(MimicError::NotPsd);
        }
        if d <= tol {
            // Zero pivot: the whole column must be explainable by earlier ones.
            for i in j + 1..n {
                let mut off = a[[i, j]];
                for k in 0..j {
                    off = off - l[[i, k]] * l[[j, k]];
                }
                if off.abs() > tol * real::<S>(10.0) {
                    return Err(MimicError::NotPsd);
                }
            }
            continue;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut off = a[[i, j]];
            for k in 0..j {
                off = off - l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = off / d;
        }
    }
    Ok(l)
}
