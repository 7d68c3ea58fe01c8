//! Dense symmetric eigensolver and small spectral helpers.
//!
//! Every matrix in this crate is a small (at most a few dozen rows) symmetric
//! matrix: mixing matrices, weighted graph Laplacians, and their deviations
//! from the averaging projector. A cyclic Jacobi sweep is simple, backward
//! stable, and fast at these sizes, and — unlike binding LAPACK — it stays
//! generic over the scalar type.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Eigendecomposition of a symmetric matrix.
///
/// `values` are sorted ascending; column `k` of `vectors` is the unit
/// eigenvector for `values[k]`. Vector signs are canonicalized so that the
/// entry of largest magnitude (first such entry on ties) is positive, which
/// keeps downstream tie-breaking deterministic.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<F> {
    pub values: Vec<F>,
    pub vectors: Array2<F>,
}

/// Maximum number of Jacobi sweeps before giving up. Convergence is
/// quadratic once rotations get small; well-conditioned inputs of this size
/// need fewer than ten sweeps.
const MAX_SWEEPS: usize = 64;

/// Computes the full eigendecomposition of a symmetric matrix.
///
/// The input must be square; symmetry is enforced by averaging `a` with its
/// transpose, so tiny asymmetries from accumulated rounding are harmless.
pub fn symmetric_eigen<F: Scalar>(a: &Array2<F>) -> Result<SymmetricEigen<F>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::Dimension("eigendecomposition of empty matrix".into()));
    }

    let half = F::of(0.5);
    let mut m = Array2::<F>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = (a[(i, j)] + a[(j, i)]) * half;
        }
    }
    let mut v = Array2::<F>::eye(n);

    let scale = frobenius(&m).max(F::one());
    let tol = F::epsilon() * scale * F::of(n as f64);

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&m) <= tol {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= F::epsilon() * scale {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (F::of(2.0) * apq);
                // Smaller-root tangent choice keeps rotations well below
                // 45 degrees and the iteration numerically stable.
                let t = if theta >= F::zero() {
                    F::one() / (theta + (F::one() + theta * theta).sqrt())
                } else {
                    -F::one() / (-theta + (F::one() + theta * theta).sqrt())
                };
                let c = F::one() / (F::one() + t * t).sqrt();
                let s = t * c;

                // Update the two affected rows/columns of the working matrix.
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                // Accumulate the rotation into the eigenvector basis.
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(i, i)]
            .partial_cmp(&m[(j, j)])
            .expect("eigenvalues of a finite symmetric matrix are comparable")
    });

    let mut values = Vec::with_capacity(n);
    let mut vectors = Array2::<F>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        values.push(m[(src, src)]);
        let mut best = 0usize;
        let mut best_abs = F::zero();
        for k in 0..n {
            let a = v[(k, src)].abs();
            if a > best_abs {
                best_abs = a;
                best = k;
            }
        }
        let flip = v[(best, src)] < F::zero();
        for k in 0..n {
            let entry = v[(k, src)];
            vectors[(k, dst)] = if flip { -entry } else { entry };
        }
    }

    Ok(SymmetricEigen { values, vectors })
}

/// Eigenvalues only, sorted ascending.
pub fn symmetric_eigenvalues<F: Scalar>(a: &Array2<F>) -> Result<Vec<F>> {
    symmetric_eigen(a).map(|e| e.values)
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_norm_symmetric<F: Scalar>(a: &Array2<F>) -> Result<F> {
    let values = symmetric_eigenvalues(a)?;
    let lo = values.first().copied().unwrap_or_else(F::zero);
    let hi = values.last().copied().unwrap_or_else(F::zero);
    Ok(lo.abs().max(hi.abs()))
}

/// Solves the dense square system `a x = b` by Gaussian elimination with
/// partial pivoting. Returns `None` when a pivot collapses relative to the
/// matrix scale, which callers treat as "no usable direction" rather than an
/// error.
pub(crate) fn solve_linear<F: Scalar>(mut a: Array2<F>, mut b: Vec<F>) -> Option<Vec<F>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return None;
    }
    let scale = frobenius(&a).max(F::epsilon());
    let tiny = scale * F::epsilon() * F::of((n.max(1)) as f64);
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[(row, col)].abs() > a[(pivot, col)].abs() {
                pivot = row;
            }
        }
        if a[(pivot, col)].abs() <= tiny {
            return None;
        }
        if pivot != col {
            for k in col..n {
                let tmp = a[(col, k)];
                a[(col, k)] = a[(pivot, k)];
                a[(pivot, k)] = tmp;
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let factor = a[(row, col)] / a[(col, col)];
            if factor == F::zero() {
                continue;
            }
            for k in col..n {
                let v = a[(col, k)] * factor;
                a[(row, k)] -= v;
            }
            let v = b[col] * factor;
            b[row] -= v;
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[(col, k)] * b[k];
        }
        b[col] = acc / a[(col, col)];
    }
    Some(b)
}

fn frobenius<F: Scalar>(a: &Array2<F>) -> F {
    a.iter().map(|&x| x * x).sum::<F>().sqrt()
}

fn off_diagonal_norm<F: Scalar>(a: &Array2<F>) -> F {
    let n = a.nrows();
    let mut acc = F::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}
