//! Small dense-matrix helpers shared across modules. Everything here wraps
//! nalgebra factorizations; the only added value is explicit ordering and
//! validation conventions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular value decomposition with values sorted descending and the columns
/// of `u`/`v` permuted to match. Ordering is not guaranteed by the backend.
pub struct SortedSvd {
    pub singular_values: Vec<f64>,
    /// Left singular vectors, one column per singular value.
    pub u: DMatrix<f64>,
    /// Right singular vectors, one column per singular value.
    pub v: DMatrix<f64>,
}

pub fn sorted_svd(m: &DMatrix<f64>) -> SortedSvd {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).expect("singular values are finite"));
    let singular_values: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let u_sorted = DMatrix::from_columns(&order.iter().map(|&i| u.column(i).into_owned()).collect::<Vec<_>>());
    let v_sorted = DMatrix::from_columns(&order.iter().map(|&i| vt.row(i).transpose()).collect::<Vec<_>>());
    SortedSvd { singular_values, u: u_sorted, v: v_sorted }
}

/// Largest singular value.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    sorted_svd(m).singular_values[0]
}

/// Smallest singular value; errors when the matrix is numerically rank
/// deficient (relative threshold 1e-13).
pub fn smallest_singular_value(m: &DMatrix<f64>) -> Result<f64> {
    let sv = sorted_svd(m).singular_values;
    let largest = sv[0];
    let smallest = *sv.last().expect("non-empty");
    if smallest <= largest * 1e-13 {
        return Err(Error::RankDeficient { smallest });
    }
    Ok(smallest)
}

/// Orthonormal basis of the column span, via thin QR. Columns must be
/// linearly independent.
pub fn orthonormalize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = m.ncols();
    let qr = m.clone().qr();
    let r = qr.r();
    for i in 0..k {
        if r[(i, i)].abs() < 1e-12 {
            return Err(Error::RankDeficient { smallest: r[(i, i)].abs() });
        }
    }
    Ok(qr.q().columns(0, k).into_owned())
}

/// Orthonormal basis of the orthogonal complement of the span of `basis`
/// (whose columns must be orthonormal). Standard basis vectors are swept
/// against the collected columns with two modified Gram-Schmidt passes.
pub fn orthogonal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let d = basis.nrows();
    let mut cols: Vec<DVector<f64>> = basis.column_iter().map(|c| c.into_owned()).collect();
    let mut complement = Vec::with_capacity(d - cols.len());
    for i in 0..d {
        if cols.len() == d {
            break;
        }
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dot(&v);
                v -= c * proj;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            v /= norm;
            cols.push(v.clone());
            complement.push(v);
        }
    }
    DMatrix::from_columns(&complement)
}

/// True when the columns are orthonormal within `tol` entrywise on B^T B.
pub fn is_orthonormal(m: &DMatrix<f64>, tol: f64) -> bool {
    let gram = m.transpose() * m;
    let k = m.ncols();
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            if (gram[(i, j)] - target).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// log |det(A restricted to the subspace spanned by the orthonormal columns
/// of `basis`)|: the sum of log singular values of A * basis.
pub fn restricted_log_abs_det(a: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<f64> {
    let image = a * basis;
    let sv = sorted_svd(&image).singular_values;
    let mut acc = 0.0;
    for s in sv {
        if s <= 0.0 {
            return Err(Error::RankDeficient { smallest: s });
        }
        acc += s.ln();
    }
    Ok(acc)
}

/// Weighted least-squares line fit. Returns (slope, intercept, rms residual);
/// the residual is unweighted so it stays interpretable in the y units.
pub fn weighted_line_fit(xs: &[f64], ys: &[f64], weights: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert_eq!(xs.len(), weights.len());
    assert!(xs.len() >= 2, "need at least two points for a line fit");
    let wsum: f64 = weights.iter().sum();
    assert!(wsum > 0.0, "weights must not all vanish");
    let xm: f64 = xs.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / wsum;
    let ym: f64 = ys.iter().zip(weights).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((x, y), w) in xs.iter().zip(ys).zip(weights) {
        sxx += w * (x - xm) * (x - xm);
        sxy += w * (x - xm) * (y - ym);
    }
    assert!(sxx > 0.0, "x values must not be constant");
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let residual = (rss / xs.len() as f64).sqrt();
    (slope, intercept, residual)
}

/// Solves A x = b by LU with partial pivoting.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or(Error::RankDeficient { smallest: 0.0 })
}

/// Solves A X = B columnwise.
pub fn solve_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or(Error::RankDeficient { smallest: 0.0 })
}
