//! Shared dense linear-algebra helpers.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::hash::{Hash, Hasher};

/// Relative cutoff used for all SVD-based pseudoinverses and rank decisions.
pub const SVD_RCOND: f64 = 1e-10;

/// Moore-Penrose pseudoinverse with a cutoff relative to the largest
/// singular value.
pub fn pinv(a: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = if smax > 0.0 { rcond * smax } else { rcond };
    svd.pseudo_inverse(eps)
        .expect("SVD requested with both factors")
}

/// Number of singular values above `tol * sigma_max`.
pub fn numerical_rank(a: &DMatrix<f64>, tol: f64) -> usize {
    let sv = a.clone().singular_values();
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// 2-norm condition number (sigma_max / sigma_min).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Inverse of a symmetric positive definite matrix via Cholesky, with the
/// result symmetrized to suppress round-off drift.
pub fn spd_inverse(a: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(context.to_string()))?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Weighted squared norm v' M v.
pub fn weighted_norm_sq(v: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}

/// Solve a square linear system by LU with full pivoting.
pub fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    a.clone()
        .full_piv_lu()
        .solve(b)
        .ok_or_else(|| Error::IllConditioned(context.to_string()))
}

/// Exact minimizer of a quadratic function given only black-box evaluations:
/// the Hessian and gradient are reconstructed from finite differences, which
/// are exact (up to rounding) when `f` is a quadratic form.
pub fn quadratic_minimizer(dim: usize, f: &dyn Fn(&DVector<f64>) -> f64) -> Result<DVector<f64>> {
    let zero = DVector::zeros(dim);
    let f0 = f(&zero);
    let unit = |i: usize| {
        let mut v = DVector::zeros(dim);
        v[i] = 1.0;
        v
    };
    let fe: Vec<f64> = (0..dim).map(|i| f(&unit(i))).collect();
    let mut h = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let mut v = unit(i);
            v[j] += 1.0;
            // f(e_i + e_j) - f(e_i) - f(e_j) + f(0) = H_ij (i != j), H_ii for i == j
            let mixed = f(&v) - fe[i] - fe[j] + f0;
            if i == j {
                h[(i, i)] = mixed;
            } else {
                h[(i, j)] = mixed;
                h[(j, i)] = mixed;
            }
        }
    }
    // f(e_i) = f0 + g_i + H_ii / 2
    let g = DVector::from_fn(dim, |i, _| fe[i] - f0 - 0.5 * h[(i, i)]);
    lu_solve(&h, &(-g), "quadratic minimizer system")
}

/// Bit-exact content hash of a matrix.
pub fn matrix_checksum(a: &DMatrix<f64>) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    a.nrows().hash(&mut h);
    a.ncols().hash(&mut h);
    for v in a.iter() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_identity_is_identity() {
        let i = DMatrix::<f64>::identity(4, 4);
        assert_eq!(pinv(&i, SVD_RCOND), i);
    }

    #[test]
    fn rank_of_outer_product_is_one() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let a = &v * v.transpose();
        assert_eq!(numerical_rank(&a, 1e-9), 1);
    }

    #[test]
    fn spd_inverse_round_trip() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = spd_inverse(&m, "test").unwrap();
        let res = &m * &inv - DMatrix::identity(2, 2);
        assert!(res.abs().max() < 1e-12);
    }

    #[test]
    fn quadratic_minimizer_recovers_argmin() {
        // f(x) = 1/2 x' H x + g' x + 3 with a known SPD H
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let g = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let f = |x: &DVector<f64>| 0.5 * (x.transpose() * &h * x)[(0, 0)] + g.dot(x) + 3.0;
        let x = quadratic_minimizer(3, &f).unwrap();
        let expect = lu_solve(&h, &(-&g), "ref").unwrap();
        assert!((x - expect).abs().max() < 1e-12);
    }

    #[test]
    fn checksum_sensitive_to_content() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mut b = a.clone();
        assert_eq!(matrix_checksum(&a), matrix_checksum(&b));
        b[(0, 0)] = f64::from_bits(1.0f64.to_bits() + 1); // one ulp away
        assert_ne!(matrix_checksum(&a), matrix_checksum(&b));
    }
}
