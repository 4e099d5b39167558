use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Lower Cholesky factor `L` with `L Lᵀ = h`.
pub fn cholesky(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite { index: 0, pivot: f64::NAN });
    }
    match Cholesky::new(h.clone()) {
        Some(c) => Ok(c.l()),
        None => Err(failing_pivot(h)),
    }
}

// Replays the factorization to name the first pivot that is not positive.
fn failing_pivot(h: &DMatrix<f64>) -> Error {
    let d = h.nrows();
    let mut l = DMatrix::<f64>::zeros(d, d);
    let mut worst = (0, f64::INFINITY);
    for j in 0..d {
        let mut p = h[(j, j)];
        for k in 0..j {
            p -= l[(j, k)] * l[(j, k)];
        }
        if p < worst.1 {
            worst = (j, p);
        }
        if p <= 0.0 {
            return Error::NotPositiveDefinite { index: j, pivot: p };
        }
        let ljj = p.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..d {
            let mut s = h[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Error::NotPositiveDefinite { index: worst.0, pivot: worst.1 }
}

/// `L⁻ᵀ` for a lower-triangular `L`.
pub fn inv_transpose_lower(l: &DMatrix<f64>) -> DMatrix<f64> {
    let d = l.nrows();
    let lt = l.transpose();
    lt.solve_upper_triangular(&DMatrix::identity(d, d))
        .expect("triangular factor with nonzero diagonal")
}

/// Symmetric square root of an SPD matrix via its eigendecomposition.
pub fn sym_sqrt(h: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(h.clone());
    let s = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn vec_inf_norm(a: &DVector<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Product of three reals in a fixed order independent of argument order, so
/// that trilinear sums are exactly symmetric under permutation.
#[inline]
pub fn sorted_product3(a: f64, b: f64, c: f64) -> f64 {
    let mut v = [a, b, c];
    v.sort_by(f64::total_cmp);
    v[0] * v[1] * v[2]
}

/// Order-independent product of a short list of reals.
#[inline]
pub fn sorted_product(vals: &mut [f64]) -> f64 {
    vals.sort_by(f64::total_cmp);
    vals.iter().product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivot_reported() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match cholesky(&h) {
            Err(Error::NotPositiveDefinite { index, pivot }) => {
                assert_eq!(index, 1);
                assert!((pivot + 3.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverse_transpose() {
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let l = cholesky(&h).unwrap();
        let lit = inv_transpose_lower(&l);
        let id = l.transpose() * &lit;
        assert!((id - DMatrix::identity(3, 3)).abs().max() < 1e-14);
        let r = sym_sqrt(&h);
        assert!((&r * &r - &h).abs().max() < 1e-12);
    }

    #[test]
    fn product_symmetry() {
        let (a, b, c) = (0.1, -3.7, 1e-3 + 0.3);
        assert_eq!(sorted_product3(a, b, c), sorted_product3(c, a, b));
        assert_eq!(sorted_product3(a, b, c), sorted_product3(b, c, a));
    }
}
