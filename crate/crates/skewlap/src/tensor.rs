//! The whitened third-derivative tensor `T = ∇³W(0)`.

use nalgebra::{DMatrix, DVector};

/// Symmetric order-3 tensor stored densely, index `(i·d + j)·d + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3 {
    dim: usize,
    data: Vec<f64>,
}

impl DenseTensor3 {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim * dim] }
    }

    /// Build from the entries with `i ≤ j ≤ k`; the rest are filled by symmetry.
    pub fn from_sorted_entries(dim: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                for k in j..dim {
                    let v = f(i, j, k);
                    t.set_sym(i, j, k, v);
                }
            }
        }
        t
    }

    pub fn from_fn_unsymmetric(dim: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    t.data[(i * dim + j) * dim + k] = f(i, j, k);
                }
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dim + j) * self.dim + k]
    }

    fn set_sym(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let d = self.dim;
        for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
            self.data[(a * d + b) * d + c] = v;
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Largest violation of index-permutation symmetry.
    pub fn asymmetry(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let v = self.get(i, j, k);
                    for w in [self.get(j, i, k), self.get(k, j, i), self.get(i, k, j)] {
                        worst = worst.max((v - w).abs());
                    }
                }
            }
        }
        worst
    }
}

/// `T = ∇³W(0)` for `W(z) = V(x̂ + L⁻ᵀz)`, either dense or as `Σₗ aₗ Bₗ^{⊗3}`.
#[derive(Debug, Clone)]
pub enum WhitenedThird {
    Dense(DenseTensor3),
    /// Rows of `vectors` are the whitened `Bₗ = L⁻¹Xₗ`.
    LowRank { weights: DVector<f64>, vectors: DMatrix<f64> },
}

impl WhitenedThird {
    pub fn dim(&self) -> usize {
        match self {
            WhitenedThird::Dense(t) => t.dim(),
            WhitenedThird::LowRank { vectors, .. } => vectors.ncols(),
        }
    }

    /// `⟨T, u⊗v⊗w⟩`.
    pub fn contract3(&self, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        match self {
            WhitenedThird::Dense(t) => {
                let d = t.dim();
                let mut s = 0.0;
                for i in 0..d {
                    let mut si = 0.0;
                    for j in 0..d {
                        let row = &t.data[(i * d + j) * d..(i * d + j + 1) * d];
                        let r: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
                        si += v[j] * r;
                    }
                    s += u[i] * si;
                }
                s
            }
            WhitenedThird::LowRank { weights, vectors } => {
                let mut s = 0.0;
                for l in 0..vectors.nrows() {
                    let row = vectors.row(l);
                    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
                    for k in 0..row.len() {
                        a += row[k] * u[k];
                        b += row[k] * v[k];
                        c += row[k] * w[k];
                    }
                    s += weights[l] * crate::linalg::sorted_product3(a, b, c);
                }
                s
            }
        }
    }

    /// `⟨T, z^{⊗3}⟩`. Exactly odd in `z`.
    pub fn cube(&self, z: &[f64]) -> f64 {
        match self {
            WhitenedThird::Dense(_) => self.contract3(z, z, z),
            WhitenedThird::LowRank { weights, vectors } => {
                let mut s = 0.0;
                for l in 0..vectors.nrows() {
                    let mut a = 0.0;
                    for (k, zk) in z.iter().enumerate() {
                        a += vectors[(l, k)] * zk;
                    }
                    s += weights[l] * a * a * a;
                }
                s
            }
        }
    }

    /// `⟨T, z⊗z⊗·⟩ ∈ ℝ^d`.
    pub fn cube_grad(&self, z: &[f64]) -> DVector<f64> {
        let d = self.dim();
        match self {
            WhitenedThird::Dense(t) => {
                let mut out = DVector::zeros(d);
                for i in 0..d {
                    for j in 0..d {
                        let c = z[i] * z[j];
                        let row = &t.data[(i * d + j) * d..(i * d + j + 1) * d];
                        for k in 0..d {
                            out[k] += c * row[k];
                        }
                    }
                }
                out
            }
            WhitenedThird::LowRank { weights, vectors } => {
                let zv = DVector::from_column_slice(z);
                let proj = vectors * &zv;
                let coef = DVector::from_fn(proj.len(), |l, _| weights[l] * proj[l] * proj[l]);
                vectors.transpose() * coef
            }
        }
    }

    /// `⟨T, I⟩ₖ = Σᵢ Tᵢᵢₖ`.
    pub fn trace_vec(&self) -> DVector<f64> {
        let d = self.dim();
        match self {
            WhitenedThird::Dense(t) => DVector::from_fn(d, |k, _| (0..d).map(|i| t.get(i, i, k)).sum()),
            WhitenedThird::LowRank { weights, vectors } => {
                let mut out = DVector::zeros(d);
                for l in 0..vectors.nrows() {
                    let row = vectors.row(l);
                    let c = weights[l] * row.norm_squared();
                    for k in 0..d {
                        out[k] += c * row[k];
                    }
                }
                out
            }
        }
    }

    /// `‖T‖_F²`. The low-rank path is the pairwise sum `Σₗₘ aₗaₘ(BₗᵀBₘ)³`.
    pub fn frobenius_sq(&self) -> f64 {
        match self {
            WhitenedThird::Dense(t) => t.data.iter().map(|v| v * v).sum(),
            WhitenedThird::LowRank { weights, vectors } => {
                let n = vectors.nrows();
                let mut s = 0.0;
                for l in 0..n {
                    let bl = vectors.row(l).transpose();
                    let dots = vectors * &bl;
                    let mut sl = 0.0;
                    for m in 0..n {
                        let g = dots[m];
                        sl += weights[m] * g * g * g;
                    }
                    s += weights[l] * sl;
                }
                s
            }
        }
    }

    /// `⟨T, H₃(z)⟩` with `H₃(z) = z^{⊗3} − 3·Sym(z⊗I)`.
    pub fn hermite3(&self, z: &[f64]) -> f64 {
        let tr = self.trace_vec();
        self.cube(z) - 3.0 * tr.iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn to_dense(&self) -> DenseTensor3 {
        match self {
            WhitenedThird::Dense(t) => t.clone(),
            WhitenedThird::LowRank { weights, vectors } => dense_from_rank_one(weights, vectors),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            WhitenedThird::Dense(t) => t.data.iter().all(|v| *v == 0.0),
            WhitenedThird::LowRank { weights, vectors } => {
                weights.iter().all(|w| *w == 0.0) || vectors.iter().all(|v| *v == 0.0)
            }
        }
    }
}

/// Dense `Σₗ aₗ bₗ^{⊗3}` (rows of `vectors` are the `bₗ`).
pub fn dense_from_rank_one(weights: &DVector<f64>, vectors: &DMatrix<f64>) -> DenseTensor3 {
    let d = vectors.ncols();
    let mut acc = vec![0.0; d * d * d];
    let mut b = vec![0.0; d];
    for l in 0..vectors.nrows() {
        let a = weights[l];
        if a == 0.0 {
            continue;
        }
        for k in 0..d {
            b[k] = vectors[(l, k)];
        }
        for i in 0..d {
            let ci = a * b[i];
            for j in i..d {
                let cij = ci * b[j];
                let base = (i * d + j) * d;
                for k in j..d {
                    acc[base + k] += cij * b[k];
                }
            }
        }
    }
    DenseTensor3::from_sorted_entries(d, |i, j, k| acc[(i * d + j) * d + k])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (DVector<f64>, DMatrix<f64>) {
        let w = DVector::from_vec(vec![0.7, -1.3, 0.2]);
        let v = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.8, -1.1]);
        (w, v)
    }

    #[test]
    fn low_rank_matches_dense() {
        let (w, v) = sample();
        let lr = WhitenedThird::LowRank { weights: w.clone(), vectors: v.clone() };
        let de = WhitenedThird::Dense(dense_from_rank_one(&w, &v));
        let (a, b, c) = ([0.3, -0.9], [1.2, 0.4], [-0.5, 0.25]);
        assert!((lr.contract3(&a, &b, &c) - de.contract3(&a, &b, &c)).abs() < 1e-12);
        assert!((lr.cube(&a) - de.cube(&a)).abs() < 1e-12);
        assert!((lr.frobenius_sq() - de.frobenius_sq()).abs() < 1e-10);
        assert!((lr.trace_vec() - de.trace_vec()).norm() < 1e-12);
        assert!((lr.cube_grad(&a) - de.cube_grad(&a)).norm() < 1e-12);
        assert_eq!(de.to_dense().asymmetry(), 0.0);
    }

    #[test]
    fn cube_is_exactly_odd() {
        let (w, v) = sample();
        let de = WhitenedThird::Dense(dense_from_rank_one(&w, &v));
        let z = [0.123456789, -2.3456];
        let mz = [-z[0], -z[1]];
        assert_eq!(de.cube(&z), -de.cube(&mz));
    }
}
