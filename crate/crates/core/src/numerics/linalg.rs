//! Dense f64 vector/matrix types and the small set of kernels the hand-written
//! backward passes need. Everything is 64-bit; the attack success criterion
//! (input MSE <= 0.001) is sensitive to precision.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense vector of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVec(pub Vec<f64>);

impl DenseVec {
    pub fn zeros(n: usize) -> Self {
        DenseVec(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &DenseVec) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &DenseVec) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.0 {
            *a *= alpha;
        }
    }

    /// Coordinate-wise product.
    pub fn hadamard(&self, other: &DenseVec) -> DenseVec {
        debug_assert_eq!(self.len(), other.len());
        DenseVec(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<usize> for DenseVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for DenseVec {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c));
        DenseMat {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect()
    }

    /// `y = A^T x`
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.rows, x.len());
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            for (yj, aij) in y.iter_mut().zip(self.row(i)) {
                *yj += aij * xi;
            }
        }
        y
    }

    /// `self += alpha * u v^T`
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(self.rows, u.len());
        debug_assert_eq!(self.cols, v.len());
        for i in 0..self.rows {
            let s = alpha * u[i];
            for (aij, vj) in self.row_mut(i).iter_mut().zip(v) {
                *aij += s * vj;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Cosine similarity `u . v / (|u| |v|)`; defined as 0 when either vector is
/// zero (arises for TF-IDF documents with no shared vocabulary).
pub fn cosine_sim(u: &DenseVec, v: &DenseVec) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine_sim: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok(u.dot(v) / (nu * nv))
}

/// Mean squared error between two equal-length vectors.
pub fn mse(u: &DenseVec, v: &DenseVec) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("mse: {} vs {}", u.len(), v.len())));
    }
    if u.is_empty() {
        return Err(Error::Shape("mse over empty vectors".into()));
    }
    let s: f64 = u
        .0
        .iter()
        .zip(&v.0)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / u.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        let v = DenseVec(vec![0.3, -1.2, 4.0]);
        assert!((cosine_sim(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        let e1 = DenseVec(vec![1.0, 0.0]);
        let e2 = DenseVec(vec![0.0, 1.0]);
        assert_eq!(cosine_sim(&e1, &e2).unwrap(), 0.0);
        let u = DenseVec(vec![1.0, 1.0]);
        let got = cosine_sim(&u, &e1).unwrap();
        assert!((got - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cosine_zero_vector_is_zero() {
        let z = DenseVec(vec![0.0, 0.0]);
        let v = DenseVec(vec![1.0, 2.0]);
        assert_eq!(cosine_sim(&z, &v).unwrap(), 0.0);
    }

    #[test]
    fn cosine_dim_mismatch_errors() {
        let u = DenseVec(vec![1.0]);
        let v = DenseVec(vec![1.0, 2.0]);
        assert!(cosine_sim(&u, &v).is_err());
    }

    #[test]
    fn mse_basics() {
        let v = DenseVec(vec![1.0, 2.0, 3.0]);
        assert_eq!(mse(&v, &v).unwrap(), 0.0);
        let z = DenseVec(vec![0.0, 0.0]);
        let o = DenseVec(vec![1.0, 1.0]);
        assert_eq!(mse(&z, &o).unwrap(), 1.0);
        let a = DenseVec(vec![1.0, 2.0, 3.0]);
        let b = DenseVec(vec![1.0, 2.0, 4.0]);
        assert!((mse(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(mse(&a, &z).is_err());
    }

    #[test]
    fn matvec_and_transpose_agree_with_hand_values() {
        let m = DenseMat::from_rows(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(m.matvec_t(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn outer_product_accumulates() {
        let mut m = DenseMat::zeros(2, 2);
        m.add_outer(2.0, &[1.0, 3.0], &[5.0, 7.0]);
        assert_eq!(m.data(), &[10.0, 14.0, 30.0, 42.0]);
    }
}
