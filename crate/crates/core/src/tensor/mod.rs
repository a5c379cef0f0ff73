//! Dense row-major `f64` tensors, a tape-based reverse-mode autodiff graph,
//! parameter storage, and a finite-difference gradient checker.

mod checkpoint;
mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod params;

pub use checkpoint::{Checkpoint, TensorEntry};
pub use gradcheck::{grad_check, grad_check_tensors, GRAD_CHECK_STEP};
pub use graph::{Graph, Var};
pub use params::{ParamId, ParamStore};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            shape: vec![m, n],
            data: rows.concat(),
        })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` for a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul [{m}x{k}] by [{k2}x{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm_nn(&self.data, &other.data, &mut out, m, k, n);
        Tensor::matrix(m, n, out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::matrix(n, m, out)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        if self.data.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("NaN input to softmax".into()));
        }
        let mut out = self.data.clone();
        for i in 0..m {
            kernels::softmax_in_place(&mut out[i * n..(i + 1) * n]);
        }
        Tensor::matrix(m, n, out)
    }

    /// Row-wise permutation: output row `i` is input row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        if perm.len() != m {
            return Err(Error::Shape("permutation length".into()));
        }
        let mut out = Vec::with_capacity(m * n);
        for &p in perm {
            out.extend_from_slice(self.row(p));
        }
        Tensor::matrix(m, n, out)
    }
}

/// `ln(sum(exp(x)))` with max shifting.
pub fn logsumexp(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("logsumexp of an empty vector".into()));
    }
    Ok(kernels::logsumexp(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_and_hand_example() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]])
            .unwrap();
        assert_eq!(Tensor::identity(3).matmul(&a).unwrap(), a);
        let b = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let ones = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(b.matmul(&ones).unwrap().data(), &[3.0, 7.0]);
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_examples() {
        let t = Tensor::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![1000.0, 1000.0, f64::NEG_INFINITY],
            vec![0.0, 3f64.ln(), f64::NEG_INFINITY],
        ])
        .unwrap();
        let s = t.softmax_rows().unwrap();
        for j in 0..3 {
            assert!((s.get(0, j) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((s.get(1, 0) - 0.5).abs() < 1e-15 && (s.get(1, 1) - 0.5).abs() < 1e-15);
        assert!((s.get(2, 0) - 0.25).abs() < 1e-15 && (s.get(2, 1) - 0.75).abs() < 1e-15);
        for i in 0..3 {
            assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let nan = Tensor::row_vector(vec![f64::NAN, 1.0]);
        assert!(matches!(nan.softmax_rows(), Err(Error::NonFinite(_))));
    }

    #[test]
    fn logsumexp_examples() {
        assert!((logsumexp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(logsumexp(&[-3.25]).unwrap(), -3.25);
        assert!(logsumexp(&[]).is_err());
        assert!(logsumexp(&[1000.0, 1000.0]).unwrap().is_finite());
    }

    #[test]
    fn logsumexp_matches_brute_force_sum() {
        // Brute-force ln(sum e^x) on values small enough that the plain sum is exact enough.
        let mut rng = crate::rng::SplitMix64::new(11);
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| rng.uniform(-5.0, 5.0)).collect();
            let brute = x.iter().map(|v| v.exp()).sum::<f64>().ln();
            assert!((logsumexp(&x).unwrap() - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_shape_validation() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
