//! Dense row-major f64 tensors.
//!
//! Everything in the model is small (at most a few hundred rows), so a plain
//! `Vec<f64>` with a shape is enough. Matmul kernels are written so the inner
//! loop runs over contiguous memory and vectorizes.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match {} values",
            shape,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
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

    /// Rows of a 2-D tensor (a 1-D tensor counts as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            1 => 1,
            _ => panic!("rows() on tensor of shape {:?}", self.shape),
        }
    }

    /// Columns of a 2-D tensor (length for 1-D).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => panic!("cols() on tensor of shape {:?}", self.shape),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// `self @ other` for 2-D tensors: (m,k) x (k,n) -> (m,n).
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.ndim() != 2 || other.ndim() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let n = other.shape[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (kk, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[kk * n..(kk + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row.iter()) {
                    *o = a.mul_add(b, *o);
                }
            }
        }
        Ok(Tensor::matrix(m, n, out))
    }

    /// `self @ other^T`: (m,k) x (n,k) -> (m,n). Used by backward passes.
    pub fn matmul_nt(&self, other: &Tensor) -> Tensor {
        let (m, k) = (self.shape[0], self.shape[1]);
        let n = other.shape[0];
        debug_assert_eq!(k, other.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (j, o) in o_row.iter_mut().enumerate() {
                let b_row = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row.iter()) {
                    acc = a.mul_add(b, acc);
                }
                *o = acc;
            }
        }
        Tensor::matrix(m, n, out)
    }

    /// `self^T @ other`: (k,m) x (k,n) -> (m,n). Used by backward passes.
    pub fn matmul_tn(&self, other: &Tensor) -> Tensor {
        let (k, m) = (self.shape[0], self.shape[1]);
        let n = other.shape[1];
        debug_assert_eq!(k, other.shape[0]);
        let mut out = vec![0.0; m * n];
        for kk in 0..k {
            let a_row = &self.data[kk * m..(kk + 1) * m];
            let b_row = &other.data[kk * n..(kk + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                let o_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row.iter()) {
                    *o = a.mul_add(b, *o);
                }
            }
        }
        Tensor::matrix(m, n, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i3 = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let a = Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!(i3.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::matrix(2, 3, vec![0.0; 6]);
        let b = Tensor::matrix(2, 3, vec![0.0; 6]);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn transposed_kernels_agree_with_plain_matmul() {
        let a = Tensor::matrix(3, 4, (0..12).map(|v| v as f64 * 0.37 - 1.0).collect());
        let b = Tensor::matrix(4, 5, (0..20).map(|v| (v as f64).sin()).collect());
        let c = a.matmul(&b).unwrap();

        // A @ B == A @ (B^T)^T via matmul_nt
        let mut bt = Tensor::zeros(vec![5, 4]);
        for r in 0..4 {
            for cidx in 0..5 {
                bt.set2(cidx, r, b.get2(r, cidx));
            }
        }
        let c_nt = a.matmul_nt(&bt);
        for (x, y) in c.data().iter().zip(c_nt.data()) {
            assert!((x - y).abs() < 1e-12);
        }

        // A @ B == (A^T)^T @ B via matmul_tn
        let mut at = Tensor::zeros(vec![4, 3]);
        for r in 0..3 {
            for cidx in 0..4 {
                at.set2(cidx, r, a.get2(r, cidx));
            }
        }
        let c_tn = at.matmul_tn(&b);
        for (x, y) in c.data().iter().zip(c_tn.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
