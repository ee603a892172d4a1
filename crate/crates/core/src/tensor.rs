//! Dense row-major tensors over `f64`.
//!
//! Every numeric value in the library flows through [`Tensor`]: inputs,
//! activations, parameter vectors, gradients and noise. Broadcasting is
//! deliberately limited to scalars and per-row vectors; anything else is a
//! shape error rather than a silent NumPy-style expansion.

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and flat row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    /// 1-D tensor from a plain vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Reinterpret the same data under a new shape of equal volume.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {} elements to {:?}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    fn check_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{}: {:?} vs {:?}",
                op, self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Element-wise sum; shapes must match exactly.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// Element-wise difference; shapes must match exactly.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// Scalar broadcast: multiply every element by `c`.
    pub fn scale(&self, c: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|a| a * c).collect(),
        }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    /// `self += c * other`, element-wise; shapes must match exactly.
    pub fn axpy(&mut self, c: f64, other: &Tensor) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    /// Matrix product of two 2-D tensors, `[m,n] x [n,p] -> [m,p]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, n) = self.dims2("matmul lhs")?;
        let (n2, p) = other.dims2("matmul rhs")?;
        if n != n2 {
            return Err(Error::shape(format!(
                "matmul: inner dims {} vs {}",
                n, n2
            )));
        }
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let lhs_row = &self.data[i * n..(i + 1) * n];
            let out_row = &mut out[i * p..(i + 1) * p];
            for (k, &a) in lhs_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &other.data[k * p..(k + 1) * p];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor { shape: vec![m, p], data: out })
    }

    /// Per-row broadcast: add a `[n]` vector to every row of a `[m,n]` tensor.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let (m, n) = self.dims2("add_row lhs")?;
        if row.shape != [n] {
            return Err(Error::shape(format!(
                "add_row: row shape {:?} vs width {}",
                row.shape, n
            )));
        }
        let mut data = self.data.clone();
        for i in 0..m {
            for (d, r) in data[i * n..(i + 1) * n].iter_mut().zip(&row.data) {
                *d += r;
            }
        }
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// Row-wise softmax of a 2-D tensor; each output row sums to 1.
    pub fn row_softmax(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("row_softmax")?;
        if n == 0 {
            return Err(Error::shape("row_softmax: zero-width rows".to_string()));
        }
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[i * n..(i + 1) * n];
            let mut sum = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// Euclidean norm of the flattened tensor.
    ///
    /// Any NaN or infinite element is a numeric-domain error, never a silent
    /// NaN result.
    pub fn l2_norm(&self) -> Result<f64> {
        let mut acc = 0.0;
        for &v in &self.data {
            if !v.is_finite() {
                return Err(Error::numeric(format!("l2_norm of non-finite value {v}")));
            }
            acc += v * v;
        }
        Ok(acc.sqrt())
    }

    /// Borrow row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> Result<&[f64]> {
        let (m, n) = self.dims2("row")?;
        if i >= m {
            return Err(Error::invalid(format!("row {} of {} rows", i, m)));
        }
        Ok(&self.data[i * n..(i + 1) * n])
    }

    /// Interpret as 2-D, returning (rows, cols).
    pub fn dims2(&self, ctx: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            other => Err(Error::shape(format!("{}: expected 2-D, got {:?}", ctx, other))),
        }
    }
}

/// Dot product of two equal-length 1-D slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
