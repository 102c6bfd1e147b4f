//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is plain row-major storage plus an optional gradient buffer.
//! Differentiation happens through a [`tape::Tape`] rebuilt for every
//! training step: forward calls record primitive operations, a single
//! [`tape::Tape::backward`] pass fills the gradients of every reachable
//! leaf, and the caller folds those back into its parameter tensors.
//!
//! Everything is 64-bit. There is no broadcasting beyond scalar-tensor;
//! shape mismatches fail loudly at the call site.

pub mod tape;

pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// Dense row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    name: Option<String>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if let Some(v) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{what} contains non-finite value {v}")));
    }
    Ok(())
}

impl Tensor {
    /// Builds a tensor, rejecting non-finite values and shape/data mismatches.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::Contract(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        check_finite(&data, "tensor data")?;
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
            name: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
            name: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Result<Self> {
        let n = numel(&shape);
        Tensor::from_vec(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::from_vec(vec![1], vec![value])
    }

    /// `rows x rows` identity matrix.
    pub fn identity(rows: usize) -> Self {
        let mut t = Tensor::zeros(vec![rows, rows]);
        for i in 0..rows {
            t.data[i * rows + i] = 1.0;
        }
        t
    }

    /// Marks the tensor as a trainable parameter and allocates its gradient.
    pub fn into_param(mut self, name: &str) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![0.0; self.data.len()]);
        self.name = Some(name.to_string());
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for in-place edits; the caller keeps values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the stored gradient. Gradients accumulate across
    /// backward passes until explicitly zeroed.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::Contract(format!(
                "gradient length {} does not match parameter length {}",
                g.len(),
                self.data.len()
            )));
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (dst, src) in grad.iter_mut().zip(g) {
            *dst += src;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Clamps every entry into `[lo, hi]` in place. Never recorded on a tape.
    pub fn clamp_(&mut self, lo: f64, hi: f64) -> Result<()> {
        if !(lo <= hi) {
            return Err(Error::Contract(format!("clamp bounds inverted: [{lo}, {hi}]")));
        }
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
        Ok(())
    }

    /// Plain (untaped) matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.cols() != other.rows() {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.rows(), self.cols(), other.cols());
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Tensor::from_vec(vec![m, n], out)
    }

    /// Extracts column `c` of a rank-2 tensor.
    pub fn column(&self, c: usize) -> Vec<f64> {
        let (rows, cols) = (self.rows(), self.cols());
        (0..rows).map(|r| self.data[r * cols + c]).collect()
    }

    /// Builds a rank-2 tensor from a subset of columns, preserving order.
    pub fn select_columns(&self, idx: &[usize]) -> Tensor {
        let rows = self.rows();
        let cols = self.cols();
        let mut data = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            for &c in idx {
                data.push(self.data[r * cols + c]);
            }
        }
        Tensor {
            shape: vec![rows, idx.len()],
            data,
            requires_grad: false,
            grad: None,
            name: None,
        }
    }
}

/// `out += a * b` is not provided; this overwrites `out` with `a * b`.
/// Loop order (i, k, j) keeps both streams sequential in memory.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// One plain gradient-descent step: each parameter moves by
/// `-rate * grad`, then its gradient is zeroed. Parameters whose gradient
/// was never populated are treated as having zero gradient.
pub fn sgd_step<'a, I>(params: I, rate: f64) -> Result<()>
where
    I: IntoIterator<Item = &'a mut Tensor>,
{
    if !(rate >= 0.0) {
        return Err(Error::Contract(format!("learning rate must be >= 0, got {rate}")));
    }
    for (idx, p) in params.into_iter().enumerate() {
        let name = p.name.clone();
        if let Some(g) = p.grad.as_ref() {
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {bad} in parameter {}",
                    name.unwrap_or_else(|| format!("#{idx}"))
                )));
            }
        }
        if let Some(g) = p.grad.as_mut() {
            for (v, gi) in p.data.iter_mut().zip(g.iter()) {
                *v -= rate * gi;
            }
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_shape_data_mismatch() {
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Tensor::from_vec(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::from_vec(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::identity(2);
        let a = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = i2.matmul(&a).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn matmul_annihilating_product() {
        let a = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Tensor::from_vec(vec![2, 2], vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        match a.matmul(&b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn clamp_examples() {
        let mut t = Tensor::from_vec(vec![3], vec![-0.5, 0.005, 0.5]).unwrap();
        t.clamp_(-0.01, 0.01).unwrap();
        assert_eq!(t.data(), &[-0.01, 0.005, 0.01]);

        let mut u = Tensor::from_vec(vec![3], vec![-0.001, 0.0, 0.002]).unwrap();
        let before = u.data().to_vec();
        u.clamp_(-0.01, 0.01).unwrap();
        assert_eq!(u.data(), before.as_slice());

        let mut z = Tensor::from_vec(vec![2], vec![-3.0, 5.0]).unwrap();
        z.clamp_(0.0, 0.0).unwrap();
        assert_eq!(z.data(), &[0.0, 0.0]);

        assert!(z.clamp_(1.0, -1.0).is_err());
    }

    #[test]
    fn sgd_step_examples() {
        let mut p = Tensor::scalar(5.0).unwrap().into_param("p");
        p.accumulate_grad(&[2.0]).unwrap();
        sgd_step([&mut p], 0.1).unwrap();
        assert!((p.data()[0] - 4.8).abs() < 1e-15);
        // Gradient zeroed after the step.
        assert_eq!(p.grad().unwrap(), &[0.0]);

        let mut q = Tensor::scalar(5.0).unwrap().into_param("q");
        q.accumulate_grad(&[2.0]).unwrap();
        sgd_step([&mut q], 0.0).unwrap();
        assert_eq!(q.data()[0], 5.0);
    }

    #[test]
    fn sgd_step_rejects_non_finite_grad() {
        let mut p = Tensor::scalar(1.0).unwrap().into_param("theta");
        p.grad = Some(vec![f64::NAN]);
        let err = sgd_step([&mut p], 0.1).unwrap_err();
        match err {
            Error::Numeric(msg) => assert!(msg.contains("theta"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        // Minimizing x^2 with rate 0.1: x_k = (1 - 0.2)^k, so 100 steps
        // from x = 1 land below 1e-9.
        let mut x = Tensor::scalar(1.0).unwrap().into_param("x");
        for _ in 0..100 {
            let g = 2.0 * x.data()[0];
            x.accumulate_grad(&[g]).unwrap();
            sgd_step([&mut x], 0.1).unwrap();
        }
        let expected = 0.8f64.powi(100);
        assert!((x.data()[0] - expected).abs() < 1e-18);
        assert!(x.data()[0].abs() < 1e-9);
    }
}
