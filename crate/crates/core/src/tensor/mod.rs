//! Dense `f64` tensors and the handful of differentiable layers the U-Net
//! needs.
//!
//! There is no general autograd graph. Each layer exposes a forward function
//! and a backward function that reads the output gradient and accumulates into
//! the gradient buffers of its inputs; the model wires them together in
//! reverse order by hand. The slice-level kernels in [`kernels`] are shared by
//! the tensor wrappers and the model.

mod adam;
mod gradcheck;
pub mod kernels;
mod loss;
mod ops;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_diff_grad, tolerance_ratio};
pub use loss::{log_softmax, softmax, softmax_cross_entropy};
pub use ops::{
    concat_backward, concat_channels, conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward,
    upsample2, upsample2_backward,
};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![0.0; n], grad: vec![0.0; n] }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {dims:?}")));
        }
        if data.len() != n {
            return Err(Error::Shape(format!("{} values do not fill dims {dims:?}", data.len())));
        }
        Ok(Self { dims: dims.to_vec(), grad: vec![0.0; n], data })
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(dims);
        t.data.fill(value);
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Interprets the tensor as `[channels, height, width]`.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Shape(format!("expected [C, H, W], got {:?}", self.dims))),
        }
    }

    /// Slice `index` along the leading (batch) axis.
    pub fn batch_item(&self, index: usize) -> Result<Tensor> {
        let (&n, rest) = self
            .dims
            .split_first()
            .ok_or_else(|| Error::Shape("scalar tensor has no batch axis".into()))?;
        if index >= n {
            return Err(Error::Shape(format!("batch index {index} >= {n}")));
        }
        let stride: usize = rest.iter().product();
        Tensor::from_vec(rest, self.data[index * stride..(index + 1) * stride].to_vec())
    }
}
