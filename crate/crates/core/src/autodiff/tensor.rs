use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Dense tensor with a contiguous value buffer. Models use the layouts
/// `[batch, channels, time]` and `[batch, features]`; losses also produce
/// `[rows, frames, bins]` magnitude blocks and `[1]` scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Builds a tensor, validating that the shape matches the value count
    /// and that every value is finite.
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err!(
                "tensor",
                "shape {:?} implies {} values, got {}",
                shape,
                numel,
                data.len()
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Internal constructor for op outputs; finiteness is enforced by the
    /// tape's post-op check instead.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![S::ZERO; numel],
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// The single value of a `[1]` tensor.
    pub fn item(&self) -> Result<S> {
        if self.data.len() != 1 {
            return Err(shape_err!("item", "expected scalar, shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Interprets the tensor as `[batch, channels, time]`.
    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape {
            [b, c, t] => Ok((b, c, t)),
            _ => Err(shape_err!(op, "expected rank-3 tensor, shape {:?}", self.shape)),
        }
    }

    /// Interprets the tensor as `[batch, features]`.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape {
            [b, f] => Ok((b, f)),
            _ => Err(shape_err!(op, "expected rank-2 tensor, shape {:?}", self.shape)),
        }
    }

    /// Collapses all leading dimensions: `(rows, last_dim)`.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.last() {
            Some(&last) if last > 0 => (self.data.len() / last, last),
            _ => (0, 0),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lossless-by-intent precision cast (used when switching run precision).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Max absolute difference between two equal-size tensors, in f64.
pub fn max_abs_diff<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> f64 {
    debug_assert_eq!(a.numel(), b.numel());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.to_f64() - y.to_f64()).abs())
        .fold(0.0, f64::max)
}
