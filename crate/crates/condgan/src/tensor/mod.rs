//! Dense row-major tensors and a define-by-run reverse-mode tape.
//!
//! `Tensor<T>` is a plain value: shape + contiguous data. All differentiable
//! computation goes through [`Graph`], which records every op as it executes
//! and replays the chain rule in reverse. Nodes are identified by [`Var`]
//! handles; construction order is already a topological order, so backward is
//! a single reverse scan over the arena.

pub(crate) mod kernels;

mod gradcheck;
mod graph;

pub use gradcheck::{grad_check, grad_check_multi, CheckEntry, GradCheckOpts};
pub use graph::{Graph, NormDim, NormGroups, Var, BCE_CLAMP};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor. Shape extents are all positive; a scalar is `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(Error::shape(
                "tensor",
                format!("extents must be positive, got {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} implies {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 1-D tensor from a slice of f64 literals (test/fixture convenience).
    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&x| T::from_f64(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.iter().any(|&e| e == 0) {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Convert element width (f32 <-> f64) through f64.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }

    /// Row-major offset of a 4-D index (NCHW convention).
    #[inline]
    pub fn idx4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    /// Value-level concat along `axis` (mirror of the graph op, for
    /// assembling constant inputs like rgb+mask images).
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no parts given".to_string()));
        }
        let first = parts[0].shape();
        if axis >= first.len() {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} out of range for shape {first:?}"),
            ));
        }
        let mut axis_total = 0;
        for p in parts {
            let s = p.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(first)
                    .enumerate()
                    .any(|(d, (&a, &b))| d != axis && a != b)
            {
                return Err(Error::shape(
                    "concat",
                    format!("part shape {s:?} incompatible with {first:?} along axis {axis}"),
                ));
            }
            axis_total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut shape = first.to_vec();
        shape[axis] = axis_total;
        let mut data = vec![T::zero(); outer * axis_total * inner];
        let mut off = 0;
        for p in parts {
            let ext = p.shape()[axis];
            for o in 0..outer {
                let src = o * ext * inner;
                let dst = (o * axis_total + off) * inner;
                data[dst..dst + ext * inner].copy_from_slice(&p.data()[src..src + ext * inner]);
            }
            off += ext;
        }
        Tensor::new(&shape, data)
    }

    pub fn assert_finite(&self, op: &'static str) -> Result<()> {
        check_finite(op, &self.data)
    }
}

/// Scan a buffer for NaN/inf, reporting the first offending offset.
pub(crate) fn check_finite<T: Scalar>(op: &'static str, data: &[T]) -> Result<()> {
    // Branch-free accumulation scans the whole slice but vectorizes; the
    // position lookup only runs on the error path.
    let all = data.iter().fold(true, |acc, x| acc & x.is_finite());
    if all {
        Ok(())
    } else {
        let pos = data.iter().position(|x| !x.is_finite()).unwrap_or(0);
        Err(Error::non_finite(
            op,
            format!("first bad element at flat offset {pos}"),
        ))
    }
}
