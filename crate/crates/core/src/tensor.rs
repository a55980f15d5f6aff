//! Dense row-major tensors of rank at most four.
//!
//! Images are stored channel-last (`H × W × C`). There is no implicit
//! broadcasting: binary operations accept either an exactly matching shape or
//! a scalar. Training runs in `f32`; the gradient-check suites instantiate the
//! same code with `f64`.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, NumAssign};

use crate::error::{invalid, Error, Result};

pub const MAX_RANK: usize = 4;

/// Clamp floor applied before taking logarithms.
pub const LOG_EPS: f64 = 1e-12;

/// Floating-point element type: `f32` for training, `f64` for gradient checks.
pub trait Scalar: Float + NumAssign + Sum + Debug + Default + Send + Sync + 'static {
    fn of(x: f64) -> Self;

    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// Right-hand side of a binary elementwise operation.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a, T> {
    Tensor(&'a Tensor<T>),
    Scalar(T),
}

#[derive(Clone, Copy, Debug)]
pub enum ElementwiseOp<'a, T> {
    Add(Operand<'a, T>),
    Sub(Operand<'a, T>),
    Mul(Operand<'a, T>),
    Scale(T),
    Relu,
    Exp,
    /// Natural log of `max(x, 1e-12)`.
    Log,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.len() > MAX_RANK {
        return Err(invalid(format!("rank {} exceeds {MAX_RANK}", shape.len())));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(invalid(format!("zero dimension in shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(invalid(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics on an invalid shape; intended for shapes known to be valid.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = check_shape(shape).expect("valid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len = check_shape(shape).expect("valid shape");
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// In-place access. Used by the optimizer and by layer code that builds
    /// outputs; everything else treats tensors as values.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.to_f64())).collect(),
        }
    }

    /// Flat row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        self.same_shape("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub(crate) fn same_shape(&self, op: &'static str, other: &Tensor<T>) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            })
        }
    }

    fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(
        &self,
        op: &'static str,
        rhs: Operand<'_, T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        match rhs {
            Operand::Scalar(s) => Ok(self.map(|v| f(v, s))),
            Operand::Tensor(other) => {
                self.same_shape(op, other)?;
                Ok(Tensor {
                    shape: self.shape.clone(),
                    data: self
                        .data
                        .iter()
                        .zip(&other.data)
                        .map(|(&a, &b)| f(a, b))
                        .collect(),
                })
            }
        }
    }

    pub fn elementwise(&self, op: ElementwiseOp<'_, T>) -> Result<Tensor<T>> {
        let out = match op {
            ElementwiseOp::Add(rhs) => self.zip_with("add", rhs, |a, b| a + b)?,
            ElementwiseOp::Sub(rhs) => self.zip_with("sub", rhs, |a, b| a - b)?,
            ElementwiseOp::Mul(rhs) => self.zip_with("mul", rhs, |a, b| a * b)?,
            ElementwiseOp::Scale(s) => self.map(|v| v * s),
            ElementwiseOp::Relu => self.map(|v| v.max(T::zero())),
            ElementwiseOp::Exp => self.map(T::exp),
            ElementwiseOp::Log => {
                let eps = T::of(LOG_EPS);
                self.map(|v| v.max(eps).ln())
            }
        };
        out.ensure_finite("elementwise")?;
        Ok(out)
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(ElementwiseOp::Add(Operand::Tensor(other)))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(ElementwiseOp::Sub(Operand::Tensor(other)))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(ElementwiseOp::Mul(Operand::Tensor(other)))
    }

    pub fn scale(&self, factor: T) -> Result<Tensor<T>> {
        self.elementwise(ElementwiseOp::Scale(factor))
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        self.elementwise(ElementwiseOp::Relu)
    }

    pub fn exp(&self) -> Result<Tensor<T>> {
        self.elementwise(ElementwiseOp::Exp)
    }

    pub fn ln(&self) -> Result<Tensor<T>> {
        self.elementwise(ElementwiseOp::Log)
    }

    /// `(m × k) · (k × n) → (m × n)`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            left: self.shape.clone(),
            right: other.shape.clone(),
        };
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(mismatch());
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        let out = Tensor::new(&[m, n], out)?;
        out.ensure_finite("matmul")?;
        Ok(out)
    }
}
