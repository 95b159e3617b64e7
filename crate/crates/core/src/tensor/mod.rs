//! Dense 64-bit tensors and a tape-based reverse-mode autodiff engine.
//!
//! Complex values are stored as separate real and imaginary planes. Gradients
//! of complex quantities follow the real-composite convention: the gradient of
//! a real loss `L` with respect to `z = a + ib` is stored as
//! `dL/da + i dL/db`. Every loss in this crate is real-valued, so this is all
//! the backward rules need.

mod conv;
mod fft;
pub mod gradcheck;
mod tape;

pub use fft::{fft2_along_last_two, fft_along_last};
pub use gradcheck::{check_gradients, GradReport, DEFAULT_STEP};
pub use tape::{Tape, UnaryKind, Var, DEFAULT_EPS_DIV};

use crate::error::{Error, Result};
use num_complex::Complex64;

#[derive(Clone, Debug, PartialEq)]
pub struct RealTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("RealTensor::new", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// The single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    re: RealTensor,
    im: RealTensor,
}

impl ComplexTensor {
    pub fn new(re: RealTensor, im: RealTensor) -> Result<Self> {
        if re.shape != im.shape {
            return Err(Error::shape("ComplexTensor::new", &re.shape, &im.shape));
        }
        Ok(Self { re, im })
    }

    pub fn from_parts(shape: &[usize], re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        Self::new(RealTensor::new(shape.to_vec(), re)?, RealTensor::new(shape.to_vec(), im)?)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            re: RealTensor::zeros(shape),
            im: RealTensor::zeros(shape),
        }
    }

    pub fn from_complex(shape: &[usize], values: &[Complex64]) -> Result<Self> {
        let re = values.iter().map(|z| z.re).collect();
        let im = values.iter().map(|z| z.im).collect();
        Self::from_parts(shape, re, im)
    }

    pub fn from_real(re: RealTensor) -> Self {
        let im = RealTensor::zeros(&re.shape);
        Self { re, im }
    }

    pub fn shape(&self) -> &[usize] {
        &self.re.shape
    }

    pub fn numel(&self) -> usize {
        self.re.data.len()
    }

    pub fn re(&self) -> &RealTensor {
        &self.re
    }

    pub fn im(&self) -> &RealTensor {
        &self.im
    }

    pub fn get(&self, i: usize) -> Complex64 {
        Complex64::new(self.re.data[i], self.im.data[i])
    }

    pub fn set(&mut self, i: usize, z: Complex64) {
        self.re.data[i] = z.re;
        self.im.data[i] = z.im;
    }

    pub fn to_complex_vec(&self) -> Vec<Complex64> {
        (0..self.numel()).map(|i| self.get(i)).collect()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Ok(Self {
            re: self.re.reshape(shape)?,
            im: self.im.reshape(shape)?,
        })
    }

    pub fn into_parts(self) -> (RealTensor, RealTensor) {
        (self.re, self.im)
    }

    pub fn all_finite(&self) -> bool {
        self.re.all_finite() && self.im.all_finite()
    }
}

/// A value held by a tape node.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Real(RealTensor),
    Complex(ComplexTensor),
}

impl Value {
    pub fn shape(&self) -> &[usize] {
        match self {
            Value::Real(t) => t.shape(),
            Value::Complex(t) => t.shape(),
        }
    }

    pub fn numel(&self) -> usize {
        match self {
            Value::Real(t) => t.numel(),
            Value::Complex(t) => t.numel(),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Value::Complex(_))
    }

    pub fn as_real(&self) -> Option<&RealTensor> {
        match self {
            Value::Real(t) => Some(t),
            Value::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Option<&ComplexTensor> {
        match self {
            Value::Complex(t) => Some(t),
            Value::Real(_) => None,
        }
    }

    pub fn zeros_like(&self) -> Value {
        match self {
            Value::Real(t) => Value::Real(RealTensor::zeros(t.shape())),
            Value::Complex(t) => Value::Complex(ComplexTensor::zeros(t.shape())),
        }
    }

    pub(crate) fn re_plane(&self) -> &[f64] {
        match self {
            Value::Real(t) => t.data(),
            Value::Complex(t) => t.re().data(),
        }
    }

    pub(crate) fn im_plane(&self) -> Option<&[f64]> {
        match self {
            Value::Real(_) => None,
            Value::Complex(t) => Some(t.im().data()),
        }
    }

    /// Adds `other` into `self`. A complex increment into a real slot keeps
    /// only the real part (real-composite projection).
    pub(crate) fn accumulate(&mut self, other: &Value) {
        match (self, other) {
            (Value::Real(a), b) => {
                for (x, y) in a.data.iter_mut().zip(b.re_plane()) {
                    *x += y;
                }
            }
            (Value::Complex(a), Value::Real(b)) => {
                for (x, y) in a.re.data.iter_mut().zip(&b.data) {
                    *x += y;
                }
            }
            (Value::Complex(a), Value::Complex(b)) => {
                for (x, y) in a.re.data.iter_mut().zip(&b.re.data) {
                    *x += y;
                }
                for (x, y) in a.im.data.iter_mut().zip(&b.im.data) {
                    *x += y;
                }
            }
        }
    }

    /// Flattened real coordinates (re, then im for complex values).
    pub fn coords(&self) -> Vec<f64> {
        match self {
            Value::Real(t) => t.data.clone(),
            Value::Complex(t) => {
                let mut v = t.re.data.clone();
                v.extend_from_slice(&t.im.data);
                v
            }
        }
    }

    pub(crate) fn coord_mut(&mut self, i: usize) -> &mut f64 {
        match self {
            Value::Real(t) => &mut t.data[i],
            Value::Complex(t) => {
                let n = t.re.data.len();
                if i < n {
                    &mut t.re.data[i]
                } else {
                    &mut t.im.data[i - n]
                }
            }
        }
    }
}

impl From<RealTensor> for Value {
    fn from(t: RealTensor) -> Self {
        Value::Real(t)
    }
}

impl From<ComplexTensor> for Value {
    fn from(t: ComplexTensor) -> Self {
        Value::Complex(t)
    }
}
