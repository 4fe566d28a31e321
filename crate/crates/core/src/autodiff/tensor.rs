use std::fmt::Debug;

use ndarray::LinalgScalar;
use num_traits::Float;
use thiserror::Error;

/// Floating point element type usable on a tape. Training runs in `f32`;
/// gradient checks run in `f64`.
pub trait Real: Float + LinalgScalar + Debug + Default + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidProbability(f64),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss is not connected to any gradient-tracked input")]
    EmptyTape,
    #[error("tape was already backpropagated")]
    AlreadyBackpropagated,
    #[error("{op}: index {index} out of range for {len} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
}

/// Dense row-major array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Real> Dense<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn scalar(x: F) -> Self {
        Self {
            shape: vec![],
            data: vec![x],
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data: data.iter().map(|&x| F::of(x)).collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows and columns, treating 1-D as a single row and scalars as 1x1.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => {
                let cols = *self.shape.last().unwrap();
                (self.data.len() / cols.max(1), cols)
            }
        }
    }

    pub fn row(&self, i: usize) -> &[F] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.f64()).collect()
    }

    pub fn cast<G: Real>(&self) -> Dense<G> {
        Dense {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| G::of(x.f64())).collect(),
        }
    }
}

/// A named model parameter: 32-bit values, optional gradient and a
/// trainable flag. Frozen tensors never accumulate gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
    pub grad: Option<Vec<f32>>,
    pub trainable: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f32>) -> Result<Self, TensorError> {
        let d = Dense::new(shape, values)?;
        Ok(Self {
            shape: d.shape,
            values: d.data,
            grad: None,
            trainable: true,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; shape.iter().product()],
            grad: None,
            trainable: true,
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        Self {
            values: vec![value; shape.iter().product()],
            ..Self::zeros(shape)
        }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn as_dense<F: Real>(&self) -> Dense<F> {
        Dense {
            shape: self.shape.clone(),
            data: self.values.iter().map(|&x| F::of(x as f64)).collect(),
        }
    }

    /// Adds `g` into the gradient buffer; no-op for frozen tensors.
    pub fn accumulate_grad<F: Real>(&mut self, g: &[F]) {
        if !self.trainable {
            return;
        }
        debug_assert_eq!(g.len(), self.values.len());
        let buf = self.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (b, &x) in buf.iter_mut().zip(g) {
            *b += x.f64() as f32;
        }
    }
}
