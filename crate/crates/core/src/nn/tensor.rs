use crate::error::{Error, Result};

/// Dense row-major array of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("tensor shape {shape:?} must be non-empty with positive dims")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                context: "tensor",
                expected: format!("{n} values for shape {shape:?}"),
                got: format!("{}", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Tensor { shape, data })
    }

    /// A `[rows, cols]` matrix.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
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

    /// Size of the trailing dimension.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    /// Number of rows when viewed as `[len / last_dim, last_dim]`.
    pub fn rows(&self) -> usize {
        self.data.len() / self.last_dim()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.last_dim();
        &self.data[i * c..(i + 1) * c]
    }
}
