use crate::error::{Error, Result};

/// Dense row-major `f64` array.
///
/// Rank 0 and rank 1 tensors are treated as a single row by the row-wise
/// operations on the tape; rank 2 tensors are `rows × cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Gradient buffer filled by [`Tape::backward`](super::Tape::backward).
    pub grad: Option<Vec<f64>>,
    /// Index of the tape node holding this value, if it lives on a tape.
    pub tape_id: Option<usize>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension { op: "tensor", lhs: shape, rhs: vec![data.len()] });
        }
        Ok(Self { shape, data, grad: None, tape_id: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n], grad: None, tape_id: None }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value], grad: None, tape_id: None }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data, grad: None, tape_id: None }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension { op: "from_rows", lhs: vec![cols], rhs: vec![r.len()] });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` under the row-wise view.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => {
                let cols = *self.shape.last().unwrap();
                let rows = self.shape[..self.shape.len() - 1].iter().product();
                (rows, cols)
            }
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn with_shape_of(&self, data: Vec<f64>) -> Self {
        Self { shape: self.shape.clone(), data, grad: None, tape_id: None }
    }
}
