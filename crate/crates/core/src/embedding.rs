//! Row-major matrices of per-token contextual states.

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row per token, `dim` columns. Values are kept in 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix(Array2<f64>);

impl EmbeddingMatrix {
    pub fn new(data: Array2<f64>) -> Self {
        Self(data)
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self(Array2::zeros((rows, dim)))
    }

    /// Build from equal-length rows. An empty list yields a `0 x dim` matrix
    /// only through [`EmbeddingMatrix::zeros`]; here it is an error.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyDataset)?;
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            crate::error::check_dim(dim, row.len())?;
            data.extend_from_slice(row);
        }
        let array = Array2::from_shape_vec((rows.len(), dim), data)
            .expect("row lengths were checked");
        Ok(Self(array))
    }

    pub fn from_f32_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let widened: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.as_ref().iter().map(|&x| f64::from(x)).collect())
            .collect();
        Self::from_rows(&widened)
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn row_mut(&mut self, i: usize) -> ArrayViewMut1<'_, f64> {
        self.0.row_mut(i)
    }

    pub fn rows(&self) -> impl Iterator<Item = ArrayView1<'_, f64>> {
        self.0.rows().into_iter()
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self(self.0.select(Axis(0), indices))
    }

    /// Stack `other` below `self`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        crate::error::check_dim(self.dim(), other.dim())?;
        let stacked = ndarray::concatenate(Axis(0), &[self.0.view(), other.0.view()])
            .expect("column counts were checked");
        Ok(Self(stacked))
    }

    /// First row containing NaN or infinity.
    pub fn first_non_finite_row(&self) -> Option<usize> {
        self.0
            .rows()
            .into_iter()
            .position(|r| r.iter().any(|x| !x.is_finite()))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

impl From<Array2<f64>> for EmbeddingMatrix {
    fn from(data: Array2<f64>) -> Self {
        Self(data)
    }
}
