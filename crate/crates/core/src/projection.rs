//! Orthonormal direction bases and the nullspace/rowspace decomposition of
//! embeddings with respect to them.
//!
//! Every function here is pure; arithmetic is carried out in `f64`.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{check_dim, Error, Result};

/// Residual norm (relative to the input norm) below which a direction is
/// treated as linearly dependent on the ones before it.
pub const DEPENDENCE_TOLERANCE: f64 = 1e-10;

/// Inputs with a smaller norm are never turned into directions.
pub const MIN_DIRECTION_NORM: f64 = 1e-12;

/// Ordered orthonormal directions spanning the classifier rowspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionBasis {
    dim: usize,
    directions: Vec<Vec<f64>>,
}

impl DirectionBasis {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            directions: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    /// The basis made of the first `count` directions.
    pub fn truncated(&self, count: usize) -> Self {
        Self {
            dim: self.dim,
            directions: self.directions.iter().take(count).cloned().collect(),
        }
    }

    /// Orthonormalize `raw` against the current directions and append it.
    /// Returns `false` (leaving the basis unchanged) when it is dependent.
    pub fn try_push(&mut self, raw: &[f64]) -> Result<bool> {
        check_dim(self.dim, raw.len())?;
        if self.directions.len() == self.dim {
            return Ok(false);
        }
        let norm = l2(raw);
        if !(norm > MIN_DIRECTION_NORM) {
            return Ok(false);
        }
        let mut residual = raw.to_vec();
        // Modified Gram-Schmidt, applied twice.
        for _ in 0..2 {
            for q in &self.directions {
                let coef = dot(q, &residual);
                axpy(-coef, q, &mut residual);
            }
        }
        let rnorm = l2(&residual);
        if rnorm < DEPENDENCE_TOLERANCE * norm {
            return Ok(false);
        }
        residual.iter_mut().for_each(|x| *x /= rnorm);
        self.directions.push(residual);
        Ok(true)
    }

    /// Rebuild from stored directions, checking the orthonormality invariant.
    pub fn from_orthonormal(dim: usize, directions: Vec<Vec<f64>>) -> Result<Self> {
        for (i, d) in directions.iter().enumerate() {
            check_dim(dim, d.len())?;
            if (l2(d) - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!("direction {i} is not unit norm")));
            }
            for (j, e) in directions[..i].iter().enumerate() {
                if dot(d, e).abs() > 1e-7 {
                    return Err(Error::InvalidParameter(format!(
                        "directions {j} and {i} are not orthogonal"
                    )));
                }
            }
        }
        if directions.len() > dim {
            return Err(Error::InvalidParameter("more directions than dimensions".into()));
        }
        Ok(Self { dim, directions })
    }
}

/// Modified Gram-Schmidt over `raw_directions`, dropping dependent vectors
/// and keeping survivors in input order.
pub fn orthonormalize<V: AsRef<[f64]>>(raw_directions: &[V]) -> Result<DirectionBasis> {
    let dim = raw_directions
        .first()
        .map(|v| v.as_ref().len())
        .ok_or(Error::AllDirectionsDegenerate)?;
    let mut basis = DirectionBasis::empty(dim);
    for v in raw_directions {
        basis.try_push(v.as_ref())?;
    }
    if basis.is_empty() {
        return Err(Error::AllDirectionsDegenerate);
    }
    Ok(basis)
}

/// `h^{w_i}` together with the sign `S` and the raw score `w_i . h`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalComponent {
    pub component: Vec<f64>,
    /// +1, -1, or 0 when the raw score is exactly zero.
    pub side_sign: i8,
    pub raw_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSplit {
    pub null_component: Vec<f64>,
    pub rowspace_component: Vec<f64>,
    pub per_direction: Vec<DirectionalComponent>,
}

pub fn split(h: &[f64], basis: &DirectionBasis) -> Result<ProjectionSplit> {
    check_dim(basis.dim, h.len())?;
    let mut rowspace = vec![0.0; h.len()];
    let per_direction = basis
        .directions
        .iter()
        .map(|w| {
            let raw_score = dot(w, h);
            let component: Vec<f64> = w.iter().map(|&x| raw_score * x).collect();
            rowspace.iter_mut().zip(&component).for_each(|(r, c)| *r += c);
            DirectionalComponent {
                component,
                side_sign: sign(raw_score),
                raw_score,
            }
        })
        .collect();
    let null_component = h.iter().zip(&rowspace).map(|(x, r)| x - r).collect();
    Ok(ProjectionSplit {
        null_component,
        rowspace_component: rowspace,
        per_direction,
    })
}

/// Row-wise nullspace projection.
pub fn project_nullspace_batch(
    matrix: &EmbeddingMatrix,
    basis: &DirectionBasis,
) -> Result<EmbeddingMatrix> {
    check_dim(basis.dim, matrix.dim())?;
    let mut out = matrix.clone();
    for i in 0..out.nrows() {
        let mut row = out.row_mut(i);
        let slice = row.as_slice_mut().expect("standard layout");
        let null = null_component(slice, basis);
        slice.copy_from_slice(&null);
    }
    Ok(out)
}

/// `h - sum_i (w_i . h) w_i`, identical arithmetic to [`split`].
pub(crate) fn null_component(h: &[f64], basis: &DirectionBasis) -> Vec<f64> {
    let mut rowspace = vec![0.0; h.len()];
    for w in &basis.directions {
        let s = dot(w, h);
        rowspace.iter_mut().zip(w).for_each(|(r, x)| *r += s * x);
    }
    h.iter().zip(&rowspace).map(|(x, r)| x - r).collect()
}

pub(crate) fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}
