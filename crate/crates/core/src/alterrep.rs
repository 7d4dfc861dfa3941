//! Counterfactual representations: keep the nullspace part of a state and
//! re-add its rowspace components with a common sign and magnitude,
//!
//! ```text
//! h' = h_N + alpha * sum_i S_i * h_{w_i}
//! ```
//!
//! where `S_i` is the sign of `w_i . h`. Positive `alpha` lands every state
//! on the L1 side of all classifiers, negative `alpha` on the L2 side, and
//! `alpha = 0` leaves only the nullspace component (amnesic probing).

use serde::{Deserialize, Serialize};

use crate::classifier::Side;
use crate::embedding::EmbeddingMatrix;
use crate::error::{check_dim, Error, Result};
use crate::projection::{split, DirectionBasis, ProjectionSplit};

/// Default push magnitude.
pub const DEFAULT_ALPHA: f64 = 3.0;

/// Magnitudes used for alpha sweeps unless configured otherwise.
pub const DEFAULT_ALPHA_GRID: [f64; 6] = [1.0, 2.0, 3.0, 4.0, 6.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushSpec {
    pub alpha: f64,
    pub target_side: Side,
}

impl PushSpec {
    /// `alpha` and `target_side` must agree: positive pushes go to L1,
    /// negative ones to L2. Zero is compatible with either side.
    pub fn new(alpha: f64, target_side: Side) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha {alpha} is not finite")));
        }
        let consistent = match target_side {
            Side::L1 => alpha >= 0.0,
            Side::L2 => alpha <= 0.0,
        };
        if !consistent {
            return Err(Error::InvalidParameter(format!(
                "alpha {alpha} does not push toward {target_side}"
            )));
        }
        Ok(Self { alpha, target_side })
    }

    /// Push toward `side` with magnitude `|magnitude|`.
    pub fn toward(side: Side, magnitude: f64) -> Result<Self> {
        Self::new(side.target() * magnitude.abs(), side)
    }

    /// The amnesic (alpha = 0) intervention.
    pub fn amnesic() -> Self {
        Self {
            alpha: 0.0,
            target_side: Side::L1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlteredEmbedding {
    pub original: Vec<f64>,
    pub split: ProjectionSplit,
    pub altered: Vec<f64>,
    pub push: PushSpec,
}

pub fn alter(h: &[f64], basis: &DirectionBasis, push: &PushSpec) -> Result<AlteredEmbedding> {
    let split = split(h, basis)?;
    let altered = altered_from_split(&split, push.alpha);
    Ok(AlteredEmbedding {
        original: h.to_vec(),
        split,
        altered,
        push: *push,
    })
}

fn altered_from_split(split: &ProjectionSplit, alpha: f64) -> Vec<f64> {
    let mut out = split.null_component.clone();
    for d in &split.per_direction {
        let coef = alpha * f64::from(d.side_sign);
        if coef != 0.0 {
            out.iter_mut().zip(&d.component).for_each(|(o, c)| *o += coef * c);
        }
    }
    out
}

/// Replace the listed rows by their altered version; other rows are copied
/// untouched.
pub fn alter_batch(
    states: &EmbeddingMatrix,
    positions: &[usize],
    basis: &DirectionBasis,
    push: &PushSpec,
) -> Result<EmbeddingMatrix> {
    check_dim(basis.dim(), states.dim())?;
    let rows = states.nrows();
    if let Some(&index) = positions.iter().find(|&&p| p >= rows) {
        return Err(Error::IndexOutOfRange { index, rows });
    }
    let mut out = states.clone();
    for &p in positions {
        let row = states.row(p);
        let altered = alter(row.as_slice().expect("standard layout"), basis, push)?.altered;
        out.row_mut(p)
            .as_slice_mut()
            .expect("standard layout")
            .copy_from_slice(&altered);
    }
    Ok(out)
}

/// Alter every row.
pub fn alter_all(states: &EmbeddingMatrix, basis: &DirectionBasis, push: &PushSpec) -> Result<EmbeddingMatrix> {
    let positions: Vec<usize> = (0..states.nrows()).collect();
    alter_batch(states, &positions, basis, push)
}
