//! Linear language-ID classifier over token states.
//!
//! Training is deterministic mini-batch sub-gradient descent on the
//! L2-regularized hinge loss, i.e. a linear max-margin classifier.

use std::fmt;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{check_dim, Error, Result};
use crate::projection::dot;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    L1,
    L2,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::L1 => Side::L2,
            Side::L2 => Side::L1,
        }
    }

    /// +1 for L1, -1 for L2.
    pub fn target(self) -> f64 {
        match self {
            Side::L1 => 1.0,
            Side::L2 => -1.0,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::L1 => f.write_str("L1"),
            Side::L2 => f.write_str("L2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageLabel {
    pub side: Side,
    pub display_name: String,
}

/// Token states with their language side.
///
/// `mask_embeddings`, when present, holds for each row the encoder state
/// obtained with that token masked out; [`mask_for_training`] swaps those
/// in for the flagged rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDataset {
    pub embeddings: EmbeddingMatrix,
    pub labels: Vec<Side>,
    pub masked_flags: Vec<bool>,
    pub mask_embeddings: Option<EmbeddingMatrix>,
    pub label_names: [String; 2],
}

impl TokenDataset {
    pub fn new(embeddings: EmbeddingMatrix, labels: Vec<Side>) -> Result<Self> {
        if embeddings.nrows() != labels.len() {
            return Err(Error::InvalidParameter(format!(
                "{} rows but {} labels",
                embeddings.nrows(),
                labels.len()
            )));
        }
        let n = labels.len();
        Ok(Self {
            embeddings,
            labels,
            masked_flags: vec![false; n],
            mask_embeddings: None,
            label_names: ["L1".to_string(), "L2".to_string()],
        })
    }

    pub fn with_mask_embeddings(mut self, mask: EmbeddingMatrix) -> Result<Self> {
        check_dim(self.embeddings.dim(), mask.dim())?;
        if mask.nrows() != self.len() {
            return Err(Error::InvalidParameter("mask state count differs from rows".into()));
        }
        self.mask_embeddings = Some(mask);
        Ok(self)
    }

    pub fn with_label_names(mut self, l1: impl Into<String>, l2: impl Into<String>) -> Self {
        self.label_names = [l1.into(), l2.into()];
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn label(&self, i: usize) -> LanguageLabel {
        let side = self.labels[i];
        LanguageLabel {
            side,
            display_name: self.name_of(side).to_string(),
        }
    }

    pub fn name_of(&self, side: Side) -> &str {
        match side {
            Side::L1 => &self.label_names[0],
            Side::L2 => &self.label_names[1],
        }
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let l1 = self.labels.iter().filter(|&&s| s == Side::L1).count();
        (l1, self.labels.len() - l1)
    }

    /// Same labels and flags with replaced embeddings (e.g. after projection).
    pub fn with_embeddings(&self, embeddings: EmbeddingMatrix) -> Self {
        assert_eq!(embeddings.nrows(), self.len());
        Self {
            embeddings,
            labels: self.labels.clone(),
            masked_flags: self.masked_flags.clone(),
            mask_embeddings: self.mask_embeddings.clone(),
            label_names: self.label_names.clone(),
        }
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            embeddings: self.embeddings.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            masked_flags: rows.iter().map(|&i| self.masked_flags[i]).collect(),
            mask_embeddings: self.mask_embeddings.as_ref().map(|m| m.select_rows(rows)),
            label_names: self.label_names.clone(),
        }
    }

    /// Flip every label.
    pub fn flipped(&self) -> Self {
        let mut out = self.clone();
        out.labels.iter_mut().for_each(|s| *s = s.opposite());
        out
    }
}

/// Equal numbers of L1 and L2 rows, drawn without replacement.
pub fn balanced_sample(pool: &TokenDataset, seed: u64) -> Result<TokenDataset> {
    let (l1, l2): (Vec<usize>, Vec<usize>) =
        (0..pool.len()).partition(|&i| pool.labels[i] == Side::L1);
    if l1.is_empty() {
        return Err(Error::EmptyClass("L1"));
    }
    if l2.is_empty() {
        return Err(Error::EmptyClass("L2"));
    }
    let per_class = l1.len().min(l2.len());
    let mut rng = rng::seeded(seed, 0xba1);
    let mut rows: Vec<usize> = Vec::with_capacity(2 * per_class);
    for class in [&l1, &l2] {
        rows.extend(
            index::sample(&mut rng, class.len(), per_class)
                .into_iter()
                .map(|k| class[k]),
        );
    }
    rows.sort_unstable();
    Ok(pool.select(&rows))
}

/// Flag `round(rate * n)` rows and replace them by their masked-input state
/// when the dataset carries one. Any previous flags are cleared.
pub fn mask_for_training(tokens: &TokenDataset, rate: f64, seed: u64) -> TokenDataset {
    let rate = rate.clamp(0.0, 1.0);
    let n = tokens.len();
    let count = ((rate * n as f64).round() as usize).min(n);
    let mut rng = rng::seeded(seed, 0x3a5c);
    let mut out = tokens.clone();
    out.masked_flags = vec![false; n];
    for i in index::sample(&mut rng, n, count) {
        out.masked_flags[i] = true;
        if let Some(mask) = &tokens.mask_embeddings {
            out.embeddings.row_mut(i).assign(&mask.row(i));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub regularization: f64,
    pub epochs: usize,
    /// Initial step size; epoch `t` (0-based) uses `learning_rate / (1 + t)`.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            regularization: 1e-3,
            epochs: 200,
            learning_rate: 0.1,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub dim: usize,
    pub direction: Vec<f64>,
    pub bias: f64,
    pub train_accuracy: f64,
    pub seed: u64,
}

impl LinearClassifier {
    pub fn score(&self, h: &[f64]) -> f64 {
        dot(&self.direction, h) + self.bias
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: LinearClassifier = serde_json::from_str(text)?;
        check_dim(c.dim, c.direction.len())?;
        Ok(c)
    }
}

pub fn train_classifier(data: &TokenDataset, config: &ClassifierConfig) -> Result<LinearClassifier> {
    let (l1, l2) = data.class_counts();
    if l1 == 0 {
        return Err(Error::EmptyClass("L1"));
    }
    if l2 == 0 {
        return Err(Error::EmptyClass("L2"));
    }
    if let Some(row) = data.embeddings.first_non_finite_row() {
        return Err(Error::NonFiniteEmbedding { row });
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidParameter("batch_size must be positive".into()));
    }

    let dim = data.dim();
    let x = data.embeddings.array();
    let y: Vec<f64> = data.labels.iter().map(|s| s.target()).collect();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut grad = vec![0.0; dim];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = rng::seeded(config.seed, 0x5f3);

    for epoch in 0..config.epochs {
        let lr = config.learning_rate / (1.0 + epoch as f64);
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for &i in batch {
                let row = x.row(i);
                let row = row.as_slice().expect("standard layout");
                let margin = y[i] * (dot(&w, row) + b);
                if margin < 1.0 {
                    grad.iter_mut().zip(row).for_each(|(g, v)| *g -= y[i] * v);
                    grad_b -= y[i];
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for (wj, gj) in w.iter_mut().zip(&grad) {
                *wj -= lr * (gj * scale + config.regularization * *wj);
            }
            b -= lr * grad_b * scale;
        }
    }

    let mut classifier = LinearClassifier {
        dim,
        direction: w,
        bias: b,
        train_accuracy: 0.0,
        seed: config.seed,
    };
    classifier.train_accuracy = accuracy(&classifier, data)?;
    Ok(classifier)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: Side,
    pub raw_score: f64,
    /// The score was exactly zero; reported as L2.
    pub boundary: bool,
}

pub fn predict_side(c: &LinearClassifier, h: &[f64]) -> Result<Prediction> {
    check_dim(c.dim, h.len())?;
    let raw_score = c.score(h);
    Ok(Prediction {
        label: if raw_score > 0.0 { Side::L1 } else { Side::L2 },
        raw_score,
        boundary: raw_score == 0.0,
    })
}

pub fn accuracy(c: &LinearClassifier, data: &TokenDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dim(c.dim, data.dim())?;
    let correct = data
        .embeddings
        .rows()
        .zip(&data.labels)
        .filter(|(row, &side)| {
            let predicted = if c.score(row.as_slice().expect("standard layout")) > 0.0 {
                Side::L1
            } else {
                Side::L2
            };
            predicted == side
        })
        .count();
    Ok(correct as f64 / data.len() as f64)
}
