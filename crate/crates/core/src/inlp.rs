//! Iterative nullspace projection: train a language-ID classifier, add its
//! direction to the basis, project the data onto the basis nullspace and
//! repeat.

use serde::{Deserialize, Serialize};

use crate::classifier::{accuracy, mask_for_training, train_classifier, ClassifierConfig, LinearClassifier, TokenDataset};
use crate::error::{check_dim, Error, Result};
use crate::projection::{project_nullspace_batch, DirectionBasis};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InlpConfig {
    pub iterations: usize,
    pub classifier: ClassifierConfig,
    pub masking_rate: f64,
    pub seed: u64,
}

impl Default for InlpConfig {
    fn default() -> Self {
        Self {
            iterations: 4,
            classifier: ClassifierConfig::default(),
            masking_rate: 0.15,
            seed: 0,
        }
    }
}

impl InlpConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.masking_rate) {
            return Err(Error::InvalidParameter(format!(
                "masking_rate {} outside [0, 1]",
                self.masking_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InlpResult {
    pub basis: DirectionBasis,
    pub classifiers: Vec<LinearClassifier>,
    /// Held-out accuracy of each iteration's classifier, measured on
    /// held-out states projected with the directions learned before it.
    pub accuracy_trace: Vec<f64>,
    /// Iterations whose direction collapsed under orthonormalization.
    pub degenerate: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct Bundle {
    dim: usize,
    directions: Vec<Vec<f64>>,
    classifiers: Vec<LinearClassifier>,
    accuracy_trace: Vec<f64>,
    #[serde(default)]
    degenerate: Vec<bool>,
}

impl InlpResult {
    pub fn empty(dim: usize) -> Self {
        Self {
            basis: DirectionBasis::empty(dim),
            classifiers: Vec::new(),
            accuracy_trace: Vec::new(),
            degenerate: Vec::new(),
        }
    }

    pub fn iterations(&self) -> usize {
        self.classifiers.len()
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Basis built from the first `iterations` classifiers only.
    pub fn basis_after(&self, iterations: usize) -> DirectionBasis {
        let kept = self.degenerate.iter().take(iterations).filter(|&&d| !d).count();
        self.basis.truncated(kept)
    }

    pub fn to_json(&self) -> Result<String> {
        let bundle = Bundle {
            dim: self.dim(),
            directions: self.basis.directions().to_vec(),
            classifiers: self.classifiers.clone(),
            accuracy_trace: self.accuracy_trace.clone(),
            degenerate: self.degenerate.clone(),
        };
        Ok(serde_json::to_string(&bundle)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: Bundle = serde_json::from_str(text)?;
        let basis = DirectionBasis::from_orthonormal(b.dim, b.directions)?;
        for c in &b.classifiers {
            check_dim(b.dim, c.direction.len())?;
        }
        let degenerate = if b.degenerate.is_empty() {
            vec![false; b.classifiers.len()]
        } else {
            b.degenerate
        };
        if degenerate.len() != b.classifiers.len() || b.accuracy_trace.len() != b.classifiers.len() {
            return Err(Error::InvalidParameter("INLP bundle lengths disagree".into()));
        }
        Ok(Self {
            basis,
            classifiers: b.classifiers,
            accuracy_trace: b.accuracy_trace,
            degenerate,
        })
    }
}

/// Append exactly one INLP iteration to `state`.
pub fn step_inlp(
    state: &InlpResult,
    data: &TokenDataset,
    heldout: &TokenDataset,
    config: &InlpConfig,
) -> Result<InlpResult> {
    config.validate()?;
    let dim = state.dim();
    check_dim(dim, data.dim())?;
    check_dim(dim, heldout.dim())?;
    let iteration = state.iterations();
    if iteration >= dim {
        return Err(Error::IterationsExceedDim {
            requested: iteration + 1,
            dim,
        });
    }

    let mask_seed = rng::derive(config.seed, iteration as u64);
    let masked = mask_for_training(data, config.masking_rate, mask_seed);
    let projected = masked.with_embeddings(project_nullspace_batch(&masked.embeddings, &state.basis)?);
    let classifier_config = ClassifierConfig {
        seed: rng::derive(config.classifier.seed ^ config.seed, 0x1000 + iteration as u64),
        ..config.classifier.clone()
    };
    let classifier = train_classifier(&projected, &classifier_config)?;

    let heldout_projected =
        heldout.with_embeddings(project_nullspace_batch(&heldout.embeddings, &state.basis)?);
    let heldout_accuracy = accuracy(&classifier, &heldout_projected)?;

    let mut next = state.clone();
    let added = next.basis.try_push(&classifier.direction)?;
    if !added {
        log::warn!("INLP iteration {iteration}: direction is degenerate and was skipped");
    }
    log::debug!(
        "INLP iteration {iteration}: train acc {:.4}, held-out acc {heldout_accuracy:.4}",
        classifier.train_accuracy
    );
    next.classifiers.push(classifier);
    next.accuracy_trace.push(heldout_accuracy);
    next.degenerate.push(!added);
    Ok(next)
}

pub fn run_inlp(data: &TokenDataset, heldout: &TokenDataset, config: &InlpConfig) -> Result<InlpResult> {
    config.validate()?;
    let dim = data.dim();
    if config.iterations > dim {
        return Err(Error::IterationsExceedDim {
            requested: config.iterations,
            dim,
        });
    }
    let mut state = InlpResult::empty(dim);
    for _ in 0..config.iterations {
        state = step_inlp(&state, data, heldout, config)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Side;
    use crate::embedding::EmbeddingMatrix;
    use crate::projection::{dot, l2};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn single_signal(n: usize, dim: usize, seed: u64) -> TokenDataset {
        let mut rng = rng::seeded(seed, 2);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n {
            let side = if i % 2 == 0 { Side::L1 } else { Side::L2 };
            let mut r: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            r[0] += 3.0 * side.target();
            rows.push(r);
            labels.push(side);
        }
        TokenDataset::new(EmbeddingMatrix::from_rows(&rows).unwrap(), labels).unwrap()
    }

    fn config(iterations: usize) -> InlpConfig {
        InlpConfig {
            iterations,
            classifier: ClassifierConfig { epochs: 40, regularization: 1.0, ..Default::default() },
            masking_rate: 0.0,
            seed: 5,
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let data = single_signal(50, 4, 1);
        let r = run_inlp(&data, &data, &config(0)).unwrap();
        assert!(r.basis.is_empty());
        assert!(r.accuracy_trace.is_empty());
    }

    #[test]
    fn second_iteration_finds_nothing_on_single_signal_data() {
        let data = single_signal(500, 16, 1);
        let heldout = single_signal(500, 16, 2);
        let r = run_inlp(&data, &heldout, &config(2)).unwrap();
        assert!(r.accuracy_trace[0] >= 0.99, "{:?}", r.accuracy_trace);
        assert!(r.accuracy_trace[1] <= 0.60, "{:?}", r.accuracy_trace);
    }

    #[test]
    fn full_rank_erasure_zeroes_the_data() {
        let dim = 4;
        let data = single_signal(100, dim, 3);
        let r = run_inlp(&data, &data, &config(dim)).unwrap();
        assert_eq!(r.basis.len(), dim);
        let projected = project_nullspace_batch(&data.embeddings, &r.basis).unwrap();
        assert!(projected.array().iter().all(|x| x.abs() < 1e-9));
        assert!(r.accuracy_trace[1..].iter().all(|&a| a <= 0.6), "{:?}", r.accuracy_trace);
        assert!(matches!(
            run_inlp(&data, &data, &config(dim + 1)),
            Err(Error::IterationsExceedDim { .. })
        ));
        assert!(matches!(
            step_inlp(&r, &data, &data, &config(1)),
            Err(Error::IterationsExceedDim { .. })
        ));
    }

    #[test]
    fn steps_compose_to_run() {
        let data = single_signal(100, 6, 4);
        let mut cfg = config(2);
        cfg.masking_rate = 0.15;
        let one = step_inlp(&InlpResult::empty(6), &data, &data, &cfg).unwrap();
        assert_eq!(one, run_inlp(&data, &data, &InlpConfig { iterations: 1, ..cfg.clone() }).unwrap());
        let two = step_inlp(&one, &data, &data, &cfg).unwrap();
        assert_eq!(two, run_inlp(&data, &data, &cfg).unwrap());
    }

    #[test]
    fn learned_directions_vanish_on_projected_states() {
        let data = single_signal(200, 8, 6);
        let r = run_inlp(&data, &data, &config(3)).unwrap();
        let projected = project_nullspace_batch(&data.embeddings, &r.basis).unwrap();
        for (h, hp) in data.embeddings.rows().zip(projected.rows()) {
            let norm = l2(h.as_slice().unwrap());
            for c in r.classifiers.iter() {
                let unit: Vec<f64> = c.direction.iter().map(|x| x / l2(&c.direction)).collect();
                assert!(dot(&unit, hp.as_slice().unwrap()).abs() <= 1e-6 * norm);
            }
        }
    }

    #[test]
    fn bundle_round_trip() {
        let data = single_signal(100, 5, 8);
        let r = run_inlp(&data, &data, &config(2)).unwrap();
        let text = r.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["dim", "directions", "classifiers", "accuracy_trace"] {
            assert!(v.get(key).is_some());
        }
        assert_eq!(InlpResult::from_json(&text).unwrap(), r);
    }
}
