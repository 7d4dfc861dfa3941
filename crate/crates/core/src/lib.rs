//! Language-identity probing for masked language models.
//!
//! The crate trains linear language-ID classifiers on contextual token
//! states, removes the information they use by iterative nullspace
//! projection, and re-injects it with a chosen sign and magnitude
//! (AlterRep) to measure how masked-token predictions shift. A small
//! trainable bilingual encoder and a synthetic-language generator make the
//! whole pipeline runnable on a laptop; externally computed states can be
//! brought in through a JSON-lines interchange format.
//!
//! Module map:
//!
//! - [`projection`]: orthonormal direction bases and nullspace/rowspace splits
//! - [`classifier`]: hinge-loss linear language-ID classifier and token datasets
//! - [`inlp`]: the iterative nullspace projection loop
//! - [`alterrep`]: counterfactual pushes toward one side of the classifiers
//! - [`mlm`]: toy encoder, vocabulary, training and the interchange format
//! - [`corpus`]: synthetic languages, dictionaries and code-mixing
//! - [`eval`]: candidate construction, shift scoring and aggregate metrics
//! - [`pipeline`]: config-driven experiment stages and report emission

pub mod alterrep;
pub mod classifier;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod inlp;
pub mod mlm;
pub mod pipeline;
pub mod projection;
mod rng;

pub use alterrep::{alter, alter_batch, AlteredEmbedding, PushSpec};
pub use classifier::{
    accuracy, balanced_sample, mask_for_training, predict_side, train_classifier,
    ClassifierConfig, LanguageLabel, LinearClassifier, Prediction, Side, TokenDataset,
};
pub use embedding::EmbeddingMatrix;
pub use error::{Error, Result};
pub use inlp::{run_inlp, step_inlp, InlpConfig, InlpResult};
pub use projection::{
    orthonormalize, project_nullspace_batch, split, DirectionBasis, DirectionalComponent,
    ProjectionSplit,
};
