//! The toy masked language model: vocabulary, encoder, training, state
//! extraction and the interchange format for externally computed states.

pub mod interchange;
pub mod model;
pub mod states;
pub mod train;
pub mod vocab;

pub use interchange::{
    bundles_to_dataset, check_compatible, export_head, export_states, import_head, import_states, StateBundle,
    TokenRef,
};
pub use model::{EncoderModel, ModelConfig, OutputHead};
pub use states::{corpus_bundles, sentence_bundle};
pub use train::{make_probes, topk_accuracy, train_toy_mlm, MaskedProbe, TrainConfig, TrainReport};
pub use vocab::{tokenize, tokenize_words, Tokenized, Vocabulary, MASK, PAD, UNK};
