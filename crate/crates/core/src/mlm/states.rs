use rand::seq::SliceRandom;

use super::interchange::{StateBundle, TokenRef};
use super::model::EncoderModel;
use super::vocab::{tokenize_words, Vocabulary};
use crate::corpus::TaggedSentence;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::rng;

/// Encode a tagged sentence. With `mask_rate > 0`, words are also split
/// into `ceil(1 / mask_rate)` disjoint groups; each group is masked in one
/// extra pass and every piece of a masked word receives that word's MASK
/// state in `mask_states`.
pub fn sentence_bundle(
    model: &EncoderModel,
    vocab: &Vocabulary,
    sentence: &TaggedSentence,
    mask_rate: f64,
    seed: u64,
) -> Result<StateBundle> {
    if sentence.words.len() != sentence.tags.len() {
        return Err(Error::InvalidParameter("word and tag counts differ".into()));
    }
    let tok = tokenize_words(&sentence.words, vocab)?;
    let states = model.encode(&tok.ids)?;
    let lang = tok.word_of.iter().map(|&w| sentence.tags[w].clone()).collect();
    let tokens = tok.ids.iter().map(|&id| TokenRef::Id(id)).collect();
    let mask_states = if mask_rate > 0.0 {
        let words = tok.word_count();
        let groups = ((1.0 / mask_rate.min(1.0)).ceil() as usize).clamp(1, words);
        let mut order: Vec<usize> = (0..words).collect();
        order.shuffle(&mut rng::seeded(seed, 0x5a7e));
        let mut variants: Vec<Vec<usize>> = vec![Vec::new(); groups];
        for (k, w) in order.into_iter().enumerate() {
            variants[k % groups].push(w);
        }
        let masked: Vec<(Vec<usize>, Vec<usize>)> = variants
            .iter_mut()
            .map(|g| {
                g.sort_unstable();
                tok.mask_words(g).expect("sorted distinct words")
            })
            .collect();
        let seqs: Vec<&[usize]> = masked.iter().map(|(ids, _)| ids.as_slice()).collect();
        let encoded = model.encode_many(&seqs)?;
        let mut out = EmbeddingMatrix::zeros(tok.ids.len(), model.dim());
        for ((group, (_, positions)), enc) in variants.iter().zip(&masked).zip(&encoded) {
            for (&w, &pos) in group.iter().zip(positions) {
                for p in tok.pieces_of(w) {
                    out.row_mut(p).assign(&enc.row(pos));
                }
            }
        }
        Some(out)
    } else {
        None
    };
    Ok(StateBundle {
        tokens,
        lang,
        states,
        mask_states,
    })
}

pub fn corpus_bundles(
    model: &EncoderModel,
    vocab: &Vocabulary,
    sentences: &[TaggedSentence],
    mask_rate: f64,
    seed: u64,
) -> Result<Vec<StateBundle>> {
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| sentence_bundle(model, vocab, s, mask_rate, rng::derive(seed, i as u64)))
        .collect()
}
