use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::Language;
use crate::error::{Error, Result};
use crate::rng;

pub const PAD: usize = 0;
pub const MASK: usize = 1;
pub const UNK: usize = 2;

const SPECIALS: [&str; 3] = ["[PAD]", "[MASK]", "[UNK]"];

/// Word-piece inventory with the per-word piece expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    entries: Vec<String>,
    word_to_pieces: BTreeMap<String, Vec<usize>>,
    /// `None` for the special pieces.
    language_of: Vec<Option<String>>,
    /// Surface words per language tag, in inventory order.
    words_by_language: BTreeMap<String, Vec<String>>,
}

/// Piece ids of a sentence plus the word each piece belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<usize>,
    /// `word_of[p]` is the index of the word that produced piece `p`.
    pub word_of: Vec<usize>,
    /// Start offset of each word in `ids`; one entry per word.
    pub word_starts: Vec<usize>,
}

impl Tokenized {
    pub fn word_count(&self) -> usize {
        self.word_starts.len()
    }

    pub fn pieces_of(&self, word: usize) -> std::ops::Range<usize> {
        let end = self.word_starts.get(word + 1).copied().unwrap_or(self.ids.len());
        self.word_starts[word]..end
    }

    /// Replace every piece of `word` by a single MASK; returns the new
    /// sequence and the mask position.
    pub fn mask_word(&self, word: usize) -> (Vec<usize>, usize) {
        self.mask_words(&[word]).map(|(ids, pos)| (ids, pos[0])).expect("word in range")
    }

    /// Collapse each listed word (sorted, distinct) to one MASK.
    pub fn mask_words(&self, words: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        let mut ids = Vec::with_capacity(self.ids.len());
        let mut positions = Vec::with_capacity(words.len());
        let mut next = words.iter().peekable();
        for w in 0..self.word_count() {
            if next.peek() == Some(&&w) {
                next.next();
                positions.push(ids.len());
                ids.push(MASK);
            } else {
                ids.extend_from_slice(&self.ids[self.pieces_of(w)]);
            }
        }
        (next.next().is_none()).then_some((ids, positions))
    }
}

impl Vocabulary {
    /// Build pieces for every word of `languages`; a `split_fraction` share
    /// of each inventory (chosen by seed) becomes `prefix` + `##suffix`.
    pub fn build(languages: &[Language], split_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&split_fraction) {
            return Err(Error::InvalidParameter(format!("split fraction {split_fraction}")));
        }
        let mut vocab = Vocabulary {
            entries: SPECIALS.iter().map(|s| s.to_string()).collect(),
            word_to_pieces: BTreeMap::new(),
            language_of: vec![None; SPECIALS.len()],
            words_by_language: BTreeMap::new(),
        };
        let mut piece_ids: BTreeMap<String, usize> = BTreeMap::new();
        for (k, lang) in languages.iter().enumerate() {
            let n = lang.words.len();
            let count = (split_fraction * n as f64).round() as usize;
            let mut rng = rng::seeded(rng::derive(seed, k as u64), 0x9ec);
            let mut split = vec![false; n];
            for i in index::sample(&mut rng, n, count) {
                split[i] = true;
            }
            for (word, &two) in lang.words.iter().zip(&split) {
                let chars: Vec<char> = word.chars().collect();
                let pieces: Vec<String> = if two && chars.len() >= 2 {
                    let cut = chars.len().div_ceil(2);
                    vec![
                        chars[..cut].iter().collect(),
                        format!("##{}", chars[cut..].iter().collect::<String>()),
                    ]
                } else {
                    vec![word.clone()]
                };
                let mut ids = Vec::with_capacity(pieces.len());
                for p in pieces {
                    let id = match piece_ids.get(&p) {
                        Some(&id) => {
                            if vocab.language_of[id].as_deref() != Some(lang.tag()) {
                                return Err(Error::VocabMismatch(format!(
                                    "piece {p:?} is shared between languages"
                                )));
                            }
                            id
                        }
                        None => {
                            let id = vocab.entries.len();
                            vocab.entries.push(p.clone());
                            vocab.language_of.push(Some(lang.tag().to_string()));
                            piece_ids.insert(p, id);
                            id
                        }
                    };
                    ids.push(id);
                }
                if vocab.word_to_pieces.insert(word.clone(), ids).is_some() {
                    return Err(Error::InventoryCollision(word.clone()));
                }
            }
            vocab
                .words_by_language
                .insert(lang.tag().to_string(), lang.words.clone());
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn piece(&self, id: usize) -> Option<&str> {
        self.entries.get(id).map(String::as_str)
    }

    pub fn pieces(&self, word: &str) -> Option<&[usize]> {
        self.word_to_pieces.get(word).map(Vec::as_slice)
    }

    pub fn language_of(&self, id: usize) -> Option<&str> {
        self.language_of.get(id).and_then(|t| t.as_deref())
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.words_by_language.keys().map(String::as_str)
    }

    pub fn words_of(&self, tag: &str) -> &[String] {
        self.words_by_language.get(tag).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Every known surface word with its pieces.
    pub fn words(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.word_to_pieces.iter().map(|(w, p)| (w.as_str(), p.as_slice()))
    }

    pub fn covers(&self, word: &str) -> bool {
        self.word_to_pieces.contains_key(word)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Expand whitespace-delimited words into piece ids; unknown words map to
/// a single UNK.
pub fn tokenize(sentence: &str, vocab: &Vocabulary) -> Result<Tokenized> {
    let words: Vec<&str> = sentence.split_whitespace().collect();
    tokenize_words(&words, vocab)
}

pub fn tokenize_words<S: AsRef<str>>(words: &[S], vocab: &Vocabulary) -> Result<Tokenized> {
    if words.is_empty() {
        return Err(Error::EmptySentence);
    }
    let mut out = Tokenized {
        ids: Vec::new(),
        word_of: Vec::new(),
        word_starts: Vec::with_capacity(words.len()),
    };
    for (w, word) in words.iter().enumerate() {
        out.word_starts.push(out.ids.len());
        let pieces = vocab.pieces(word.as_ref()).unwrap_or(&[UNK]);
        out.ids.extend_from_slice(pieces);
        out.word_of.extend(std::iter::repeat_n(w, pieces.len()));
    }
    Ok(out)
}
