//! Synthetic languages with exact translation dictionaries, code-mixing by
//! lexical substitution, MUSE dictionary parsing and corpus splits.
//!
//! Languages generated together share one grammar over word *indices*: a
//! Zipfian unigram distribution and a sparse first-order transition table.
//! Word `i` of one language is therefore the exact translation equivalent of
//! word `i` of every other language in the family, and translating a
//! sentence word by word yields a valid sentence of the other language.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Minimum inventory size for a synthetic language.
pub const MIN_WORD_COUNT: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub tag: String,
    pub word_count: usize,
    /// Onset/coda inventory. Distinct specs should use disjoint consonants.
    pub consonants: String,
    pub vowels: String,
    /// Syllable shapes over `C` and `V`, e.g. `["CV", "CVC"]`.
    pub syllables: Vec<String>,
    pub zipf_exponent: f64,
    /// Size of each word's successor set.
    pub successors_per_word: usize,
    /// Probability of following the successor table instead of drawing from
    /// the unigram distribution.
    pub bigram_weight: f64,
    pub min_sentence_len: usize,
    pub max_sentence_len: usize,
}

impl LanguageSpec {
    pub fn new(tag: &str, consonants: &str, vowels: &str) -> Self {
        Self {
            tag: tag.to_string(),
            word_count: 60,
            consonants: consonants.to_string(),
            vowels: vowels.to_string(),
            syllables: vec!["CV".into(), "CVC".into()],
            zipf_exponent: 1.0,
            successors_per_word: 6,
            bigram_weight: 0.9,
            min_sentence_len: 6,
            max_sentence_len: 20,
        }
    }

    /// Three languages, tags `A`, `B` and `C`, over disjoint consonants.
    pub fn default_family() -> Vec<LanguageSpec> {
        vec![
            LanguageSpec::new("A", "ptkmnls", "aiu"),
            LanguageSpec::new("B", "bdgrvzf", "eoa"),
            LanguageSpec::new("C", "hjwxcq", "ouy"),
        ]
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("language {}: {m}", self.tag)));
        if self.word_count < MIN_WORD_COUNT {
            return bad(format!("word_count {} < {MIN_WORD_COUNT}", self.word_count));
        }
        if self.consonants.is_empty() || self.vowels.is_empty() || self.syllables.is_empty() {
            return bad("empty phonotactic inventory".into());
        }
        if self.syllables.iter().any(|s| s.is_empty() || s.chars().any(|c| c != 'C' && c != 'V')) {
            return bad("syllable shapes may only use C and V".into());
        }
        if self.successors_per_word == 0 || self.successors_per_word > self.word_count {
            return bad("successors_per_word out of range".into());
        }
        if !(0.0..=1.0).contains(&self.bigram_weight) || !(self.zipf_exponent >= 0.0) {
            return bad("bigram_weight or zipf_exponent out of range".into());
        }
        if self.min_sentence_len == 0 || self.min_sentence_len > self.max_sentence_len {
            return bad("sentence length range is empty".into());
        }
        Ok(())
    }
}

/// Unigram plus sparse transition structure over word indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grammar {
    pub unigram: Vec<f64>,
    /// Dense transition rows; row `i` is the next-word distribution after `i`.
    pub transitions: Vec<Vec<f64>>,
    pub successors: Vec<Vec<usize>>,
    pub min_len: usize,
    pub max_len: usize,
}

impl Grammar {
    /// Transition rows mix `bigram_weight` of a successor-set distribution
    /// with the unigram; successor weights are rescaled until the chain's
    /// stationary distribution matches the Zipf unigram.
    pub fn generate(spec: &LanguageSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let n = spec.word_count;
        let mut rng = rng::seeded(seed, 0x6a3);
        let raw: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-spec.zipf_exponent)).collect();
        let z: f64 = raw.iter().sum();
        let unigram: Vec<f64> = raw.iter().map(|x| x / z).collect();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let successors: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut set: BTreeSet<usize> = index::sample_weighted(
                    &mut rng,
                    n,
                    |j| unigram[j],
                    spec.successors_per_word - 1,
                )
                .expect("weights are positive")
                .into_iter()
                .collect();
                // every word is reachable from at least one predecessor
                set.insert(perm[i]);
                set.into_iter().collect()
            })
            .collect();

        let lambda = spec.bigram_weight;
        let build = |weights: &[f64]| -> Vec<Vec<f64>> {
            successors
                .iter()
                .map(|succ| {
                    let mass: f64 = succ.iter().map(|&j| weights[j]).sum();
                    let mut row: Vec<f64> = unigram.iter().map(|p| (1.0 - lambda) * p).collect();
                    for &j in succ {
                        row[j] += lambda * weights[j] / mass;
                    }
                    row
                })
                .collect()
        };
        let mut weights = unigram.clone();
        for _ in 0..300 {
            let stationary = stationary(&build(&weights), &unigram, 100);
            for ((w, p), m) in weights.iter_mut().zip(&unigram).zip(&stationary) {
                *w *= (p / m).sqrt();
            }
        }
        Ok(Self {
            transitions: build(&weights),
            unigram,
            successors,
            min_len: spec.min_sentence_len,
            max_len: spec.max_sentence_len,
        })
    }

    pub fn len(&self) -> usize {
        self.unigram.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unigram.is_empty()
    }

    /// Sample a sentence as word indices.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let len = rng.random_range(self.min_len..=self.max_len);
        let start = WeightedIndex::new(&self.unigram).expect("valid unigram");
        let mut out = Vec::with_capacity(len);
        out.push(start.sample(rng));
        while out.len() < len {
            let prev = *out.last().expect("non-empty");
            let row = WeightedIndex::new(&self.transitions[prev]).expect("valid row");
            out.push(row.sample(rng));
        }
        out
    }

    /// Probability of `indices` under the grammar (first word from the
    /// unigram, the rest from transitions), ignoring the length draw.
    pub fn log_prob(&self, indices: &[usize]) -> f64 {
        let Some((&first, rest)) = indices.split_first() else { return 0.0 };
        let mut lp = self.unigram[first].ln();
        let mut prev = first;
        for &i in rest {
            lp += self.transitions[prev][i].ln();
            prev = i;
        }
        lp
    }
}

fn stationary(rows: &[Vec<f64>], start: &[f64], steps: usize) -> Vec<f64> {
    let mut v = start.to_vec();
    let mut next = vec![0.0; v.len()];
    for _ in 0..steps {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (p, row) in v.iter().zip(rows) {
            next.iter_mut().zip(row).for_each(|(n, r)| *n += p * r);
        }
        std::mem::swap(&mut v, &mut next);
    }
    v
}

/// A synthetic language: a word inventory plus the grammar it samples from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Language {
    pub spec: LanguageSpec,
    pub words: Vec<String>,
    pub grammar: Grammar,
}

impl Language {
    pub fn tag(&self) -> &str {
        &self.spec.tag
    }

    pub fn sample_indices<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        self.grammar.sample(rng)
    }

    pub fn surface(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.words[i].clone()).collect()
    }

    pub fn sample_sentence<R: Rng>(&self, rng: &mut R) -> TaggedSentence {
        TaggedSentence::monolingual(self.surface(&self.sample_indices(rng)), self.tag())
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }
}

fn generate_words(spec: &LanguageSpec, seed: u64) -> Result<Vec<String>> {
    spec.validate()?;
    let consonants: Vec<char> = spec.consonants.chars().collect();
    let vowels: Vec<char> = spec.vowels.chars().collect();
    let mut rng = rng::seeded(seed, 0x77);
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(spec.word_count);
    let mut attempts = 0usize;
    while words.len() < spec.word_count {
        attempts += 1;
        if attempts > 1000 * spec.word_count {
            return Err(Error::InvalidParameter(format!(
                "language {}: phonotactic space too small for {} words",
                spec.tag, spec.word_count
            )));
        }
        let syllables = rng.random_range(1..=3);
        let mut word = String::new();
        for _ in 0..syllables {
            let shape = &spec.syllables[rng.random_range(0..spec.syllables.len())];
            for c in shape.chars() {
                let pool = if c == 'C' { &consonants } else { &vowels };
                word.push(pool[rng.random_range(0..pool.len())]);
            }
        }
        if word.chars().count() >= 3 && seen.insert(word.clone()) {
            words.push(word);
        }
    }
    Ok(words)
}

/// A standalone language with its own grammar.
pub fn gen_language(spec: &LanguageSpec, seed: u64) -> Result<Language> {
    let grammar = Grammar::generate(spec, rng::derive(seed, 1))?;
    let words = generate_words(spec, rng::derive(seed, 2))?;
    Ok(Language {
        spec: spec.clone(),
        words,
        grammar,
    })
}

/// Languages sharing one grammar (taken from the first spec), with
/// pairwise-disjoint inventories.
pub fn language_family(specs: &[LanguageSpec], seed: u64) -> Result<Vec<Language>> {
    let first = specs
        .first()
        .ok_or_else(|| Error::SpecMismatch("no language specs".into()))?;
    let mut tags = BTreeSet::new();
    for s in specs {
        if s.word_count != first.word_count {
            return Err(Error::SpecMismatch(format!(
                "{} has {} words but {} has {}",
                s.tag, s.word_count, first.tag, first.word_count
            )));
        }
        if !tags.insert(s.tag.clone()) {
            return Err(Error::SpecMismatch(format!("duplicate tag {}", s.tag)));
        }
    }
    let grammar = Grammar::generate(first, rng::derive(seed, 1))?;
    let languages: Vec<Language> = specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            Ok(Language {
                spec: spec.clone(),
                words: generate_words(spec, rng::derive(seed, 100 + k as u64))?,
                grammar: grammar.clone(),
            })
        })
        .collect::<Result<_>>()?;
    ensure_disjoint(&languages)?;
    Ok(languages)
}

pub fn ensure_disjoint(languages: &[Language]) -> Result<()> {
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for lang in languages {
        for w in &lang.words {
            if let Some(prev) = owner.insert(w, lang.tag()) {
                if prev != lang.tag() {
                    return Err(Error::InventoryCollision(w.clone()));
                }
            }
        }
    }
    Ok(())
}

/// Two languages with a shared grammar and the index-aligned dictionary.
pub fn paired_languages(
    spec_a: &LanguageSpec,
    spec_b: &LanguageSpec,
    seed: u64,
) -> Result<(Language, Language, BilingualDictionary)> {
    let mut family = language_family(&[spec_a.clone(), spec_b.clone()], seed)?;
    let b = family.pop().expect("two languages");
    let a = family.pop().expect("two languages");
    let dict = BilingualDictionary::aligned(&a, &b);
    Ok((a, b, dict))
}

/// Word-level translation pairs between two tagged languages.
///
/// Lookups return the first-listed translation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BilingualDictionary {
    pub source_tag: String,
    pub target_tag: String,
    pairs: Vec<(String, String)>,
    forward: BTreeMap<String, Vec<String>>,
}

impl BilingualDictionary {
    pub fn new(source_tag: impl Into<String>, target_tag: impl Into<String>) -> Self {
        Self {
            source_tag: source_tag.into(),
            target_tag: target_tag.into(),
            ..Default::default()
        }
    }

    /// Pair word `i` of `a` with word `i` of `b`.
    pub fn aligned(a: &Language, b: &Language) -> Self {
        let mut d = Self::new(a.tag(), b.tag());
        for (x, y) in a.words.iter().zip(&b.words) {
            d.insert(x, y);
        }
        d
    }

    /// Adds a pair; returns false for a duplicate.
    pub fn insert(&mut self, source: &str, target: &str) -> bool {
        let targets = self.forward.entry(source.to_string()).or_default();
        if targets.iter().any(|t| t == target) {
            return false;
        }
        targets.push(target.to_string());
        self.pairs.push((source.to_string(), target.to_string()));
        true
    }

    pub fn lookup(&self, word: &str) -> Option<&str> {
        self.forward.get(word).and_then(|t| t.first()).map(String::as_str)
    }

    pub fn translations(&self, word: &str) -> &[String] {
        self.forward.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, word: &str) -> bool {
        self.forward.contains_key(word)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn inverse(&self) -> Self {
        let mut d = Self::new(self.target_tag.clone(), self.source_tag.clone());
        for (s, t) in &self.pairs {
            d.insert(t, s);
        }
        d
    }

    pub fn is_bijection(&self) -> bool {
        let targets: BTreeSet<&str> = self.pairs.iter().map(|(_, t)| t.as_str()).collect();
        targets.len() == self.pairs.len() && self.forward.len() == self.pairs.len()
    }

    /// Parse MUSE text: one `source target` pair per line, blank lines
    /// skipped, duplicate pairs dropped.
    pub fn parse_muse(text: &str, source_tag: &str, target_tag: &str, origin: &str) -> Result<Self> {
        let mut d = Self::new(source_tag, target_tag);
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [] => continue,
                [s, t] => {
                    d.insert(s, t);
                }
                _ => {
                    return Err(Error::format(
                        origin,
                        lineno + 1,
                        format!("expected 2 whitespace-separated fields, found {}", fields.len()),
                    ))
                }
            }
        }
        Ok(d)
    }

    pub fn to_muse(&self) -> String {
        self.pairs.iter().map(|(s, t)| format!("{s} {t}\n")).collect()
    }
}

pub fn load_muse_dictionary(path: &Path, source_tag: &str, target_tag: &str) -> Result<BilingualDictionary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BilingualDictionary::parse_muse(&text, source_tag, target_tag, &path.display().to_string())
}

/// A sentence with one language tag per word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

impl TaggedSentence {
    pub fn monolingual(words: Vec<String>, tag: &str) -> Self {
        let tags = vec![tag.to_string(); words.len()];
        Self { words, tags }
    }

    pub fn text(&self) -> String {
        self.words.join(" ")
    }

    /// The most frequent tag (first in sorted order on ties).
    pub fn dominant_tag(&self) -> Option<&str> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &self.tags {
            *counts.entry(t).or_default() += 1;
        }
        counts
            .into_iter()
            .fold(None, |best: Option<(&str, usize)>, (t, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((t, c)),
            })
            .map(|(t, _)| t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedSentence {
    pub sentence: TaggedSentence,
    pub substituted: Vec<bool>,
    pub covered: usize,
    pub uncovered: usize,
}

impl MixedSentence {
    pub fn substitution_count(&self) -> usize {
        self.substituted.iter().filter(|&&s| s).count()
    }
}

/// Replace `round(rate * covered)` dictionary-covered words by their
/// translation. Uncovered words are left alone and counted.
pub fn code_mix(sentence: &TaggedSentence, dict: &BilingualDictionary, rate: f64, seed: u64) -> MixedSentence {
    let rate = rate.clamp(0.0, 1.0);
    let covered: Vec<usize> = (0..sentence.words.len())
        .filter(|&i| dict.contains(&sentence.words[i]))
        .collect();
    let uncovered = sentence.words.len() - covered.len();
    if uncovered > 0 {
        log::debug!("code_mix: {uncovered} word(s) not covered by the dictionary");
    }
    let count = (rate * covered.len() as f64).round() as usize;
    let mut rng = rng::seeded(seed, 0xc0de);
    let mut out = sentence.clone();
    let mut substituted = vec![false; sentence.words.len()];
    for k in index::sample(&mut rng, covered.len(), count.min(covered.len())) {
        let i = covered[k];
        let translation = dict.lookup(&sentence.words[i]).expect("covered word");
        out.words[i] = translation.to_string();
        out.tags[i] = dict.target_tag.clone();
        substituted[i] = true;
    }
    MixedSentence {
        sentence: out,
        substituted,
        covered: covered.len(),
        uncovered,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    /// Per-language sizes for monolingual data.
    pub const MONOLINGUAL: SplitSizes = SplitSizes { train: 1500, validation: 250, test: 250 };
    /// Per-pair sizes for code-mixed data.
    pub const CODE_MIXED: SplitSizes = SplitSizes { train: 3000, validation: 500, test: 500 };

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Disjoint, seed-deterministic train/validation/test selection.
pub fn make_splits<T: Clone>(items: &[T], sizes: SplitSizes, seed: u64) -> Result<CorpusSplit<T>> {
    if sizes.total() > items.len() {
        return Err(Error::InsufficientData {
            requested: sizes.total(),
            available: items.len(),
        });
    }
    let mut rng = rng::seeded(seed, 0x5911);
    let chosen = index::sample(&mut rng, items.len(), sizes.total()).into_vec();
    let take = |range: std::ops::Range<usize>| -> Vec<T> {
        chosen[range].iter().map(|&i| items[i].clone()).collect()
    };
    Ok(CorpusSplit {
        train: take(0..sizes.train),
        validation: take(sizes.train..sizes.train + sizes.validation),
        test: take(sizes.train + sizes.validation..sizes.total()),
    })
}

/// Write `<stem>.txt` (one sentence per line) and `<stem>.tags`
/// (space-separated tags, same line count).
pub fn write_tagged_corpus(dir: &Path, stem: &str, sentences: &[TaggedSentence]) -> Result<()> {
    let mut text = String::new();
    let mut tags = String::new();
    for s in sentences {
        text.push_str(&s.words.join(" "));
        text.push('\n');
        tags.push_str(&s.tags.join(" "));
        tags.push('\n');
    }
    crate::pipeline::write_atomic(&dir.join(format!("{stem}.txt")), text.as_bytes())?;
    crate::pipeline::write_atomic(&dir.join(format!("{stem}.tags")), tags.as_bytes())
}

pub fn read_tagged_corpus(dir: &Path, stem: &str) -> Result<Vec<TaggedSentence>> {
    let text_path = dir.join(format!("{stem}.txt"));
    let tag_path = dir.join(format!("{stem}.tags"));
    let text = fs::read_to_string(&text_path).map_err(|e| Error::io(&text_path, e))?;
    let tags = fs::read_to_string(&tag_path).map_err(|e| Error::io(&tag_path, e))?;
    let text_lines: Vec<&str> = text.lines().collect();
    let tag_lines: Vec<&str> = tags.lines().collect();
    if text_lines.len() != tag_lines.len() {
        return Err(Error::format(
            tag_path.display().to_string(),
            tag_lines.len().min(text_lines.len()) + 1,
            format!("{} sentences but {} tag lines", text_lines.len(), tag_lines.len()),
        ));
    }
    text_lines
        .iter()
        .zip(&tag_lines)
        .enumerate()
        .map(|(i, (t, g))| {
            let words: Vec<String> = t.split_whitespace().map(str::to_string).collect();
            let tags: Vec<String> = g.split_whitespace().map(str::to_string).collect();
            if words.len() != tags.len() {
                return Err(Error::format(
                    tag_path.display().to_string(),
                    i + 1,
                    format!("{} words but {} tags", words.len(), tags.len()),
                ));
            }
            Ok(TaggedSentence { words, tags })
        })
        .collect()
}
