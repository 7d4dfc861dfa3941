use ndarray::{Array1, Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{log_softmax_in_place, EncoderModel, ModelConfig};
use super::vocab::{Tokenized, Vocabulary, MASK, UNK};
use crate::error::{Error, Result};
use crate::rng;

/// Number of leading special pieces (PAD, MASK, UNK) never used as random
/// replacements.
const SPECIAL_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub masking_rate: f64,
    pub grad_clip: f64,
    /// K for the held-out top-K report.
    pub topk: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 3e-3,
            warmup_steps: 100,
            masking_rate: 0.15,
            grad_clip: 1.0,
            topk: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub heldout_top1: f64,
    pub heldout_topk: f64,
    pub k: usize,
}

/// One sentence with a single masked word and the pieces it replaced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedProbe {
    pub ids: Vec<usize>,
    pub position: usize,
    pub gold: Vec<usize>,
}

impl MaskedProbe {
    pub fn new(sentence: &Tokenized, word: usize) -> Self {
        let (ids, position) = sentence.mask_word(word);
        Self {
            ids,
            position,
            gold: sentence.ids[sentence.pieces_of(word)].to_vec(),
        }
    }
}

/// One seeded random masked word per sentence.
pub fn make_probes(sentences: &[Tokenized], seed: u64) -> Vec<MaskedProbe> {
    let mut rng = rng::seeded(seed, 0x9b0);
    sentences
        .iter()
        .map(|s| MaskedProbe::new(s, rng.random_range(0..s.word_count())))
        .collect()
}

pub(crate) struct Example {
    ids: Vec<usize>,
    /// (position, pieces of the masked word)
    targets: Vec<(usize, Vec<usize>)>,
}

/// Whole-word masking: each selected word collapses to one position that
/// holds MASK (80%), a random piece (10%) or its own first piece (10%).
fn mask_sentence<R: Rng>(s: &Tokenized, rate: f64, vocab_size: usize, rng: &mut R) -> Example {
    let words = s.word_count();
    let count = ((rate * words as f64).round() as usize).clamp(1, words);
    let mut chosen = index::sample(rng, words, count).into_vec();
    chosen.sort_unstable();
    let mut ids = Vec::with_capacity(s.ids.len());
    let mut targets = Vec::with_capacity(count);
    let mut next = chosen.iter().peekable();
    for w in 0..words {
        let pieces = &s.ids[s.pieces_of(w)];
        if next.peek() == Some(&&w) {
            next.next();
            let r: f64 = rng.random();
            let token = if r < 0.8 {
                MASK
            } else if r < 0.9 {
                rng.random_range(SPECIAL_COUNT..vocab_size)
            } else {
                pieces[0]
            };
            targets.push((ids.len(), pieces.to_vec()));
            ids.push(token);
        } else {
            ids.extend_from_slice(pieces);
        }
    }
    Example { ids, targets }
}

/// Mean masked-word cross-entropy (each word's loss averages its pieces)
/// and the parameter gradients.
pub(crate) fn loss_and_grads(model: &EncoderModel, batch: &[Example]) -> Result<(f64, EncoderModel)> {
    let seqs: Vec<&[usize]> = batch.iter().map(|e| e.ids.as_slice()).collect();
    let fwd = model.forward(&seqs)?;
    let rows: Vec<(usize, &[usize])> = batch
        .iter()
        .zip(&fwd.spans)
        .flat_map(|(e, &(o, _))| e.targets.iter().map(move |(p, pieces)| (o + p, pieces.as_slice())))
        .collect();
    let m = rows.len() as f64;
    let h = fwd.states.select(Axis(0), &rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let mut z = h.dot(&model.unembedding.t()) + &model.unembedding_bias;
    let mut loss = 0.0;
    for (mut zr, (_, pieces)) in z.rows_mut().into_iter().zip(&rows) {
        let zs = zr.as_slice_mut().expect("contiguous");
        log_softmax_in_place(zs);
        let share = 1.0 / pieces.len() as f64;
        for &p in *pieces {
            loss -= share * zs[p];
        }
        zs.iter_mut().for_each(|x| *x = x.exp() / m);
        for &p in *pieces {
            zs[p] -= share / m;
        }
    }
    let mut grads = model.zeros_like();
    grads.unembedding = z.t().dot(&h);
    grads.unembedding_bias = z.sum_axis(Axis(0));
    let dh = z.dot(&model.unembedding);
    let mut dstates = Array2::zeros(fwd.states.dim());
    for (k, &(row, _)) in rows.iter().enumerate() {
        let mut r = dstates.row_mut(row);
        r += &dh.row(k);
    }
    model.backward(&fwd, &dstates, &mut grads);
    Ok((loss / m, grads))
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.98;
    const EPS: f64 = 1e-9;

    fn new(model: &EncoderModel) -> Self {
        let m: Vec<Vec<f64>> = model.tensors().iter().map(|a| vec![0.0; a.len()]).collect();
        Self { v: m.clone(), m, t: 0 }
    }

    fn step(&mut self, model: &mut EncoderModel, grads: &EncoderModel, lr: f64, clip: f64) {
        let g = grads.tensors();
        let norm = g.iter().map(|a| a.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        let factor = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, gk), m), v) in model.tensors_mut().into_iter().zip(g).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = gk[i] * factor;
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * gi;
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn check_corpus(corpus: &[Tokenized], vocab: &Vocabulary) -> Result<()> {
    for (i, s) in corpus.iter().enumerate() {
        if s.ids.is_empty() {
            return Err(Error::EmptySentence);
        }
        if let Some(&bad) = s.ids.iter().find(|&&id| id == UNK || id >= vocab.len()) {
            return Err(Error::VocabMismatch(format!(
                "sentence {i} contains piece {bad} not covered by the vocabulary"
            )));
        }
    }
    Ok(())
}

/// Masked-LM training with Adam, linear warmup then linear decay to 10% of
/// the peak rate.
pub fn train_toy_mlm(
    corpus: &[Tokenized],
    heldout: &[Tokenized],
    vocab: &Vocabulary,
    model_config: ModelConfig,
    config: &TrainConfig,
) -> Result<(EncoderModel, TrainReport)> {
    if corpus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_corpus(corpus, vocab)?;
    check_corpus(heldout, vocab)?;
    if config.batch_size == 0 || config.topk == 0 || !(0.0..=1.0).contains(&config.masking_rate) {
        return Err(Error::InvalidParameter("batch_size, topk and masking_rate".into()));
    }
    let mut model = EncoderModel::new(model_config, vocab.len(), rng::derive(config.seed, 1))?;
    let mut adam = Adam::new(&model);
    let mut rng = rng::seeded(config.seed, 0x7a1);
    let steps_per_epoch = corpus.len().div_ceil(config.batch_size);
    let total = (steps_per_epoch * config.epochs).max(1);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Example> = chunk
                .iter()
                .map(|&i| mask_sentence(&corpus[i], config.masking_rate, vocab.len(), &mut rng))
                .collect();
            let (loss, grads) = loss_and_grads(&model, &batch)?;
            sum += loss;
            step += 1;
            let lr = schedule(config, step, total);
            adam.step(&mut model, &grads, lr, config.grad_clip);
        }
        let mean = sum / steps_per_epoch as f64;
        log::info!("mlm epoch {epoch}: loss {mean:.4}");
        epoch_loss.push(mean);
    }
    let probes = make_probes(heldout, rng::derive(config.seed, 2));
    let (heldout_top1, heldout_topk) = if probes.is_empty() {
        (0.0, 0.0)
    } else {
        (topk_accuracy(&model, &probes, 1)?, topk_accuracy(&model, &probes, config.topk)?)
    };
    Ok((
        model,
        TrainReport {
            epoch_loss,
            heldout_top1,
            heldout_topk,
            k: config.topk,
        },
    ))
}

fn schedule(c: &TrainConfig, step: usize, total: usize) -> f64 {
    if step <= c.warmup_steps {
        return c.learning_rate * step as f64 / c.warmup_steps.max(1) as f64;
    }
    let frac = (step - c.warmup_steps) as f64 / (total.saturating_sub(c.warmup_steps)).max(1) as f64;
    c.learning_rate * (1.0 - 0.9 * frac.min(1.0))
}

/// Last-layer states at each probe's mask position, one row per probe.
pub fn probe_states(model: &EncoderModel, probes: &[MaskedProbe]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((probes.len(), model.dim()));
    for (chunk_i, chunk) in probes.chunks(64).enumerate() {
        let seqs: Vec<&[usize]> = chunk.iter().map(|p| p.ids.as_slice()).collect();
        for (j, (states, p)) in model.encode_many(&seqs)?.iter().zip(chunk).enumerate() {
            if p.ids[p.position] != MASK {
                return Err(Error::MaskMissing(p.position));
            }
            out.row_mut(chunk_i * 64 + j).assign(&states.row(p.position));
        }
    }
    Ok(out)
}

/// Whether the first gold piece ranks within the top `k` of `log_probs`
/// (ties broken toward the gold piece's favour only if strictly fewer than
/// `k` pieces score higher).
pub fn gold_in_topk(log_probs: &[f64], gold: usize, k: usize) -> bool {
    let g = log_probs[gold];
    log_probs.iter().filter(|&&x| x > g).count() < k
}

pub fn topk_accuracy(model: &EncoderModel, probes: &[MaskedProbe], k: usize) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let states = probe_states(model, probes)?;
    let mut hits = 0usize;
    for (row, p) in states.rows().into_iter().zip(probes) {
        let lp = model.logits_from_state(row.as_slice().expect("contiguous"))?;
        hits += gold_in_topk(&lp, p.gold[0], k) as usize;
    }
    Ok(hits as f64 / probes.len() as f64)
}

/// Exact masked-word posterior under a first-order chain:
/// `p(w | prev, next) ∝ T[prev][w] · T[w][next]`, with the unigram in place
/// of the missing left factor at the sentence start.
pub fn chain_posterior(unigram: &[f64], transitions: &[Vec<f64>], words: &[usize], masked: usize) -> Array1<f64> {
    let n = unigram.len();
    Array1::from_shape_fn(n, |w| {
        let left = if masked == 0 { unigram[w] } else { transitions[words[masked - 1]][w] };
        let right = words.get(masked + 1).map_or(1.0, |&nx| transitions[w][nx]);
        left * right
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{language_family, LanguageSpec};
    use crate::mlm::vocab::tokenize_words;

    #[test]
    fn masking_counts_and_targets() {
        let langs = language_family(&LanguageSpec::default_family()[..1], 1).unwrap();
        let v = Vocabulary::build(&langs, 0.2, 1).unwrap();
        let mut r = rng::seeded(1, 1);
        let words = langs[0].surface(&langs[0].sample_indices(&mut r));
        let t = tokenize_words(&words, &v).unwrap();
        for seed in 0..20 {
            let e = mask_sentence(&t, 0.15, v.len(), &mut rng::seeded(seed, 0));
            let expected = ((0.15 * words.len() as f64).round() as usize).max(1);
            assert_eq!(e.targets.len(), expected);
            let collapsed: usize = e.targets.iter().map(|(_, p)| p.len() - 1).sum();
            assert_eq!(e.ids.len(), t.ids.len() - collapsed);
        }
    }

    #[test]
    fn gold_rank_rule() {
        assert!(gold_in_topk(&[-1.0, -2.0, -3.0], 1, 2));
        assert!(!gold_in_topk(&[-1.0, -2.0, -3.0], 2, 2));
        assert!(gold_in_topk(&[-1.0, -1.0, -1.0], 2, 1));
    }
}
