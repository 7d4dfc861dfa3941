//! Candidate construction, before/after scoring of masked predictions,
//! aggregate metrics, MLM-top-K, iteration selection and alpha sweeps.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alterrep::{alter, PushSpec};
use crate::classifier::{Side, TokenDataset};
use crate::corpus::{BilingualDictionary, TaggedSentence};
use crate::error::{Error, Result};
use crate::inlp::{step_inlp, InlpConfig, InlpResult};
use crate::mlm::train::{gold_in_topk, probe_states};
use crate::mlm::{tokenize_words, EncoderModel, MaskedProbe, OutputHead, Vocabulary};
use crate::projection::DirectionBasis;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    TargetOriginal,
    TargetTranslation,
    RandomOriginal,
    RandomPushed,
    ThirdLanguage,
}

impl CandidateKind {
    pub const ALL: [CandidateKind; 5] = [
        CandidateKind::TargetOriginal,
        CandidateKind::TargetTranslation,
        CandidateKind::RandomOriginal,
        CandidateKind::RandomPushed,
        CandidateKind::ThirdLanguage,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub word: String,
    pub language: String,
    pub pieces: Vec<usize>,
}

/// One masked template sentence and its five candidate words, stored in
/// [`CandidateKind::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub words: Vec<String>,
    pub template: String,
    /// The other language of the pair.
    pub other: String,
    pub third: String,
    pub mask_word: usize,
    pub candidates: Vec<Candidate>,
}

impl EvalItem {
    pub fn candidate(&self, kind: CandidateKind) -> &Candidate {
        &self.candidates[kind.index()]
    }

    /// The template with the masked word collapsed to one MASK.
    pub fn probe(&self, vocab: &Vocabulary) -> Result<MaskedProbe> {
        let tok = tokenize_words(&self.words, vocab)?;
        Ok(MaskedProbe::new(&tok, self.mask_word))
    }
}

/// Build one item from a template sentence. `dict` maps the template
/// language to the other language of the pair; `third` names the control
/// language. Random words match the piece count of the word they stand in
/// for: the original for `random_original` and `third_language`, the
/// translation for `random_pushed`.
pub fn build_eval_item(
    sentence: &TaggedSentence,
    dict: &BilingualDictionary,
    vocab: &Vocabulary,
    third: &str,
    seed: u64,
) -> Result<EvalItem> {
    let covered: Vec<usize> = (0..sentence.words.len())
        .filter(|&i| {
            let w = &sentence.words[i];
            vocab.covers(w) && dict.lookup(w).is_some_and(|t| vocab.covers(t))
        })
        .collect();
    if covered.is_empty() {
        return Err(Error::NoCoveredWord);
    }
    let mut rng = rng::seeded(seed, 0xe7a1);
    let mask_word = covered[rng.random_range(0..covered.len())];
    let original = sentence.words[mask_word].clone();
    let translation = dict.lookup(&original).expect("covered").to_string();
    let make = |word: &str, language: &str| Candidate {
        word: word.to_string(),
        language: language.to_string(),
        pieces: vocab.pieces(word).expect("covered").to_vec(),
    };
    let target_original = make(&original, &dict.source_tag);
    let target_translation = make(&translation, &dict.target_tag);
    let mut pick = |language: &str, like: &Candidate, exclude: &str| -> Result<Candidate> {
        let pool: Vec<&String> = vocab
            .words_of(language)
            .iter()
            .filter(|w| *w != exclude && vocab.pieces(w).is_some_and(|p| p.len() == like.pieces.len()))
            .collect();
        if pool.is_empty() {
            return Err(Error::InsufficientData {
                requested: 1,
                available: 0,
            });
        }
        Ok(make(pool[rng.random_range(0..pool.len())], language))
    };
    let random_original = pick(&dict.source_tag, &target_original, &original)?;
    let random_pushed = pick(&dict.target_tag, &target_translation, &translation)?;
    let third_language = pick(third, &target_original, "")?;
    Ok(EvalItem {
        words: sentence.words.clone(),
        template: dict.source_tag.clone(),
        other: dict.target_tag.clone(),
        third: third.to_string(),
        mask_word,
        candidates: vec![
            target_original,
            target_translation,
            random_original,
            random_pushed,
            third_language,
        ],
    })
}

/// Items for every sentence that has a covered word; the rest are returned
/// with the reason they were skipped.
pub fn build_eval_items(
    sentences: &[TaggedSentence],
    dict: &BilingualDictionary,
    vocab: &Vocabulary,
    third: &str,
    seed: u64,
) -> (Vec<EvalItem>, Vec<(usize, String)>) {
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        match build_eval_item(s, dict, vocab, third, rng::derive(seed, i as u64)) {
            Ok(item) => items.push(item),
            Err(e) => skipped.push((i, e.to_string())),
        }
    }
    if !skipped.is_empty() {
        log::info!("skipped {} of {} eval sentences", skipped.len(), sentences.len());
    }
    (items, skipped)
}

/// Mean log-probability of a word's pieces at one masked position.
pub fn word_logprob(log_probs: &[f64], pieces: &[usize]) -> Result<f64> {
    if pieces.is_empty() {
        return Err(Error::InvalidParameter("word has no pieces".into()));
    }
    let mut sum = 0.0;
    for &p in pieces {
        sum += log_probs.get(p).ok_or(Error::UnknownPiece(p))?;
    }
    Ok(sum / pieces.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateDir {
    /// Push toward the template's own language.
    Same,
    /// Push toward the other language of the pair.
    Opposite,
}

impl TemplateDir {
    pub const ALL: [TemplateDir; 2] = [TemplateDir::Same, TemplateDir::Opposite];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateDir::Same => "same",
            TemplateDir::Opposite => "opposite",
        }
    }
}

/// Which language tag sits on which classifier side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguagePair {
    pub l1: String,
    pub l2: String,
}

impl LanguagePair {
    pub fn new(l1: impl Into<String>, l2: impl Into<String>) -> Self {
        Self {
            l1: l1.into(),
            l2: l2.into(),
        }
    }

    pub fn side_of(&self, tag: &str) -> Result<Side> {
        if tag == self.l1 {
            Ok(Side::L1)
        } else if tag == self.l2 {
            Ok(Side::L2)
        } else {
            Err(Error::InvalidParameter(format!("language {tag} is not in the pair")))
        }
    }

    /// Push for `item` in direction `dir` with magnitude `|alpha|`.
    pub fn push_for(&self, item: &EvalItem, dir: TemplateDir, alpha: f64) -> Result<PushSpec> {
        let tag = match dir {
            TemplateDir::Same => &item.template,
            TemplateDir::Opposite => &item.other,
        };
        PushSpec::toward(self.side_of(tag)?, alpha)
    }
}

/// An item with its mask-position state and intervention-free scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedItem {
    pub item: EvalItem,
    pub state: Vec<f64>,
    pub before: [f64; 5],
}

fn score_candidates(log_probs: &[f64], item: &EvalItem) -> Result<[f64; 5]> {
    let mut out = [0.0; 5];
    for (o, c) in out.iter_mut().zip(&item.candidates) {
        *o = word_logprob(log_probs, &c.pieces)?;
    }
    Ok(out)
}

/// Encode every item once; the mask-position state is all that later
/// interventions need.
pub fn prepare_items(model: &EncoderModel, vocab: &Vocabulary, items: &[EvalItem]) -> Result<Vec<PreparedItem>> {
    let probes: Vec<MaskedProbe> = items.iter().map(|i| i.probe(vocab)).collect::<Result<_>>()?;
    let states = probe_states(model, &probes)?;
    items
        .iter()
        .zip(states.rows())
        .map(|(item, row)| {
            let state = row.to_vec();
            let before = score_candidates(&model.logits_from_state(&state)?, item)?;
            Ok(PreparedItem {
                item: item.clone(),
                state,
                before,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRecord {
    pub template: String,
    pub template_dir: TemplateDir,
    pub alpha: f64,
    pub iterations: usize,
    /// Candidate log-probabilities in [`CandidateKind::ALL`] order.
    pub before: [f64; 5],
    pub after: [f64; 5],
}

impl ShiftRecord {
    pub fn delta(&self, kind: CandidateKind) -> f64 {
        self.after[kind.index()] - self.before[kind.index()]
    }
}

/// Score a prepared item after altering its mask state. `alpha` is a
/// magnitude; `dir` decides which language it pushes toward.
pub fn score_prepared(
    p: &PreparedItem,
    head: &OutputHead,
    basis: &DirectionBasis,
    iterations: usize,
    pair: &LanguagePair,
    dir: TemplateDir,
    alpha: f64,
) -> Result<ShiftRecord> {
    let push = pair.push_for(&p.item, dir, alpha)?;
    let altered = alter(&p.state, basis, &push)?.altered;
    let after = score_candidates(&head.logits_from_state(&altered)?, &p.item)?;
    Ok(ShiftRecord {
        template: p.item.template.clone(),
        template_dir: dir,
        alpha: alpha.abs(),
        iterations,
        before: p.before,
        after,
    })
}

/// Encode, then score one item before and after the intervention.
#[allow(clippy::too_many_arguments)]
pub fn score_item(
    item: &EvalItem,
    model: &EncoderModel,
    vocab: &Vocabulary,
    inlp: &InlpResult,
    iterations: usize,
    pair: &LanguagePair,
    dir: TemplateDir,
    alpha: f64,
) -> Result<ShiftRecord> {
    let prepared = prepare_items(model, vocab, std::slice::from_ref(item))?.remove(0);
    let head = model.head(vocab.entries().to_vec())?;
    score_prepared(&prepared, &head, &inlp.basis_after(iterations), iterations, pair, dir, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateClass {
    PushedToTarget,
    PushedToRandom,
    PushedAwayTarget,
    PushedAwayRandom,
    ThirdLanguage,
}

impl CandidateClass {
    pub const ALL: [CandidateClass; 5] = [
        CandidateClass::PushedToTarget,
        CandidateClass::PushedToRandom,
        CandidateClass::PushedAwayTarget,
        CandidateClass::PushedAwayRandom,
        CandidateClass::ThirdLanguage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CandidateClass::PushedToTarget => "pushed_to_target",
            CandidateClass::PushedToRandom => "pushed_to_random",
            CandidateClass::PushedAwayTarget => "pushed_away_target",
            CandidateClass::PushedAwayRandom => "pushed_away_random",
            CandidateClass::ThirdLanguage => "third_language",
        }
    }

    /// The candidate that plays this role under `dir`.
    pub fn candidate(self, dir: TemplateDir) -> CandidateKind {
        use CandidateClass as C;
        use CandidateKind as K;
        match (dir, self) {
            (_, C::ThirdLanguage) => K::ThirdLanguage,
            (TemplateDir::Same, C::PushedToTarget) => K::TargetOriginal,
            (TemplateDir::Same, C::PushedToRandom) => K::RandomOriginal,
            (TemplateDir::Same, C::PushedAwayTarget) => K::TargetTranslation,
            (TemplateDir::Same, C::PushedAwayRandom) => K::RandomPushed,
            (TemplateDir::Opposite, C::PushedToTarget) => K::TargetTranslation,
            (TemplateDir::Opposite, C::PushedToRandom) => K::RandomPushed,
            (TemplateDir::Opposite, C::PushedAwayTarget) => K::TargetOriginal,
            (TemplateDir::Opposite, C::PushedAwayRandom) => K::RandomOriginal,
        }
    }

    /// Pushed-to candidates should rise, pushed-away ones fall; the
    /// third-language control is counted as expected when it does not rise.
    pub fn is_expected(self, delta: f64) -> bool {
        match self {
            CandidateClass::PushedToTarget | CandidateClass::PushedToRandom => delta > 0.0,
            CandidateClass::PushedAwayTarget | CandidateClass::PushedAwayRandom => delta < 0.0,
            CandidateClass::ThirdLanguage => delta <= 0.0,
        }
    }
}

impl fmt::Display for CandidateClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub template_dir: TemplateDir,
    pub candidate_class: CandidateClass,
    pub proportion_expected: f64,
    pub mean_delta_logp: f64,
    pub n: usize,
    /// Records with exactly zero change.
    pub ties: usize,
    pub median_abs_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub alpha: f64,
    pub iterations: usize,
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn row(&self, dir: TemplateDir, class: CandidateClass) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.template_dir == dir && r.candidate_class == class)
    }

    /// CSV with columns `template_dir,candidate_class,proportion_expected,mean_delta_logp,n`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("template_dir,candidate_class,proportion_expected,mean_delta_logp,n\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{}\n",
                r.template_dir.as_str(),
                r.candidate_class,
                r.proportion_expected,
                r.mean_delta_logp,
                r.n
            ));
        }
        out
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Per (direction, class) proportions moving the expected way and mean
/// per-item change. Ties never count as movement for pushed classes.
pub fn aggregate(records: &[ShiftRecord]) -> Result<MetricsTable> {
    let first = records.first().ok_or(Error::EmptyRecords)?;
    if records
        .iter()
        .any(|r| r.alpha != first.alpha || r.iterations != first.iterations)
    {
        return Err(Error::InvalidParameter("records mix alpha or iteration settings".into()));
    }
    let mut rows = Vec::new();
    for dir in TemplateDir::ALL {
        let subset: Vec<&ShiftRecord> = records.iter().filter(|r| r.template_dir == dir).collect();
        if subset.is_empty() {
            continue;
        }
        for class in CandidateClass::ALL {
            let deltas: Vec<f64> = subset.iter().map(|r| r.delta(class.candidate(dir))).collect();
            let n = deltas.len();
            let expected = deltas.iter().filter(|&&d| class.is_expected(d)).count();
            rows.push(MetricsRow {
                template_dir: dir,
                candidate_class: class,
                proportion_expected: expected as f64 / n as f64,
                mean_delta_logp: deltas.iter().sum::<f64>() / n as f64,
                n,
                ties: deltas.iter().filter(|&&d| d == 0.0).count(),
                median_abs_delta: median(deltas.iter().map(|d| d.abs()).collect()),
            });
        }
    }
    Ok(MetricsTable {
        alpha: first.alpha,
        iterations: first.iterations,
        rows,
    })
}

/// Median absolute change over the union of `classes` under `dir`.
pub fn pooled_median_abs_delta(records: &[ShiftRecord], dir: TemplateDir, classes: &[CandidateClass]) -> f64 {
    median(
        records
            .iter()
            .filter(|r| r.template_dir == dir)
            .flat_map(|r| classes.iter().map(move |c| r.delta(c.candidate(dir)).abs()))
            .collect(),
    )
}

/// Mask states of `probes` plus their gold pieces, reusable across many
/// interventions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub states: Vec<Vec<f64>>,
    pub gold_first: Vec<usize>,
}

impl ProbeSet {
    pub fn encode(model: &EncoderModel, probes: &[MaskedProbe]) -> Result<Self> {
        if probes.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let states = probe_states(model, probes)?;
        Ok(Self {
            states: states.rows().into_iter().map(|r| r.to_vec()).collect(),
            gold_first: probes.iter().map(|p| p.gold[0]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn topk(&self, head: &OutputHead, k: usize, intervention: Option<(&DirectionBasis, &PushSpec)>) -> Result<f64> {
        if k == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut hits = 0usize;
        for (state, &gold) in self.states.iter().zip(&self.gold_first) {
            let lp = match intervention {
                None => head.logits_from_state(state)?,
                Some((basis, push)) => head.logits_from_state(&alter(state, basis, push)?.altered)?,
            };
            hits += gold_in_topk(&lp, gold, k) as usize;
        }
        Ok(hits as f64 / self.len() as f64)
    }
}

/// Fraction of probes whose gold first piece ranks in the top `k`.
pub fn mlm_topk_accuracy(
    model: &EncoderModel,
    probes: &[MaskedProbe],
    k: usize,
    intervention: Option<(&DirectionBasis, &PushSpec)>,
) -> Result<f64> {
    let set = ProbeSet::encode(model, probes)?;
    let head = OutputHead {
        vocab: Vec::new(),
        unembedding: model.unembedding.clone(),
        bias: model.unembedding_bias.clone(),
    };
    set.topk(&head, k, intervention)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub m: usize,
    /// Held-out accuracy of a classifier trained after removing `m`
    /// directions.
    pub classifier_acc: f64,
    /// MLM-top-K with the first `m` directions removed (alpha = 0).
    pub mlm_topk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub chosen_m: usize,
    pub trace: Vec<TracePoint>,
    pub inlp: InlpResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    pub max_m: usize,
    pub threshold: f64,
    pub k: usize,
    pub inlp: InlpConfig,
}

/// Step INLP up to `max_m` removals and keep the largest `m` whose amnesic
/// MLM-top-K stays at or above `threshold`.
pub fn select_iterations(
    head: &OutputHead,
    data: &TokenDataset,
    heldout: &TokenDataset,
    probes: &ProbeSet,
    config: &SelectConfig,
) -> Result<Selection> {
    if !(config.threshold > 0.0) {
        return Err(Error::InvalidParameter(format!("threshold {}", config.threshold)));
    }
    let dim = data.dim();
    if config.max_m > dim {
        return Err(Error::IterationsExceedDim {
            requested: config.max_m,
            dim,
        });
    }
    let mut inlp = InlpResult::empty(dim);
    let mut trace = Vec::with_capacity(config.max_m + 1);
    for m in 0..=config.max_m {
        // the classifier for point m is trained after m removals
        let classifier_acc = if m < dim {
            inlp = step_inlp(&inlp, data, heldout, &config.inlp)?;
            inlp.accuracy_trace[m]
        } else {
            0.5
        };
        let basis = inlp.basis_after(m);
        let mlm_topk = probes.topk(head, config.k, Some((&basis, &PushSpec::amnesic())))?;
        log::info!("select m={m}: classifier {classifier_acc:.4}, mlm-top{} {mlm_topk:.4}", config.k);
        trace.push(TracePoint {
            m,
            classifier_acc,
            mlm_topk,
        });
    }
    let chosen = trace.iter().rev().find(|t| t.mlm_topk >= config.threshold).map(|t| t.m);
    match chosen {
        Some(chosen_m) => Ok(Selection {
            chosen_m,
            trace,
            inlp,
        }),
        None => Err(Error::ThresholdNeverMet {
            threshold: config.threshold,
            trace,
        }),
    }
}

/// Metrics per grid value, both push directions.
pub fn alpha_sweep(
    items: &[PreparedItem],
    head: &OutputHead,
    basis: &DirectionBasis,
    iterations: usize,
    pair: &LanguagePair,
    grid: &[f64],
) -> Result<Vec<MetricsTable>> {
    if grid.is_empty() || grid.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidParameter("alpha grid must be non-empty and finite".into()));
    }
    grid.iter()
        .map(|&alpha| {
            let records = score_all(items, head, basis, iterations, pair, alpha)?;
            aggregate(&records)
        })
        .collect()
}

/// Every item under both push directions.
pub fn score_all(
    items: &[PreparedItem],
    head: &OutputHead,
    basis: &DirectionBasis,
    iterations: usize,
    pair: &LanguagePair,
    alpha: f64,
) -> Result<Vec<ShiftRecord>> {
    let mut out = Vec::with_capacity(items.len() * 2);
    for dir in TemplateDir::ALL {
        for p in items {
            out.push(score_prepared(p, head, basis, iterations, pair, dir, alpha)?);
        }
    }
    Ok(out)
}

/// Whole words ranked by their averaged piece score at the mask.
pub fn top_completions(
    head: &OutputHead,
    vocab: &Vocabulary,
    state: &[f64],
    intervention: Option<(&DirectionBasis, &PushSpec)>,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let lp = match intervention {
        None => head.logits_from_state(state)?,
        Some((basis, push)) => head.logits_from_state(&alter(state, basis, push)?.altered)?,
    };
    let mut scored: Vec<(String, f64)> = vocab
        .words()
        .map(|(w, pieces)| Ok((w.to_string(), word_logprob(&lp, pieces)?)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Table-6 style block: pre-intervention and one row per pushed language.
pub fn completion_table(
    head: &OutputHead,
    vocab: &Vocabulary,
    item: &PreparedItem,
    basis: &DirectionBasis,
    pair: &LanguagePair,
    alpha: f64,
    k: usize,
) -> Result<String> {
    let mut masked = item.item.words.clone();
    masked[item.item.mask_word] = "[MASK]".into();
    let fmt_row = |words: &[(String, f64)]| words.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(", ");
    let mut out = format!("{}\n", masked.join(" "));
    out.push_str(&format!("  pre: {}\n", fmt_row(&top_completions(head, vocab, &item.state, None, k)?)));
    let mut rows = BTreeMap::new();
    for (tag, side) in [(&pair.l2, Side::L2), (&pair.l1, Side::L1)] {
        let push = PushSpec::toward(side, alpha)?;
        rows.insert(tag.clone(), fmt_row(&top_completions(head, vocab, &item.state, Some((basis, &push)), k)?));
        out.push_str(&format!("  pushed to {tag}: {}\n", rows[tag]));
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(values: &[T]) -> Result<String> {
    let mut out = String::new();
    for v in values {
        out.push_str(&serde_json::to_string(v)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(origin, i + 1, e.to_string())))
        .collect()
}
