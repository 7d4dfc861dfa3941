//! Config-driven experiment stages.
//!
//! Every stage reads what earlier stages left under the output directory
//! and writes its own files atomically, so each one can be rerun alone.
//! [`run_experiment`] chains them in [`Stage::ALL`] order.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alterrep::{DEFAULT_ALPHA, DEFAULT_ALPHA_GRID};
use crate::classifier::{balanced_sample, ClassifierConfig, TokenDataset};
use crate::corpus::{
    code_mix, language_family, make_splits, read_tagged_corpus, write_tagged_corpus, BilingualDictionary,
    LanguageSpec, SplitSizes, TaggedSentence,
};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, alpha_sweep, build_eval_items, completion_table, from_jsonl, prepare_items, score_all,
    select_iterations, to_jsonl, LanguagePair, MetricsTable, PreparedItem, ProbeSet, SelectConfig, ShiftRecord,
    TracePoint,
};
use crate::inlp::{run_inlp, InlpConfig, InlpResult};
use crate::mlm::interchange::{bundles_to_dataset, check_compatible, TokenRef};
use crate::mlm::{
    corpus_bundles, export_head, export_states, import_head, import_states, tokenize_words,
    train_toy_mlm, EncoderModel, MaskedProbe, ModelConfig, OutputHead, StateBundle, TrainConfig, TrainReport, Tokenized,
    Vocabulary,
};
use crate::rng;

/// Write to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Directions removed by the code-mixed recipe unless set explicitly.
pub const CODE_MIXED_ITERATIONS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    /// Classifier trained on monolingual sentences of both languages.
    Monolingual,
    /// Classifier trained on code-mixed sentences with per-word tags.
    CodeMixed,
}

/// One seed per stage family. All are explicit; nothing is read from the
/// clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub corpus: u64,
    pub vocab: u64,
    pub model: u64,
    pub states: u64,
    pub inlp: u64,
    pub eval: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Self {
            corpus: rng::derive(seed, 1),
            vocab: rng::derive(seed, 2),
            model: rng::derive(seed, 3),
            states: rng::derive(seed, 4),
            inlp: rng::derive(seed, 5),
            eval: rng::derive(seed, 6),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::from_master(7)
    }
}

/// Externally computed states and head that replace corpus generation and
/// toy-model training. Only the selection and INLP stages can use them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalInputs {
    pub states: PathBuf,
    pub heldout_states: PathBuf,
    pub head: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub recipe: Recipe,
    pub languages: Vec<LanguageSpec>,
    /// Classifier side L1.
    pub l1: String,
    /// Classifier side L2.
    pub l2: String,
    /// Control language for the third-language candidates.
    pub third: String,
    /// Share of each inventory split into two pieces.
    pub split_fraction: f64,
    /// Per-language sentence counts.
    pub sizes: SplitSizes,
    pub model: ModelConfig,
    pub training: TrainConfig,
    /// Training sentences per language used for classifier states.
    pub classifier_sentences: usize,
    /// Validation sentences per language used for held-out accuracy.
    pub heldout_sentences: usize,
    pub masking_rate: f64,
    pub code_mix_rate: f64,
    pub classifier: ClassifierConfig,
    /// Fixed number of INLP directions. `None` selects it automatically for
    /// the monolingual recipe and means 16 for the code-mixed one.
    pub iterations: Option<usize>,
    pub max_iterations: usize,
    /// MLM-top-K floor for automatic selection.
    pub threshold: f64,
    pub topk: usize,
    pub alpha: f64,
    pub alpha_grid: Vec<f64>,
    pub completion_samples: usize,
    pub completion_k: usize,
    pub seeds: Seeds,
    pub out_dir: Option<PathBuf>,
    pub external: Option<ExternalInputs>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            recipe: Recipe::Monolingual,
            languages: LanguageSpec::default_family(),
            l1: "A".into(),
            l2: "B".into(),
            third: "C".into(),
            split_fraction: 0.2,
            sizes: SplitSizes::MONOLINGUAL,
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            classifier_sentences: 400,
            heldout_sentences: 100,
            masking_rate: 0.15,
            code_mix_rate: 0.3,
            classifier: ClassifierConfig::default(),
            iterations: None,
            max_iterations: 16,
            threshold: 0.9,
            topk: 10,
            alpha: DEFAULT_ALPHA,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            completion_samples: 5,
            completion_k: 5,
            seeds: Seeds::default(),
            out_dir: None,
            external: None,
        }
    }
}

impl ExperimentConfig {
    /// Classifier trained on code-mixed sentences with 16 directions removed.
    pub fn code_mixed() -> Self {
        Self {
            recipe: Recipe::CodeMixed,
            iterations: Some(CODE_MIXED_ITERATIONS),
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let config: Self = serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.line(), e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The direction count used without selection, if any.
    pub fn fixed_iterations(&self) -> Option<usize> {
        match (self.iterations, self.recipe) {
            (Some(m), _) => Some(m),
            (None, Recipe::CodeMixed) => Some(CODE_MIXED_ITERATIONS),
            (None, Recipe::Monolingual) => None,
        }
    }

    pub fn pair(&self) -> LanguagePair {
        LanguagePair::new(&self.l1, &self.l2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.external.is_none() {
            for tag in [&self.l1, &self.l2, &self.third] {
                if !self.languages.iter().any(|l| &l.tag == tag) {
                    return bad(format!("language {tag} is referenced but not defined"));
                }
            }
        }
        if self.l1 == self.l2 || self.third == self.l1 || self.third == self.l2 {
            return bad("l1, l2 and third must be distinct".into());
        }
        if !(0.0..=1.0).contains(&self.split_fraction) || !(0.0..=1.0).contains(&self.code_mix_rate) {
            return bad("split_fraction and code_mix_rate must lie in [0, 1]".into());
        }
        if !(self.masking_rate > 0.0 && self.masking_rate <= 1.0) {
            return bad(format!("masking_rate {}", self.masking_rate));
        }
        if self.classifier_sentences == 0 || self.classifier_sentences > self.sizes.train {
            return bad("classifier_sentences must be in 1..=sizes.train".into());
        }
        if self.heldout_sentences == 0 || self.heldout_sentences > self.sizes.validation {
            return bad("heldout_sentences must be in 1..=sizes.validation".into());
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad(format!("threshold {}", self.threshold));
        }
        if self.topk == 0 {
            return bad("topk must be at least 1".into());
        }
        if self.alpha_grid.is_empty() || !self.alpha.is_finite() || self.alpha_grid.iter().any(|a| !a.is_finite()) {
            return bad("alpha and alpha_grid must be finite and the grid non-empty".into());
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    GenCorpus,
    TrainMlm,
    ExportStates,
    SelectIters,
    TrainInlp,
    AlterEval,
    AlphaSweep,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::GenCorpus,
        Stage::TrainMlm,
        Stage::ExportStates,
        Stage::SelectIters,
        Stage::TrainInlp,
        Stage::AlterEval,
        Stage::AlphaSweep,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::GenCorpus => "gen-corpus",
            Stage::TrainMlm => "train-mlm",
            Stage::ExportStates => "export-states",
            Stage::SelectIters => "select-iters",
            Stage::TrainInlp => "train-inlp",
            Stage::AlterEval => "alter-eval",
            Stage::AlphaSweep => "alpha-sweep",
            Stage::Report => "report",
        }
    }

    /// Stages that consume only externally supplied states.
    fn runs_with_external(self) -> bool {
        matches!(self, Stage::SelectIters | Stage::TrainInlp | Stage::Report)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown stage {s:?}")))
    }
}

/// File layout under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn languages(&self) -> PathBuf {
        self.root.join("corpus/languages.json")
    }
    pub fn vocab(&self) -> PathBuf {
        self.root.join("corpus/vocab.json")
    }
    pub fn dictionary(&self, l1: &str, l2: &str) -> PathBuf {
        self.root.join(format!("corpus/{l1}-{l2}.dict"))
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("mlm/model.json")
    }
    pub fn train_report(&self) -> PathBuf {
        self.root.join("mlm/train_report.json")
    }
    pub fn classifier_states(&self) -> PathBuf {
        self.root.join("states/classifier.jsonl")
    }
    pub fn heldout_states(&self) -> PathBuf {
        self.root.join("states/heldout.jsonl")
    }
    pub fn head(&self) -> PathBuf {
        self.root.join("states/head.json")
    }
    pub fn selection(&self) -> PathBuf {
        self.root.join("inlp/selection.json")
    }
    pub fn inlp(&self) -> PathBuf {
        self.root.join("inlp/inlp.json")
    }
    pub fn records(&self) -> PathBuf {
        self.root.join("eval/records.jsonl")
    }
    pub fn sweep(&self) -> PathBuf {
        self.root.join("eval/sweep.json")
    }
    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn sweep_csv(&self) -> PathBuf {
        self.root.join("sweep.csv")
    }
    pub fn trace(&self) -> PathBuf {
        self.root.join("trace.json")
    }
    pub fn completions(&self) -> PathBuf {
        self.root.join("top_completions.txt")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub chosen_m: usize,
    /// False when the config fixed `m`.
    pub auto: bool,
    pub trace: Vec<TracePoint>,
}

fn split_names() -> [&'static str; 3] {
    ["train", "validation", "test"]
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.line(), e.to_string()))
}

fn load_vocab(layout: &Layout) -> Result<Vocabulary> {
    Vocabulary::from_json(&read_text(&layout.vocab())?)
}

fn load_model(layout: &Layout) -> Result<EncoderModel> {
    EncoderModel::from_json(&read_text(&layout.model())?)
}

fn mixed_stem(tag: &str, split: &str) -> String {
    format!("mixed-{tag}.{split}")
}

/// Sentences whose tokens feed the classifier for `split`: monolingual
/// sentences of both languages, or their code-mixed versions.
fn classifier_sentences(config: &ExperimentConfig, layout: &Layout, split: &str, take: usize) -> Result<Vec<TaggedSentence>> {
    let mut out = Vec::new();
    for tag in [&config.l1, &config.l2] {
        let stem = match config.recipe {
            Recipe::Monolingual => format!("{tag}.{split}"),
            Recipe::CodeMixed => mixed_stem(tag, split),
        };
        let sents = read_tagged_corpus(&layout.corpus_dir(), &stem)?;
        out.extend(sents.into_iter().take(take));
    }
    Ok(out)
}

fn tokenize_all(sentences: &[TaggedSentence], vocab: &Vocabulary) -> Result<Vec<Tokenized>> {
    sentences.iter().map(|s| tokenize_words(&s.words, vocab)).collect()
}

fn gen_corpus(config: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let languages = language_family(&config.languages, config.seeds.corpus)?;
    let vocab = Vocabulary::build(&languages, config.split_fraction, config.seeds.vocab)?;
    let dir = layout.corpus_dir();
    let mut splits = Vec::with_capacity(languages.len());
    for (k, lang) in languages.iter().enumerate() {
        let mut rng = rng::seeded(rng::derive(config.seeds.corpus, 100 + k as u64), 0);
        let pool: Vec<TaggedSentence> = (0..config.sizes.total()).map(|_| lang.sample_sentence(&mut rng)).collect();
        let split = make_splits(&pool, config.sizes, rng::derive(config.seeds.corpus, 200 + k as u64))?;
        for (name, part) in split_names().into_iter().zip([&split.train, &split.validation, &split.test]) {
            write_tagged_corpus(&dir, &format!("{}.{name}", lang.tag()), part)?;
        }
        splits.push((lang.tag().to_string(), split));
    }
    let find = |tag: &str| languages.iter().find(|l| l.tag() == tag).expect("validated tag");
    let dict = BilingualDictionary::aligned(find(&config.l1), find(&config.l2));
    write_atomic(&layout.dictionary(&config.l1, &config.l2), dict.to_muse().as_bytes())?;
    if config.recipe == Recipe::CodeMixed {
        let inverse = dict.inverse();
        for (k, (tag, split)) in splits.iter().enumerate() {
            let d = if *tag == config.l1 {
                &dict
            } else if *tag == config.l2 {
                &inverse
            } else {
                continue;
            };
            for (s, (name, part)) in split_names().into_iter().zip([&split.train, &split.validation, &split.test]).enumerate() {
                let salt = rng::derive(config.seeds.corpus, 300 + (k * 3 + s) as u64);
                let mixed: Vec<TaggedSentence> = part
                    .iter()
                    .enumerate()
                    .map(|(i, sent)| code_mix(sent, d, config.code_mix_rate, rng::derive(salt, i as u64)).sentence)
                    .collect();
                write_tagged_corpus(&dir, &mixed_stem(tag, name), &mixed)?;
            }
        }
    }
    write_json(&layout.languages(), &languages)?;
    write_atomic(&layout.vocab(), vocab.to_json()?.as_bytes())
}

fn train_mlm(config: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let vocab = load_vocab(layout)?;
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for spec in &config.languages {
        train.extend(tokenize_all(&read_tagged_corpus(&layout.corpus_dir(), &format!("{}.train", spec.tag))?, &vocab)?);
        heldout.extend(tokenize_all(&read_tagged_corpus(&layout.corpus_dir(), &format!("{}.validation", spec.tag))?, &vocab)?);
    }
    let training = TrainConfig {
        seed: config.seeds.model,
        ..config.training
    };
    let (model, report) = train_toy_mlm(&train, &heldout, &vocab, config.model, &training)?;
    log::info!(
        "toy MLM: held-out top-1 {:.3}, top-{} {:.3}",
        report.heldout_top1,
        report.k,
        report.heldout_topk
    );
    write_json(&layout.train_report(), &report)?;
    write_atomic(&layout.model(), model.to_json()?.as_bytes())
}

fn export_stage(config: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let vocab = load_vocab(layout)?;
    let model = load_model(layout)?;
    let train = classifier_sentences(config, layout, "train", config.classifier_sentences)?;
    let heldout = classifier_sentences(config, layout, "validation", config.heldout_sentences)?;
    let seed = config.seeds.states;
    export_states(&corpus_bundles(&model, &vocab, &train, config.masking_rate, seed)?, &layout.classifier_states())?;
    export_states(
        &corpus_bundles(&model, &vocab, &heldout, config.masking_rate, rng::derive(seed, 1))?,
        &layout.heldout_states(),
    )?;
    export_head(&model.head(vocab.entries().to_vec())?, &layout.head())
}

struct InlpInputs {
    head: OutputHead,
    data: TokenDataset,
    heldout: TokenDataset,
    probes: ProbeSet,
}

fn inlp_inputs(config: &ExperimentConfig, layout: &Layout) -> Result<InlpInputs> {
    let (states, heldout_states, head_path) = match &config.external {
        Some(ext) => (ext.states.clone(), ext.heldout_states.clone(), ext.head.clone()),
        None => (layout.classifier_states(), layout.heldout_states(), layout.head()),
    };
    let head = import_head(&head_path)?;
    let train = import_states(&states)?;
    let held = import_states(&heldout_states)?;
    check_compatible(&train, &head, &states.display().to_string())?;
    check_compatible(&held, &head, &heldout_states.display().to_string())?;
    let data = balanced_sample(&bundles_to_dataset(&train, &config.l1, &config.l2)?, config.seeds.inlp)?;
    let heldout = bundles_to_dataset(&held, &config.l1, &config.l2)?;
    let probes = match config.external {
        Some(_) => probes_from_bundles(&held, &head)?,
        None => {
            let vocab = load_vocab(layout)?;
            let model = load_model(layout)?;
            let mut sentences = Vec::new();
            for tag in [&config.l1, &config.l2] {
                sentences.extend(read_tagged_corpus(&layout.corpus_dir(), &format!("{tag}.test"))?);
            }
            // every word of every test sentence, masked one at a time
            let probes: Vec<MaskedProbe> = tokenize_all(&sentences, &vocab)?
                .iter()
                .flat_map(|t| (0..t.word_count()).map(move |w| MaskedProbe::new(t, w)))
                .collect();
            ProbeSet::encode(&model, &probes)?
        }
    };
    Ok(InlpInputs {
        head,
        data,
        heldout,
        probes,
    })
}

/// Mask states of word-initial pieces paired with the piece itself.
/// Continuation pieces carry a `##` prefix.
pub fn probes_from_bundles(bundles: &[StateBundle], head: &OutputHead) -> Result<ProbeSet> {
    let mut states = Vec::new();
    let mut gold_first = Vec::new();
    for b in bundles {
        let Some(mask) = &b.mask_states else { continue };
        for (i, t) in b.tokens.iter().enumerate() {
            let id = match t {
                TokenRef::Id(id) => *id,
                TokenRef::Piece(p) => match head.vocab.iter().position(|v| v == p) {
                    Some(id) => id,
                    None => continue,
                },
            };
            if head.vocab.get(id).is_none_or(|p| p.starts_with("##")) {
                continue;
            }
            states.push(mask.row(i).to_vec());
            gold_first.push(id);
        }
    }
    if states.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(ProbeSet { states, gold_first })
}

fn inlp_config(config: &ExperimentConfig, iterations: usize) -> InlpConfig {
    InlpConfig {
        iterations,
        classifier: config.classifier.clone(),
        masking_rate: config.masking_rate,
        seed: config.seeds.inlp,
    }
}

fn select_stage(config: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let inputs = inlp_inputs(config, layout)?;
    let select = SelectConfig {
        max_m: config.max_iterations,
        threshold: config.threshold,
        k: config.topk,
        inlp: inlp_config(config, 0),
    };
    let fixed = config.fixed_iterations();
    let record = match select_iterations(&inputs.head, &inputs.data, &inputs.heldout, &inputs.probes, &select) {
        Ok(sel) => SelectionRecord {
            chosen_m: fixed.unwrap_or(sel.chosen_m),
            auto: fixed.is_none(),
            trace: sel.trace,
        },
        Err(Error::ThresholdNeverMet { trace, .. }) if fixed.is_some() => SelectionRecord {
            chosen_m: fixed.unwrap_or_default(),
            auto: false,
            trace,
        },
        Err(Error::ThresholdNeverMet { threshold, trace }) => {
            write_json(&layout.trace(), &trace)?;
            return Err(Error::ThresholdNeverMet { threshold, trace });
        }
        Err(e) => return Err(e),
    };
    write_json(&layout.trace(), &record.trace)?;
    write_json(&layout.selection(), &record)
}

fn inlp_stage(config: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let m = match config.fixed_iterations() {
        Some(m) => m,
        None => read_json::<SelectionRecord>(&layout.selection())?.chosen_m,
    };
    let inputs = inlp_inputs(config, layout)?;
    let result = run_inlp(&inputs.data, &inputs.heldout, &inlp_config(config, m))?;
    write_atomic(&layout.inlp(), result.to_json()?.as_bytes())
}

struct EvalInputs {
    vocab: Vocabulary,
    head: OutputHead,
    inlp: InlpResult,
    prepared: Vec<PreparedItem>,
}

fn eval_inputs(config: &ExperimentConfig, layout: &Layout) -> Result<EvalInputs> {
    if config.external.is_some() {
        return Err(Error::InvalidParameter(
            "evaluation needs the toy model; external inputs support select-iters and train-inlp only".into(),
        ));
    }
    let vocab = load_vocab(layout)?;
    let model = load_model(layout)?;
    let inlp = InlpResult::from_json(&read_text(&layout.inlp())?)?;
    let dict = BilingualDictionary::parse_muse(
        &read_text(&layout.dictionary(&config.l1, &config.l2))?,
        &config.l1,
        &config.l2,
        &layout.dictionary(&config.l1, &config.l2).display().to_string(),
    )?;
    let mut items = Vec::new();
    for (k, (tag, d)) in [(&config.l1, dict.clone()), (&config.l2, dict.inverse())].into_iter().enumerate() {
        let stem = match config.recipe {
            Recipe::Monolingual => format!("{tag}.test"),
            Recipe::CodeMixed => mixed_stem(tag, "test"),
        };
        let sentences = read_tagged_corpus(&layout.corpus_dir(), &stem)?;
        let seed = rng::derive(config.seeds.eval, 1 + k as u64);
        items.extend(build_eval_items(&sentences, &d, &vocab, &config.third, seed).0);
    }
    let prepared = prepare_items(&model, &vocab, &items)?;
    let head = model.head(vocab.entries().to_vec())?;
    Ok(EvalInputs {
        vocab,
        head,
        inlp,
        prepared,
    })
}

fn alter_stage(config: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let e = eval_inputs(config, layout)?;
    let m = e.inlp.iterations();
    let records = score_all(&e.prepared, &e.head, &e.inlp.basis_after(m), m, &config.pair(), config.alpha)?;
    write_atomic(&layout.records(), to_jsonl(&records)?.as_bytes())
}

fn sweep_stage(config: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let e = eval_inputs(config, layout)?;
    let m = e.inlp.iterations();
    let tables = alpha_sweep(&e.prepared, &e.head, &e.inlp.basis_after(m), m, &config.pair(), &config.alpha_grid)?;
    write_json(&layout.sweep(), &tables)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub recipe: Recipe,
    pub seeds: Seeds,
    pub chosen_m: Option<usize>,
    pub alpha: f64,
    pub topk: usize,
    pub train_report: Option<TrainReport>,
    pub files: Vec<String>,
}

/// Everything the report files are rendered from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportBundle {
    pub metrics: Option<MetricsTable>,
    pub sweep: Vec<MetricsTable>,
    pub trace: Vec<TracePoint>,
    pub completions: String,
    pub manifest: Option<Manifest>,
}

impl ReportBundle {
    pub fn is_empty(&self) -> bool {
        self.metrics.is_none() && self.sweep.is_empty() && self.trace.is_empty() && self.completions.is_empty()
    }
}

/// Sweep tables as one CSV with a leading `alpha` column.
pub fn sweep_csv(tables: &[MetricsTable]) -> String {
    let mut out = String::from("alpha,template_dir,candidate_class,proportion_expected,mean_delta_logp,n\n");
    for t in tables {
        for line in t.to_csv().lines().skip(1) {
            out.push_str(&format!("{},{line}\n", t.alpha));
        }
    }
    out
}

/// Render `bundle` into `dir`: `metrics.csv`, `sweep.csv`, `trace.json`,
/// `top_completions.txt` and `manifest.json`, each only when it has
/// content.
pub fn emit_report(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    if bundle.is_empty() {
        return Err(Error::io(dir, io::Error::new(io::ErrorKind::InvalidInput, "report bundle is empty")));
    }
    let layout = Layout::new(dir);
    let mut written = Vec::new();
    if let Some(m) = &bundle.metrics {
        write_atomic(&layout.metrics_csv(), m.to_csv().as_bytes())?;
        written.push(layout.metrics_csv());
    }
    if !bundle.sweep.is_empty() {
        write_atomic(&layout.sweep_csv(), sweep_csv(&bundle.sweep).as_bytes())?;
        written.push(layout.sweep_csv());
    }
    if !bundle.trace.is_empty() {
        write_json(&layout.trace(), &bundle.trace)?;
        written.push(layout.trace());
    }
    if !bundle.completions.is_empty() {
        write_atomic(&layout.completions(), bundle.completions.as_bytes())?;
        written.push(layout.completions());
    }
    if let Some(manifest) = &bundle.manifest {
        let mut manifest = manifest.clone();
        manifest.files = written
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        write_json(&layout.manifest(), &manifest)?;
        written.push(layout.manifest());
    }
    Ok(written)
}

fn optional<T>(path: &Path, load: impl FnOnce(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        load(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Collect whatever earlier stages produced under `layout`.
pub fn collect_report(config: &ExperimentConfig, layout: &Layout) -> Result<ReportBundle> {
    let records: Option<Vec<ShiftRecord>> =
        optional(&layout.records(), |p| from_jsonl(&read_text(p)?, &p.display().to_string()))?;
    let metrics = records.as_deref().map(aggregate).transpose()?;
    let sweep: Vec<MetricsTable> = optional(&layout.sweep(), read_json)?.unwrap_or_default();
    let selection: Option<SelectionRecord> = optional(&layout.selection(), read_json)?;
    let trace = selection.as_ref().map(|s| s.trace.clone()).unwrap_or_default();
    let completions = if config.external.is_none() && layout.inlp().exists() && config.completion_samples > 0 {
        let e = eval_inputs(config, layout)?;
        let m = e.inlp.iterations();
        let basis = e.inlp.basis_after(m);
        let mut text = String::new();
        for p in e.prepared.iter().take(config.completion_samples) {
            text.push_str(&completion_table(&e.head, &e.vocab, p, &basis, &config.pair(), config.alpha, config.completion_k)?);
            text.push('\n');
        }
        text
    } else {
        String::new()
    };
    let train_report = optional(&layout.train_report(), read_json)?;
    Ok(ReportBundle {
        metrics,
        sweep,
        trace,
        completions,
        manifest: Some(Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            recipe: config.recipe,
            seeds: config.seeds,
            chosen_m: selection.map(|s| s.chosen_m).or(config.fixed_iterations()),
            alpha: config.alpha,
            topk: config.topk,
            train_report,
            files: Vec::new(),
        }),
    })
}

fn report_stage(config: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let bundle = collect_report(config, layout)?;
    emit_report(&bundle, layout.root())?;
    Ok(())
}

/// Run one stage; errors carry the stage label.
pub fn run_stage(config: &ExperimentConfig, out: &Path, stage: Stage) -> Result<()> {
    let layout = Layout::new(out);
    let result = (|| {
        config.validate()?;
        if config.external.is_some() && !stage.runs_with_external() {
            log::info!("{stage}: skipped, external states supplied");
            return Ok(());
        }
        write_atomic(&out.join("config.json"), config.to_json()?.as_bytes())?;
        match stage {
            Stage::GenCorpus => gen_corpus(config, &layout),
            Stage::TrainMlm => train_mlm(config, &layout),
            Stage::ExportStates => export_stage(config, &layout),
            Stage::SelectIters => select_stage(config, &layout),
            Stage::TrainInlp => inlp_stage(config, &layout),
            Stage::AlterEval => alter_stage(config, &layout),
            Stage::AlphaSweep => sweep_stage(config, &layout),
            Stage::Report => report_stage(config, &layout),
        }
    })();
    result.map_err(|e| e.in_stage(stage.as_str()))
}

/// Every stage in order, then the collected report.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<ReportBundle> {
    let stages: Vec<Stage> = Stage::ALL
        .into_iter()
        .filter(|s| config.external.is_none() || s.runs_with_external())
        .collect();
    for stage in stages {
        log::info!("stage {stage}");
        run_stage(config, out, stage)?;
    }
    collect_report(config, &Layout::new(out)).map_err(|e| e.in_stage(Stage::Report.as_str()))
}
