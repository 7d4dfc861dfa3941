//! Examples that need a trained toy encoder. One small model is trained once
//! and shared by every test in this file.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use alterlang_core::corpus::{language_family, BilingualDictionary, Language, LanguageSpec, TaggedSentence};
use alterlang_core::eval::{
    alpha_sweep, build_eval_items, mlm_topk_accuracy, prepare_items, score_all, score_item, select_iterations,
    top_completions, LanguagePair, ProbeSet, SelectConfig, TemplateDir,
};
use alterlang_core::mlm::train::chain_posterior;
use alterlang_core::mlm::{
    make_probes, tokenize_words, topk_accuracy, train_toy_mlm, EncoderModel, MaskedProbe, ModelConfig, Tokenized,
    TrainConfig, Vocabulary,
};
use alterlang_core::{
    alter, orthonormalize, run_inlp, DirectionBasis, EmbeddingMatrix, Error, InlpConfig, InlpResult, PushSpec, Side,
    TokenDataset,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Fixture {
    languages: Vec<Language>,
    vocab: Vocabulary,
    model: EncoderModel,
    heldout: Vec<(usize, Tokenized, Vec<usize>)>,
    test_sentences: Vec<TaggedSentence>,
}

fn sample(lang: &Language, n: usize, seed: u64) -> Vec<(Vec<usize>, TaggedSentence)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let idx = lang.sample_indices(&mut rng);
            let s = TaggedSentence::monolingual(lang.surface(&idx), lang.tag());
            (idx, s)
        })
        .collect()
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let languages = language_family(&LanguageSpec::default_family(), 11).unwrap();
        let vocab = Vocabulary::build(&languages, 0.2, 12).unwrap();
        let mut train = Vec::new();
        let mut heldout = Vec::new();
        let mut test_sentences = Vec::new();
        for (k, lang) in languages.iter().enumerate().take(2) {
            for (_, s) in sample(lang, 900, 100 + k as u64) {
                train.push(tokenize_words(&s.words, &vocab).unwrap());
            }
            for (idx, s) in sample(lang, 150, 200 + k as u64) {
                heldout.push((k, tokenize_words(&s.words, &vocab).unwrap(), idx));
                test_sentences.push(s);
            }
        }
        let config = TrainConfig {
            epochs: 12,
            seed: 5,
            ..Default::default()
        };
        let plain: Vec<Tokenized> = heldout.iter().map(|(_, t, _)| t.clone()).collect();
        let (model, _) = train_toy_mlm(&train, &plain, &vocab, ModelConfig::default(), &config).unwrap();
        Fixture {
            languages,
            vocab,
            model,
            heldout,
            test_sentences,
        }
    })
}

fn probes(f: &Fixture) -> Vec<MaskedProbe> {
    let plain: Vec<Tokenized> = f.heldout.iter().map(|(_, t, _)| t.clone()).collect();
    make_probes(&plain, 77)
}

/// Bayes-optimal first-piece top-10 under the generating chain, given the
/// sentence's language.
fn oracle_topk(f: &Fixture, k: usize) -> f64 {
    let plain: Vec<Tokenized> = f.heldout.iter().map(|(_, t, _)| t.clone()).collect();
    let probes = make_probes(&plain, 77);
    let mut hits = 0usize;
    for ((lang_k, tok, idx), probe) in f.heldout.iter().zip(&probes) {
        let lang = &f.languages[*lang_k];
        let masked_word = (0..tok.word_count())
            .find(|&w| tok.pieces_of(w).start == probe.position)
            .expect("probe word");
        let g = &lang.grammar;
        let post = chain_posterior(&g.unigram, &g.transitions, idx, masked_word);
        let mut by_piece: BTreeMap<usize, f64> = BTreeMap::new();
        for (w, p) in lang.words.iter().zip(post.iter()) {
            *by_piece.entry(f.vocab.pieces(w).unwrap()[0]).or_default() += p;
        }
        let gold = by_piece[&probe.gold[0]];
        let above = by_piece.values().filter(|&&p| p > gold).count();
        hits += (above < k) as usize;
    }
    hits as f64 / probes.len() as f64
}

#[test]
fn heldout_top10_reaches_floor_and_stays_under_chain_oracle() {
    let f = fixture();
    let model_acc = topk_accuracy(&f.model, &probes(f), 10).unwrap();
    let oracle = oracle_topk(f, 10);
    assert!(model_acc >= 0.6, "model top-10 {model_acc}");
    assert!(model_acc <= oracle + 0.03, "model {model_acc} beats the chain oracle {oracle}");
}

#[test]
fn untrained_model_is_near_chance() {
    let f = fixture();
    let model = EncoderModel::new(ModelConfig::default(), f.vocab.len(), 3).unwrap();
    let acc = topk_accuracy(&model, &probes(f), 1).unwrap();
    assert!(acc < 5.0 / f.vocab.len() as f64 + 0.02, "top-1 {acc} for {} pieces", f.vocab.len());
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let f = fixture();
    let corpus: Vec<Tokenized> = f.heldout.iter().take(20).map(|(_, t, _)| t.clone()).collect();
    let config = TrainConfig {
        epochs: 0,
        seed: 9,
        ..Default::default()
    };
    let (a, report) = train_toy_mlm(&corpus, &corpus, &f.vocab, ModelConfig::default(), &config).unwrap();
    let (b, _) = train_toy_mlm(&corpus, &corpus, &f.vocab, ModelConfig::default(), &config).unwrap();
    assert!(report.epoch_loss.is_empty());
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn same_seed_trains_identical_parameters() {
    let f = fixture();
    let corpus: Vec<Tokenized> = f.heldout.iter().take(64).map(|(_, t, _)| t.clone()).collect();
    let config = TrainConfig {
        epochs: 2,
        seed: 21,
        ..Default::default()
    };
    let small = ModelConfig {
        dim: 16,
        ff_dim: 32,
        ..Default::default()
    };
    let (a, ra) = train_toy_mlm(&corpus, &corpus, &f.vocab, small, &config).unwrap();
    let (b, rb) = train_toy_mlm(&corpus, &corpus, &f.vocab, small, &config).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(ra, rb);
}

#[test]
fn swapping_two_positions_changes_their_states() {
    let f = fixture();
    let ids = f.heldout[0].1.ids.clone();
    let mut swapped = ids.clone();
    let j = (1..ids.len()).find(|&j| ids[j] != ids[0]).unwrap();
    swapped.swap(0, j);
    let a = f.model.encode(&ids).unwrap();
    let b = f.model.encode(&swapped).unwrap();
    // the same token sits at position 0 in `ids` and at position j in `swapped`
    let diff: f64 = a.row(0).iter().zip(b.row(j).iter()).map(|(x, y)| (x - y).abs()).sum();
    assert!(diff > 1e-6, "state unchanged under a position swap");
}

fn random_basis(dim: usize, m: usize, seed: u64) -> DirectionBasis {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<Vec<f64>> = (0..m).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    orthonormalize(&raw).unwrap()
}

fn masked(f: &Fixture) -> (Vec<usize>, usize) {
    let p = &probes(f)[3];
    (p.ids.clone(), p.position)
}

#[test]
fn predict_masked_without_intervention_is_encode_plus_head() {
    let f = fixture();
    let (ids, pos) = masked(f);
    let states = f.model.encode(&ids).unwrap();
    let direct = f.model.logits_from_state(&states.row(pos).to_vec()).unwrap();
    assert_eq!(f.model.predict_masked(&ids, pos, None).unwrap(), direct);
}

#[test]
fn zero_alpha_is_the_nullspace_component() {
    let f = fixture();
    let (ids, pos) = masked(f);
    let basis = random_basis(f.model.dim(), 4, 1);
    let mut h = f.model.mask_state(&ids, pos).unwrap();
    for u in basis.directions() {
        let c: f64 = h.iter().zip(u).map(|(a, b)| a * b).sum();
        h.iter_mut().zip(u).for_each(|(x, ui)| *x -= c * ui);
    }
    let expected = f.model.logits_from_state(&h).unwrap();
    let got = f.model.predict_masked(&ids, pos, Some((&basis, &PushSpec::amnesic()))).unwrap();
    let err = expected.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-9, "max error {err}");
}

#[test]
fn opposite_pushes_give_different_normalized_distributions() {
    let f = fixture();
    let (ids, pos) = masked(f);
    let basis = random_basis(f.model.dim(), 4, 2);
    let p1 = f.model.predict_masked(&ids, pos, Some((&basis, &PushSpec::toward(Side::L1, 3.0).unwrap()))).unwrap();
    let p2 = f.model.predict_masked(&ids, pos, Some((&basis, &PushSpec::toward(Side::L2, 3.0).unwrap()))).unwrap();
    for lp in [&p1, &p2] {
        let lse = lp.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!(lse.abs() < 1e-6);
    }
    let tv: f64 = 0.5 * p1.iter().zip(&p2).map(|(a, b)| (a.exp() - b.exp()).abs()).sum::<f64>();
    assert!(tv > 0.0);
}

#[test]
fn mlm_topk_edge_cases() {
    let f = fixture();
    let probes = probes(f);
    assert_eq!(mlm_topk_accuracy(&f.model, &probes, f.vocab.len(), None).unwrap(), 1.0);
    let none = mlm_topk_accuracy(&f.model, &probes, 10, None).unwrap();
    let empty = DirectionBasis::empty(f.model.dim());
    let m0 = mlm_topk_accuracy(&f.model, &probes, 10, Some((&empty, &PushSpec::amnesic()))).unwrap();
    assert_eq!(none, m0);
    assert!(matches!(mlm_topk_accuracy(&f.model, &[], 10, None), Err(Error::EmptyDataset)));
}

fn language_dataset(f: &Fixture, probes: &[MaskedProbe]) -> (ProbeSet, TokenDataset) {
    let set = ProbeSet::encode(&f.model, probes).unwrap();
    let labels: Vec<Side> = f.heldout.iter().map(|(k, _, _)| if *k == 0 { Side::L1 } else { Side::L2 }).collect();
    let data = TokenDataset::new(EmbeddingMatrix::from_rows(&set.states).unwrap(), labels).unwrap();
    (set, data)
}

#[test]
fn selection_threshold_above_one_is_never_met() {
    let f = fixture();
    let probes = probes(f);
    let (set, data) = language_dataset(f, &probes);
    let head = f.model.head(f.vocab.entries().to_vec()).unwrap();
    let config = SelectConfig {
        max_m: 2,
        threshold: 1.01,
        k: 10,
        inlp: InlpConfig::default(),
    };
    match select_iterations(&head, &data, &data, &set, &config) {
        Err(Error::ThresholdNeverMet { trace, .. }) => assert_eq!(trace.len(), 3),
        other => panic!("expected ThresholdNeverMet, got {other:?}"),
    }
}

#[test]
fn selection_on_separable_states_keeps_some_directions() {
    let f = fixture();
    let probes = probes(f);
    let (set, data) = language_dataset(f, &probes);
    let head = f.model.head(f.vocab.entries().to_vec()).unwrap();
    let config = SelectConfig {
        max_m: 4,
        threshold: 0.9 * set.topk(&head, 10, None).unwrap(),
        k: 10,
        inlp: InlpConfig {
            masking_rate: 0.0,
            ..Default::default()
        },
    };
    let sel = select_iterations(&head, &data, &data, &set, &config).unwrap();
    assert!(sel.chosen_m >= 1, "trace {:?}", sel.trace);
    assert_eq!(sel.trace[0].mlm_topk, set.topk(&head, 10, None).unwrap());
}

struct EvalSetup {
    prepared: Vec<alterlang_core::eval::PreparedItem>,
    items: Vec<alterlang_core::eval::EvalItem>,
    inlp: InlpResult,
}

fn eval_setup(f: &Fixture) -> EvalSetup {
    let dict = BilingualDictionary::aligned(&f.languages[0], &f.languages[1]);
    let a: Vec<TaggedSentence> = f.test_sentences.iter().filter(|s| s.dominant_tag() == Some("A")).take(40).cloned().collect();
    let (items, skipped) = build_eval_items(&a, &dict, &f.vocab, "C", 4);
    assert!(skipped.is_empty());
    let prepared = prepare_items(&f.model, &f.vocab, &items).unwrap();
    let (_, data) = language_dataset(f, &probes(f));
    let config = InlpConfig {
        iterations: 3,
        masking_rate: 0.0,
        ..Default::default()
    };
    let inlp = run_inlp(&data, &data, &config).unwrap();
    assert_eq!(inlp.basis_after(3).len(), 3);
    EvalSetup { prepared, items, inlp }
}

#[test]
fn before_scores_do_not_depend_on_the_intervention() {
    let f = fixture();
    let s = eval_setup(f);
    let head = f.model.head(f.vocab.entries().to_vec()).unwrap();
    let pair = LanguagePair::new("A", "B");
    let r1 = score_all(&s.prepared, &head, &s.inlp.basis_after(1), 1, &pair, 1.0).unwrap();
    let r3 = score_all(&s.prepared, &head, &s.inlp.basis_after(3), 3, &pair, 6.0).unwrap();
    for (a, b) in r1.iter().zip(&r3) {
        assert_eq!(a.before, b.before);
        assert!(a.before.iter().chain(&a.after).all(|x| x.is_finite() && *x <= 0.0));
    }
}

#[test]
fn score_item_is_deterministic_and_matches_prepared_scoring() {
    let f = fixture();
    let s = eval_setup(f);
    let head = f.model.head(f.vocab.entries().to_vec()).unwrap();
    let pair = LanguagePair::new("A", "B");
    let a = score_item(&s.items[0], &f.model, &f.vocab, &s.inlp, 3, &pair, TemplateDir::Opposite, 3.0).unwrap();
    let b = score_item(&s.items[0], &f.model, &f.vocab, &s.inlp, 3, &pair, TemplateDir::Opposite, 3.0).unwrap();
    assert_eq!(a, b);
    let batch = score_all(&s.prepared[..1], &head, &s.inlp.basis_after(3), 3, &pair, 3.0).unwrap();
    assert_eq!(batch[1], a);
}

#[test]
fn sweep_singleton_and_zero_grids() {
    let f = fixture();
    let s = eval_setup(f);
    let head = f.model.head(f.vocab.entries().to_vec()).unwrap();
    let pair = LanguagePair::new("A", "B");
    let basis = s.inlp.basis_after(3);
    let single = alterlang_core::eval::aggregate(&score_all(&s.prepared, &head, &basis, 3, &pair, 3.0).unwrap()).unwrap();
    assert_eq!(alpha_sweep(&s.prepared, &head, &basis, 3, &pair, &[3.0]).unwrap(), vec![single]);

    alpha_sweep(&s.prepared, &head, &basis, 3, &pair, &[0.0]).unwrap();
    for r in score_all(&s.prepared, &head, &basis, 3, &pair, 0.0).unwrap() {
        let p = s.prepared.iter().find(|p| p.before == r.before).unwrap();
        let amnesic = alter(&p.state, &basis, &PushSpec::amnesic()).unwrap().altered;
        let lp = head.logits_from_state(&amnesic).unwrap();
        let target = &p.item.candidates[0].pieces;
        let expected = target.iter().map(|&i| lp[i]).sum::<f64>() / target.len() as f64;
        assert!((r.after[0] - expected).abs() < 1e-12);
    }
    assert!(alpha_sweep(&s.prepared, &head, &basis, 3, &pair, &[]).is_err());
}

#[test]
fn top_completions_are_deterministic_and_move_under_a_push() {
    let f = fixture();
    let s = eval_setup(f);
    let head = f.model.head(f.vocab.entries().to_vec()).unwrap();
    let state = &s.prepared[0].state;
    let pre = top_completions(&head, &f.vocab, state, None, 5).unwrap();
    assert_eq!(pre, top_completions(&head, &f.vocab, state, None, 5).unwrap());
    assert_eq!(pre.len(), 5);
    let basis = s.inlp.basis_after(3);
    let push = PushSpec::toward(Side::L2, 3.0).unwrap();
    let post = top_completions(&head, &f.vocab, state, Some((&basis, &push)), 5).unwrap();
    assert_ne!(pre, post);
}
