use alterlang_core::corpus::{language_family, BilingualDictionary, LanguageSpec, TaggedSentence};
use alterlang_core::eval::{aggregate, build_eval_item, word_logprob, CandidateClass, CandidateKind, ShiftRecord, TemplateDir};
use alterlang_core::mlm::{OutputHead, Vocabulary};
use alterlang_core::{
    alter, orthonormalize, run_inlp, split, EmbeddingMatrix, Error, InlpConfig, PushSpec, Side, TokenDataset,
};
use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn basis_and_vector(dim: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (
        proptest::collection::vec(proptest::collection::vec(-4.0f64..4.0, dim), 1..dim),
        proptest::collection::vec(-4.0f64..4.0, dim),
    )
}

fn record(dir: TemplateDir, deltas: [f64; 5]) -> ShiftRecord {
    let before = [-5.0; 5];
    let mut after = before;
    after.iter_mut().zip(deltas).for_each(|(a, d)| *a += d);
    ShiftRecord {
        template: "A".into(),
        template_dir: dir,
        alpha: 3.0,
        iterations: 4,
        before,
        after,
    }
}

fn records() -> impl Strategy<Value = Vec<ShiftRecord>> {
    proptest::collection::vec(
        (any::<bool>(), proptest::array::uniform5(prop_oneof![Just(0.0), -2.0f64..2.0])),
        1..12,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(same, d)| record(if same { TemplateDir::Same } else { TemplateDir::Opposite }, d))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nullspace_split_is_idempotent_and_pythagorean((raw, h) in basis_and_vector(7)) {
        let Ok(basis) = orthonormalize(&raw) else { return Ok(()) };
        let s = split(&h, &basis).unwrap();
        let again = split(&s.null_component, &basis).unwrap();
        let hn = norm(&h);
        for (a, b) in again.null_component.iter().zip(&s.null_component) {
            prop_assert!((a - b).abs() <= 1e-7 * hn.max(1e-12));
        }
        let lhs = hn * hn;
        let rhs = norm(&s.null_component).powi(2) + norm(&s.rowspace_component).powi(2);
        prop_assert!((lhs - rhs).abs() <= 1e-6 * lhs.max(1e-12));
    }

    #[test]
    fn head_output_stays_normalized_after_any_push(
        (raw, h) in basis_and_vector(6),
        alpha in -8.0f64..8.0,
        seed in 0u64..1000,
    ) {
        let Ok(basis) = orthonormalize(&raw) else { return Ok(()) };
        let vocab_size = 9;
        let u = Array2::from_shape_fn((vocab_size, 6), |(i, j)| ((seed as f64 + 1.0) * (i * 7 + j) as f64).sin());
        let head = OutputHead { vocab: vec![String::new(); vocab_size], unembedding: u, bias: Array1::zeros(vocab_size) };
        let push = PushSpec::new(alpha, if alpha >= 0.0 { Side::L1 } else { Side::L2 }).unwrap();
        let lp = head.logits_from_state(&alter(&h, &basis, &push).unwrap().altered).unwrap();
        let lse = lp.iter().map(|x| x.exp()).sum::<f64>().ln();
        prop_assert!(lse.abs() <= 1e-6);
    }

    #[test]
    fn word_logprob_is_the_piece_mean_in_any_order(
        lp in proptest::collection::vec(-20.0f64..0.0, 8),
        pieces in proptest::collection::vec(0usize..8, 1..4),
    ) {
        let mean = pieces.iter().map(|&p| lp[p]).sum::<f64>() / pieces.len() as f64;
        let got = word_logprob(&lp, &pieces).unwrap();
        prop_assert!((got - mean).abs() <= 1e-12);
        let mut reversed = pieces.clone();
        reversed.reverse();
        prop_assert!((word_logprob(&lp, &reversed).unwrap() - got).abs() <= 1e-12);
    }

    #[test]
    fn aggregation_is_count_weighted_over_concatenation(a in records(), b in records()) {
        let joined: Vec<ShiftRecord> = a.iter().chain(&b).cloned().collect();
        let (ta, tb, tj) = (aggregate(&a).unwrap(), aggregate(&b).unwrap(), aggregate(&joined).unwrap());
        for row in &tj.rows {
            let part = |t: &alterlang_core::eval::MetricsTable| {
                t.row(row.template_dir, row.candidate_class)
                    .map_or((0.0, 0.0, 0usize), |r| (r.proportion_expected, r.mean_delta_logp, r.n))
            };
            let ((pa, ma, na), (pb, mb, nb)) = (part(&ta), part(&tb));
            prop_assert_eq!(row.n, na + nb);
            let n = row.n as f64;
            prop_assert!((row.proportion_expected - (pa * na as f64 + pb * nb as f64) / n).abs() <= 1e-12);
            prop_assert!((row.mean_delta_logp - (ma * na as f64 + mb * nb as f64) / n).abs() <= 1e-9);
            prop_assert!((0.0..=1.0).contains(&row.proportion_expected));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn learned_directions_vanish_after_projection(seed in 0u64..10_000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..120)
            .map(|i| {
                let shift = if i % 2 == 0 { 1.5 } else { -1.5 };
                (0..6).map(|j| rng.random_range(-1.0..1.0) + if j < 2 { shift } else { 0.0 }).collect()
            })
            .collect();
        let labels: Vec<Side> = (0..rows.len()).map(|i| if i % 2 == 0 { Side::L1 } else { Side::L2 }).collect();
        let data = TokenDataset::new(EmbeddingMatrix::from_rows(&rows).unwrap(), labels).unwrap();
        let config = InlpConfig { iterations: 3, seed, ..Default::default() };
        let result = run_inlp(&data, &data, &config).unwrap();
        for h in &rows {
            let null = split(h, &result.basis).unwrap().null_component;
            for w in result.basis.directions() {
                let s: f64 = w.iter().zip(&null).map(|(a, b)| a * b).sum();
                prop_assert!(s.abs() <= 1e-6 * norm(h));
            }
        }
        prop_assert_eq!(&run_inlp(&data, &data, &config).unwrap(), &result);
    }

    #[test]
    fn family_inventories_are_disjoint(seed in 0u64..10_000) {
        let langs = language_family(&LanguageSpec::default_family(), seed).unwrap();
        alterlang_core::corpus::ensure_disjoint(&langs).unwrap();
        let dict = BilingualDictionary::aligned(&langs[0], &langs[1]);
        prop_assert!(dict.is_bijection());
    }

    #[test]
    fn every_eval_item_matches_piece_counts(seed in 0u64..10_000) {
        use rand::SeedableRng;
        let langs = language_family(&LanguageSpec::default_family(), seed).unwrap();
        let vocab = Vocabulary::build(&langs, 0.2, seed).unwrap();
        let dict = BilingualDictionary::aligned(&langs[0], &langs[1]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for i in 0..20 {
            let s = langs[0].sample_sentence(&mut rng);
            let item = build_eval_item(&s, &dict, &vocab, "C", i).unwrap();
            let len = |k| item.candidate(k).pieces.len();
            prop_assert_eq!(len(CandidateKind::RandomOriginal), len(CandidateKind::TargetOriginal));
            prop_assert_eq!(len(CandidateKind::ThirdLanguage), len(CandidateKind::TargetOriginal));
            prop_assert_eq!(len(CandidateKind::RandomPushed), len(CandidateKind::TargetTranslation));
            let third = &item.candidate(CandidateKind::ThirdLanguage).word;
            prop_assert!(!langs[0].words.contains(third) && !langs[1].words.contains(third));
            prop_assert_eq!(&build_eval_item(&s, &dict, &vocab, "C", i).unwrap(), &item);
        }
    }
}

#[test]
fn orthogonal_offsets_leave_the_head_output_unchanged() {
    // 4 pieces in 7 dimensions: the head's rowspace leaves a 3-dim complement
    let u = Array2::from_shape_fn((4, 7), |(i, j)| ((i * 3 + j * 5) as f64 * 0.37).cos());
    let head = OutputHead {
        vocab: vec![String::new(); 4],
        unembedding: u.clone(),
        bias: Array1::from(vec![0.1, -0.2, 0.0, 0.3]),
    };
    let m = DMatrix::from_row_iterator(4, 7, u.iter().copied());
    // smallest eigenvector of U^T U spans part of U's nullspace
    let eig = (m.transpose() * &m).symmetric_eigen();
    let (idx, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let null: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
    assert!((&m * DMatrix::from_column_slice(7, 1, &null)).norm() < 1e-10);
    let h = vec![0.4, -1.0, 2.0, 0.3, 0.0, -0.7, 1.1];
    let shifted: Vec<f64> = h.iter().zip(&null).map(|(a, n)| a + 5.0 * n).collect();
    let a = head.logits_from_state(&h).unwrap();
    let b = head.logits_from_state(&shifted).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
}

#[test]
fn zero_state_with_zero_bias_is_uniform() {
    let head = OutputHead {
        vocab: vec![String::new(); 5],
        unembedding: Array2::from_elem((5, 3), 0.7),
        bias: Array1::zeros(5),
    };
    let lp = head.logits_from_state(&[0.0; 3]).unwrap();
    assert!(lp.iter().all(|x| (x + 5f64.ln()).abs() < 1e-12));
    assert!(matches!(head.logits_from_state(&[0.0; 4]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn aggregate_examples() {
    let up = record(TemplateDir::Opposite, [0.0, 0.5, 0.0, 0.0, 0.0]);
    let down = record(TemplateDir::Opposite, [0.0, -0.2, 0.0, 0.0, 0.0]);
    let class = CandidateClass::PushedToTarget;
    assert_eq!(class.candidate(TemplateDir::Opposite), CandidateKind::TargetTranslation);
    let t = aggregate(&[up]).unwrap();
    assert_eq!(t.row(TemplateDir::Opposite, class).unwrap().proportion_expected, 1.0);
    let t = aggregate(&[down]).unwrap();
    assert_eq!(t.row(TemplateDir::Opposite, class).unwrap().proportion_expected, 0.0);
    assert!(matches!(aggregate(&[]), Err(Error::EmptyRecords)));
}

#[test]
fn csv_has_one_row_per_direction_and_class() {
    let rs = vec![record(TemplateDir::Same, [0.1; 5]), record(TemplateDir::Opposite, [-0.1; 5])];
    let csv = aggregate(&rs).unwrap().to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "template_dir,candidate_class,proportion_expected,mean_delta_logp,n");
    assert_eq!(lines.len(), 1 + 2 * 5);
}

#[test]
fn word_logprob_examples() {
    let lp = [-1.0, -3.0, -0.5];
    assert_eq!(word_logprob(&lp, &[0, 1]).unwrap(), -2.0);
    assert_eq!(word_logprob(&lp, &[2]).unwrap(), -0.5);
    assert!(matches!(word_logprob(&lp, &[7]), Err(Error::UnknownPiece(7))));
}

#[test]
fn sentence_without_covered_words_is_skipped() {
    let langs = language_family(&LanguageSpec::default_family(), 3).unwrap();
    let vocab = Vocabulary::build(&langs, 0.2, 3).unwrap();
    let dict = BilingualDictionary::aligned(&langs[0], &langs[1]);
    let s = TaggedSentence::monolingual(vec!["zzz".into(), "qqq".into()], "A");
    assert!(matches!(build_eval_item(&s, &dict, &vocab, "C", 1), Err(Error::NoCoveredWord)));
}
