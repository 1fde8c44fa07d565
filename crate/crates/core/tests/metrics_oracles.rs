use std::sync::Arc;

use gzsl_core::data::{ClassVocabulary, Dataset, LabelSpace, Sample, SemanticMatrix};
use gzsl_core::metrics::{
    auroc, evaluate, gzsl_summary, harmonic_mean, infer_scores, topk_metrics, MetricsReport,
};
use gzsl_core::net::{MlpParams, MlpSpec, ModelConfig, ModelParams};
use gzsl_core::objective::{relevance_scores, score_matrix};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// (wins + ties / 2) over every positive/negative pair.
fn brute_auroc(s: &[f64], y: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                pairs += 1.0;
                if s[i] > s[j] {
                    wins += 1.0;
                } else if s[i] == s[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..=200);
    let levels = rng.random_range(2..=30);
    let mut y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
    y[0] = 1;
    y[1] = 0;
    let s = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
    (s, y)
}

#[test]
fn rank_auroc_equals_brute_force_on_a_thousand_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..1000 {
        let (s, y) = random_instance(&mut rng);
        assert!((auroc(&s, &y).unwrap() - brute_auroc(&s, &y)).abs() < 1e-12);
    }
}

#[test]
fn auroc_fixture_and_extremes() {
    assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    assert_eq!(auroc(&[0.1, 0.2, 0.7, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(auroc(&[-0.1, -0.2, -0.7, -0.9], &[0, 0, 1, 1]).unwrap(), 0.0);
}

#[test]
fn topk_hand_counted_table() {
    let scores = ndarray::array![
        [0.9, 0.1, 0.5, 0.3],
        [0.2, 0.8, 0.7, 0.1],
        [0.4, 0.3, 0.2, 0.6]
    ];
    let labels = vec![vec![1, 0, 0, 1], vec![0, 0, 1, 0], vec![1, 1, 0, 0]];
    // top-2: {0,2}, {1,2}, {3,0}; true positives 1 + 1 + 1 of 5 positives
    let t = topk_metrics(scores.view(), &labels, 2).unwrap();
    assert!((t.recall - 3.0 / 5.0).abs() < 1e-15);
    assert!((t.precision - 3.0 / 6.0).abs() < 1e-15);
    assert!((t.f1 - 2.0 * 0.6 * 0.5 / 1.1).abs() < 1e-15);
}

#[test]
fn harmonic_fixtures() {
    assert!((harmonic_mean(0.7, 0.7) - 0.7).abs() < 1e-15);
    assert!((harmonic_mean(0.79, 0.66) - 0.72).abs() <= 0.005);
    assert!((harmonic_mean(0.72, 0.54) - 0.62).abs() <= 0.005);
}

fn small_model(seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        encoder_widths: Some(vec![6]),
        map_hidden: vec![5],
        latent_dim: 4,
    };
    ModelParams::init(&cfg, 7, 3, seed).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
}

#[test]
fn inference_seen_columns_equal_training_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = small_model(4);
    let sem = SemanticMatrix::new(random_matrix(&mut rng, 6, 3)).unwrap();
    let seen_ids = [0, 2, 3, 5];
    let x = random_matrix(&mut rng, 9, 7);
    let all = infer_scores(&params, x.view(), &sem).unwrap();
    let train = score_matrix(
        params.latent_visual(x.view()).unwrap().view(),
        params.latent_semantic(sem.select(&seen_ids).as_array().view()).unwrap().view(),
    )
    .unwrap();
    assert_eq!(all.select(Axis(1), &seen_ids), train);
}

#[test]
fn inference_matches_per_sample_relevance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = small_model(5);
    let sem = SemanticMatrix::new(random_matrix(&mut rng, 5, 3)).unwrap();
    let x = random_matrix(&mut rng, 4, 7);
    let all = infer_scores(&params, x.view(), &sem).unwrap();
    let latent = params.latent_visual(x.view()).unwrap();
    let projected = params.latent_semantic(sem.as_array().view()).unwrap();
    for (i, z) in latent.outer_iter().enumerate() {
        assert_eq!(all.row(i), relevance_scores(z, projected.view()).unwrap());
    }
}

#[test]
fn duplicated_class_gives_duplicated_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = small_model(6);
    let mut rows = random_matrix(&mut rng, 3, 3);
    rows.push_row(rows.row(1).to_owned().view()).unwrap();
    let sem = SemanticMatrix::new(rows).unwrap();
    let s = infer_scores(&params, random_matrix(&mut rng, 5, 7).view(), &sem).unwrap();
    assert_eq!(s.column(1), s.column(3));
}

#[test]
fn exact_latent_match_scores_one() {
    let mut id = MlpParams::zeros(&MlpSpec::new(vec![3, 3]).unwrap());
    id.weights[0] = Array2::eye(3);
    let params = ModelParams::new(None, id.clone(), id).unwrap();
    let sem = SemanticMatrix::new(ndarray::array![[1.0, 0.0, 0.0], [0.3, 0.2, -1.0], [0.0, 1.0, 1.0]]).unwrap();
    let s = infer_scores(&params, sem.as_array().view(), &sem).unwrap();
    for i in 0..3 {
        assert!((s[(i, i)] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn report_means_follow_the_partition() {
    let vocab = Arc::new(ClassVocabulary::new(["a", "b", "c"].map(String::from).to_vec(), &[true, true, false]).unwrap());
    let scores = ndarray::array![[0.9, 0.1, 0.2], [0.2, 0.8, 0.7], [0.1, 0.3, 0.9], [0.5, 0.4, 0.1]];
    let labels = vec![vec![1, 0, 0], vec![0, 1, 1], vec![0, 0, 1], vec![1, 0, 0]];
    let r = MetricsReport::from_scores(scores.view(), &labels, &vocab, &[1, 2]).unwrap();
    let per: Vec<f64> = (0..3)
        .map(|j| {
            let col: Vec<f64> = scores.column(j).to_vec();
            brute_auroc(&col, &labels.iter().map(|l| l[j]).collect::<Vec<_>>())
        })
        .collect();
    let s = (per[0] + per[1]) / 2.0;
    assert!((r.seen_mean.unwrap() - s).abs() < 1e-12);
    assert!((r.unseen_mean.unwrap() - per[2]).abs() < 1e-12);
    let g = gzsl_summary(&r.per_class_auroc, &vocab).unwrap();
    assert!((r.harmonic.unwrap() - 2.0 * s * per[2] / (s + per[2])).abs() < 1e-12);
    assert_eq!(g.harmonic, r.harmonic.unwrap());
}

#[test]
fn evaluate_uses_all_class_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vocab = Arc::new(ClassVocabulary::new(["a", "b", "c"].map(String::from).to_vec(), &[true, false, true]).unwrap());
    let samples = (0..12)
        .map(|i| Sample::new((0..7).map(|_| rng.random_range(-1.0..1.0)).collect(), (0..3).map(|j| u8::from((i + j) % 3 == 0)).collect()))
        .collect();
    let ds = Dataset::new(samples, LabelSpace::AllClasses, 7, vocab);
    let sem = SemanticMatrix::new(random_matrix(&mut rng, 3, 3)).unwrap();
    let params = small_model(9);
    let r = evaluate(&params, &ds, &sem, &[1]).unwrap();
    let scores = infer_scores(&params, ds.feature_matrix(&(0..12).collect::<Vec<_>>()).view(), &sem).unwrap();
    let again = MetricsReport::from_scores(scores.view(), &ds.all_class_labels(), &ds.vocab, &[1]).unwrap();
    assert_eq!(r, again);
    assert!(r.per_class_auroc.iter().all(Option::is_some));
}

fn score_label_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            proptest::collection::vec(-5.0f64..5.0, n),
            proptest::collection::vec(0u8..2, n),
        )
    })
}

proptest! {
    #[test]
    fn auroc_ignores_increasing_transforms((s, y) in score_label_strategy()) {
        prop_assume!(y.contains(&0) && y.contains(&1));
        let base = auroc(&s, &y).unwrap();
        let t1: Vec<f64> = s.iter().map(|x| x.exp()).collect();
        let t2: Vec<f64> = s.iter().map(|x| 3.0 * x.atan() - 1.0).collect();
        prop_assert!((auroc(&t1, &y).unwrap() - base).abs() < 1e-12);
        prop_assert!((auroc(&t2, &y).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn auroc_negation_is_complement((s, y) in score_label_strategy()) {
        prop_assume!(y.contains(&0) && y.contains(&1));
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((auroc(&neg, &y).unwrap() - (1.0 - auroc(&s, &y).unwrap())).abs() < 1e-12);
    }

    #[test]
    fn topk_counts_are_integral_and_recall_grows(seed in any::<u64>(), n in 1usize..12, c in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = random_matrix(&mut rng, n, c);
        let mut labels: Vec<Vec<u8>> = (0..n).map(|_| (0..c).map(|_| u8::from(rng.random_bool(0.4))).collect()).collect();
        labels[0][0] = 1;
        let total_pos: usize = labels.iter().flatten().map(|&y| y as usize).sum();
        let mut prev = 0.0;
        for k in 1..=c {
            let t = topk_metrics(scores.view(), &labels, k).unwrap();
            let tp_p = t.precision * (n * k) as f64;
            let tp_r = t.recall * total_pos as f64;
            prop_assert!((tp_p - tp_p.round()).abs() < 1e-9);
            prop_assert!((tp_r - tp_r.round()).abs() < 1e-9);
            prop_assert!((tp_p - tp_r).abs() < 1e-9);
            prop_assert!(t.recall >= prev);
            prev = t.recall;
        }
        prop_assert!((prev - 1.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_is_bounded_by_the_means(s in 0.0f64..1.0, u in 0.0f64..1.0) {
        let h = harmonic_mean(s, u);
        prop_assert!(h <= (s + u) / 2.0 + 1e-15);
        prop_assert!(h <= 2.0 * s.min(u) + 1e-15);
        prop_assert!((harmonic_mean(s, s) - s).abs() < 1e-15);
    }
}
