use cxr_anomaly::corpus::{ClassLabel, ImageSample};
use cxr_anomaly::nets::{Cae, ModelConfig};
use cxr_anomaly::scoring::{aggregate, mean_and_sigma, roc_auc, roc_auc_scores, score_samples, ScoreRecord, SigmaKind};
use ndarray::Array2;
use proptest::prelude::*;

/// Pairwise oracle: fraction of (anomaly, normal) pairs ordered correctly,
/// ties counting one half.
fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &a) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &n) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if a > n {
                wins += 1.0;
            } else if a == n {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Scores from a small grid so that ties are common, with at least one
/// label of each class.
fn instance(max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2..=max_n)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0u32..40, n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_map(|(raw, mut labels)| {
            labels[0] = true;
            labels[1] = false;
            (raw.into_iter().map(|v| v as f64 / 40.0).collect(), labels)
        })
}

fn records(scores: &[f64], labels: &[bool], fold: usize) -> Vec<ScoreRecord> {
    scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&score, &is_anomaly))| ScoreRecord {
            sample_id: format!("s{i}"),
            fold,
            score,
            is_anomaly,
        })
        .collect()
}

proptest! {
    #[test]
    fn auc_matches_pairwise_oracle((scores, labels) in instance(200)) {
        let fast = roc_auc_scores(&scores, &labels).unwrap();
        prop_assert!((fast - pairwise_auc(&scores, &labels)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&fast));
    }

    #[test]
    fn auc_is_invariant_under_exp((scores, labels) in instance(120)) {
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        prop_assert_eq!(roc_auc_scores(&scores, &labels).unwrap(), roc_auc_scores(&exp, &labels).unwrap());
    }

    #[test]
    fn flipping_labels_complements_auc_without_ties(
        n in 2usize..150,
        seed in any::<u64>(),
        labels in prop::collection::vec(any::<bool>(), 150),
    ) {
        // Distinct scores: a seeded permutation of 0..n.
        let mut scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            scores.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut labels = labels[..n].to_vec();
        labels[0] = true;
        labels[1] = false;
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let a = roc_auc_scores(&scores, &labels).unwrap();
        let b = roc_auc_scores(&scores, &flipped).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pooled_auc_of_one_fold_is_its_fold_auc((scores, labels) in instance(80)) {
        let s = aggregate(&[records(&scores, &labels, 0)], SigmaKind::Population).unwrap();
        prop_assert_eq!(s.auc_p, s.per_fold_auc[0]);
        prop_assert_eq!(s.auc_mu, s.per_fold_auc[0]);
        prop_assert_eq!(s.auc_sigma, 0.0);
    }
}

#[test]
fn aggregate_pools_raw_scores() {
    // Fold 0 separates perfectly at a low scale, fold 1 at a high scale;
    // pooling without normalization mixes them.
    let f0 = records(&[0.1, 0.2, 0.3, 0.4], &[false, false, true, true], 0);
    let f1 = records(&[1.1, 1.2, 1.3, 1.4], &[false, false, true, true], 1);
    let s = aggregate(&[f0.clone(), f1.clone()], SigmaKind::Population).unwrap();
    assert_eq!(s.per_fold_auc, vec![1.0, 1.0]);
    let pooled: Vec<ScoreRecord> = f0.into_iter().chain(f1).collect();
    assert_eq!(s.auc_p, roc_auc(&pooled).unwrap());
    assert_eq!(s.auc_p, 0.75);
}

#[test]
fn population_spread_of_three_folds() {
    let (mu, sigma) = mean_and_sigma(&[0.75, 0.76, 0.78], SigmaKind::Population);
    // Independent two-pass computation.
    let m = (0.75 + 0.76 + 0.78) / 3.0;
    let v = ((0.75f64 - m).powi(2) + (0.76f64 - m).powi(2) + (0.78f64 - m).powi(2)) / 3.0;
    assert!((mu - 0.763_333_333_333_333_3).abs() < 1e-12);
    assert!((sigma - v.sqrt()).abs() < 1e-15);
    assert!((sigma - 0.012_472_191_289_246).abs() < 1e-12);
    let (mu, sigma) = mean_and_sigma(&[0.8, 0.8, 0.8], SigmaKind::Population);
    assert!((mu - 0.8).abs() < 1e-15 && sigma < 1e-15);
}

fn samples(n: usize, side: usize) -> Vec<ImageSample> {
    (0..n)
        .map(|i| ImageSample {
            sample_id: format!("img{i}"),
            pixels: Array2::from_shape_fn((side, side), |(y, x)| ((x * 7 + y * 3 + i * 11) % 17) as f32 / 17.0),
            label: if i % 3 == 0 {
                ClassLabel::Covid
            } else {
                ClassLabel::Healthy
            },
        })
        .collect()
}

#[test]
fn scores_do_not_depend_on_order_or_batching() {
    let cae = Cae::new(&ModelConfig::tiny(), 4).unwrap();
    let all = samples(70, 16);
    let scored = score_samples(&cae, &all, 2).unwrap();
    assert_eq!(scored.len(), 70);
    assert!(scored
        .iter()
        .all(|r| r.score.is_finite() && r.score >= 0.0 && r.fold == 2));
    assert_eq!(scored.iter().filter(|r| r.is_anomaly).count(), 24);

    let mut reversed = all.clone();
    reversed.reverse();
    let mut back = score_samples(&cae, &reversed, 2).unwrap();
    back.reverse();
    assert_eq!(back, scored);

    for (i, s) in all.iter().enumerate().step_by(9) {
        let one = score_samples(&cae, std::slice::from_ref(s), 2).unwrap();
        assert_eq!(one[0], scored[i]);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    assert_eq!(pool.install(|| score_samples(&cae, &all, 2).unwrap()), scored);
}

#[test]
fn wrong_image_size_is_a_shape_error() {
    let cae = Cae::new(&ModelConfig::tiny(), 4).unwrap();
    let err = score_samples(&cae, &samples(2, 32), 0).unwrap_err();
    assert!(matches!(err, cxr_anomaly::Error::Shape { .. }));
}
