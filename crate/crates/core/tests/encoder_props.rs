use proptest::prelude::*;

use flaketriage::encoder::{finetune, generate_pairs, mean_pair_loss, EncoderModel, SparseCounts, TrainConfig};
use flaketriage::preprocess::ProcessedLog;

fn feats() -> impl Strategy<Value = SparseCounts> {
    prop::collection::vec(0usize..64, 1..20).prop_map(SparseCounts::from_buckets)
}

proptest! {
    #[test]
    fn embeddings_have_unit_norm(x in feats(), seed in any::<u64>()) {
        let m = EncoderModel::<f64>::new(64, 8, 1, seed).unwrap();
        let e = m.encode_features(&x);
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-9, "{}", norm);
    }

    #[test]
    fn pair_counts_and_labels(labels in prop::collection::vec(0usize..4, 2..30), rounds in 1usize..4, seed in any::<u64>()) {
        let mut sizes = [0usize; 4];
        for &l in &labels {
            sizes[l] += 1;
        }
        let present = sizes.iter().filter(|&&s| s > 0).count();
        let r = generate_pairs(&labels, rounds, seed);
        if present < 2 {
            prop_assert!(r.is_err());
            return Ok(());
        }
        let pairs = r.unwrap();
        let singletons = labels.iter().filter(|&&l| sizes[l] == 1).count();
        prop_assert_eq!(pairs.len(), rounds * (2 * labels.len() - singletons));
        for p in &pairs {
            prop_assert_ne!(p.i, p.j);
            prop_assert_eq!(p.is_positive(), labels[p.i] == labels[p.j]);
        }
        prop_assert_eq!(pairs.iter().filter(|p| !p.is_positive()).count(), rounds * labels.len());
    }
}

#[test]
fn featurization_joins_lines_before_taking_bigrams() {
    let m = EncoderModel::<f64>::new(1 << 16, 8, 1, 1).unwrap();
    let split = m.featurize(&ProcessedLog::from_lines(["alpha beta", "gamma"]));
    let joined = m.featurize(&ProcessedLog::from_lines(["alpha beta gamma"]));
    assert_eq!(split, joined);
    // 3 unigrams + 2 bigrams
    assert_eq!(split.entries().iter().map(|&(_, n)| n).sum::<u32>(), 5);
    let swapped = m.featurize(&ProcessedLog::from_lines(["beta alpha", "gamma"]));
    assert_ne!(split, swapped);
}

#[test]
fn finetune_is_deterministic_and_lowers_loss() {
    let m = EncoderModel::<f64>::new(256, 8, 3, 3).unwrap();
    let feats: Vec<SparseCounts> = (0..12)
        .map(|i| SparseCounts::from_buckets(vec![i % 3 * 10, i % 3 * 10 + 1, 100 + i]))
        .collect();
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let cfg = TrainConfig {
        body_learning_rate: 0.05,
        epochs: 3,
        batch_size: 4,
        pair_rounds: 5,
        seed: 9,
    };
    let a = finetune(&m, &feats, &labels, &cfg).unwrap();
    let b = finetune(&m, &feats, &labels, &cfg).unwrap();
    assert!(a.same_parameters(&b));
    let pairs = generate_pairs(&labels, 5, 1).unwrap();
    assert!(mean_pair_loss(&a, &feats, &pairs) < mean_pair_loss(&m, &feats, &pairs));

    let frozen = finetune(&m, &feats, &labels, &TrainConfig { body_learning_rate: 0.0, ..cfg }).unwrap();
    assert!(frozen.same_parameters(&m));
    assert!(finetune(&m, &feats, &labels, &TrainConfig { batch_size: 0, ..cfg }).is_err());
}
