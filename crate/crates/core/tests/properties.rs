//! Property tests for the crate's structural invariants.

use proptest::prelude::*;

use rap_core::dataset::{one_hot, Feature, Schema};
use rap_core::generalization::{drift, DriftParams, FeatureDistribution};
use rap_core::projection::sparsemax;
use rap_core::seeding::{derived_rng, STREAM_DRIFT};
use rap_core::surrogate::{poly_threshold, PolyThresholdSpec};
use rap_core::workload::{
    consistent_query_count, evaluate_predicate, index_of, query_at, threshold_query_count,
    Threshold, Workload,
};

fn schema_from(cards: &[usize]) -> Schema {
    let features = cards
        .iter()
        .enumerate()
        .map(|(i, &t)| Feature {
            name: format!("f{i}"),
            categories: (0..t).map(|c| format!("v{c}")).collect(),
        })
        .collect();
    Schema::new(features).unwrap()
}

/// Cardinality vectors for small schemas: 1..=4 features of 2..=5 values.
fn cards_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(2usize..=5, 1..=4)
}

proptest! {
    /// sparsemax output is a simplex point and a fixed point of itself.
    #[test]
    fn sparsemax_simplex_and_idempotent(z in prop::collection::vec(-5.0f64..5.0, 1..=8)) {
        let p = sparsemax(&z).unwrap();
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        let q = sparsemax(&p).unwrap();
        for (a, b) in q.iter().zip(&p) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    /// one_hot sets exactly d ones and d' - d zeros for every valid record.
    #[test]
    fn one_hot_exactly_d_ones(cards in cards_strategy(), seed in any::<u64>()) {
        let schema = schema_from(&cards);
        let mut rng = derived_rng(seed, STREAM_DRIFT);
        use rand::Rng;
        let record: Vec<u32> = cards.iter().map(|&t| rng.gen_range(0..t as u32)).collect();
        let enc = one_hot(&record, &schema);
        let ones = enc.bits.iter().filter(|&&b| b == 1).count();
        prop_assert_eq!(ones, schema.d());
        prop_assert_eq!(enc.bits.len() - ones, schema.d_prime() - schema.d());
    }

    /// drift preserves the multiset of masses: re-sorting descending
    /// recovers the input exactly.
    #[test]
    fn drift_preserves_masses(raw in prop::collection::vec(0.01f64..1.0, 2..=10),
                              gamma in 0.0f64..=1.0,
                              seed in any::<u64>()) {
        let total: f64 = raw.iter().sum();
        let mut probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
        probs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        // renormalize the largest entry so the sum is exactly 1 despite
        // floating error from division
        let sum: f64 = probs.iter().sum();
        probs[0] += 1.0 - sum;
        probs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let f = FeatureDistribution::new(probs.clone()).unwrap();
        let mut rng = derived_rng(seed, STREAM_DRIFT);
        let out = drift(&f, &DriftParams::new(gamma).unwrap(), &mut rng).unwrap();
        let mut sorted = out.probs().to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        prop_assert_eq!(sorted, probs);
    }

    /// query_at / index_of is a bijection over the whole canonical range.
    #[test]
    fn query_index_roundtrip(cards in cards_strategy(), seed in any::<u64>()) {
        let schema = schema_from(&cards);
        let d = schema.d();
        let mut rng = derived_rng(seed, STREAM_DRIFT);
        use rand::Rng;
        // two random distinct-feature thresholds (may coincide; index_of
        // then resolves to the first, so skip that case)
        let mut thresholds = Vec::new();
        for _ in 0..2 {
            let k = rng.gen_range(1..=d);
            let feats: Vec<usize> = rand::seq::index::sample(&mut rng, d, k).into_vec();
            let r = rng.gen_range(1..=k);
            thresholds.push(Threshold::new(r, feats).unwrap());
        }
        prop_assume!(thresholds[0] != thresholds[1]);
        let w = Workload::new(thresholds).unwrap();
        let m = consistent_query_count(&w, &schema).unwrap();
        let per: u64 = w.thresholds().iter().map(|t| threshold_query_count(t, &schema).unwrap()).sum();
        prop_assert_eq!(per, m);
        for i in 0..m {
            let q = query_at(&w, &schema, i).unwrap();
            prop_assert_eq!(index_of(&w, &schema, &q).unwrap(), i);
        }
    }

    /// The surrogate polynomial agrees with the boolean predicate on every
    /// one-hot record, for random schemas, thresholds, and targets.
    #[test]
    fn surrogate_agrees_with_predicate(cards in cards_strategy(), seed in any::<u64>()) {
        let schema = schema_from(&cards);
        let d = schema.d();
        let mut rng = derived_rng(seed, STREAM_DRIFT);
        use rand::Rng;
        let k = rng.gen_range(1..=d);
        let feats: Vec<usize> = rand::seq::index::sample(&mut rng, d, k).into_vec();
        let r = rng.gen_range(1..=k);
        let threshold = Threshold::new(r, feats).unwrap();
        let targets: Vec<u32> = threshold
            .features()
            .iter()
            .map(|&f| rng.gen_range(0..schema.cardinality(f) as u32))
            .collect();
        let query = rap_core::workload::ConsistentQuery { threshold, targets };
        let spec = PolyThresholdSpec::from_query(&query, &schema).unwrap();
        for _ in 0..20 {
            let record: Vec<u32> = cards.iter().map(|&t| rng.gen_range(0..t as u32)).collect();
            let row: Vec<f64> = one_hot(&record, &schema).bits.iter().map(|&b| b as f64).collect();
            let got = poly_threshold(&row, &spec);
            let want = evaluate_predicate(&record, &query) as u8 as f64;
            prop_assert_eq!(got, want);
        }
    }
}
