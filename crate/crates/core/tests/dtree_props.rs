use linewatch_core::dtree::{
    accuracy, best_split, extract_rules, train, Dataset, FeatureKind, TrainConfig,
};
use proptest::prelude::*;

fn small_config() -> TrainConfig {
    TrainConfig {
        min_leaf: 3,
        max_depth: 6,
        purity_stop: 0.99,
        min_gain: 0.0,
        ..TrainConfig::default()
    }
}

/// Rows on a coarse grid so ties between values and between candidate splits are common.
fn rows_strategy() -> impl Strategy<Value = Vec<(u8, u8, bool, bool)>> {
    prop::collection::vec((0u8..12, 0u8..12, any::<bool>(), any::<bool>()), 10..200)
}

fn dataset(rows: &[(u8, u8, bool, bool)]) -> Dataset {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for &(a, b, flag, noise) in rows {
        x.push(vec![a as f64 / 4.0, b as f64, if flag { 1.0 } else { 0.0 }]);
        // A learnable signal with noise so trees have some depth.
        y.push((a > 6 && flag) ^ (noise && b > 9));
    }
    Dataset::new(
        vec!["a".into(), "b".into(), "flag".into()],
        vec![
            FeatureKind::Numeric,
            FeatureKind::Numeric,
            FeatureKind::Boolean,
        ],
        x,
        y,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn training_ignores_row_order(rows in rows_strategy().prop_flat_map(|r| {
        let shuffled = Just(r.clone()).prop_shuffle();
        (Just(r), shuffled)
    })) {
        let (original, shuffled) = rows;
        let cfg = small_config();
        let a = train(&dataset(&original), &cfg).unwrap();
        let b = train(&dataset(&shuffled), &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rules_partition_the_training_rows(rows in rows_strategy()) {
        let data = dataset(&rows);
        let tree = train(&data, &small_config()).unwrap();
        let rules = extract_rules(&tree, 0.0);
        prop_assert_eq!(rules.len(), tree.leaves());
        prop_assert_eq!(rules.iter().map(|r| r.support).sum::<usize>(), data.len());
        for i in 0..data.len() {
            let hits: Vec<_> = rules.iter().filter(|r| r.matches(&data, i)).collect();
            prop_assert_eq!(hits.len(), 1, "row {} matched {} rules", i, hits.len());
            prop_assert_eq!(hits[0].class, tree.predict(&data.rows[i]));
        }
        for r in &rules {
            prop_assert!((0.0..=1.0).contains(&r.purity));
        }
    }

    #[test]
    fn training_accuracy_beats_majority(rows in rows_strategy()) {
        let data = dataset(&rows);
        let tree = train(&data, &small_config()).unwrap();
        let pos = data.labels.iter().filter(|&&y| y).count() as f64 / data.len() as f64;
        prop_assert!(accuracy(&tree, &data) >= pos.max(1.0 - pos) - 1e-12);
    }

    #[test]
    fn useless_split_never_beats_perfect(n in 8usize..300, seed in any::<u64>(), cut in 0.2f64..0.8) {
        // Feature 0 separates the labels exactly; feature 1 is a hash independent of them.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let x = i as f64 / n as f64;
            let h = (seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)).rotate_left(17) % 97;
            rows.push(vec![x, h as f64]);
            labels.push(x > cut);
        }
        prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
        let data = Dataset::new(
            vec!["perfect".into(), "useless".into()],
            vec![FeatureKind::Numeric; 2],
            rows,
            labels,
        )
        .unwrap();
        let idx: Vec<usize> = (0..n).collect();
        let only = |j: usize| {
            let d = Dataset::new(
                vec![data.names[j].clone()],
                vec![FeatureKind::Numeric],
                data.rows.iter().map(|r| vec![r[j]]).collect(),
                data.labels.clone(),
            )
            .unwrap();
            best_split(&d, &idx, 1).map(|s| s.gain_ratio).unwrap_or(0.0)
        };
        let perfect = only(0);
        prop_assert!(only(1) <= perfect + 1e-12);
        let both = best_split(&data, &idx, 1).unwrap();
        prop_assert_eq!(both.name.as_str(), "perfect");
    }
}
