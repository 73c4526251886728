mod common;

use attnpool_core::covid::{ASCENDING, NUM_QUANTILES, QUANTILE_LEVELS};
use attnpool_core::evaluation::{interval_score, WisConfig, WisIndex};
use common::*;
use proptest::prelude::*;

#[test]
fn worked_examples_are_exact() {
    for (name, got, want) in wis_examples_exact() {
        assert_eq!(got, want, "{name}");
    }
}

#[test]
fn homogeneous_and_translation_invariant() {
    let (h, t) = wis_invariance_errors(500);
    assert!(h < 1e-12, "homogeneity {h:e}");
    assert!(t < 1e-12, "translation {t:e}");
}

fn sorted_quantiles() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, NUM_QUANTILES).prop_map(|mut v| {
        v.sort_by(f64::total_cmp);
        let mut q = vec![0.0; NUM_QUANTILES];
        for (k, &i) in ASCENDING.iter().enumerate() {
            q[i] = v[k];
        }
        q
    })
}

proptest! {
    #[test]
    fn wis_is_non_negative(q in sorted_quantiles(), y in -2e3f64..2e3) {
        let index = WisIndex::new(&QUANTILE_LEVELS, &WisConfig::hub()).unwrap();
        prop_assert!(index.score(&q, y).unwrap() >= 0.0);
    }

    #[test]
    fn point_mass_at_truth_scores_zero(y in -1e3f64..1e3) {
        let index = WisIndex::new(&QUANTILE_LEVELS, &WisConfig::hub()).unwrap();
        prop_assert_eq!(index.score(&[y; NUM_QUANTILES], y).unwrap(), 0.0);
    }

    #[test]
    fn interval_score_penalises_misses(l in -10f64..10.0, w in 0f64..10.0, a in 0.01f64..0.99, y in -30f64..30.0) {
        let u = l + w;
        let s = interval_score(l, u, a, y).unwrap();
        prop_assert!(s >= w - 1e-12);
        if y >= l && y <= u {
            prop_assert!((s - w).abs() < 1e-12);
        }
    }

    #[test]
    fn subgradient_is_zero_for_exact_point_mass(y in -1e3f64..1e3) {
        let index = WisIndex::new(&QUANTILE_LEVELS, &WisConfig::hub()).unwrap();
        let g = index.gradient(&[y; NUM_QUANTILES], y).unwrap();
        prop_assert!(g.iter().all(|&v| v == 0.0));
    }
}
