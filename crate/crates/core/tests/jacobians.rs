#[path = "support/factor_fixtures.rs"]
mod factor_fixtures;

use canyon_rtk::fgo::factors::jacobian_mismatch;
use canyon_rtk::fgo::FactorFamily;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[test]
fn every_family_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: BTreeMap<FactorFamily, f64> = BTreeMap::new();
    for _ in 0..100 {
        for (f, values) in factor_fixtures::all_families(&mut rng) {
            let e = jacobian_mismatch(f.as_ref(), &values, 1e-3).unwrap();
            let w = worst.entry(f.family()).or_insert(0.0);
            *w = w.max(e);
        }
    }
    assert_eq!(worst.len(), 11);
    for (family, e) in &worst {
        assert!(*e < 1e-5, "{family:?}: {e:e}");
    }
}
