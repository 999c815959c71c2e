use proptest::prelude::*;

use faceage_core::adapter::personalized_reage;
use faceage_core::eval::id_sim;
use faceage_core::losses::{adaptive_reg_weight, build_reference_set, personalized_aging_loss};
use faceage_core::synth::{synthetic_collection, SyntheticSpec, ToyPerson};
use faceage_core::{AdapterNetwork, AdapterShape, AgeYears, BackendBundle, Split};

fn age(v: f64) -> AgeYears {
    AgeYears::new(v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reg_weight_is_bounded_and_monotone(a in 0.0f64..100.0, b in 0.0f64..100.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (wl, wh) = (adaptive_reg_weight(age(lo)), adaptive_reg_weight(age(hi)));
        prop_assert!((0.0..=2.0).contains(&wl));
        prop_assert!(wl <= wh + 1e-15);
    }

    #[test]
    fn wider_window_never_shrinks_reference_set(target in 0.0f64..100.0, w in 0u32..10) {
        let bundle = BackendBundle::toy(0);
        let c = synthetic_collection(&bundle, &ToyPerson::new(1), &SyntheticSpec::default()).unwrap();
        let narrow = build_reference_set(&c, age(target), w, Split::Reference);
        let wide = build_reference_set(&c, age(target), w + 1, Split::Reference);
        prop_assert!(narrow.indices.iter().all(|i| wide.indices.contains(i)) || narrow.window > w);
    }

    #[test]
    fn loss_and_similarity_are_complements(p in 0u64..50, q in 0u64..50, a in 0.0f64..100.0) {
        let bundle = BackendBundle::toy(0);
        let y = ToyPerson::new(p).photo(&bundle, age(a), 1).unwrap();
        let r = ToyPerson::new(q).photo(&bundle, age(a), 2).unwrap();
        let refs = [r];
        let loss = personalized_aging_loss(&bundle, &y, &refs).unwrap();
        let sim = id_sim(&bundle, &y, &refs).unwrap();
        prop_assert!((loss + sim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fresh_adapter_is_transparent(seed in 0u64..1000, a in 0.0f64..100.0) {
        let bundle = BackendBundle::toy(3);
        let x = ToyPerson::new(seed).photo(&bundle, age(50.0), seed).unwrap();
        let net = AdapterNetwork::new(AdapterShape::reduced(16), seed);
        let (p, wp) = personalized_reage(&bundle, Some(&net), &x, age(a)).unwrap();
        let (g, wg) = personalized_reage(&bundle, None, &x, age(a)).unwrap();
        prop_assert_eq!(p, g);
        prop_assert_eq!(wp, wg);
    }
}
