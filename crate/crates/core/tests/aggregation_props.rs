use proptest::prelude::*;

use flowprop::aggregation::{aggregate_features, cosine, similarity_weights, Embedding, EmbeddingConfig};
use flowprop::{FeatureMap, Shape};

fn pair() -> impl Strategy<Value = (FeatureMap, FeatureMap)> {
    (1usize..5, 1usize..5, 1usize..6).prop_flat_map(|(h, w, c)| {
        let s = Shape::new(h, w, c);
        (
            prop::collection::vec(-3.0f32..3.0, s.len()),
            prop::collection::vec(-3.0f32..3.0, s.len()),
        )
            .prop_map(move |(a, b)| (FeatureMap::new(s, a).unwrap(), FeatureMap::new(s, b).unwrap()))
    })
}

proptest! {
    #[test]
    fn weights_are_normalised((m, c) in pair()) {
        let w = similarity_weights(&m, &c).unwrap();
        for (a, b) in w.memory().iter().zip(w.current()) {
            prop_assert!((a + b - 1.0).abs() <= 1e-6);
            prop_assert!((0.0..=1.0).contains(a) && (0.0..=1.0).contains(b));
        }
    }

    #[test]
    fn fusion_is_convex_and_idempotent((m, c) in pair()) {
        let w = similarity_weights(&m, &c).unwrap();
        let out = aggregate_features(&m, &c, &w).unwrap();
        for ((o, a), b) in out.data().iter().zip(m.data()).zip(c.data()) {
            prop_assert!(*o >= a.min(*b) && *o <= a.max(*b));
        }
        prop_assert_eq!(&aggregate_features(&c, &c, &w).unwrap(), &c);
    }

    #[test]
    fn swapping_nonzero_embeddings_keeps_weights((m, c) in pair()) {
        let cols = m.channels();
        let zero = |f: &FeatureMap| f.data().chunks(cols).any(|v| v.iter().all(|x| *x == 0.0));
        prop_assume!(!zero(&m) && !zero(&c));
        let ab = similarity_weights(&m, &c).unwrap();
        let ba = similarity_weights(&c, &m).unwrap();
        for (x, y) in ab.memory().iter().zip(ba.memory()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn cosine_is_bounded(a in prop::collection::vec(-5.0f32..5.0, 1..8)) {
        let b: Vec<f32> = a.iter().rev().copied().collect();
        let s = cosine(&a, &b);
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&s));
    }
}

#[test]
fn zero_vector_has_zero_similarity() {
    assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    let s = Shape::new(1, 1, 2);
    let w = similarity_weights(&FeatureMap::zeros(s), &FeatureMap::new(s, vec![1.0, 0.0]).unwrap()).unwrap();
    assert!((w.memory()[0] - 0.2689).abs() < 1e-4);
}

#[test]
fn embedding_plan_and_parity() {
    let cfg = EmbeddingConfig { seed: 1 };
    let e = Embedding::new(&cfg, 8, 0).unwrap();
    assert_eq!(e.channel_plan(), [4, 4, 16]);
    let out = e.apply(&FeatureMap::filled(Shape::new(2, 3, 8), 0.5)).unwrap();
    assert_eq!(out.shape(), Shape::new(2, 3, 16));
    assert!(out.data().iter().all(|v| v.is_finite()));
    assert!(Embedding::new(&cfg, 7, 0).is_err());
    let other = Embedding::new(&cfg, 8, 1).unwrap();
    let f = FeatureMap::from_fn(Shape::new(1, 1, 8), |_, _, c| c as f32).unwrap();
    assert_ne!(e.apply(&f).unwrap(), other.apply(&f).unwrap());
}
