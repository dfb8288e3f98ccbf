use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use flowprop::extract::ExtractorConfig;
use flowprop::pipeline::{sample_clip_frames, select_training_triplet, FrameRole, Pipeline, PipelineConfig};
use flowprop::Image;

fn config(k: usize, fa: bool, ma: bool) -> PipelineConfig {
    PipelineConfig {
        key_interval: k,
        enable_fa: fa,
        enable_ma: ma,
        extractor: ExtractorConfig::halving(3, (16, 16), 4, &[2, 2]),
        ..PipelineConfig::default()
    }
}

fn frames(n: usize) -> Vec<Image> {
    (0..n).map(|i| Image::filled(16, 16, (i % 7) as f32 / 7.0).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roles_and_extractor_calls(n in 1usize..40, k in 1usize..12, ma in any::<bool>()) {
        let mut p = Pipeline::new(config(k, true, ma)).unwrap();
        let out = p.run(&frames(n)).unwrap();
        for o in &out {
            let expect = match o.index {
                0 => FrameRole::Initial,
                i if i % k == 0 => FrameRole::Key,
                _ => FrameRole::NonKey,
            };
            prop_assert_eq!(o.role, expect);
            prop_assert_eq!(o.timings.feat.is_some(), o.role != FrameRole::NonKey);
            prop_assert!(o.timings.det.is_some());
        }
        prop_assert_eq!(p.extractor_calls(), n.div_ceil(k));

        let mut full = Pipeline::new(config(k, false, ma)).unwrap();
        full.run(&frames(n)).unwrap();
        prop_assert_eq!(full.extractor_calls(), n);
    }

    #[test]
    fn triplets_are_ordered(len in 2usize..80, mem in 1usize..15, ki in 0usize..15, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match select_training_triplet(len, mem, ki, &mut rng) {
            Ok(t) => {
                prop_assert!(t.mem < t.key && t.key <= t.target && t.target < len);
                prop_assert_eq!(t.key - t.mem, mem);
                prop_assert!(t.target - t.key <= ki);
            }
            Err(_) => prop_assert!(len <= mem),
        }
    }

    #[test]
    fn clip_frames_spread_in_order(len in 1usize..300, n in 1usize..30) {
        let f = sample_clip_frames(len, n);
        prop_assert!(!f.is_empty() && f.len() <= n);
        prop_assert!(f.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(*f.last().unwrap() < len);
        prop_assert_eq!(f[0], 0);
    }
}

#[test]
fn zero_memory_offset_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(select_training_triplet(40, 0, 10, &mut rng).is_err());
}

#[test]
fn static_clip_reproduces_key_features() {
    for (fa, ma) in [(true, false), (true, true), (false, false)] {
        let mut p = Pipeline::new(config(3, fa, ma)).unwrap();
        let still = vec![frames(1)[0].clone(); 7];
        p.step(&still[0]).unwrap();
        let first = p.current_features().unwrap().clone();
        for f in &still[1..] {
            p.step(f).unwrap();
            assert_eq!(p.current_features().unwrap(), &first);
        }
    }
}
