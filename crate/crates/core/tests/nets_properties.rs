use boxseed::nets::checkpoint::{self, Role};
use boxseed::nets::{poly_lr, seg_forward, softmax_channels, FeatureMap, Lpg, SegNet};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn softmax_is_a_distribution(c in 2usize..6, h in 1usize..5, w in 1usize..5, seed in any::<u64>(), scale in 0.1f64..80.0) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-scale..scale)).collect();
        let p = softmax_channels(&FeatureMap::from_vec(c, h, w, data).unwrap());
        let n = h * w;
        for i in 0..n {
            let s: f64 = (0..c).map(|k| p.data[k * n + i]).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!((0..c).all(|k| (0.0..=1.0).contains(&p.data[k * n + i])));
        }
    }

    #[test]
    fn poly_schedule_strictly_decreases(lr0 in 1e-5f64..1.0, max_iter in 2usize..2000) {
        let mut prev = poly_lr(lr0, 0, max_iter).unwrap();
        prop_assert_eq!(prev, lr0);
        for it in 1..=max_iter {
            let v = poly_lr(lr0, it, max_iter).unwrap();
            prop_assert!(v < prev, "iter {} {} !< {}", it, v, prev);
            prop_assert!(v >= 0.0);
            prev = v;
        }
        prop_assert_eq!(prev, 0.0);
    }
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let seg = SegNet::<f32>::new(&[4, 8], 3, &mut rng).unwrap();
    let meta = checkpoint::meta_for(2, Role::Seg, 9, "abc", Default::default(), seg.arch().config(), &seg.params);
    checkpoint::save(&dir.path().join("seg"), &meta, &seg.params).unwrap();
    let (back, meta_back) = checkpoint::load_seg::<f32>(&dir.path().join("seg")).unwrap();
    assert_eq!(meta_back, meta);
    let bits = |v: &SegNet<f32>| v.params.iter_values().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&seg));
    let x = FeatureMap::<f32>::zeros(3, 8, 8);
    assert_eq!(seg_forward(&x, &back).unwrap(), seg_forward(&x, &seg).unwrap());

    let lpg = Lpg::<f32>::new(&[4, 8], &mut rng).unwrap();
    let meta = checkpoint::meta_for(1, Role::Lpg, 9, "abc", Default::default(), lpg.arch().config(), &lpg.params);
    checkpoint::save(&dir.path().join("lpg"), &meta, &lpg.params).unwrap();
    let (back, _) = checkpoint::load_lpg::<f32>(&dir.path().join("lpg")).unwrap();
    assert_eq!(back.params, lpg.params);
    assert!(checkpoint::load_seg::<f32>(&dir.path().join("lpg")).is_err(), "role mismatch must be rejected");
}
