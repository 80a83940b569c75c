mod common;

use clusternorm::tensor::{batch_moments, channel_moments, Dims, FeatureMap, MomentAccumulator};
use clusternorm::Error;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn channel_moments_match_a_scalar_loop() {
    let mut rng = common::rng(5);
    let dims = Dims::new(4, 3, 2, 2);
    let data: Vec<f64> = (0..dims.len()).map(|_| rng.random_range(-4.0..4.0)).collect();
    let f = FeatureMap::new(dims, data.clone()).unwrap();
    for idx in [vec![0usize], vec![1, 3], vec![0, 1, 2, 3], vec![2, 0]] {
        let got = channel_moments(&f, &idx).unwrap();
        for c in 0..3 {
            let mut vals = Vec::new();
            for &b in &idx {
                for s in 0..4 {
                    vals.push(data[b * 12 + c * 4 + s]);
                }
            }
            let (m, v) = common::moments(vals);
            assert!((got.mean[c] - m).abs() < 1e-12, "mean {idx:?} {c}");
            assert!((got.var[c] - v).abs() < 1e-12, "var {idx:?} {c}");
        }
    }
}

#[test]
fn selection_errors() {
    let f = FeatureMap::<f32>::zeros(Dims::new(2, 1, 1, 1)).unwrap();
    assert!(matches!(channel_moments(&f, &[]), Err(Error::EmptySelection)));
    assert!(matches!(channel_moments(&f, &[2]), Err(Error::IndexOutOfRange { index: 2, batch: 2 })));
    assert!(MomentAccumulator::new().finish::<f32>().is_err());
}

#[test]
fn construction_rejects_bad_buffers() {
    assert!(FeatureMap::new(Dims::new(1, 1, 2, 2), vec![0.0f32; 3]).is_err());
    assert!(FeatureMap::new(Dims::new(1, 1, 1, 1), vec![f32::NAN]).is_err());
    assert!(FeatureMap::new(Dims::new(0, 1, 1, 1), Vec::<f32>::new()).is_err());
}

#[test]
fn select_and_concat_round_trip() {
    let f = FeatureMap::from_fn(Dims::new(3, 2, 1, 2), |b, c, s| (b * 100 + c * 10 + s) as f32).unwrap();
    let parts = [f.select(&[0]).unwrap(), f.select(&[1, 2]).unwrap()];
    assert_eq!(FeatureMap::concat(&parts).unwrap(), f);
    assert_eq!(f.select(&[2]).unwrap().plane(0, 1), &[210.0, 211.0]);
}

fn split_strategy() -> impl Strategy<Value = (Vec<FeatureMap<f64>>, FeatureMap<f64>)> {
    (1usize..4, 1usize..4, prop::collection::vec(1usize..5, 1..5)).prop_flat_map(|(c, l, sizes)| {
        let total: usize = sizes.iter().sum();
        prop::collection::vec(-100.0f64..100.0, total * c * l).prop_map(move |data| {
            let whole = FeatureMap::new(Dims::new(total, c, l, 1), data).unwrap();
            let mut start = 0;
            let parts = sizes
                .iter()
                .map(|&n| {
                    let idx: Vec<usize> = (start..start + n).collect();
                    start += n;
                    whole.select(&idx).unwrap()
                })
                .collect();
            (parts, whole)
        })
    })
}

proptest! {
    #[test]
    fn pooled_moments_equal_moments_of_the_union((parts, whole) in split_strategy()) {
        let mut acc = MomentAccumulator::new();
        for p in &parts {
            acc.push(p).unwrap();
        }
        let pooled = acc.finish::<f64>().unwrap();
        let direct = batch_moments(&whole);
        for c in 0..whole.channels() {
            prop_assert!((pooled.mean[c] - direct.mean[c]).abs() <= 1e-9 * (1.0 + direct.mean[c].abs()));
            prop_assert!((pooled.var[c] - direct.var[c]).abs() <= 1e-9 * (1.0 + direct.var[c]));
        }
    }

    #[test]
    fn pooled_moments_ignore_batch_order((parts, _) in split_strategy()) {
        let mut fwd = MomentAccumulator::new();
        let mut rev = MomentAccumulator::new();
        for p in &parts {
            fwd.push(p).unwrap();
        }
        for p in parts.iter().rev() {
            rev.push(p).unwrap();
        }
        let (a, b) = (fwd.finish::<f64>().unwrap(), rev.finish::<f64>().unwrap());
        for c in 0..a.channels() {
            prop_assert!((a.mean[c] - b.mean[c]).abs() <= 1e-9 * (1.0 + a.mean[c].abs()));
            prop_assert!((a.var[c] - b.var[c]).abs() <= 1e-9 * (1.0 + a.var[c]));
        }
    }

    #[test]
    fn variance_is_never_negative((_, whole) in split_strategy()) {
        prop_assert!(batch_moments(&whole).var.iter().all(|&v| v >= 0.0));
    }
}
