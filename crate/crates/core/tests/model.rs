mod common;

use clusternorm::harness::{train_model, ModelConfig};
use clusternorm::model::{capture_source_stats, io, train_linear_head, InputShape, Model, NetworkSpec};
use clusternorm::tensor::FeatureMap;
use clusternorm::{Error, NormMode, NormalizerConfig};
use rand::Rng;

fn small_model() -> Model {
    train_model(&ModelConfig {
        train_samples: 512,
        train_batch_size: 128,
        clean_eval_batches: 4,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn input(rng: &mut rand_chacha::ChaCha8Rng, batch: usize) -> FeatureMap<f32> {
    common::gaussian_map(rng, InputShape::STANDARD.dims(batch))
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

#[test]
fn ridge_head_matches_normal_equations_oracle() {
    let mut rng = common::rng(21);
    let (n, d, classes, lambda) = (50, 8, 3, 0.3);
    let features: Vec<Vec<f32>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0f32..2.0)).collect()).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let head = train_linear_head(&features, &labels, classes, lambda).unwrap();

    let p = d + 1;
    let row = |i: usize, j: usize| if j < d { features[i][j] as f64 } else { 1.0 };
    let gram: Vec<Vec<f64>> = (0..p)
        .map(|a| (0..p).map(|b| (0..n).map(|i| row(i, a) * row(i, b)).sum::<f64>() + if a == b { lambda } else { 0.0 }).collect())
        .collect();
    for k in 0..classes {
        let rhs: Vec<f64> = (0..p).map(|a| (0..n).filter(|&i| labels[i] == k).map(|i| row(i, a)).sum()).collect();
        let want = solve(gram.clone(), rhs.clone());
        let got: Vec<f64> = head.weight[k * d..(k + 1) * d].iter().map(|&w| w as f64).chain([head.bias[k] as f64]).collect();
        for j in 0..p {
            assert!((got[j] - want[j]).abs() <= 1e-5, "class {k} coef {j}: {} vs {}", got[j], want[j]);
        }
        // residual of the normal equations, relative to the right-hand side
        let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let residual = (0..p)
            .map(|a| (0..p).map(|b| gram[a][b] * want[b]).sum::<f64>() - rhs[a])
            .map(|r| r * r)
            .sum::<f64>()
            .sqrt();
        assert!(residual <= 1e-6 * rhs_norm);
    }
}

#[test]
fn ridge_rejects_bad_input() {
    let f = vec![vec![1.0f32], vec![2.0]];
    assert!(train_linear_head(&f, &[0], 2, 0.1).is_err());
    assert!(train_linear_head(&f, &[0, 1], 2, 0.0).is_err());
    assert!(train_linear_head(&f, &[0, 2], 2, 0.1).is_err());
    assert!(train_linear_head(&f, &[0, 0], 2, 0.1).is_err());
}

#[test]
fn standard_network_shape() {
    let spec = NetworkSpec::standard(7).unwrap();
    assert_eq!(spec.slot_count(), 2);
    assert_eq!(spec.slot_channels(), vec![8, 16]);
    assert_eq!(spec.feature_dims().unwrap(), (256, 1, 1));
    assert_eq!(spec.feature_dim(), 256);
    assert_eq!(NetworkSpec::standard(7).unwrap(), spec);
    assert_ne!(NetworkSpec::standard(8).unwrap(), spec);
}

#[test]
fn capture_is_repeatable_and_ignores_batching() {
    let spec = NetworkSpec::standard(3).unwrap();
    let mut rng = common::rng(4);
    let batches: Vec<_> = (0..3).map(|_| input(&mut rng, 16)).collect();
    let a = capture_source_stats(&spec, &batches).unwrap();
    assert_eq!(a, capture_source_stats(&spec, &batches).unwrap());
    assert_eq!(a.len(), 2);

    let reversed: Vec<_> = batches.iter().rev().cloned().collect();
    let pooled = [FeatureMap::concat(&batches).unwrap()];
    let resplit: Vec<_> = (0..4)
        .map(|k| pooled[0].select(&(k * 12..(k + 1) * 12).collect::<Vec<_>>()).unwrap())
        .collect();
    for other in [&reversed[..], &pooled[..], &resplit[..]].map(|b| capture_source_stats(&spec, b).unwrap()) {
        for (x, y) in a.iter().zip(&other) {
            for (u, v) in x.stats.mean.iter().chain(&x.stats.var).zip(y.stats.mean.iter().chain(&y.stats.var)) {
                assert!((u - v).abs() <= 1e-5 * (1.0 + v.abs()), "{u} vs {v}");
            }
        }
    }
}

#[test]
fn capture_rejects_an_empty_stream() {
    assert!(matches!(capture_source_stats(&NetworkSpec::standard(1).unwrap(), &[]), Err(Error::EmptySelection)));
}

#[test]
fn forward_is_finite_in_every_mode() {
    let model = small_model();
    let mut rng = common::rng(8);
    for b in [1, 2, 5, 33] {
        let x = input(&mut rng, b).map(|v| v * 3.0 + 1.0);
        for mode in NormMode::ALL {
            let out = model.forward(&x, &NormalizerConfig::new(mode), |_| true, true).unwrap();
            assert_eq!(out.batch(), b);
            assert_eq!(out.logits.len(), b * model.meta.classes);
            assert!(out.logits.iter().all(|v| v.is_finite()));
            assert!(out.slots.iter().all(|s| s.score.is_some_and(|v| v >= 0.0)));
            assert_eq!(out.slots.iter().all(|s| s.clusters.is_some()), mode.partitions());
        }
    }
}

#[test]
fn find_equals_alpha_bn_when_every_slot_yields_one_group() {
    // with three or fewer samples the first-neighbor graph is connected
    let model = small_model();
    let mut rng = common::rng(9);
    for b in [1, 2, 3] {
        let x = input(&mut rng, b);
        let find = model.forward(&x, &NormalizerConfig::new(NormMode::Find), |_| true, false).unwrap();
        let abn = model.forward(&x, &NormalizerConfig::new(NormMode::AlphaBn), |_| true, false).unwrap();
        assert!(find.slots.iter().all(|s| s.clusters == Some(1)));
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&find.logits), bits(&abn.logits));
    }
}

#[test]
fn forward_rejects_wrong_input_shape() {
    let model = small_model();
    let x = FeatureMap::<f32>::zeros(clusternorm::tensor::Dims::new(2, 1, 8, 8)).unwrap();
    assert!(matches!(
        model.forward(&x, &NormalizerConfig::new(NormMode::Sbn), |_| true, false),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn model_file_round_trips() {
    let model = small_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.model");
    io::save(&model, &path).unwrap();
    let back = io::load(&path).unwrap();
    assert_eq!(back, model);
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"clusternorm-model 1\n"));
    assert_eq!(io::encode(&back).unwrap(), bytes);
}

#[test]
fn corrupt_model_files_are_rejected() {
    let model = small_model();
    let bytes = io::encode(&model).unwrap();
    assert!(matches!(io::decode(&bytes[..bytes.len() - 4]), Err(Error::Format(_))));
    let mut extra = bytes.clone();
    extra.extend_from_slice(&[0, 0, 0, 0]);
    assert!(matches!(io::decode(&extra), Err(Error::Format(_))));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(io::decode(&magic), Err(Error::Format(_))));
    let missing = io::load(std::path::Path::new("/nonexistent/dir/m.model"));
    assert!(matches!(missing, Err(Error::Io { .. })));
}
