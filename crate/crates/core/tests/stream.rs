use clusternorm::stream::{
    dirichlet_label_schedule, generate_class_templates, sample_batch, DomainSource, DomainSpec, ScenarioConfig, ScenarioKind,
    StreamScenario, DEFAULT_BASE_NOISE,
};

fn scenario(kind: ScenarioKind, delta: Option<f64>, seed: u64) -> StreamScenario {
    ScenarioConfig {
        kind,
        domains: DomainSource::Generate { count: 4, severity: 5 },
        batch_size: 32,
        num_batches: 12,
        rounds: 2,
        dirichlet_delta: delta,
        seed,
    }
    .resolve()
    .unwrap()
}

fn entropy(labels: &[usize], classes: usize) -> f64 {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts.iter().filter(|&&c| c > 0).map(|&c| {
        let p = c as f64 / n;
        -p * p.ln()
    }).sum()
}

#[test]
fn batches_are_a_pure_function_of_seed_and_index() {
    let templates = generate_class_templates(10, 1, DEFAULT_BASE_NOISE).unwrap();
    for kind in [ScenarioKind::Static, ScenarioKind::CrossMix, ScenarioKind::Shuffle, ScenarioKind::Random] {
        let s = scenario(kind, None, 5);
        let forward: Vec<_> = (0..s.total_batches()).map(|t| sample_batch(&s, &templates, t).unwrap()).collect();
        let backward: Vec<_> = (0..s.total_batches()).rev().map(|t| sample_batch(&s, &templates, t).unwrap()).collect();
        for (t, b) in forward.iter().enumerate() {
            assert_eq!(b, &backward[s.total_batches() - 1 - t], "{kind:?} batch {t}");
        }
        let again = scenario(kind, None, 5);
        assert_eq!(sample_batch(&again, &templates, 3).unwrap(), forward[3]);
        let other = scenario(kind, None, 6);
        assert_ne!(sample_batch(&other, &templates, 3).unwrap(), forward[3]);
        // second round replays the first
        assert_eq!(forward[s.num_batches + 4], forward[4]);
    }
    assert!(sample_batch(&scenario(ScenarioKind::CrossMix, None, 5), &templates, 24).is_err());
}

#[test]
fn templates_keep_their_distance_floor() {
    for seed in 0..5 {
        let t = generate_class_templates(10, seed, DEFAULT_BASE_NOISE).unwrap();
        assert_eq!(t.classes(), 10);
        for a in 0..10 {
            for b in a + 1..10 {
                let d: f64 = t
                    .template(a)
                    .iter()
                    .zip(t.template(b))
                    .map(|(x, y)| ((x - y) as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= t.min_distance, "seed {seed}: {a}-{b} at {d}");
            }
        }
    }
}

#[test]
fn huge_concentration_gives_near_uniform_segments() {
    let labels = dirichlet_label_schedule(1e6, 10, 5000, 1000, 3).unwrap();
    assert_eq!(labels.len(), 5000);
    for seg in labels.chunks(1000) {
        let mut counts = [0usize; 10];
        for &l in seg {
            counts[l] += 1;
        }
        for c in counts {
            assert!((c as f64 - 100.0).abs() <= 5.0, "{counts:?}");
        }
    }
}

#[test]
fn smaller_concentration_means_fewer_classes_per_segment() {
    let mean_entropy = |delta: f64| {
        (0..50)
            .map(|seed| {
                let labels = dirichlet_label_schedule(delta, 10, 256, 64, seed).unwrap();
                labels.chunks(64).map(|s| entropy(s, 10)).sum::<f64>() / 4.0
            })
            .sum::<f64>()
            / 50.0
    };
    let (h1, h01, h005) = (mean_entropy(0.1), mean_entropy(0.01), mean_entropy(0.005));
    assert!(h005 < h1, "{h005} vs {h1}");
    assert!(h01 < h1);
    assert!(h005 <= h01 + 0.05);
    assert!(h005 < 0.2, "tiny concentration should give nearly single-class segments: {h005}");
}

#[test]
fn dirichlet_rejects_bad_parameters() {
    assert!(dirichlet_label_schedule(0.0, 10, 10, 5, 0).is_err());
    assert!(dirichlet_label_schedule(f64::INFINITY, 10, 10, 5, 0).is_err());
    assert!(dirichlet_label_schedule(0.1, 10, 10, 0, 0).is_err());
}

#[test]
fn wild_batches_are_label_skewed() {
    let templates = generate_class_templates(10, 1, DEFAULT_BASE_NOISE).unwrap();
    let wild = scenario(ScenarioKind::Wild, Some(0.005), 2);
    let random = scenario(ScenarioKind::Random, None, 2);
    let avg = |s: &StreamScenario| {
        (0..s.num_batches).map(|t| entropy(sample_batch(s, &templates, t).unwrap().labels(), 10)).sum::<f64>() / s.num_batches as f64
    };
    assert!(avg(&wild) < 0.5 * avg(&random));
}

#[test]
fn wild_requires_delta_and_only_wild_accepts_it() {
    let cfg = |kind, delta| ScenarioConfig {
        kind,
        domains: DomainSource::Generate { count: 2, severity: 3 },
        batch_size: 4,
        num_batches: 2,
        rounds: 1,
        dirichlet_delta: delta,
        seed: 0,
    };
    assert!(cfg(ScenarioKind::Wild, None).resolve().is_err());
    assert!(cfg(ScenarioKind::Wild, Some(-1.0)).resolve().is_err());
    assert!(cfg(ScenarioKind::CrossMix, Some(0.1)).resolve().is_err());
    assert!(cfg(ScenarioKind::Wild, Some(0.1)).resolve().is_ok());
    let err = cfg(ScenarioKind::Static, None).resolve_with_seed(0).map(|mut s| {
        s.batch_size = 0;
        s.validate()
    });
    assert!(err.unwrap().unwrap_err().to_string().contains("scenario.batch_size"));
}

#[test]
fn scenario_config_reads_both_domain_forms() {
    let generated: ScenarioConfig = serde_json::from_str(
        r#"{"kind": "Shuffle", "domains": {"count": 3, "severity": 2}, "batch_size": 8, "num_batches": 4}"#,
    )
    .unwrap();
    assert_eq!(generated.rounds, 1);
    assert_eq!(generated.resolve().unwrap().domains.len(), 3);
    let listed: ScenarioConfig = serde_json::from_str(
        r#"{"kind": "Static", "batch_size": 8, "num_batches": 4, "seed": 9,
            "domains": [{"id": 0, "contrast": 1.0, "brightness": 0.0, "noise_sigma": 0.0, "severity": 1},
                        {"id": 1, "contrast": 0.5, "brightness": 1.0, "noise_sigma": 0.1, "severity": 3}]}"#,
    )
    .unwrap();
    let s = listed.resolve().unwrap();
    assert_eq!(s.domains[0], DomainSpec::identity(0));
    assert_eq!(s.seed, 9);
    let bad = r#"{"kind": "Static", "batch_size": 8, "num_batches": 4, "domains": {"count": 1, "severity": 9}}"#;
    assert!(serde_json::from_str::<ScenarioConfig>(bad).unwrap().resolve().is_err());
    let text = serde_json::to_string(&listed).unwrap();
    assert_eq!(serde_json::from_str::<ScenarioConfig>(&text).unwrap(), listed);
}

#[test]
fn domain_ids_report_domain_identity() {
    let templates = generate_class_templates(10, 1, DEFAULT_BASE_NOISE).unwrap();
    let s = scenario(ScenarioKind::CrossMix, None, 1);
    for t in 0..s.num_batches {
        let b = sample_batch(&s, &templates, t).unwrap();
        let mut ids: Vec<usize> = b.domain_ids().to_vec();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids, vec![0, 1, 2, 3]);
        assert!(b.labels().iter().all(|&l| l < 10));
    }
}
