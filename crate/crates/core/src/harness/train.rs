use super::config::ModelConfig;
use super::evaluate::{accuracy_on, OnlineEvaluator};
use crate::error::Result;
use crate::fabn::{NormMode, NormalizerConfig};
use crate::model::{capture_source_stats, train_linear_head, Model, ModelMeta, NetworkSpec};
use crate::stream::{generate_class_templates, sample_batch, ClassTemplates, DomainSource, DomainSpec, ScenarioConfig, ScenarioKind};

/// Clean (identity-domain) stream used both for training data and for the
/// clean baseline.
pub fn clean_scenario(batch_size: usize, num_batches: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        kind: ScenarioKind::Static,
        domains: DomainSource::List(vec![DomainSpec::identity(0)]),
        batch_size,
        num_batches,
        rounds: 1,
        dirichlet_delta: None,
        seed,
    }
}

pub fn templates_for(meta: &ModelMeta) -> Result<ClassTemplates> {
    generate_class_templates(meta.classes, meta.template_seed, meta.base_noise)
}

/// Builds templates, captures source statistics on clean data, fits the head
/// and records clean accuracy under source normalization.
pub fn train_model(cfg: &ModelConfig) -> Result<Model> {
    cfg.validate()?;
    let templates = generate_class_templates(cfg.classes, cfg.template_seed, cfg.base_noise)?;
    let spec = NetworkSpec::standard(cfg.seed)?;

    let num_batches = cfg.train_samples.div_ceil(cfg.train_batch_size);
    let train = clean_scenario(cfg.train_batch_size, num_batches, cfg.train_seed).resolve()?;
    let batches = (0..num_batches)
        .map(|t| sample_batch(&train, &templates, t))
        .collect::<Result<Vec<_>>>()?;
    let inputs: Vec<_> = batches.iter().map(|b| b.x().clone()).collect();
    let sources = capture_source_stats(&spec, &inputs)?;

    let mut model = Model {
        head: crate::model::LinearHead {
            classes: cfg.classes,
            dim: spec.feature_dim(),
            weight: vec![0.0; cfg.classes * spec.feature_dim()],
            bias: vec![0.0; cfg.classes],
            lambda: cfg.lambda,
        },
        spec,
        sources,
        meta: ModelMeta {
            classes: cfg.classes,
            template_seed: cfg.template_seed,
            base_noise: cfg.base_noise,
            lambda: cfg.lambda,
            train_samples: num_batches * cfg.train_batch_size,
            clean_accuracy: 0.0,
            clean_eval_seed: cfg.clean_eval_seed,
            clean_eval_batches: cfg.clean_eval_batches,
            clean_eval_batch_size: cfg.clean_eval_batch_size,
        },
    };

    let mut features = Vec::with_capacity(model.meta.train_samples);
    let mut labels = Vec::with_capacity(model.meta.train_samples);
    for b in &batches {
        let f = model.source_features(b.x())?;
        for i in 0..f.batch() {
            features.push(f.sample(i).to_vec());
        }
        labels.extend_from_slice(b.labels());
    }
    model.head = train_linear_head(&features, &labels, cfg.classes, cfg.lambda)?;

    let clean = clean_scenario(cfg.clean_eval_batch_size, cfg.clean_eval_batches, cfg.clean_eval_seed).resolve()?;
    let mut eval = OnlineEvaluator::new(&model, NormalizerConfig::new(NormMode::Sbn))?;
    model.meta.clean_accuracy = accuracy_on(&mut eval, &clean, &templates)?;
    model.validate()?;
    Ok(model)
}
