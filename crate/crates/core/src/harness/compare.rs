use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::evaluate::{count_correct, mean_std, run_experiment, OnlineEvaluator};
use super::train::templates_for;
use crate::error::{Error, Result};
use crate::fabn::{NormMode, NormalizerConfig};
use crate::model::Model;
use crate::stream::sample_batch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub mode: NormMode,
    pub alpha: f64,
    pub gamma_threshold: f64,
    pub batch_size: usize,
    pub mean_accuracy: f64,
    /// Population standard deviation over seeds.
    pub std_accuracy: f64,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,mode,alpha,gamma_threshold,batch_size,mean_accuracy,std_accuracy,seeds\n");
        for r in &self.rows {
            let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.6},{:.6},{}",
                r.label,
                r.mode,
                r.alpha,
                r.gamma_threshold,
                r.batch_size,
                r.mean_accuracy,
                r.std_accuracy,
                seeds.join(" ")
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn row(label: String, cfg: &NormalizerConfig, batch_size: usize, seeds: Vec<u64>, per_seed: Vec<f64>) -> ComparisonRow {
    let (mean_accuracy, std_accuracy) = mean_std(&per_seed);
    ComparisonRow {
        label,
        mode: cfg.mode,
        alpha: cfg.alpha,
        gamma_threshold: cfg.gamma_threshold,
        batch_size,
        mean_accuracy,
        std_accuracy,
        seeds,
        per_seed,
    }
}

/// One row per config. The configs must share everything but the normalizer.
pub fn compare_modes(cfgs: &[(String, ExperimentConfig)], model: &Model) -> Result<ComparisonTable> {
    let Some((_, first)) = cfgs.first() else {
        return Err(Error::config("compare", "no configurations"));
    };
    for (label, c) in cfgs {
        if c.scenario != first.scenario || c.seeds() != first.seeds() || c.model != first.model {
            return Err(Error::config(
                "scenario",
                format!("`{label}` differs from `{}` in more than the normalizer", cfgs[0].0),
            ));
        }
    }
    let rows = cfgs
        .iter()
        .map(|(label, cfg)| {
            let runs = run_experiment(cfg, model)?;
            Ok(row(
                label.clone(),
                &cfg.normalizer,
                cfg.scenario.batch_size,
                cfg.seeds(),
                runs.iter().map(|r| r.mean_accuracy).collect(),
            ))
        })
        .collect::<Result<_>>()?;
    Ok(ComparisonTable { rows })
}

/// `base` with each normalizer substituted in, labelled by mode name.
pub fn mode_configs(base: &ExperimentConfig, normalizers: &[NormalizerConfig]) -> Vec<(String, ExperimentConfig)> {
    normalizers
        .iter()
        .map(|n| {
            let mut c = base.clone();
            c.normalizer = *n;
            (n.mode.to_string(), c)
        })
        .collect()
}

/// All five modes with `base`'s alpha, threshold and cold start.
pub fn all_mode_configs(base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    let normalizers: Vec<_> = NormMode::ALL
        .iter()
        .map(|&mode| NormalizerConfig { mode, ..base.normalizer })
        .collect();
    mode_configs(base, &normalizers)
}

/// `FINDStar` at each threshold.
pub fn gamma_sweep(base: &ExperimentConfig, gammas: &[f64], model: &Model) -> Result<ComparisonTable> {
    let cfgs: Vec<_> = gammas
        .iter()
        .map(|&g| {
            let mut c = base.clone();
            c.normalizer = NormalizerConfig {
                mode: NormMode::FindStar,
                gamma_threshold: g,
                ..base.normalizer
            };
            (format!("FINDStar@gamma={g}"), c)
        })
        .collect();
    compare_modes(&cfgs, model)
}

pub const SWEEP_BATCH_SIZES: [usize; 4] = [1, 4, 16, 64];

/// Accuracy of `base.normalizer` when the same samples are streamed in
/// batches of each size. The stream is generated at the scenario's batch
/// size and re-chunked, so every row sees identical samples in identical
/// order.
pub fn batch_size_sweep(base: &ExperimentConfig, sizes: &[usize], model: &Model) -> Result<ComparisonTable> {
    base.validate()?;
    let templates = templates_for(&model.meta)?;
    let seeds = base.seeds();
    let mut per_size = vec![Vec::with_capacity(seeds.len()); sizes.len()];
    for &seed in &seeds {
        let scenario = base.scenario.resolve_with_seed(seed)?;
        let stream = (0..scenario.total_batches())
            .map(|t| sample_batch(&scenario, &templates, t))
            .collect::<Result<Vec<_>>>()?;
        for (k, &size) in sizes.iter().enumerate() {
            let mut eval = OnlineEvaluator::new(model, base.normalizer)?;
            let (mut correct, mut total) = (0, 0);
            for batch in &stream {
                for chunk in batch.rechunk(size)? {
                    let out = eval.process(chunk.x())?;
                    correct += count_correct(&out.predictions, chunk.labels());
                    total += chunk.len();
                }
            }
            per_size[k].push(correct as f64 / total as f64);
        }
    }
    let rows = sizes
        .iter()
        .zip(per_size)
        .map(|(&size, acc)| row(format!("{}@batch={size}", base.normalizer.mode), &base.normalizer, size, seeds.clone(), acc))
        .collect();
    Ok(ComparisonTable { rows })
}
