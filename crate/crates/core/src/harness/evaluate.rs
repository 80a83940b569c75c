use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::train::templates_for;
use crate::error::Result;
use crate::fabn::{NormMode, NormalizerConfig};
use crate::model::Model;
use crate::sensitivity::{CalibrationState, LayerCalibration};
use crate::stream::{sample_batch, ClassTemplates, LabeledBatch, ScenarioKind, StreamScenario};
use crate::tensor::FeatureMap;

/// Streams test batches through a model one at a time. The only state kept
/// between batches is the cold-start calibration of `FINDStar`.
#[derive(Clone, Debug)]
pub struct OnlineEvaluator<'m> {
    model: &'m Model,
    cfg: NormalizerConfig,
    calibration: Option<CalibrationState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutcome {
    pub predictions: Vec<usize>,
    /// Group count per slot, `None` where the slot did not partition.
    pub clusters: Vec<Option<usize>>,
}

impl<'m> OnlineEvaluator<'m> {
    pub fn new(model: &'m Model, cfg: NormalizerConfig) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        let calibration = match cfg.mode {
            NormMode::FindStar => Some(CalibrationState::new(model.slot_count(), cfg.cold_start_batches)?),
            _ => None,
        };
        Ok(OnlineEvaluator {
            model,
            cfg,
            calibration,
        })
    }

    /// Resumes from a previously captured calibration.
    pub fn with_calibration(model: &'m Model, cfg: NormalizerConfig, calibration: CalibrationState) -> Result<Self> {
        let mut e = Self::new(model, cfg)?;
        if e.calibration.is_some() {
            e.calibration = Some(calibration);
        }
        Ok(e)
    }

    pub fn calibration(&self) -> Option<&CalibrationState> {
        self.calibration.as_ref()
    }

    pub fn config(&self) -> &NormalizerConfig {
        &self.cfg
    }

    pub fn process(&mut self, x: &FeatureMap<f32>) -> Result<BatchOutcome> {
        let calibrating = self.calibration.as_ref().is_some_and(|c| !c.is_finalized());
        let state = self.calibration.as_ref();
        let out = self.model.forward(
            x,
            &self.cfg,
            |slot| state.is_none_or(|c| c.partition_enabled(slot)),
            calibrating,
        )?;
        if calibrating {
            let cal = self.calibration.as_mut().expect("calibrating implies state");
            let scores: Vec<f64> = out.slots.iter().map(|s| s.score.unwrap_or(0.0)).collect();
            cal.accumulate(&scores)?;
            if cal.is_ready() {
                cal.finalize(self.cfg.gamma_threshold)?;
            }
        }
        Ok(BatchOutcome {
            predictions: out.predictions(),
            clusters: out.slots.iter().map(|s| s.clusters).collect(),
        })
    }
}

pub(crate) fn count_correct(predictions: &[usize], labels: &[usize]) -> usize {
    predictions.iter().zip(labels).filter(|(p, l)| p == l).count()
}

/// Overall accuracy of `eval` on a whole stream.
pub fn accuracy_on(eval: &mut OnlineEvaluator<'_>, scenario: &StreamScenario, templates: &ClassTemplates) -> Result<f64> {
    let (mut correct, mut total) = (0, 0);
    for t in 0..scenario.total_batches() {
        let batch = sample_batch(scenario, templates, t)?;
        let out = eval.process(batch.x())?;
        correct += count_correct(&out.predictions, batch.labels());
        total += batch.len();
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub index: usize,
    pub size: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub clusters: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub slot: usize,
    pub batches: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mode: NormMode,
    pub alpha: f64,
    pub gamma_threshold: f64,
    pub cold_start_batches: usize,
    /// Cold-start batches are included in the accuracy figures.
    pub cold_start_counted: bool,
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub batch_size: usize,
    pub total_batches: usize,
    pub mean_accuracy: f64,
    pub clean_accuracy: f64,
    pub batches: Vec<BatchMetrics>,
    /// Per slot; `None` for slots that never partitioned.
    pub cluster_summary: Vec<Option<ClusterSummary>>,
    pub sensitivity: Option<Vec<LayerCalibration>>,
    /// Wall-clock milliseconds per batch. Kept out of the metrics document so
    /// that it stays a deterministic function of the config.
    #[serde(skip)]
    pub latency_ms: Vec<f64>,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summarize_clusters(batches: &[BatchMetrics], slots: usize) -> Vec<Option<ClusterSummary>> {
    (0..slots)
        .map(|slot| {
            let series: Vec<f64> = batches.iter().filter_map(|b| b.clusters[slot]).map(|r| r as f64).collect();
            if series.is_empty() {
                return None;
            }
            let (mean, std) = mean_std(&series);
            Some(ClusterSummary {
                slot,
                batches: series.len(),
                mean,
                std,
            })
        })
        .collect()
}

/// Runs `batches` in order through a fresh evaluator.
pub fn evaluate_batches<'a, I>(model: &Model, cfg: NormalizerConfig, batches: I) -> Result<(Vec<BatchMetrics>, Vec<f64>, Option<CalibrationState>)>
where
    I: IntoIterator<Item = Result<LabeledBatch>>,
{
    let mut eval = OnlineEvaluator::new(model, cfg)?;
    let mut records = Vec::new();
    let mut latency = Vec::new();
    for (index, batch) in batches.into_iter().enumerate() {
        let batch = batch?;
        let start = Instant::now();
        let out = eval.process(batch.x())?;
        latency.push(start.elapsed().as_secs_f64() * 1e3);
        let correct = count_correct(&out.predictions, batch.labels());
        records.push(BatchMetrics {
            index,
            size: batch.len(),
            correct,
            accuracy: correct as f64 / batch.len() as f64,
            clusters: out.clusters,
        });
    }
    Ok((records, latency, eval.calibration().cloned()))
}

/// One run over the scenario with `seed`.
pub fn run_experiment_seed(cfg: &ExperimentConfig, model: &Model, seed: u64) -> Result<MetricsRecord> {
    cfg.validate()?;
    let scenario = cfg.scenario.resolve_with_seed(seed)?;
    let templates = templates_for(&model.meta)?;
    let (batches, latency_ms, calibration) = evaluate_batches(
        model,
        cfg.normalizer,
        (0..scenario.total_batches()).map(|t| sample_batch(&scenario, &templates, t)),
    )?;
    let correct: usize = batches.iter().map(|b| b.correct).sum();
    let total: usize = batches.iter().map(|b| b.size).sum();
    Ok(MetricsRecord {
        mode: cfg.normalizer.mode,
        alpha: cfg.normalizer.alpha,
        gamma_threshold: cfg.normalizer.gamma_threshold,
        cold_start_batches: cfg.normalizer.cold_start_batches,
        cold_start_counted: true,
        scenario: scenario.kind,
        seed,
        batch_size: scenario.batch_size,
        total_batches: scenario.total_batches(),
        mean_accuracy: correct as f64 / total as f64,
        clean_accuracy: model.meta.clean_accuracy,
        cluster_summary: summarize_clusters(&batches, model.slot_count()),
        sensitivity: calibration.and_then(|c| c.calibration().map(<[_]>::to_vec)),
        batches,
        latency_ms,
    })
}

/// One run per configured seed, in seed order.
pub fn run_experiment(cfg: &ExperimentConfig, model: &Model) -> Result<Vec<MetricsRecord>> {
    cfg.seeds().into_iter().map(|s| run_experiment_seed(cfg, model, s)).collect()
}
