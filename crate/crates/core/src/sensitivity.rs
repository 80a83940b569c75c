//! Per-layer shift sensitivity and the cold-start gate that decides which
//! layers keep partitioned normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ChannelStats;

/// Floor applied to both standard deviations inside the Gaussian KL.
pub const KL_STD_FLOOR: f64 = 1e-6;

/// Channel-wise `KL(N(mu_t, sigma_t^2) || N(mu_s, sigma_s^2))`.
pub fn channel_kl_divergence<T: Scalar>(
    target: &ChannelStats<T>,
    source: &ChannelStats<T>,
    eps: f64,
) -> Result<Vec<T>> {
    if target.channels() != source.channels() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channels", source.channels()),
            actual: format!("{} channels", target.channels()),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::Contract("kl floor must be positive".into()));
    }
    let kl = (0..target.channels())
        .map(|c| {
            let mu_t = target.mean[c].to_f64_lossless();
            let mu_s = source.mean[c].to_f64_lossless();
            let sd_t = target.var[c].to_f64_lossless().max(0.0).sqrt().max(eps);
            let sd_s = source.var[c].to_f64_lossless().max(0.0).sqrt().max(eps);
            let d = mu_t - mu_s;
            let v = (sd_t * sd_t + d * d) / (2.0 * sd_s * sd_s) + (sd_s / sd_t).ln() - 0.5;
            // rounding can leave tiny negatives for identical inputs
            T::from_f64_lossy(v.max(0.0))
        })
        .collect();
    Ok(kl)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSensitivity {
    pub kl: Vec<f64>,
    pub kl_mean: f64,
    /// Population standard deviation of `kl`.
    pub kl_std: f64,
    pub raw_score: f64,
    pub normalized_score: Option<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `(1 + sigmoid(std)) * mean` over the channel KL values.
pub fn layer_sensitivity_score<T: Scalar>(kl: &[T]) -> Result<LayerSensitivity> {
    if kl.is_empty() {
        return Err(Error::EmptySelection);
    }
    let kl: Vec<f64> = kl.iter().map(|v| v.to_f64_lossless()).collect();
    let n = kl.len() as f64;
    let kl_mean = kl.iter().sum::<f64>() / n;
    let kl_std = (kl.iter().map(|v| (v - kl_mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(LayerSensitivity {
        raw_score: (1.0 + sigmoid(kl_std)) * kl_mean,
        kl,
        kl_mean,
        kl_std,
        normalized_score: None,
    })
}

/// Convenience: score of one layer from its batch and source statistics.
pub fn layer_score<T: Scalar>(batch: &ChannelStats<T>, source: &ChannelStats<T>) -> Result<LayerSensitivity> {
    layer_sensitivity_score(&channel_kl_divergence(batch, source, KL_STD_FLOOR)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCalibration {
    pub layer: usize,
    pub raw_average: f64,
    pub normalized_score: f64,
    pub enabled: bool,
}

/// Cold-start accumulator. Until finalized, every layer partitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    cold_start_batches: usize,
    sums: Vec<f64>,
    batches_seen: usize,
    finalized: Option<Vec<LayerCalibration>>,
}

impl CalibrationState {
    pub fn new(layers: usize, cold_start_batches: usize) -> Result<Self> {
        if cold_start_batches == 0 {
            return Err(Error::config("normalizer.cold_start_batches", "must be at least 1"));
        }
        Ok(CalibrationState {
            cold_start_batches,
            sums: vec![0.0; layers],
            batches_seen: 0,
            finalized: None,
        })
    }

    pub fn layers(&self) -> usize {
        self.sums.len()
    }

    pub fn batches_seen(&self) -> usize {
        self.batches_seen
    }

    pub fn cold_start_batches(&self) -> usize {
        self.cold_start_batches
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    pub fn averages(&self) -> Vec<f64> {
        let n = self.batches_seen.max(1) as f64;
        self.sums.iter().map(|s| s / n).collect()
    }

    pub fn is_ready(&self) -> bool {
        self.finalized.is_none() && self.batches_seen == self.cold_start_batches
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized.is_some()
    }

    pub fn calibration(&self) -> Option<&[LayerCalibration]> {
        self.finalized.as_deref()
    }

    /// Whether `layer` partitions its input. Always true before finalization.
    pub fn partition_enabled(&self, layer: usize) -> bool {
        match &self.finalized {
            Some(c) => c[layer].enabled,
            None => true,
        }
    }

    pub fn accumulate(&mut self, per_layer_scores: &[f64]) -> Result<()> {
        if self.finalized.is_some() {
            return Err(Error::Contract("calibration already finalized".into()));
        }
        if self.batches_seen >= self.cold_start_batches {
            return Err(Error::Contract("cold start already complete".into()));
        }
        if per_layer_scores.len() != self.sums.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} layer scores", self.sums.len()),
                actual: format!("{}", per_layer_scores.len()),
            });
        }
        for (s, v) in self.sums.iter_mut().zip(per_layer_scores) {
            *s += v;
        }
        self.batches_seen += 1;
        Ok(())
    }

    /// Min-max normalizes the per-layer averages and enables layers whose
    /// normalized score is at least `gamma_threshold`. Equal averages
    /// normalize to 1.
    pub fn finalize(&mut self, gamma_threshold: f64) -> Result<&[LayerCalibration]> {
        if self.finalized.is_some() {
            return Err(Error::Contract("calibration already finalized".into()));
        }
        if self.batches_seen != self.cold_start_batches {
            return Err(Error::Contract(format!(
                "finalize after {} of {} cold-start batches",
                self.batches_seen, self.cold_start_batches
            )));
        }
        let averages = self.averages();
        let lo = averages.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = averages.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let layers = averages
            .iter()
            .enumerate()
            .map(|(layer, &avg)| {
                let normalized_score = if span > 0.0 { (avg - lo) / span } else { 1.0 };
                LayerCalibration {
                    layer,
                    raw_average: avg,
                    normalized_score,
                    enabled: normalized_score >= gamma_threshold,
                }
            })
            .collect();
        Ok(self.finalized.insert(layers))
    }
}
