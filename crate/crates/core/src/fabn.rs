//! Feature-aware batch normalization and the baseline normalizers.
//!
//! Every mode reduces to the same affine transform
//! `scale * (x - mean) / sqrt(var + eps) + shift`; modes differ only in which
//! statistics each sample is normalized with.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfd::{lfd_partition, Partition};
use crate::scalar::Scalar;
use crate::tensor::{batch_moments, channel_moments, channel_moments_unchecked, ChannelStats, FeatureMap};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_GAMMA_THRESHOLD: f64 = 0.1;
pub const DEFAULT_COLD_START_BATCHES: usize = 10;

/// Frozen statistics and affine parameters of one normalization layer,
/// captured on clean source data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceStats<T> {
    pub stats: ChannelStats<T>,
    pub affine_scale: Vec<T>,
    pub affine_shift: Vec<T>,
    pub eps: T,
}

impl<T: Scalar> SourceStats<T> {
    /// Identity affine (`scale = 1`, `shift = 0`) with the default epsilon.
    pub fn new(stats: ChannelStats<T>) -> Self {
        let c = stats.channels();
        SourceStats {
            stats,
            affine_scale: vec![T::one(); c],
            affine_shift: vec![T::zero(); c],
            eps: T::from_f64_lossy(DEFAULT_EPS),
        }
    }

    pub fn with_affine(mut self, scale: Vec<T>, shift: Vec<T>) -> Result<Self> {
        self.affine_scale = scale;
        self.affine_shift = shift;
        self.validate()?;
        Ok(self)
    }

    pub fn with_eps(mut self, eps: T) -> Self {
        self.eps = eps;
        self
    }

    pub fn channels(&self) -> usize {
        self.stats.channels()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.affine_scale.len() != c || self.affine_shift.len() != c || self.stats.var.len() != c {
            return Err(Error::ShapeMismatch {
                expected: format!("{c} channels in every source vector"),
                actual: format!(
                    "scale {}, shift {}, var {}",
                    self.affine_scale.len(),
                    self.affine_shift.len(),
                    self.stats.var.len()
                ),
            });
        }
        if !(self.eps > T::zero()) {
            return Err(Error::Contract("eps must be positive".into()));
        }
        if self.stats.var.iter().any(|v| *v < T::zero()) {
            return Err(Error::Contract("negative source variance".into()));
        }
        Ok(())
    }
}

/// Blended statistics, one entry per partition group.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendedStats<T> {
    pub per_group: Vec<ChannelStats<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormMode {
    /// Source statistics only.
    #[serde(rename = "SBN")]
    Sbn,
    /// Statistics of the current test batch.
    #[serde(rename = "TBN")]
    Tbn,
    /// Source blended with the current batch.
    #[serde(rename = "AlphaBN")]
    AlphaBn,
    /// Source blended with per-group statistics of the first-neighbor partition.
    #[serde(rename = "FIND")]
    Find,
    /// `Find` on layers selected by the sensitivity gate, `AlphaBn` elsewhere.
    #[serde(rename = "FINDStar")]
    FindStar,
}

impl NormMode {
    pub const ALL: [NormMode; 5] = [
        NormMode::Sbn,
        NormMode::Tbn,
        NormMode::AlphaBn,
        NormMode::Find,
        NormMode::FindStar,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            NormMode::Sbn => "SBN",
            NormMode::Tbn => "TBN",
            NormMode::AlphaBn => "AlphaBN",
            NormMode::Find => "FIND",
            NormMode::FindStar => "FINDStar",
        }
    }

    pub fn partitions(&self) -> bool {
        matches!(self, NormMode::Find | NormMode::FindStar)
    }
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NormMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(
                    "mode",
                    format!("unknown mode `{s}` (expected SBN, TBN, AlphaBN, FIND or FINDStar)"),
                )
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizerConfig {
    pub mode: NormMode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma_threshold: f64,
    #[serde(default = "default_cold_start")]
    pub cold_start_batches: usize,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA_THRESHOLD
}

fn default_cold_start() -> usize {
    DEFAULT_COLD_START_BATCHES
}

impl NormalizerConfig {
    pub fn new(mode: NormMode) -> Self {
        NormalizerConfig {
            mode,
            alpha: DEFAULT_ALPHA,
            gamma_threshold: DEFAULT_GAMMA_THRESHOLD,
            cold_start_batches: DEFAULT_COLD_START_BATCHES,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma_threshold = gamma;
        self
    }

    pub fn with_cold_start(mut self, batches: usize) -> Self {
        self.cold_start_batches = batches;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("normalizer.alpha", format!("{} not in [0, 1]", self.alpha)));
        }
        if !(self.gamma_threshold >= 0.0) || !self.gamma_threshold.is_finite() {
            return Err(Error::config(
                "normalizer.gamma_threshold",
                format!("{} must be finite and >= 0", self.gamma_threshold),
            ));
        }
        if self.cold_start_batches == 0 {
            return Err(Error::config("normalizer.cold_start_batches", "must be at least 1"));
        }
        Ok(())
    }
}

/// Per-group statistics of a partition.
pub fn tfn_statistics<T: Scalar>(f: &FeatureMap<T>, p: &Partition) -> Result<Vec<ChannelStats<T>>> {
    p.validate(f.batch())?;
    p.groups().iter().map(|g| channel_moments(f, g)).collect()
}

/// `alpha * source + (1 - alpha) * test`, on means and on variances.
pub fn blend_statistics<T: Scalar>(
    tfn: &ChannelStats<T>,
    src: &SourceStats<T>,
    alpha: f64,
) -> Result<ChannelStats<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Contract(format!("alpha {alpha} not in [0, 1]")));
    }
    if tfn.channels() != src.channels() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channels", src.channels()),
            actual: format!("{} channels", tfn.channels()),
        });
    }
    Ok(blend_unchecked(tfn, &src.stats, alpha))
}

fn blend_unchecked<T: Scalar>(test: &ChannelStats<T>, source: &ChannelStats<T>, alpha: f64) -> ChannelStats<T> {
    let a = T::from_f64_lossy(alpha);
    let b = T::from_f64_lossy(1.0 - alpha);
    let mix = |s: &[T], t: &[T]| -> Vec<T> { s.iter().zip(t).map(|(&s, &t)| a * s + b * t).collect() };
    ChannelStats {
        mean: mix(&source.mean, &test.mean),
        var: mix(&source.var, &test.var),
    }
}

/// Normalizes every group of `p` with its own blended statistics, then applies
/// the source affine.
pub fn fabn_normalize<T: Scalar>(
    f: &FeatureMap<T>,
    p: &Partition,
    blended: &BlendedStats<T>,
    src: &SourceStats<T>,
) -> Result<FeatureMap<T>> {
    p.validate(f.batch())?;
    if blended.per_group.len() != p.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} group statistics", p.len()),
            actual: format!("{}", blended.per_group.len()),
        });
    }
    src.validate()?;
    if src.channels() != f.channels() || blended.per_group.iter().any(|s| s.channels() != f.channels()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channels", f.channels()),
            actual: format!("{} source channels", src.channels()),
        });
    }
    let mut out = f.clone();
    for (group, stats) in p.groups().iter().zip(&blended.per_group) {
        normalize_samples(&mut out, group, stats, src);
    }
    Ok(out)
}

fn normalize_samples<T: Scalar>(out: &mut FeatureMap<T>, samples: &[usize], stats: &ChannelStats<T>, src: &SourceStats<T>) {
    for c in 0..out.channels() {
        let mu = stats.mean[c];
        let inv = T::one() / (stats.var[c] + src.eps).sqrt();
        let scale = src.affine_scale[c];
        let shift = src.affine_shift[c];
        for &b in samples {
            for x in out.plane_mut(b, c) {
                *x = scale * ((*x - mu) * inv) + shift;
            }
        }
    }
}

/// Output of one normalization slot.
#[derive(Clone, Debug)]
pub struct LayerOutput<T> {
    pub output: FeatureMap<T>,
    /// The partition used, when the layer partitioned its input.
    pub partition: Option<Partition>,
}

pub fn normalize_layer<T: Scalar>(
    f: &FeatureMap<T>,
    src: &SourceStats<T>,
    cfg: &NormalizerConfig,
    partition_enabled: bool,
) -> Result<FeatureMap<T>> {
    normalize_layer_traced(f, src, cfg, partition_enabled).map(|o| o.output)
}

/// Dispatches on `cfg.mode`. `partition_enabled = false` turns the
/// partitioning modes into `AlphaBn`.
pub fn normalize_layer_traced<T: Scalar>(
    f: &FeatureMap<T>,
    src: &SourceStats<T>,
    cfg: &NormalizerConfig,
    partition_enabled: bool,
) -> Result<LayerOutput<T>> {
    cfg.validate()?;
    src.validate()?;
    if src.channels() != f.channels() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channels", src.channels()),
            actual: format!("{} channels", f.channels()),
        });
    }
    let all: Vec<usize> = (0..f.batch()).collect();
    let mut out = f.clone();
    let partition = match cfg.mode {
        NormMode::Sbn => {
            normalize_samples(&mut out, &all, &src.stats, src);
            None
        }
        NormMode::Tbn => {
            normalize_samples(&mut out, &all, &batch_moments(f), src);
            None
        }
        NormMode::Find | NormMode::FindStar if partition_enabled => {
            let p = lfd_partition(f);
            for g in p.groups() {
                let stats = blend_unchecked(&channel_moments_unchecked(f, g), &src.stats, cfg.alpha);
                normalize_samples(&mut out, g, &stats, src);
            }
            Some(p)
        }
        NormMode::AlphaBn | NormMode::Find | NormMode::FindStar => {
            let stats = blend_unchecked(&batch_moments(f), &src.stats, cfg.alpha);
            normalize_samples(&mut out, &all, &stats, src);
            None
        }
    };
    Ok(LayerOutput { output: out, partition })
}
