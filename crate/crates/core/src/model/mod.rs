//! Forward-only convolutional classifier with pluggable normalization slots.
//!
//! Convolution weights are fixed random features; only the linear head is
//! fitted. Each normalization slot holds source statistics captured on clean
//! data and defers the choice of test-time statistics to [`crate::fabn`].

mod head;
pub mod io;
mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use head::{train_linear_head, LinearHead};
pub use layers::{avg_pool2, flatten, relu, Conv2d, Layer, LayerKind, KERNEL};

use crate::error::{Error, Result};
use crate::fabn::{normalize_layer_traced, NormalizerConfig, SourceStats};
use crate::sensitivity::layer_score;
use crate::tensor::{batch_moments, Dims, FeatureMap, MomentAccumulator};

pub const DEFAULT_LAMBDA: f64 = 1e-2;
/// Std of the random convolution biases.
pub const DEFAULT_BIAS_STD: f32 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub const STANDARD: InputShape = InputShape {
        channels: 1,
        height: 16,
        width: 16,
    };

    pub fn dims(&self, batch: usize) -> Dims {
        Dims::new(batch, self.channels, self.height, self.width)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub input: InputShape,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

impl NetworkSpec {
    /// `conv(8) norm relu pool conv(16) norm relu pool flatten`, all weights
    /// drawn from `seed`.
    pub fn standard(seed: u64) -> Result<Self> {
        use LayerKind::*;
        Self::build(
            InputShape::STANDARD,
            &[
                Conv { out_channels: 8 },
                Norm,
                Relu,
                AvgPool,
                Conv { out_channels: 16 },
                Norm,
                Relu,
                AvgPool,
                Flatten,
            ],
            seed,
        )
    }

    pub fn build(input: InputShape, kinds: &[LayerKind], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut channels = input.channels;
        let mut slots = 0;
        let mut layers = Vec::with_capacity(kinds.len());
        for kind in kinds {
            layers.push(match *kind {
                LayerKind::Conv { out_channels } => {
                    if out_channels == 0 {
                        return Err(Error::Dims("convolution with zero output channels".into()));
                    }
                    let conv = Conv2d::random(channels, out_channels, DEFAULT_BIAS_STD, &mut rng);
                    channels = out_channels;
                    Layer::Conv(conv)
                }
                LayerKind::Norm => {
                    slots += 1;
                    Layer::Norm(slots - 1)
                }
                LayerKind::Relu => Layer::Relu,
                LayerKind::AvgPool => Layer::AvgPool,
                LayerKind::Flatten => Layer::Flatten,
            });
        }
        Self::from_layers(input, layers, seed)
    }

    pub fn from_layers(input: InputShape, layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let spec = NetworkSpec { input, layers, seed };
        spec.feature_dims()?;
        Ok(spec)
    }

    pub fn slot_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::Norm(_))).count()
    }

    /// Channel count seen by each normalization slot.
    pub fn slot_channels(&self) -> Vec<usize> {
        let mut channels = self.input.channels;
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(c) => channels = c.out_channels,
                Layer::Norm(_) => out.push(channels),
                Layer::Flatten => channels = 0,
                _ => {}
            }
        }
        out
    }

    /// `(channels, height, width)` after the last layer, checking that the
    /// layer sequence is consistent.
    pub fn feature_dims(&self) -> Result<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = (self.input.channels, self.input.height, self.input.width);
        let mut slot = 0;
        let mut flat = false;
        for l in &self.layers {
            match l {
                Layer::Conv(conv) => {
                    if flat || conv.in_channels != c {
                        return Err(Error::Dims(format!(
                            "convolution expects {} channels, receives {c}",
                            conv.in_channels
                        )));
                    }
                    c = conv.out_channels;
                }
                Layer::Norm(i) => {
                    if *i != slot || flat {
                        return Err(Error::Dims(format!("normalization slot {i} out of order")));
                    }
                    slot += 1;
                }
                Layer::Relu => {}
                Layer::AvgPool => {
                    if flat || h < 2 || w < 2 {
                        return Err(Error::Dims("pooling below 2x2".into()));
                    }
                    h /= 2;
                    w /= 2;
                }
                Layer::Flatten => {
                    c *= h * w;
                    h = 1;
                    w = 1;
                    flat = true;
                }
            }
        }
        Ok((c, h, w))
    }

    pub fn feature_dim(&self) -> usize {
        let (c, h, w) = self.feature_dims().expect("validated at construction");
        c * h * w
    }

    /// Runs the layers, calling `norm(slot, input)` at every normalization
    /// slot. With `stop_at = Some(s)` returns the input of slot `s` instead.
    pub fn run<F>(&self, x: &FeatureMap<f32>, stop_at: Option<usize>, mut norm: F) -> Result<FeatureMap<f32>>
    where
        F: FnMut(usize, &FeatureMap<f32>) -> Result<FeatureMap<f32>>,
    {
        let expected = self.input.dims(x.batch());
        if x.dims() != expected {
            return Err(Error::ShapeMismatch {
                expected: expected.to_string(),
                actual: x.dims().to_string(),
            });
        }
        let mut cur = x.clone();
        for l in &self.layers {
            cur = match l {
                Layer::Conv(c) => c.forward(&cur)?,
                Layer::Norm(slot) => {
                    if stop_at == Some(*slot) {
                        return Ok(cur);
                    }
                    norm(*slot, &cur)?
                }
                Layer::Relu => relu(&cur),
                Layer::AvgPool => avg_pool2(&cur)?,
                Layer::Flatten => flatten(cur),
            };
        }
        if let Some(s) = stop_at {
            return Err(Error::Contract(format!("network has no slot {s}")));
        }
        Ok(cur)
    }
}

/// Pooled moments of every slot's input over clean data.
///
/// Slots are captured front to back: slot `s` sees inputs produced with slots
/// `0..s` normalized by their final pooled statistics, so the result depends
/// only on the multiset of samples, not on how they are batched or ordered.
pub fn capture_source_stats(spec: &NetworkSpec, batches: &[FeatureMap<f32>]) -> Result<Vec<SourceStats<f32>>> {
    if batches.is_empty() {
        return Err(Error::EmptySelection);
    }
    let cfg = NormalizerConfig::new(crate::fabn::NormMode::Sbn);
    let mut sources: Vec<SourceStats<f32>> = Vec::with_capacity(spec.slot_count());
    for slot in 0..spec.slot_count() {
        let mut acc = MomentAccumulator::new();
        for x in batches {
            let input = spec.run(x, Some(slot), |s, f| {
                normalize_layer_traced(f, &sources[s], &cfg, false).map(|o| o.output)
            })?;
            acc.push(&input)?;
        }
        sources.push(SourceStats::new(acc.finish()?));
    }
    Ok(sources)
}

/// Per-slot record of one forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlotTrace {
    /// Number of groups when the slot partitioned its input.
    pub clusters: Option<usize>,
    /// Sensitivity score of the slot input, when requested.
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub classes: usize,
    /// `batch x classes`, row-major.
    pub logits: Vec<f32>,
    pub slots: Vec<SlotTrace>,
}

impl ForwardOutput {
    pub fn batch(&self) -> usize {
        self.logits.len() / self.classes
    }

    /// Argmax per sample, lowest class on ties.
    pub fn predictions(&self) -> Vec<usize> {
        self.logits
            .chunks(self.classes)
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Provenance of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub classes: usize,
    pub template_seed: u64,
    pub base_noise: f64,
    pub lambda: f64,
    pub train_samples: usize,
    /// Accuracy of the source-normalized model on a clean held-out stream.
    pub clean_accuracy: f64,
    pub clean_eval_seed: u64,
    pub clean_eval_batches: usize,
    pub clean_eval_batch_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: NetworkSpec,
    pub sources: Vec<SourceStats<f32>>,
    pub head: LinearHead,
    pub meta: ModelMeta,
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        let channels = self.spec.slot_channels();
        if channels.len() != self.sources.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} slot statistics", channels.len()),
                actual: format!("{}", self.sources.len()),
            });
        }
        for (c, s) in channels.iter().zip(&self.sources) {
            s.validate()?;
            if *c != s.channels() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{c} channels"),
                    actual: format!("{} channels", s.channels()),
                });
            }
        }
        if self.head.dim != self.spec.feature_dim() || self.head.classes != self.meta.classes {
            return Err(Error::ShapeMismatch {
                expected: format!("{} features, {} classes", self.spec.feature_dim(), self.meta.classes),
                actual: format!("{} features, {} classes", self.head.dim, self.head.classes),
            });
        }
        Ok(())
    }

    pub fn slot_count(&self) -> usize {
        self.sources.len()
    }

    /// Forward pass. `partition(slot)` says whether a partitioning mode may
    /// partition at that slot; `record_scores` also scores each slot input
    /// against its source statistics.
    pub fn forward(
        &self,
        x: &FeatureMap<f32>,
        cfg: &NormalizerConfig,
        partition: impl Fn(usize) -> bool,
        record_scores: bool,
    ) -> Result<ForwardOutput> {
        let mut slots = vec![SlotTrace::default(); self.slot_count()];
        let features = self.spec.run(x, None, |s, f| {
            let src = &self.sources[s];
            if record_scores {
                slots[s].score = Some(layer_score(&batch_moments(f), &src.stats)?.raw_score);
            }
            let out = normalize_layer_traced(f, src, cfg, partition(s))?;
            slots[s].clusters = out.partition.map(|p| p.len());
            Ok(out.output)
        })?;
        let logits = (0..features.batch())
            .flat_map(|b| self.head.scores(features.sample(b)))
            .collect::<Vec<_>>();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(ForwardOutput {
            classes: self.head.classes,
            logits,
            slots,
        })
    }

    /// Flattened features (pre-head) with source normalization at every slot.
    pub fn source_features(&self, x: &FeatureMap<f32>) -> Result<FeatureMap<f32>> {
        let cfg = NormalizerConfig::new(crate::fabn::NormMode::Sbn);
        self.spec
            .run(x, None, |s, f| normalize_layer_traced(f, &self.sources[s], &cfg, false).map(|o| o.output))
    }
}
