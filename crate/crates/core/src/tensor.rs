//! Dense `B x C x H x W` feature maps and channel-wise moments.
//!
//! Storage is row-major with the batch axis outermost, then channel, then the
//! flattened spatial extent `L = H * W`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Dims {
            batch,
            channels,
            height,
            width,
        }
    }

    #[inline]
    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn sample_len(&self) -> usize {
        self.channels * self.spatial()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.batch * self.sample_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_batch(self, batch: usize) -> Self {
        Dims { batch, ..self }
    }

    fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.channels == 0 || self.spatial() == 0 {
            return Err(Error::Dims(format!(
                "{}x{}x{}x{} has an empty axis",
                self.batch, self.channels, self.height, self.width
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.batch, self.channels, self.height, self.width
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    /// Wraps `data`, checking the length against `dims` and rejecting
    /// NaN/Inf entries.
    pub fn new(dims: Dims, data: Vec<T>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} elements for {}", dims.len(), dims),
                actual: format!("{} elements", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(FeatureMap { dims, data })
    }

    /// Skips the finiteness scan. Callers guarantee the length matches.
    pub(crate) fn from_parts(dims: Dims, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), dims.len());
        FeatureMap { dims, data }
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        dims.validate()?;
        Ok(FeatureMap {
            dims,
            data: vec![T::zero(); dims.len()],
        })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        dims.validate()?;
        let l = dims.spatial();
        let mut data = Vec::with_capacity(dims.len());
        for b in 0..dims.batch {
            for c in 0..dims.channels {
                for s in 0..l {
                    data.push(f(b, c, s));
                }
            }
        }
        Self::new(dims, data)
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.dims.batch
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.dims.channels
    }

    #[inline]
    pub fn spatial(&self) -> usize {
        self.dims.spatial()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// All channels of sample `b`.
    #[inline]
    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.dims.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let l = self.dims.spatial();
        let start = (b * self.dims.channels + c) * l;
        &self.data[start..start + l]
    }

    #[inline]
    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let l = self.dims.spatial();
        let start = (b * self.dims.channels + c) * l;
        &mut self.data[start..start + l]
    }

    /// Gathers the listed samples, in order, into a new map.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        check_indices(indices, self.batch())?;
        let mut data = Vec::with_capacity(indices.len() * self.dims.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Ok(FeatureMap {
            dims: self.dims.with_batch(indices.len()),
            data,
        })
    }

    /// Stacks maps along the batch axis.
    pub fn concat(parts: &[FeatureMap<T>]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptySelection)?;
        let mut batch = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.dims.with_batch(1) != first.dims.with_batch(1) {
                return Err(Error::ShapeMismatch {
                    expected: first.dims.with_batch(p.batch()).to_string(),
                    actual: p.dims.to_string(),
                });
            }
            batch += p.batch();
            data.extend_from_slice(&p.data);
        }
        Ok(FeatureMap {
            dims: first.dims.with_batch(batch),
            data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        FeatureMap {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Per-channel mean and (biased) variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> ChannelStats<T> {
    pub fn new(mean: Vec<T>, var: Vec<T>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} variances", mean.len()),
                actual: format!("{} variances", var.len()),
            });
        }
        if var.iter().any(|v| *v < T::zero()) {
            return Err(Error::Contract("negative variance".into()));
        }
        if mean.iter().chain(var.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("channel stats"));
        }
        Ok(ChannelStats { mean, var })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn std_dev(&self) -> Vec<T> {
        self.var.iter().map(|v| v.sqrt()).collect()
    }
}

pub(crate) fn check_indices(indices: &[usize], batch: usize) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::EmptySelection);
    }
    if let Some(&index) = indices.iter().find(|&&i| i >= batch) {
        return Err(Error::IndexOutOfRange { index, batch });
    }
    Ok(())
}

/// Mean and biased variance of each channel over the selected samples and all
/// spatial positions.
pub fn channel_moments<T: Scalar>(f: &FeatureMap<T>, sample_indices: &[usize]) -> Result<ChannelStats<T>> {
    check_indices(sample_indices, f.batch())?;
    Ok(channel_moments_unchecked(f, sample_indices))
}

pub(crate) fn channel_moments_unchecked<T: Scalar>(
    f: &FeatureMap<T>,
    sample_indices: &[usize],
) -> ChannelStats<T> {
    let channels = f.channels();
    let count = (sample_indices.len() * f.spatial()) as f64;
    let mut mean = Vec::with_capacity(channels);
    let mut var = Vec::with_capacity(channels);
    for c in 0..channels {
        let mut sum = 0.0f64;
        for &b in sample_indices {
            sum += f.plane(b, c).iter().map(|v| v.to_f64_lossless()).sum::<f64>();
        }
        let mu = sum / count;
        let mut sq = 0.0f64;
        for &b in sample_indices {
            sq += f
                .plane(b, c)
                .iter()
                .map(|v| {
                    let d = v.to_f64_lossless() - mu;
                    d * d
                })
                .sum::<f64>();
        }
        mean.push(T::from_f64_lossy(mu));
        var.push(T::from_f64_lossy((sq / count).max(0.0)));
    }
    ChannelStats { mean, var }
}

/// Moments of the whole batch.
pub fn batch_moments<T: Scalar>(f: &FeatureMap<T>) -> ChannelStats<T> {
    let all: Vec<usize> = (0..f.batch()).collect();
    channel_moments_unchecked(f, &all)
}

/// Streaming per-channel moments, merged batch by batch with the pairwise
/// (count, mean, M2) update, so the result does not depend on batch order
/// beyond rounding.
#[derive(Clone, Debug, Default)]
pub struct MomentAccumulator {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn push<T: Scalar>(&mut self, f: &FeatureMap<T>) -> Result<()> {
        let channels = f.channels();
        if self.mean.is_empty() {
            self.mean = vec![0.0; channels];
            self.m2 = vec![0.0; channels];
        } else if self.mean.len() != channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} channels", self.mean.len()),
                actual: format!("{channels} channels"),
            });
        }
        let n_b = (f.batch() * f.spatial()) as f64;
        for c in 0..channels {
            let mut sum = 0.0;
            for b in 0..f.batch() {
                sum += f.plane(b, c).iter().map(|v| v.to_f64_lossless()).sum::<f64>();
            }
            let mu_b = sum / n_b;
            let mut m2_b = 0.0;
            for b in 0..f.batch() {
                m2_b += f
                    .plane(b, c)
                    .iter()
                    .map(|v| {
                        let d = v.to_f64_lossless() - mu_b;
                        d * d
                    })
                    .sum::<f64>();
            }
            let n_a = self.count;
            let n = n_a + n_b;
            let delta = mu_b - self.mean[c];
            self.mean[c] += delta * n_b / n;
            self.m2[c] += m2_b + delta * delta * n_a * n_b / n;
        }
        self.count += n_b;
        Ok(())
    }

    pub fn finish<T: Scalar>(&self) -> Result<ChannelStats<T>> {
        if self.count == 0.0 {
            return Err(Error::EmptySelection);
        }
        Ok(ChannelStats {
            mean: self.mean.iter().map(|&m| T::from_f64_lossy(m)).collect(),
            var: self
                .m2
                .iter()
                .map(|&m2| T::from_f64_lossy((m2 / self.count).max(0.0)))
                .collect(),
        })
    }
}
