use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, FeatureMap};

/// 3x3 convolution, stride 1, zero padding 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out x in x 3 x 3`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

pub const KERNEL: usize = 3;

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if weight.len() != out_channels * in_channels * KERNEL * KERNEL || bias.len() != out_channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{out_channels}x{in_channels}x3x3 weights and {out_channels} biases"),
                actual: format!("{} weights, {} biases", weight.len(), bias.len()),
            });
        }
        Ok(Conv2d {
            in_channels,
            out_channels,
            weight,
            bias,
        })
    }

    /// Gaussian weights with std `1/sqrt(fan_in)`; biases with std `bias_std`.
    pub fn random<R: Rng>(in_channels: usize, out_channels: usize, bias_std: f32, rng: &mut R) -> Self {
        let fan_in = (in_channels * KERNEL * KERNEL) as f32;
        let scale = 1.0 / fan_in.sqrt();
        let weight = (0..out_channels * in_channels * KERNEL * KERNEL)
            .map(|_| rng.sample::<f32, _>(StandardNormal) * scale)
            .collect();
        let bias = (0..out_channels)
            .map(|_| rng.sample::<f32, _>(StandardNormal) * bias_std)
            .collect();
        Conv2d {
            in_channels,
            out_channels,
            weight,
            bias,
        }
    }

    pub fn forward(&self, x: &FeatureMap<f32>) -> Result<FeatureMap<f32>> {
        let d = x.dims();
        if d.channels != self.in_channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} input channels", self.in_channels),
                actual: d.to_string(),
            });
        }
        let (h, w) = (d.height, d.width);
        let out_dims = Dims::new(d.batch, self.out_channels, h, w);
        let mut out = vec![0.0f32; out_dims.len()];
        let plane = h * w;
        for b in 0..d.batch {
            for oc in 0..self.out_channels {
                let dst = &mut out[(b * self.out_channels + oc) * plane..][..plane];
                dst.fill(self.bias[oc]);
                for ic in 0..self.in_channels {
                    let src = x.plane(b, ic);
                    let k = &self.weight[(oc * self.in_channels + ic) * KERNEL * KERNEL..][..KERNEL * KERNEL];
                    for ky in 0..KERNEL {
                        for kx in 0..KERNEL {
                            let wv = k[ky * KERNEL + kx];
                            // output column range whose input column x + kx - 1 is in bounds
                            let x0 = 1usize.saturating_sub(kx);
                            let x1 = (w + 1 - kx).min(w);
                            for y in 0..h {
                                let iy = y + ky;
                                if iy < 1 || iy > h {
                                    continue;
                                }
                                let src_row = &src[(iy - 1) * w..][..w];
                                let dst_row = &mut dst[y * w..][..w];
                                for (o, i) in dst_row[x0..x1].iter_mut().zip(&src_row[x0 + kx - 1..x1 + kx - 1]) {
                                    *o += wv * i;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(FeatureMap::from_parts(out_dims, out))
    }
}

pub fn relu(x: &FeatureMap<f32>) -> FeatureMap<f32> {
    x.map(|v| v.max(0.0))
}

/// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
pub fn avg_pool2(x: &FeatureMap<f32>) -> Result<FeatureMap<f32>> {
    let d = x.dims();
    let (oh, ow) = (d.height / 2, d.width / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::Dims(format!("cannot pool {d}")));
    }
    let out_dims = Dims::new(d.batch, d.channels, oh, ow);
    let mut out = Vec::with_capacity(out_dims.len());
    for b in 0..d.batch {
        for c in 0..d.channels {
            let p = x.plane(b, c);
            for y in 0..oh {
                for xx in 0..ow {
                    let i = 2 * y * d.width + 2 * xx;
                    out.push(0.25 * (p[i] + p[i + 1] + p[i + d.width] + p[i + d.width + 1]));
                }
            }
        }
    }
    Ok(FeatureMap::from_parts(out_dims, out))
}

/// Reshapes `B x C x H x W` into `B x (C*H*W) x 1 x 1`.
pub fn flatten(x: FeatureMap<f32>) -> FeatureMap<f32> {
    let d = x.dims();
    FeatureMap::from_parts(Dims::new(d.batch, d.sample_len(), 1, 1), x.into_data())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv { out_channels: usize },
    Norm,
    Relu,
    AvgPool,
    Flatten,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    /// Normalization slot; the index counts slots from the input side.
    Norm(usize),
    Relu,
    AvgPool,
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(c) => LayerKind::Conv {
                out_channels: c.out_channels,
            },
            Layer::Norm(_) => LayerKind::Norm,
            Layer::Relu => LayerKind::Relu,
            Layer::AvgPool => LayerKind::AvgPool,
            Layer::Flatten => LayerKind::Flatten,
        }
    }
}
