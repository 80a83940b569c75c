//! Model file: a line-oriented text header terminated by `end`, followed by
//! every tensor listed in the header as little-endian f32, in header order.
//!
//! ```text
//! clusternorm-model 1
//! input 1 16 16
//! seed 7
//! lambda 0.01
//! ...
//! layer conv 8
//! layer norm
//! tensor conv0.weight 72
//! ...
//! end
//! <payload>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Conv2d, InputShape, Layer, LayerKind, LinearHead, Model, ModelMeta, NetworkSpec};
use crate::error::{Error, Result};
use crate::fabn::SourceStats;
use crate::tensor::ChannelStats;

const MAGIC: &str = "clusternorm-model 1";
const END: &str = "end";

pub fn encode(model: &Model) -> Result<Vec<u8>> {
    model.validate()?;
    let mut header = String::new();
    let mut tensors: Vec<(String, &[f32])> = Vec::new();
    let m = &model.meta;
    let i = model.spec.input;
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("input {} {} {}\n", i.channels, i.height, i.width));
    header.push_str(&format!("seed {}\n", model.spec.seed));
    header.push_str(&format!("lambda {:?}\n", m.lambda));
    header.push_str(&format!("classes {}\n", m.classes));
    header.push_str(&format!("template_seed {}\n", m.template_seed));
    header.push_str(&format!("base_noise {:?}\n", m.base_noise));
    header.push_str(&format!("train_samples {}\n", m.train_samples));
    header.push_str(&format!("clean_accuracy {:?}\n", m.clean_accuracy));
    header.push_str(&format!("clean_eval_seed {}\n", m.clean_eval_seed));
    header.push_str(&format!("clean_eval_batches {}\n", m.clean_eval_batches));
    header.push_str(&format!("clean_eval_batch_size {}\n", m.clean_eval_batch_size));

    let mut conv_index = 0;
    for l in &model.spec.layers {
        match l {
            Layer::Conv(c) => {
                header.push_str(&format!("layer conv {}\n", c.out_channels));
                tensors.push((format!("conv{conv_index}.weight"), &c.weight));
                tensors.push((format!("conv{conv_index}.bias"), &c.bias));
                conv_index += 1;
            }
            Layer::Norm(_) => header.push_str("layer norm\n"),
            Layer::Relu => header.push_str("layer relu\n"),
            Layer::AvgPool => header.push_str("layer avgpool\n"),
            Layer::Flatten => header.push_str("layer flatten\n"),
        }
    }
    let eps: Vec<[f32; 1]> = model.sources.iter().map(|s| [s.eps]).collect();
    for (k, s) in model.sources.iter().enumerate() {
        tensors.push((format!("norm{k}.mean"), &s.stats.mean));
        tensors.push((format!("norm{k}.var"), &s.stats.var));
        tensors.push((format!("norm{k}.scale"), &s.affine_scale));
        tensors.push((format!("norm{k}.shift"), &s.affine_shift));
        tensors.push((format!("norm{k}.eps"), &eps[k]));
    }
    tensors.push(("head.weight".into(), &model.head.weight));
    tensors.push(("head.bias".into(), &model.head.bias));

    for (name, t) in &tensors {
        header.push_str(&format!("tensor {name} {}\n", t.len()));
    }
    header.push_str(END);
    header.push('\n');

    let mut bytes = header.into_bytes();
    for (_, t) in &tensors {
        for v in t.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let marker = format!("\n{END}\n");
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| Error::Format("missing `end` line".into()))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| Error::Format("header is not utf-8".into()))?;
    let mut payload = &bytes[split + marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Format(format!("expected `{MAGIC}`")));
    }
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    let mut kinds = Vec::new();
    let mut tensors: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    for line in lines {
        let (key, rest) = line.split_once(' ').ok_or_else(|| Error::Format(format!("bad line `{line}`")))?;
        match key {
            "layer" => kinds.push(parse_layer(rest)?),
            "tensor" => {
                let (name, len) = rest.split_once(' ').ok_or_else(|| Error::Format(format!("bad tensor line `{line}`")))?;
                let len: usize = parse(len, "tensor length")?;
                if payload.len() < 4 * len {
                    return Err(Error::Format(format!("payload truncated in {name}")));
                }
                let (head, tail) = payload.split_at(4 * len);
                let values = head
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                payload = tail;
                tensors.insert(name.to_string(), values);
            }
            _ => {
                fields.insert(key, rest);
            }
        }
    }
    if !payload.is_empty() {
        return Err(Error::Format(format!("{} trailing payload bytes", payload.len())));
    }

    let field = |k: &str| fields.get(k).copied().ok_or_else(|| Error::Format(format!("missing `{k}`")));
    let input: Vec<usize> = field("input")?
        .split_whitespace()
        .map(|v| parse(v, "input"))
        .collect::<Result<_>>()?;
    if input.len() != 3 {
        return Err(Error::Format("input needs three dims".into()));
    }
    let input = InputShape {
        channels: input[0],
        height: input[1],
        width: input[2],
    };
    let meta = ModelMeta {
        classes: parse(field("classes")?, "classes")?,
        template_seed: parse(field("template_seed")?, "template_seed")?,
        base_noise: parse(field("base_noise")?, "base_noise")?,
        lambda: parse(field("lambda")?, "lambda")?,
        train_samples: parse(field("train_samples")?, "train_samples")?,
        clean_accuracy: parse(field("clean_accuracy")?, "clean_accuracy")?,
        clean_eval_seed: parse(field("clean_eval_seed")?, "clean_eval_seed")?,
        clean_eval_batches: parse(field("clean_eval_batches")?, "clean_eval_batches")?,
        clean_eval_batch_size: parse(field("clean_eval_batch_size")?, "clean_eval_batch_size")?,
    };
    let seed: u64 = parse(field("seed")?, "seed")?;

    let mut take = |name: String| tensors.remove(&name).ok_or_else(|| Error::Format(format!("missing tensor {name}")));
    let mut layers = Vec::with_capacity(kinds.len());
    let (mut channels, mut conv_index, mut slot) = (input.channels, 0, 0);
    for kind in kinds {
        layers.push(match kind {
            LayerKind::Conv { out_channels } => {
                let conv = Conv2d::new(
                    channels,
                    out_channels,
                    take(format!("conv{conv_index}.weight"))?,
                    take(format!("conv{conv_index}.bias"))?,
                )?;
                channels = out_channels;
                conv_index += 1;
                Layer::Conv(conv)
            }
            LayerKind::Norm => {
                slot += 1;
                Layer::Norm(slot - 1)
            }
            LayerKind::Relu => Layer::Relu,
            LayerKind::AvgPool => Layer::AvgPool,
            LayerKind::Flatten => Layer::Flatten,
        });
    }
    let spec = NetworkSpec::from_layers(input, layers, seed)?;
    let mut sources = Vec::with_capacity(slot);
    for k in 0..slot {
        let stats = ChannelStats::new(take(format!("norm{k}.mean"))?, take(format!("norm{k}.var"))?)?;
        let eps = take(format!("norm{k}.eps"))?;
        let eps = *eps.first().ok_or_else(|| Error::Format("empty eps".into()))?;
        sources.push(
            SourceStats::new(stats)
                .with_eps(eps)
                .with_affine(take(format!("norm{k}.scale"))?, take(format!("norm{k}.shift"))?)?,
        );
    }
    let head = LinearHead {
        classes: meta.classes,
        dim: spec.feature_dim(),
        weight: take("head.weight".into())?,
        bias: take("head.bias".into())?,
        lambda: meta.lambda,
    };
    if head.weight.len() != head.classes * head.dim || head.bias.len() != head.classes {
        return Err(Error::Format("head tensor sizes disagree with classes".into()));
    }
    let model = Model {
        spec,
        sources,
        head,
        meta,
    };
    model.validate()?;
    Ok(model)
}

fn parse_layer(s: &str) -> Result<LayerKind> {
    let mut parts = s.split_whitespace();
    Ok(match (parts.next(), parts.next()) {
        (Some("conv"), Some(n)) => LayerKind::Conv {
            out_channels: parse(n, "conv channels")?,
        },
        (Some("norm"), None) => LayerKind::Norm,
        (Some("relu"), None) => LayerKind::Relu,
        (Some("avgpool"), None) => LayerKind::AvgPool,
        (Some("flatten"), None) => LayerKind::Flatten,
        _ => return Err(Error::Format(format!("unknown layer `{s}`"))),
    })
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse {what} from `{s}`")))
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
