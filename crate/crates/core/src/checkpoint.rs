//! Checkpoint files: a JSON header line echoing the config, then one JSON
//! line per parameter block.
//!
//! ```text
//! {"format":"protofuse-checkpoint","version":1,"dim":32,"encoder":"toy","fusion":"direct_add","config":{...}}
//! {"name":"encoder.table","shape":[4096,32],"values":[...]}
//! {"name":"encoder.cls.weight","shape":[32,32],"values":[...]}
//! ...
//! ```
//!
//! A precomputed encoder stores no parameters; loading such a checkpoint
//! needs the embedding store again.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, PrecomputedProvider, ToyEncoder, ToyEncoderParams};
use crate::error::{Error, Result};
use crate::experiments::{EncoderKind, Model, TrainConfig};
use crate::ingest::EmbeddingStore;
use crate::model::Linear;
use crate::protonet::{FusionKind, FusionStrategy};

const FORMAT: &str = "protofuse-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dim: usize,
    encoder: EncoderKind,
    fusion: FusionKind,
    config: TrainConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct Block {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

fn blocks(model: &Model) -> Vec<Block> {
    let mut out = Vec::new();
    if let Encoder::Toy(toy) = &model.encoder {
        let p = &toy.params;
        out.push(Block {
            name: "encoder.table".into(),
            shape: vec![p.buckets, p.dim],
            values: p.table.clone(),
        });
        out.push(Block {
            name: "encoder.cls.weight".into(),
            shape: vec![p.dim, p.dim],
            values: p.cls_map.weight.clone(),
        });
        out.push(Block {
            name: "encoder.cls.bias".into(),
            shape: vec![p.dim],
            values: p.cls_map.bias.clone(),
        });
    }
    if let Some(l) = model.fusion.linear() {
        out.push(Block {
            name: "fusion.weight".into(),
            shape: vec![l.rows, l.cols],
            values: l.weight.clone(),
        });
        out.push(Block {
            name: "fusion.bias".into(),
            shape: vec![l.rows],
            values: l.bias.clone(),
        });
    }
    out
}

pub fn render_checkpoint(model: &Model, cfg: &TrainConfig) -> Result<String> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        dim: model.dim(),
        encoder: match model.encoder {
            Encoder::Toy(_) => EncoderKind::Toy,
            Encoder::Precomputed(_) => EncoderKind::Precomputed,
        },
        fusion: model.fusion.kind(),
        config: cfg.clone(),
    };
    let mut out = serde_json::to_string(&header).map_err(|e| Error::Malformed(e.to_string()))?;
    out.push('\n');
    for block in blocks(model) {
        out.push_str(&serde_json::to_string(&block).map_err(|e| Error::Malformed(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_checkpoint(model: &Model, cfg: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_checkpoint(model, cfg)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(
    path: impl AsRef<Path>,
    store: Option<&EmbeddingStore>,
) -> Result<(Model, TrainConfig)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, store)
}

pub fn parse_checkpoint(
    text: &str,
    store: Option<&EmbeddingStore>,
) -> Result<(Model, TrainConfig)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Truncated("checkpoint is empty".into()))?;
    let header: Header = serde_json::from_str(header_line)
        .map_err(|e| Error::Malformed(format!("checkpoint header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Malformed(format!(
            "unsupported checkpoint {} v{}",
            header.format, header.version
        )));
    }
    let mut named: BTreeMap<String, Block> = BTreeMap::new();
    for line in lines {
        let block: Block = serde_json::from_str(line)
            .map_err(|e| Error::Malformed(format!("checkpoint block: {e}")))?;
        let expected: usize = block.shape.iter().product();
        if block.values.len() != expected {
            return Err(Error::dim(
                expected,
                block.values.len(),
                format!("block `{}`", block.name),
            ));
        }
        if named.contains_key(&block.name) {
            return Err(Error::DuplicateKey(block.name));
        }
        named.insert(block.name.clone(), block);
    }
    let mut take = |name: &str| {
        named
            .remove(name)
            .ok_or_else(|| Error::MissingKey(format!("checkpoint block `{name}`")))
    };
    let d = header.dim;

    let encoder = match header.encoder {
        EncoderKind::Toy => {
            let table = take("encoder.table")?;
            let weight = take("encoder.cls.weight")?;
            let bias = take("encoder.cls.bias")?;
            let buckets = table.shape.first().copied().unwrap_or(0);
            let params = ToyEncoderParams::new(
                buckets,
                d,
                table.values,
                Linear::new(d, d, weight.values, bias.values)?,
            )?;
            Encoder::Toy(ToyEncoder::new(params))
        }
        EncoderKind::Precomputed => {
            let store = store.ok_or_else(|| {
                Error::Config("checkpoint uses a precomputed encoder; pass --store".into())
            })?;
            Encoder::Precomputed(PrecomputedProvider::new(store.clone(), Some(d))?)
        }
    };
    let mut fusion = header.fusion.init(d, 0);
    if let Some(l) = fusion.linear_mut() {
        let weight = take("fusion.weight")?;
        let bias = take("fusion.bias")?;
        *l = Linear::new(l.rows, l.cols, weight.values, bias.values)?;
    }
    if let FusionStrategy::None | FusionStrategy::DirectAdd = fusion {
        if named.keys().any(|k| k.starts_with("fusion.")) {
            return Err(Error::Malformed(
                "fusion parameters present for a parameter-free strategy".into(),
            ));
        }
    }
    Ok((Model { encoder, fusion }, header.config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        for fusion in FusionKind::ABLATION_ORDER {
            let cfg = TrainConfig {
                fusion,
                dim: 4,
                buckets: 64,
                ..TrainConfig::default()
            };
            let model = Model::init(&cfg, None).unwrap();
            let text = render_checkpoint(&model, &cfg).unwrap();
            let (back, cfg_back) = parse_checkpoint(&text, None).unwrap();
            assert_eq!(cfg_back, cfg);
            assert_eq!(back.fusion, model.fusion);
            assert_eq!(back.encoder.as_toy(), model.encoder.as_toy());
            assert_eq!(render_checkpoint(&back, &cfg_back).unwrap(), text);
        }
    }

    #[test]
    fn rejects_bad_blocks() {
        let cfg = TrainConfig {
            dim: 2,
            buckets: 64,
            ..TrainConfig::default()
        };
        let model = Model::init(&cfg, None).unwrap();
        let text = render_checkpoint(&model, &cfg).unwrap();
        let header = text.lines().next().unwrap();
        assert!(matches!(
            parse_checkpoint(header, None),
            Err(Error::MissingKey(_))
        ));
        assert!(parse_checkpoint("", None).is_err());
        let short =
            format!("{header}\n{{\"name\":\"encoder.cls.bias\",\"shape\":[2],\"values\":[1]}}\n");
        assert!(matches!(
            parse_checkpoint(&short, None),
            Err(Error::DimMismatch { .. })
        ));
    }
}
