//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `DHCKPT\0\x01`, a little-endian `u64` header
//! length, a JSON header (model config, adapter flag, epoch, seed, config
//! hash, dtype, parameter table, payload digest), then every parameter's
//! values in store order as little-endian IEEE floats of the header dtype.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use dualhead_core::model::{DualHeadModel, ModelConfig, ParamGroup, ParamStore};
use dualhead_core::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::io::{sha256_hex, write_atomic};

pub const MAGIC: &[u8; 8] = b"DHCKPT\0\x01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub config: ModelConfig,
    pub with_lora: bool,
    /// Training epoch the weights come from; 0 before fine-tuning.
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
    pub params: Vec<ParamEntry>,
    pub payload_sha256: String,
}

/// Metadata stored next to the weights.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
}

fn width(dtype: &str) -> Result<usize> {
    match dtype {
        "f32" => Ok(4),
        "f64" => Ok(8),
        other => bail!("unsupported checkpoint dtype {other}"),
    }
}

pub fn encode<T: Real>(model: &DualHeadModel<T>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let dtype = T::NAME;
    let w = width(dtype)?;
    let mut payload = Vec::with_capacity(model.params().numel() * w);
    let mut params = Vec::with_capacity(model.params().len());
    for (_, p) in model.params().iter() {
        params.push(ParamEntry {
            name: p.name.clone(),
            group: p.group,
            shape: p.value.shape().to_vec(),
        });
        for &v in p.value.data() {
            let v = v.as_f64();
            if w == 4 {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            } else {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = CheckpointHeader {
        dtype: dtype.into(),
        config: model.config().clone(),
        with_lora: model.has_lora(),
        epoch: meta.epoch,
        seed: meta.seed,
        config_hash: meta.config_hash.clone(),
        params,
        payload_sha256: sha256_hex(&payload),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Header alone, without decoding the weights.
pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    ensure!(bytes.len() >= 16 && &bytes[..8] == MAGIC, "not a checkpoint file");
    let n = u64::from_le_bytes(bytes[8..16].try_into()?) as usize;
    ensure!(bytes.len() >= 16 + n, "truncated checkpoint header");
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + n]).context("checkpoint header")?;
    Ok((header, &bytes[16 + n..]))
}

/// Rebuilds the model. Loading into the dtype it was saved from is
/// bit-exact; other dtypes convert through `f64`.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<(DualHeadModel<T>, CheckpointHeader)> {
    let (header, payload) = read_header(bytes)?;
    let w = width(&header.dtype)?;
    ensure!(sha256_hex(payload) == header.payload_sha256, "checkpoint payload digest mismatch");
    let mut store = ParamStore::new();
    let mut off = 0;
    for e in &header.params {
        let n: usize = e.shape.iter().product();
        ensure!(payload.len() >= off + n * w, "truncated checkpoint payload");
        let data: Vec<T> = payload[off..off + n * w]
            .chunks_exact(w)
            .map(|c| {
                let v = if w == 4 {
                    f64::from(f32::from_le_bytes(c.try_into().unwrap()))
                } else {
                    f64::from_le_bytes(c.try_into().unwrap())
                };
                T::of(v)
            })
            .collect();
        off += n * w;
        let value = Tensor::new(e.shape.clone(), data).map_err(|err| anyhow::anyhow!("{}: {err}", e.name))?;
        store.push(e.name.clone(), e.group, value);
    }
    ensure!(off == payload.len(), "trailing bytes after checkpoint payload");
    let model = DualHeadModel::from_params(header.config.clone(), header.with_lora, store)
        .map_err(|e| anyhow::anyhow!("checkpoint does not match its config: {e}"))?;
    Ok((model, header))
}

pub fn save<T: Real>(path: &Path, model: &DualHeadModel<T>, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &encode(model, meta)?)
}

pub fn load<T: Real>(path: &Path) -> Result<(DualHeadModel<T>, CheckpointHeader)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes).with_context(|| format!("loading {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_seq_len: 12,
            cls_hidden_dim: 6,
            lora_rank: 2,
            ..ModelConfig::default()
        }
    }

    fn bits<T: Real>(m: &DualHeadModel<T>) -> Vec<u64> {
        m.params()
            .iter()
            .flat_map(|(_, p)| p.value.data().iter().map(|v| v.as_f64().to_bits()).collect::<Vec<_>>())
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let meta = CheckpointMeta {
            epoch: 3,
            seed: 9,
            config_hash: "abc".into(),
        };
        let mut m = DualHeadModel::<f64>::new(cfg(), 4).unwrap();
        m.attach_lora(5).unwrap();
        // make the adapters non-trivial
        for id in m.params().iter().map(|(id, _)| id).collect::<Vec<_>>() {
            for v in m.params_mut().value_mut(id).data_mut() {
                *v += 1e-3 / 7.0;
            }
        }
        let bytes = encode(&m, &meta).unwrap();
        let (back, h) = decode::<f64>(&bytes).unwrap();
        assert_eq!(bits(&m), bits(&back));
        assert!(back.has_lora());
        assert_eq!((h.epoch, h.seed, h.config_hash.as_str()), (3, 9, "abc"));
        assert_eq!(encode(&back, &meta).unwrap(), bytes);

        let m32 = DualHeadModel::<f32>::new(cfg(), 4).unwrap();
        let (b32, _) = decode::<f32>(&encode(&m32, &meta).unwrap()).unwrap();
        assert_eq!(bits(&m32), bits(&b32));
    }

    #[test]
    fn corruption_is_detected() {
        let m = DualHeadModel::<f64>::new(cfg(), 1).unwrap();
        let mut bytes = encode(&m, &CheckpointMeta::default()).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(format!("{:#}", decode::<f64>(&bytes).unwrap_err()).contains("digest"));
        assert!(decode::<f64>(b"nonsense-bytes-here").is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn any_weights_round_trip(seed in 0u64..1000, scale in -1e3f64..1e3, lora: bool) {
            let mut m = DualHeadModel::<f64>::new(cfg(), seed).unwrap();
            if lora {
                m.attach_lora(seed).unwrap();
            }
            for id in m.params().iter().map(|(id, _)| id).collect::<Vec<_>>() {
                for v in m.params_mut().value_mut(id).data_mut() {
                    *v *= scale;
                }
            }
            let (back, _) = decode::<f64>(&encode(&m, &CheckpointMeta::default()).unwrap()).unwrap();
            proptest::prop_assert_eq!(bits(&m), bits(&back));
            proptest::prop_assert_eq!(back.has_lora(), lora);
        }

        #[test]
        fn any_single_byte_flip_is_rejected(seed in 0u64..50, pos in 0usize..usize::MAX, bit in 0u8..8) {
            let m = DualHeadModel::<f64>::new(cfg(), seed).unwrap();
            let mut bytes = encode(&m, &CheckpointMeta::default()).unwrap();
            let i = pos % bytes.len();
            bytes[i] ^= 1 << bit;
            // a flip may land in the header and still parse, but never
            // silently changes the weights
            if let Ok((back, _)) = decode::<f64>(&bytes) {
                proptest::prop_assert_eq!(bits(&m), bits(&back));
            }
        }
    }
}
