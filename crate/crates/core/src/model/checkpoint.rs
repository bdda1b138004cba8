//! `PMCK`, a `u32` LE length, the config text, then the flat parameter
//! vector as a rank-1 tensor file.

use std::fs;
use std::path::Path;

use super::{param_layout, ModelConfig, ParamStore};
use crate::data_io::{decode_tensor_at, encode_tensor};
use crate::error::{invalid, malformed, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PMCK";

pub fn encode_checkpoint(cfg: &ModelConfig, store: &ParamStore) -> Result<Vec<u8>> {
    if store.entries() != param_layout(cfg)?.as_slice() {
        return invalid("parameter store does not match the config layout");
    }
    let text = cfg.to_string();
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let values = store.values().iter().map(|&v| v as f64).collect();
    out.extend(encode_tensor(&Tensor::from_vec(&[store.len()], values)?)?);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, ParamStore)> {
    if bytes.len() < 8 {
        return malformed(bytes.len() as u64, "truncated checkpoint header");
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return malformed(0, "bad magic, expected PMCK");
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let end = 8 + n;
    if bytes.len() < end {
        return malformed(bytes.len() as u64, "truncated config text");
    }
    let Ok(text) = std::str::from_utf8(&bytes[8..end]) else {
        return malformed(8, "config text is not UTF-8");
    };
    let cfg: ModelConfig = match text.parse() {
        Ok(c) => c,
        Err(e) => return malformed(8, format!("bad config: {e}")),
    };
    let params = decode_tensor_at(&bytes[end..], end as u64)?;
    let entries = param_layout(&cfg)?;
    let expect: usize = entries.iter().map(|e| e.len()).sum();
    if params.rank() != 1 || params.len() != expect {
        return malformed(end as u64, format!("expected {expect} parameters, found shape {:?}", params.shape()));
    }
    let values = params.data().iter().map(|&v| v as f32).collect();
    Ok((cfg, ParamStore::new(entries, values)?))
}

pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &ModelConfig, store: &ParamStore) -> Result<()> {
    fs::write(path, encode_checkpoint(cfg, store)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ParamStore)> {
    decode_checkpoint(&fs::read(path)?)
}
