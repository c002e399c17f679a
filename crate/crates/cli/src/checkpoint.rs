//! Model checkpoints: an index of named entries followed by concatenated
//! tensor files.
//!
//! ```text
//! magic   4 bytes "ALCK"
//! version 1 byte  = 1
//! count   u32 LE
//! count entries: name_len u16 LE | name bytes | payload_len u64 LE
//! payload: the entries' tensor files, concatenated in index order
//! ```

use crate::error::{io_err, CliError, CliResult};
use crate::tensorfile;
use alseg_core::micronet::{ConvParams, ModelParams, ParamSet, LAYER_NAMES};
use alseg_core::Tensor;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"ALCK";
const VERSION: u8 = 1;

fn entries_of(params: &ModelParams) -> CliResult<Vec<(String, Vec<u8>)>> {
    let mut entries = Vec::new();
    let mut push = |name: String, t: &Tensor| -> CliResult<()> {
        entries.push((name, tensorfile::to_bytes(t)?));
        Ok(())
    };
    for (set, prefix) in [
        (&params.weights, ""),
        (&params.adam_m, "adam.m."),
        (&params.adam_v, "adam.v."),
    ] {
        for (layer, name) in set.layers.iter().zip(LAYER_NAMES) {
            push(format!("{}{}.kernels", prefix, name), &layer.kernels)?;
            push(format!("{}{}.bias", prefix, name), &layer.bias)?;
        }
    }
    let t = Tensor::from_vec(&[1], vec![params.adam_t as f32])
        .expect("adam_t fits in f32 at any plausible step count");
    push("adam.t".to_string(), &t)?;
    Ok(entries)
}

/// Serialize a checkpoint.
pub fn to_bytes(params: &ModelParams) -> CliResult<Vec<u8>> {
    let entries = entries_of(params)?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, payload) in &entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    }
    for (_, payload) in &entries {
        out.extend_from_slice(payload);
    }
    Ok(out)
}

/// Deserialize a checkpoint back into full model state.
pub fn from_bytes(bytes: &[u8]) -> CliResult<ModelParams> {
    let err = |msg: &str| CliError::runtime(format!("checkpoint: {}", msg));
    if bytes.len() < 9 || bytes[0..4] != MAGIC {
        return Err(err("bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(err("unsupported version"));
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let mut pos = 9;
    let mut index = Vec::with_capacity(count);
    for _ in 0..count {
        if bytes.len() < pos + 2 {
            return Err(err("truncated index"));
        }
        let name_len = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        if bytes.len() < pos + name_len + 8 {
            return Err(err("truncated index"));
        }
        let name = std::str::from_utf8(&bytes[pos..pos + name_len])
            .map_err(|_| err("index name not utf-8"))?
            .to_string();
        pos += name_len;
        let len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        index.push((name, len));
    }
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, len) in index {
        if bytes.len() < pos + len {
            return Err(err("truncated payload"));
        }
        let t = tensorfile::from_bytes(&bytes[pos..pos + len])?;
        pos += len;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(err(&format!("duplicate entry {:?}", name)));
        }
    }
    if pos != bytes.len() {
        return Err(err("trailing bytes"));
    }

    let take = |tensors: &mut BTreeMap<String, Tensor>, name: &str| -> CliResult<Tensor> {
        tensors
            .remove(name)
            .ok_or_else(|| err(&format!("missing entry {:?}", name)))
    };
    let mut sets = Vec::new();
    for prefix in ["", "adam.m.", "adam.v."] {
        let layers = LAYER_NAMES
            .iter()
            .map(|name| {
                Ok(ConvParams {
                    kernels: take(&mut tensors, &format!("{}{}.kernels", prefix, name))?,
                    bias: take(&mut tensors, &format!("{}{}.bias", prefix, name))?,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        sets.push(ParamSet { layers });
    }
    let adam_t = take(&mut tensors, "adam.t")?;
    if !tensors.is_empty() {
        return Err(err(&format!("unexpected entries: {:?}", tensors.keys())));
    }
    let adam_v = sets.pop().expect("three sets");
    let adam_m = sets.pop().expect("three sets");
    let weights = sets.pop().expect("three sets");

    let kdims = weights.layers[0].kernels.dims();
    if kdims.len() != 4 || kdims[1] != 1 {
        return Err(err("conv1 kernels have unexpected shape"));
    }
    let n_ch = kdims[0];
    let out_dims = weights.layers[4].kernels.dims();
    if out_dims.len() != 4 || out_dims[1] != 2 * n_ch {
        return Err(err("conv5 kernels have unexpected shape"));
    }
    let n_cl = out_dims[0];

    Ok(ModelParams {
        n_ch,
        n_cl,
        weights,
        adam_m,
        adam_v,
        adam_t: adam_t.data()[0] as u64,
    })
}

pub fn write_file(path: &Path, params: &ModelParams) -> CliResult<()> {
    let bytes = to_bytes(params)?;
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&bytes).map_err(|e| io_err(path, e))
}

pub fn read_file(path: &Path) -> CliResult<ModelParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    from_bytes(&bytes)
}
