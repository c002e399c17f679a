//! Binary tensor interchange format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  0x41 0x4C 0x54 0x4E ("ALTN")
//! version 1 byte   = 1
//! dtype   1 byte   = 1 (32-bit float)
//! ndim    1 byte
//! reserved 1 byte  = 0
//! dims    ndim x u32
//! payload product(dims) x f32, row-major
//! ```
//!
//! The payload length must be exactly `4 * product(dims)` bytes; round trips
//! are bit-exact (values are moved as raw bits).

use crate::error::{io_err, CliError, CliResult};
use alseg_core::Tensor;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"ALTN";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;

/// Serialize a tensor to the wire format.
pub fn to_bytes(t: &Tensor) -> CliResult<Vec<u8>> {
    let dims = t.dims();
    if dims.len() > u8::MAX as usize {
        return Err(CliError::config(format!("tensor rank {} exceeds 255", dims.len())));
    }
    for &d in dims {
        if d > u32::MAX as usize {
            return Err(CliError::config(format!("dimension {} exceeds u32", d)));
        }
    }
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 4 * t.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F32);
    out.push(dims.len() as u8);
    out.push(0);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    Ok(out)
}

/// Deserialize a tensor, requiring the byte slice to be consumed exactly.
pub fn from_bytes(bytes: &[u8]) -> CliResult<Tensor> {
    let err = |msg: &str| CliError::runtime(format!("tensor file: {}", msg));
    if bytes.len() < 8 {
        return Err(err("truncated header"));
    }
    if bytes[0..4] != MAGIC {
        return Err(err("bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(err(&format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(err(&format!("unsupported dtype {}", bytes[5])));
    }
    let ndim = bytes[6] as usize;
    if bytes[7] != 0 {
        return Err(err("nonzero reserved byte"));
    }
    let dims_end = 8 + 4 * ndim;
    if bytes.len() < dims_end {
        return Err(err("truncated dims"));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut count: u64 = 1;
    for i in 0..ndim {
        let d = u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        count = count
            .checked_mul(u64::from(d))
            .ok_or_else(|| err("dims product overflows"))?;
        dims.push(d as usize);
    }
    if count > (1 << 31) {
        return Err(err("tensor too large"));
    }
    let expect = dims_end as u64 + 4 * count;
    if bytes.len() as u64 != expect {
        return Err(err(&format!(
            "payload length {} != expected {}",
            bytes.len() - dims_end,
            4 * count
        )));
    }
    let mut data = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let off = dims_end + 4 * i;
        data.push(f32::from_bits(u32::from_le_bytes(
            bytes[off..off + 4].try_into().unwrap(),
        )));
    }
    Tensor::from_vec(&dims, data).map_err(|e| err(&e.to_string()))
}

pub fn write_file(path: &Path, t: &Tensor) -> CliResult<()> {
    let bytes = to_bytes(t)?;
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&bytes).map_err(|e| io_err(path, e))
}

pub fn read_file(path: &Path) -> CliResult<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        CliError::Runtime(msg) => CliError::Runtime(format!("{}: {}", path.display(), msg)),
        other => other,
    })
}
