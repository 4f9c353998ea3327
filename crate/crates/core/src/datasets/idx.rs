//! IDX files: big-endian magic `00 00 08 <rank>`, big-endian `u32` extents,
//! raw `u8` payload. Paths ending in `.gz` are gzip-compressed.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::diff::Tensor;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Parse an IDX byte stream with an unsigned-byte payload of rank 1 or 3.
pub fn read_idx(bytes: &[u8]) -> Result<(IdxHeader, IdxTensor)> {
    if bytes.len() < 4 {
        return Err(Error::Format(format!("IDX file too short for a magic number: {bytes:02x?}")));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let rank = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        _ => {
            return Err(Error::Format(format!(
                "bad IDX magic bytes {:02x} {:02x} {:02x} {:02x}",
                bytes[0], bytes[1], bytes[2], bytes[3]
            )))
        }
    };
    let header_len = 4 + 4 * rank;
    if bytes.len() < header_len {
        return Err(Error::Length {
            expected: header_len,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let expected: usize = dims.iter().product();
    let found = bytes.len() - header_len;
    if found != expected {
        return Err(Error::Length { expected, found });
    }
    Ok((
        IdxHeader { magic, dims: dims.clone() },
        IdxTensor {
            dims,
            data: bytes[header_len..].to_vec(),
        },
    ))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    if is_gz(path) {
        GzDecoder::new(f).read_to_end(&mut bytes)
    } else {
        f.read_to_end(&mut bytes)
    }
    .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    Ok(read_idx(&read_file(path.as_ref())?)?.1)
}

/// Images `[n, H, W]` scaled to `[0, 1]`.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Tensor> {
    let t = load_idx(path)?;
    if t.dims.len() != 3 {
        return Err(Error::Format(format!("expected image file, got dims {:?}", t.dims)));
    }
    Tensor::new(t.dims, t.data.iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let t = load_idx(path)?;
    if t.dims.len() != 1 {
        return Err(Error::Format(format!("expected label file, got dims {:?}", t.dims)));
    }
    Ok(t.data)
}

/// Serialize to IDX bytes (rank 1 → labels magic, rank 3 → images magic).
pub fn write_idx(tensor: &IdxTensor) -> Result<Vec<u8>> {
    let magic = match tensor.dims.len() {
        1 => LABELS_MAGIC,
        3 => IMAGES_MAGIC,
        r => return Err(Error::contract(format!("IDX writer supports rank 1 or 3, got {r}"))),
    };
    if tensor.dims.iter().product::<usize>() != tensor.data.len() {
        return Err(Error::Length {
            expected: tensor.dims.iter().product(),
            found: tensor.data.len(),
        });
    }
    let mut out = magic.to_be_bytes().to_vec();
    for &d in &tensor.dims {
        let d = u32::try_from(d).map_err(|_| Error::contract("IDX extent exceeds u32"))?;
        out.extend(d.to_be_bytes());
    }
    out.extend(&tensor.data);
    Ok(out)
}

pub fn write_idx_file(path: impl AsRef<Path>, tensor: &IdxTensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_idx(tensor)?;
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let res = if is_gz(path) {
        let mut enc = GzEncoder::new(f, Compression::default());
        enc.write_all(&bytes).and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut f = f;
        f.write_all(&bytes)
    };
    res.map_err(|e| Error::io(path, e))
}
