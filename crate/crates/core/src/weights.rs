//! Binary weight container: named tensors with dtype/shape metadata
//! and a trailing CRC32 so corrupt files fail loudly.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Tensor};
use crate::Element;

const MAGIC: &[u8; 4] = b"AMRI";
const FORMAT_VERSION: u32 = 1;

// ── crc32 (IEEE 802.3, reflected) ────────────────────────────────────

fn crc32_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

pub fn crc32(bytes: &[u8]) -> u32 {
    let table = crc32_table();
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = table[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    !c
}

// ── serialization ────────────────────────────────────────────────────

pub fn encode_weights<E: Element>(tensors: &IndexMap<String, Tensor<E>>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::WeightFile("too many tensors".into()))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let name_bytes = name.as_bytes();
        let name_len = u16::try_from(name_bytes.len())
            .map_err(|_| Error::WeightFile(format!("tensor name too long: {name}")))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(E::DTYPE.tag());
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::WeightFile(format!("tensor rank too high: {name}")))?;
        buf.push(rank);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut buf);
        }
    }
    let crc = crc32(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

pub fn decode_weights<E: Element>(bytes: &[u8]) -> Result<IndexMap<String, Tensor<E>>> {
    if bytes.len() < 16 {
        return Err(Error::WeightFile("file too short".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32(body);
    if stored != computed {
        return Err(Error::WeightFile(format!(
            "checksum mismatch: stored {stored:#010x}, computed {computed:#010x} — file is corrupt"
        )));
    }
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| Error::WeightFile("truncated weight file".into()))?;
        let s = &body[*pos..end];
        *pos = end;
        Ok(s)
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::WeightFile("bad magic; not a weight file".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::WeightFile(format!("unsupported format version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let mut out = IndexMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::WeightFile("tensor name is not UTF-8".into()))?;
        let tag = take(&mut pos, 1)?[0];
        let dtype = Dtype::from_tag(tag)
            .ok_or_else(|| Error::WeightFile(format!("unknown dtype tag {tag}")))?;
        if dtype != E::DTYPE {
            return Err(Error::WeightFile(format!(
                "tensor {name}: stored as {dtype:?}, loader expects {:?}",
                E::DTYPE
            )));
        }
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            shape.push(usize::try_from(d).map_err(|_| Error::WeightFile("dim overflow".into()))?);
        }
        let n: usize = shape.iter().product();
        let payload = take(&mut pos, n * E::DTYPE.size_bytes())?;
        let data: Vec<E> = payload
            .chunks_exact(E::DTYPE.size_bytes())
            .map(E::read_le)
            .collect();
        if out.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::WeightFile(format!("duplicate tensor {name}")));
        }
    }
    if pos != body.len() {
        return Err(Error::WeightFile("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

pub fn save_weights<E: Element>(
    path: &Path,
    tensors: &IndexMap<String, Tensor<E>>,
) -> Result<()> {
    fs::write(path, encode_weights(tensors)?).map_err(|e| Error::file(path, e))
}

pub fn load_weights<E: Element>(path: &Path) -> Result<IndexMap<String, Tensor<E>>> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_weights(&bytes).map_err(|e| match e {
        Error::WeightFile(msg) => Error::WeightFile(format!("{}: {msg}", path.display())),
        other => other,
    })
}
