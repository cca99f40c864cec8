//! Parameter checkpoints.
//!
//! Layout: an 8-byte little-endian `u64` giving the header length, the UTF-8
//! JSON header, then every parameter's values as little-endian `f64`. Header
//! offsets are byte offsets from the start of the value section.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Array, ParamStore};
use crate::error::{Error, Result};

const FORMAT: &str = "ddgcn-params";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    params: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

pub fn encode(store: &ParamStore) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let params = store
        .iter()
        .map(|p| {
            let e = Entry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                offset,
            };
            offset += 8 * p.value.len() as u64;
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        format: FORMAT.into(),
        version: 1,
        params,
    })?;
    let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .ok_or_else(|| bad("truncated length prefix"))?
        .try_into()
        .expect("8 bytes");
    let hlen = u64::from_le_bytes(len_bytes) as usize;
    let header_bytes = bytes
        .get(8..8usize.saturating_add(hlen))
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(header_bytes)?;
    if header.format != FORMAT || header.version != 1 {
        return Err(bad("unrecognized checkpoint format"));
    }
    let body = &bytes[8 + hlen..];
    let mut store = ParamStore::new();
    for e in header.params {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let chunk = body
            .get(start..start + 8 * n)
            .ok_or_else(|| Error::Checkpoint(format!("values of {} out of bounds", e.name)))?;
        let data = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.add(e.name, Array::new(&e.shape, data)?);
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(store)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store.add(
            "a",
            Array::new(&[2, 2], vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
        );
        store.add("alpha", Array::scalar(0.1 + 0.2));
        let back = decode(&encode(&store).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in store.iter().zip(back.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape());
            let bits = |x: &Array| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
    }

    #[test]
    fn header_layout() {
        let mut store = ParamStore::new();
        store.add("w", Array::zeros(&[3]));
        store.add("b", Array::zeros(&[2]));
        let bytes = encode(&store).unwrap();
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + hlen]).unwrap();
        assert_eq!(header["params"][1]["offset"], 24);
        assert_eq!(bytes.len(), 8 + hlen + 5 * 8);
    }

    #[test]
    fn truncated_input_is_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Array::zeros(&[4]));
        let bytes = encode(&store).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(&bytes[..4]).is_err());
    }
}
