//! Binary parameter checkpoints.
//!
//! Layout: the ASCII magic `NORCKPT1`, then one record per parameter in
//! lexicographic name order:
//!
//! ```text
//! u32 name_len | name (UTF-8) | u32 rank | u32 dim * rank | f64 * prod(dims)
//! ```
//!
//! All integers and floats are little-endian. The file ends after the last
//! record.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{NorError, Result};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"NORCKPT1";

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAGIC.len() + store.num_entries() * 8);
    out.extend_from_slice(MAGIC);
    for p in store.iter_sorted() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(NorError::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(NorError::Checkpoint("missing NORCKPT1 magic".into()));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let mut out = BTreeMap::new();
    while r.pos < bytes.len() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| NorError::Checkpoint(format!("parameter name is not UTF-8: {e}")))?
            .to_owned();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data)
            .map_err(|e| NorError::Checkpoint(format!("parameter `{name}`: {e}")))?;
        if out.insert(name.clone(), tensor).is_some() {
            return Err(NorError::Checkpoint(format!("duplicate parameter `{name}`")));
        }
    }
    Ok(out)
}

/// Write `store` to `path` atomically (temporary file, then rename).
pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    crate::util::write_atomic(path, &encode(store))
}

pub fn load(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let bytes = fs::read(path).map_err(|e| NorError::io(path, e))?;
    decode(&bytes)
}

/// Load `path` into an already-structured store, checking names and shapes.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    store.load_values(&load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::xavier_init;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("z.last", xavier_init(&[3, 4], 1), true).unwrap();
        s.add("a.first", Tensor::vector(vec![f64::MIN_POSITIVE, -0.0, 1e300]), false)
            .unwrap();
        s.add("m.conv", xavier_init(&[2, 1, 3, 3], 2), true).unwrap();
        s
    }

    #[test]
    fn layout_starts_with_magic_and_sorted_names() {
        let bytes = encode(&sample_store());
        assert_eq!(&bytes[..8], b"NORCKPT1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 7);
        assert_eq!(&bytes[12..19], b"a.first");
        assert_eq!(u32::from_le_bytes(bytes[19..23].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[23..27].try_into().unwrap()), 3);
        assert_eq!(
            f64::from_le_bytes(bytes[27..35].try_into().unwrap()),
            f64::MIN_POSITIVE
        );
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let store = sample_store();
        let bytes = encode(&store);
        let mut reloaded = sample_store();
        for p in reloaded.iter_mut() {
            p.value.fill(0.5);
        }
        reloaded.load_values(&decode(&bytes).unwrap()).unwrap();
        assert_eq!(encode(&reloaded), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"NORCKPT0").is_err());
        let bytes = encode(&sample_store());
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let bytes = encode(&sample_store());
        let mut other = ParamStore::new();
        other.add("z.last", Tensor::zeros(&[4, 3]), true).unwrap();
        other.add("a.first", Tensor::zeros(&[3]), false).unwrap();
        other.add("m.conv", Tensor::zeros(&[2, 1, 3, 3]), true).unwrap();
        let err = other.load_values(&decode(&bytes).unwrap()).unwrap_err();
        assert!(err.to_string().contains("z.last"));
    }
}
