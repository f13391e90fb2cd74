//! Binary checkpoint format.
//!
//! ```text
//! "SKLG" | version: u32 | config_len: u32 | config: UTF-8 bytes
//! repeated until EOF:
//!   name_len: u32 | name: UTF-8 | rank: u32 | dims: u32 × rank | payload: f32 × numel
//! ```
//!
//! All integers and floats are little-endian. Values are stored as 32-bit
//! floats; loading widens them back to 64 bits.

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use super::{AutodiffError, Result};

pub const MAGIC: &[u8; 4] = b"SKLG";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn as_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| AutodiffError::Checkpoint(format!("{what} {v} exceeds u32")))
}

pub fn encode(config_doc: &str, store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + config_doc.len() + 4 * store.num_scalars());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, as_u32(config_doc.len(), "config length")?);
    out.extend_from_slice(config_doc.as_bytes());
    for (_, name, tensor) in store.iter() {
        put_u32(&mut out, as_u32(name.len(), "name length")?);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, as_u32(tensor.rank(), "rank")?);
        for &d in tensor.shape() {
            put_u32(&mut out, as_u32(d, "dimension")?);
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(AutodiffError::Checkpoint(format!(
                "truncated while reading {what} at byte {} (file is {} bytes)",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, n: usize, what: &str) -> Result<String> {
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| AutodiffError::Checkpoint(format!("{what} is not valid UTF-8")))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode(bytes: &[u8]) -> Result<(String, ParamStore)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(AutodiffError::Checkpoint(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let config_len = r.u32("config length")? as usize;
    let config = r.string(config_len, "config document")?;
    let mut store = ParamStore::new();
    while !r.done() {
        let name_len = r.u32("parameter name length")? as usize;
        let name = r.string(name_len, "parameter name")?;
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dimension")? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| AutodiffError::Checkpoint(format!("shape of {name} overflows")))?;
        let payload = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| AutodiffError::Checkpoint(format!("payload of {name} overflows")))?,
            "payload",
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let tensor = Tensor::new(dims, data)
            .map_err(|e| AutodiffError::Checkpoint(format!("parameter {name}: {e}")))?;
        store.insert(&name, tensor)?;
    }
    Ok((config, store))
}

pub fn save(path: &Path, config_doc: &str, store: &ParamStore) -> Result<()> {
    let bytes = encode(config_doc, store)?;
    fs::write(path, bytes).map_err(|e| AutodiffError::Io(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<(String, ParamStore)> {
    let bytes = fs::read(path).map_err(|e| AutodiffError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a.weight", Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 1e-3, 7.25]).unwrap())
            .unwrap();
        s.insert("a.bias", Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn layout_matches_documented_format() {
        let bytes = encode("{}", &sample_store()).unwrap();
        assert_eq!(&bytes[..4], b"SKLG");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..14], b"{}");
        assert_eq!(&bytes[14..18], &8u32.to_le_bytes());
        assert_eq!(&bytes[18..26], b"a.weight");
        assert_eq!(&bytes[26..30], &2u32.to_le_bytes());
        assert_eq!(&bytes[38..42], &0.5f32.to_le_bytes());
        // 4+4+4+2 header, then (4+8+4+8+24) and (4+6+4+4+12)
        assert_eq!(bytes.len(), 14 + 48 + 30);
    }

    #[test]
    fn rejects_bad_magic_version_and_length() {
        let good = encode("cfg", &sample_store()).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode(&bad).unwrap_err().to_string().contains("magic"));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(decode(&bad).unwrap_err().to_string().contains("version"));
        assert!(decode(&good[..good.len() - 1]).unwrap_err().to_string().contains("truncated"));
        let mut long = good.clone();
        long.push(0);
        assert!(decode(&long).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_preserves_f32_values(vals in proptest::collection::vec(-1e6f32..1e6f32, 1..40)) {
            let mut s = ParamStore::new();
            let data: Vec<f64> = vals.iter().map(|&v| f64::from(v)).collect();
            s.insert("p", Tensor::vector(data.clone()).unwrap()).unwrap();
            let (cfg, back) = decode(&encode("doc", &s).unwrap()).unwrap();
            prop_assert_eq!(cfg, "doc");
            prop_assert_eq!(back.get("p").unwrap().data(), &data[..]);
        }
    }
}
