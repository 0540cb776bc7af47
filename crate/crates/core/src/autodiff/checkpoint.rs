//! Binary container for named tensors plus string metadata.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "LSBOCKPT"
//! version  u32      1
//! n_meta   u32
//!   key_len u32, key bytes (UTF-8), val_len u32, val bytes (UTF-8)
//! n_tensor u32
//!   name_len u32, name bytes, rank u32, dims u64 × rank, data f64 bits × Π dims
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a round trip is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use super::{ParamSet, Tensor};
use crate::error::{LsboError, Result};

pub const MAGIC: &[u8; 8] = b"LSBOCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(meta: BTreeMap<String, String>, params: ParamSet) -> Self {
        Checkpoint { meta, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.params.total_len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (_, name, t) in self.params.iter() {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(8)? != MAGIC {
            return Err(r.err("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(&format!("unsupported version {version}")));
        }
        let n_meta = r.u32()?;
        let mut meta = BTreeMap::new();
        for _ in 0..n_meta {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        let n_tensors = r.u32()?;
        let mut params = ParamSet::new();
        for _ in 0..n_tensors {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| r.err("tensor too large"))?;
            if count.saturating_mul(8) > r.remaining() {
                return Err(r.err("truncated tensor data"));
            }
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                data.push(f64::from_bits(r.u64()?));
            }
            params.push(name, Tensor::new(shape, data)?);
        }
        if r.remaining() != 0 {
            return Err(r.err("trailing bytes"));
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| LsboError::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| LsboError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| LsboError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, detail: &str) -> LsboError {
        LsboError::Format {
            path: self.origin.to_path_buf(),
            detail: format!("{detail} (at byte {})", self.pos),
        }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.err("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.err("invalid utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            bits in proptest::collection::vec(any::<u64>(), 1..40),
            key in "[a-z]{1,8}",
            val in "[ -~]{0,16}",
        ) {
            let data: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
            let mut params = ParamSet::new();
            params.push("t", Tensor::new(vec![data.len()], data.clone()).unwrap());
            params.push("s", Tensor::scalar(1.5));
            let mut meta = BTreeMap::new();
            meta.insert(key, val);
            let ck = Checkpoint::new(meta.clone(), params);
            let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(back.meta, meta);
            let got: Vec<u64> = back.params.tensors()[0].data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, bits);
        }
    }

    #[test]
    fn rejects_corruption() {
        let mut params = ParamSet::new();
        params.push("w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let bytes = Checkpoint::new(BTreeMap::new(), params).to_bytes();
        let p = Path::new("mem");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad, p).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra, p).is_err());
    }
}
