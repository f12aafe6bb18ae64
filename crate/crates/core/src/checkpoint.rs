//! Binary checkpoints. All integers and floats little-endian.
//!
//! ```text
//! "GTAS"                      magic
//! u32                         format version (1)
//! u64                         total file length in bytes
//! [u8; 16]                    config hash, ASCII hex
//! u64 epoch, u64 adam step
//! u64 rng seed, u64 rng counter
//! u64 n, [u8; n]              search space as JSON
//! u64 count                   tensor table
//!   u32 n, [u8; n] name
//!   u8 kind (0 weight, 1 bias, 2 gain)
//!   u32 rank, u64 extents[rank]
//!   f64 values[product(extents)]
//! u64 count                   optimizer table, same order and shapes
//!   u32 n, [u8; n] name
//!   f64 first moment[..], f64 second moment[..]
//! [u8; 32]                    SHA-256 of every preceding byte
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::space::SearchSpace;
use crate::supernet::{ParamKind, ParamTensor, SupernetWeights};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GTAS";
pub const VERSION: u32 = 1;
const HASH_LEN: usize = 16;
const CHECKSUM_LEN: usize = 32;
const FIXED_HEADER: usize = 4 + 4 + 8 + HASH_LEN + 4 * 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub weights: SupernetWeights,
    pub rng: SeededRng,
}

fn kind_code(kind: ParamKind) -> u8 {
    match kind {
        ParamKind::Weight => 0,
        ParamKind::Bias => 1,
        ParamKind::Gain => 2,
    }
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
}

fn put_floats(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend(v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Corruption(format!("record at byte {} runs past the payload", self.pos))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Corruption("length overflows usize".into()))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corruption("tensor name is not UTF-8".into()))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Corruption("tensor too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

impl Checkpoint {
    pub fn new(config_hash: &str, weights: SupernetWeights, rng: SeededRng) -> Result<Self> {
        if config_hash.len() != HASH_LEN || !config_hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::Input(format!("config hash must be {HASH_LEN} hex digits, got `{config_hash}`")));
        }
        Ok(Self { config_hash: config_hash.to_string(), weights, rng })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend(0u64.to_le_bytes());
        out.extend(self.config_hash.as_bytes());
        out.extend((self.weights.epoch as u64).to_le_bytes());
        out.extend(self.weights.step.to_le_bytes());
        let (seed, counter) = self.rng.state();
        out.extend(seed.to_le_bytes());
        out.extend(counter.to_le_bytes());
        let space = serde_json::to_vec(self.weights.space()).expect("space serializes");
        out.extend((space.len() as u64).to_le_bytes());
        out.extend(&space);
        let params = self.weights.params();
        out.extend((params.len() as u64).to_le_bytes());
        for p in params {
            put_name(&mut out, &p.name);
            out.push(kind_code(p.kind));
            out.extend((p.value.rank() as u32).to_le_bytes());
            for &e in p.value.shape() {
                out.extend((e as u64).to_le_bytes());
            }
            put_floats(&mut out, p.value.data());
        }
        out.extend((params.len() as u64).to_le_bytes());
        for p in params {
            put_name(&mut out, &p.name);
            put_floats(&mut out, p.m.data());
            put_floats(&mut out, p.v.data());
        }
        let total = (out.len() + CHECKSUM_LEN) as u64;
        out[8..16].copy_from_slice(&total.to_le_bytes());
        let digest = Sha256::digest(&out);
        out.extend(digest);
        out
    }

    /// Checks magic, version, declared length and checksum before decoding
    /// anything.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FIXED_HEADER + CHECKSUM_LEN {
            return Err(Error::Corruption(format!("file is {} bytes, shorter than any checkpoint", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Corruption("missing GTAS magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        let declared = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        if declared != bytes.len() as u64 {
            return Err(Error::Corruption(format!("header declares {declared} bytes, file has {}", bytes.len())));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(Error::Corruption("checksum mismatch".into()));
        }
        let mut r = Reader { bytes: body, pos: 16 };
        let config_hash = String::from_utf8(r.take(HASH_LEN)?.to_vec())
            .map_err(|_| Error::Corruption("config hash is not ASCII".into()))?;
        let epoch = r.len()?;
        let step = r.u64()?;
        let rng = SeededRng::from_state(r.u64()?, r.u64()?);
        let space_len = r.len()?;
        let space: SearchSpace = serde_json::from_slice(r.take(space_len)?)
            .map_err(|e| Error::Corruption(format!("search space record: {e}")))?;
        let count = r.len()?;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.name()?;
            let kind = match r.take(1)?[0] {
                0 => ParamKind::Weight,
                1 => ParamKind::Bias,
                2 => ParamKind::Gain,
                k => return Err(Error::Corruption(format!("tensor {name}: unknown kind {k}"))),
            };
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e));
            let n = n.ok_or_else(|| Error::Corruption(format!("tensor {name}: extents overflow")))?;
            let value = Tensor::from_vec(&shape, r.floats(n)?).map_err(|e| Error::Corruption(e.to_string()))?;
            tensors.push((name, kind, value));
        }
        if r.len()? != count {
            return Err(Error::Corruption("optimizer table size differs from tensor table".into()));
        }
        let mut params = Vec::with_capacity(count);
        for (name, kind, value) in tensors {
            if r.name()? != name {
                return Err(Error::Corruption(format!("optimizer entry out of order at {name}")));
            }
            let shape = value.shape().to_vec();
            let m = Tensor::from_vec(&shape, r.floats(value.len())?).expect("shape checked");
            let v = Tensor::from_vec(&shape, r.floats(value.len())?).expect("shape checked");
            params.push(ParamTensor { name, kind, value, m, v });
        }
        if r.pos != body.len() {
            return Err(Error::Corruption(format!("{} trailing bytes", body.len() - r.pos)));
        }
        let weights = SupernetWeights::from_parts(space, params, step, epoch)
            .map_err(|e| Error::Corruption(e.to_string()))?;
        Ok(Self { config_hash, weights, rng })
    }

    /// Writes through a temporary sibling and renames, so a crash never
    /// leaves a half-written file under `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Errors unless the stored hash equals `expected` or `allow_mismatch`.
    pub fn verify_config(&self, expected: &str, allow_mismatch: bool) -> Result<()> {
        if self.config_hash != expected && !allow_mismatch {
            return Err(Error::HashMismatch { found: self.config_hash.clone(), expected: expected.to_string() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let space = SearchSpace::toy();
        let mut w = SupernetWeights::init(&space, &mut SeededRng::new(4), 0.02).unwrap();
        w.epoch = 3;
        w.step = 17;
        w.params_mut()[0].m.data_mut()[1] = -0.25;
        w.params_mut()[0].v.data_mut()[2] = f64::MIN_POSITIVE;
        Checkpoint::new("0123456789abcdef", w, SeededRng::from_state(9, 41)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn every_truncation_is_corruption() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Corruption(_))), "cut {cut}");
        }
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Corruption(m)) if m.contains("checksum")));
    }

    #[test]
    fn other_version_is_version_error() {
        let mut bytes = sample().to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Version { found: 2, expected: 1 })));
    }

    #[test]
    fn hash_mismatch_needs_override() {
        let c = sample();
        assert!(c.verify_config("0123456789abcdef", false).is_ok());
        assert!(matches!(c.verify_config("ffffffffffffffff", false), Err(Error::HashMismatch { .. })));
        assert!(c.verify_config("ffffffffffffffff", true).is_ok());
    }

    #[test]
    fn malformed_hash_rejected() {
        let w = sample().weights;
        assert!(Checkpoint::new("xyz", w, SeededRng::new(1)).is_err());
    }
}
