//! Checksummed binary container shared by dataset and checkpoint files.
//!
//! Layout (little-endian): 4-byte magic, `u32` version, `u64` manifest
//! length, UTF-8 JSON manifest, then tensor blocks
//! `[u8 dtype, u8 rank, u32 dims.., payload]`, then a CRC32 of every
//! preceding byte.

use std::fs;
use std::io::Write;
use std::path::Path;

pub const DTYPE_F32: u8 = 1;
pub const DTYPE_F64: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("version mismatch: file has version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file is truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Typed payload of one block.
#[derive(Clone, Debug, PartialEq)]
pub enum BlockData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub dims: Vec<u32>,
    pub data: BlockData,
}

impl Block {
    pub fn f32(dims: &[usize], data: Vec<f32>) -> Self {
        Block { dims: dims.iter().map(|&d| d as u32).collect(), data: BlockData::F32(data) }
    }

    pub fn f64(dims: &[usize], data: Vec<f64>) -> Self {
        Block { dims: dims.iter().map(|&d| d as u32).collect(), data: BlockData::F64(data) }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }

    pub fn len(&self) -> usize {
        match &self.data {
            BlockData::F32(v) => v.len(),
            BlockData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Payload widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            BlockData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            BlockData::F64(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub version: u32,
    pub manifest: String,
    pub blocks: Vec<Block>,
}

impl Container {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(self.manifest.as_bytes());
        for block in &self.blocks {
            let (dtype, n) = match &block.data {
                BlockData::F32(v) => (DTYPE_F32, v.len()),
                BlockData::F64(v) => (DTYPE_F64, v.len()),
            };
            assert_eq!(n, block.dims.iter().map(|&d| d as usize).product::<usize>(), "block dims disagree with payload");
            assert!(block.dims.len() <= u8::MAX as usize, "block rank too large");
            out.push(dtype);
            out.push(block.dims.len() as u8);
            for d in &block.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &block.data {
                BlockData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                BlockData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parse and verify `bytes`, requiring `magic` and exactly `version`.
    pub fn decode(bytes: &[u8], magic: [u8; 4], version: u32) -> Result<Self, ContainerError> {
        if bytes.len() < 4 {
            return Err(ContainerError::Truncated);
        }
        if bytes[..4] != magic {
            return Err(ContainerError::BadMagic {
                expected: String::from_utf8_lossy(&magic).into_owned(),
                found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
            });
        }
        if bytes.len() < 4 + 4 + 8 + 4 {
            return Err(ContainerError::Truncated);
        }
        let found = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if found != version {
            return Err(ContainerError::VersionMismatch { found, expected: version });
        }
        let body_end = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
        let parsed = parse_body(&bytes[..body_end]);
        let computed = crc32fast::hash(&bytes[..body_end]);
        match parsed {
            Err(ContainerError::Truncated) => Err(ContainerError::Truncated),
            _ if stored != computed => Err(ContainerError::Checksum { stored, computed }),
            Err(e) => Err(e),
            Ok((manifest, blocks)) => Ok(Container { magic, version, manifest, blocks }),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        let io = |source| ContainerError::Io { path: path.display().to_string(), source };
        let mut file = fs::File::create(path).map_err(io)?;
        file.write_all(&self.encode()).map_err(io)?;
        file.sync_all().map_err(io)
    }

    pub fn load(path: &Path, magic: [u8; 4], version: u32) -> Result<Self, ContainerError> {
        let bytes = fs::read(path).map_err(|source| ContainerError::Io { path: path.display().to_string(), source })?;
        Self::decode(&bytes, magic, version)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).ok_or(ContainerError::Truncated)?;
        if end > self.bytes.len() {
            return Err(ContainerError::Truncated);
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn parse_body(body: &[u8]) -> Result<(String, Vec<Block>), ContainerError> {
    let mut r = Reader { bytes: body, pos: 8 };
    let len = usize::try_from(r.u64()?).map_err(|_| ContainerError::Truncated)?;
    let manifest = std::str::from_utf8(r.take(len)?)
        .map_err(|_| ContainerError::Malformed("manifest is not UTF-8".into()))?
        .to_owned();
    let mut blocks = Vec::new();
    while r.pos < body.len() {
        let dtype = r.u8()?;
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()?);
        }
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize)).ok_or(ContainerError::Truncated)?;
        let data = match dtype {
            DTYPE_F32 => {
                let raw = r.take(n.checked_mul(4).ok_or(ContainerError::Truncated)?)?;
                BlockData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
            }
            DTYPE_F64 => {
                let raw = r.take(n.checked_mul(8).ok_or(ContainerError::Truncated)?)?;
                BlockData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
            }
            other => return Err(ContainerError::Malformed(format!("unknown dtype {other}"))),
        };
        blocks.push(Block { dims, data });
    }
    Ok((manifest, blocks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        Container {
            magic: *b"TEST",
            version: 3,
            manifest: r#"{"name":"x"}"#.into(),
            blocks: vec![
                Block::f32(&[2, 3], vec![1.0, -2.5, f32::MIN_POSITIVE, 0.0, -0.0, 7.25]),
                Block::f64(&[4], vec![std::f64::consts::PI, -1e-300, 1e300, 0.5]),
                Block::f32(&[0], vec![]),
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.encode();
        let back = Container::decode(&bytes, *b"TEST", 3).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.encode(), bytes);
        match &back.blocks[0].data {
            BlockData::F32(v) => assert_eq!(v[4].to_bits(), (-0.0f32).to_bits()),
            _ => panic!("dtype"),
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample().encode();
        assert_eq!(&bytes[..4], b"TEST");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 12);
        assert_eq!(&bytes[16..28], br#"{"name":"x"}"#);
        assert_eq!(bytes[28], DTYPE_F32);
        assert_eq!(bytes[29], 2);
        let n = bytes.len();
        assert_eq!(u32::from_le_bytes(bytes[n - 4..].try_into().unwrap()), crc32fast::hash(&bytes[..n - 4]));
    }

    #[test]
    fn detects_corruption() {
        let bytes = sample().encode();
        let n = bytes.len();

        let mut bad = bytes.clone();
        bad[n - 1] ^= 0x01;
        assert!(matches!(Container::decode(&bad, *b"TEST", 3), Err(ContainerError::Checksum { .. })));

        let mut bad = bytes.clone();
        bad[40] ^= 0x80;
        assert!(matches!(Container::decode(&bad, *b"TEST", 3), Err(ContainerError::Checksum { .. })));

        assert!(matches!(Container::decode(&bytes, *b"NOPE", 3), Err(ContainerError::BadMagic { .. })));
        assert!(matches!(
            Container::decode(&bytes, *b"TEST", 2),
            Err(ContainerError::VersionMismatch { found: 3, expected: 2 })
        ));
        assert!(matches!(Container::decode(&bytes[..n - 9], *b"TEST", 3), Err(ContainerError::Truncated)));
        assert!(matches!(Container::decode(&bytes[..10], *b"TEST", 3), Err(ContainerError::Truncated)));
        assert!(matches!(Container::decode(&[], *b"TEST", 3), Err(ContainerError::Truncated)));
    }

    #[test]
    fn never_panics_on_garbage() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let good = sample().encode();
        for _ in 0..2000 {
            let mut bytes = good.clone();
            let cut = rng.random_range(0..bytes.len());
            bytes.truncate(cut.max(16));
            for _ in 0..rng.random_range(0..4) {
                let i = rng.random_range(0..bytes.len());
                bytes[i] = rng.random();
            }
            let _ = Container::decode(&bytes, *b"TEST", 3);
        }
        let mut huge = good[..16].to_vec();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        huge.extend_from_slice(&[0; 4]);
        assert!(Container::decode(&huge, *b"TEST", 3).is_err());
    }
}
