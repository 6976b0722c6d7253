//! Versioned binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes   "GRASPCK\0"
//! version    u32       1
//! name       u16 length + UTF-8 registry name ("data-stft-lstm", "knn", ...)
//! variant    u8        feature variant tag, ASCII 'A'..'D'
//! stft       u32 window length, u32 band count
//! stats      u32 count, then per channel: u32 channel, f64 min, f64 max
//! body       u64 length + model-specific bytes
//! digest     32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! LSTM bodies hold `u8 loss mode`, `u32 stream count`, then per LSTM
//! `u32 input, u32 hidden, W (4H x (I+H) row-major, gates i,f,o,g), b (4H)`,
//! then the head `u32 in, W (2 x in), b (2)`.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Featurizer, NormStats, Variant};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::registry::{Classifier, Registry};
use crate::signal::{MinMax, STFT_BANDS, STFT_WINDOW};

pub const MAGIC: &[u8; 8] = b"GRASPCK\0";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f64s_into(&mut self, out: &mut [f64]) -> Result<()> {
        for slot in out.iter_mut() {
            *slot = self.f64()?;
        }
        Ok(())
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        // reject lengths the remaining bytes cannot hold before allocating
        if n.saturating_mul(8) > self.remaining() {
            return Err(Error::Corrupt(format!("array of {n} floats exceeds file")));
        }
        let mut v = vec![0.0; n];
        self.f64s_into(&mut v)?;
        Ok(v)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes",
                self.remaining()
            )));
        }
        Ok(())
    }
}

/// Serializes a classifier into the container format.
pub fn encode(classifier: &dyn Classifier) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let name = classifier.name().as_bytes();
    w.u16(name.len() as u16);
    w.bytes(name);
    let f = classifier.featurizer();
    w.u8(f.variant.tag() as u8);
    w.u32(STFT_WINDOW as u32);
    w.u32(STFT_BANDS as u32);
    w.u32(f.stats.channels.len() as u32);
    for (&ch, mm) in &f.stats.channels {
        w.u32(ch as u32);
        w.f64(mm.min);
        w.f64(mm.max);
    }
    let mut body = ByteWriter::new();
    classifier.encode_body(&mut body);
    let body = body.into_inner();
    w.u64(body.len() as u64);
    w.bytes(&body);
    let mut out = w.into_inner();
    let digest = Sha256::digest(&out);
    out.extend_from_slice(digest.as_slice());
    out
}

/// Parses and verifies a container, rebuilding the classifier through the
/// registry entry named in the header.
pub fn decode(bytes: &[u8], registry: &Registry) -> Result<Box<dyn Classifier>> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::Corrupt("file too short".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    if bytes.len() < 12 + DIGEST_LEN {
        return Err(Error::Corrupt("file too short".into()));
    }
    let (payload, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(payload).as_slice() != digest {
        return Err(Error::DigestMismatch);
    }
    let mut r = ByteReader::new(&payload[12..]);
    let name_len = r.u16()? as usize;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| Error::Corrupt("model name is not UTF-8".into()))?
        .to_string();
    let tag = r.u8()? as char;
    let variant = Variant::from_tag(tag)
        .ok_or_else(|| Error::Corrupt(format!("unknown variant tag {tag:?}")))?;
    let (win, bands) = (r.u32()? as usize, r.u32()? as usize);
    if win != STFT_WINDOW || bands != STFT_BANDS {
        return Err(Error::Corrupt(format!(
            "unsupported STFT shape {win}/{bands}"
        )));
    }
    let n_stats = r.u32()? as usize;
    let mut stats = NormStats::default();
    for _ in 0..n_stats {
        let ch = r.u32()? as usize;
        let (min, max) = (r.f64()?, r.f64()?);
        stats.insert(ch, MinMax { min, max });
    }
    let body_len = usize::try_from(r.u64()?).map_err(|_| Error::Corrupt("body length".into()))?;
    let body = r.take(body_len)?;
    r.finish()?;
    let entry = registry.resolve(&name)?;
    let mut br = ByteReader::new(body);
    let classifier = (entry.decode)(Featurizer::new(variant, stats), &mut br)?;
    br.finish()?;
    Ok(classifier)
}

/// SHA-256 of the encoded checkpoint, hex.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

pub fn save_checkpoint(classifier: &dyn Classifier, path: &Path) -> Result<()> {
    write_atomic(path, &encode(classifier))
}

pub fn load_checkpoint(path: &Path, registry: &Registry) -> Result<Box<dyn Classifier>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, registry)
}
