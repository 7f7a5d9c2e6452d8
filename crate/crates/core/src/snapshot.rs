//! Versioned parameter snapshots and checksums.
//!
//! Container layout: 8-byte magic `ECHOSNAP`, little-endian `u32` format
//! version, little-endian `u64` body length, JSON body. Floats in the body
//! round-trip bit-exactly.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{EchoError, Result};

pub const MAGIC: &[u8; 8] = b"ECHOSNAP";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode<S: Serialize>(value: &S) -> Vec<u8> {
    let body = serde_json::to_vec(value).expect("snapshot serializes");
    let mut out = Vec::with_capacity(body.len() + 20);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decode<S: DeserializeOwned>(bytes: &[u8]) -> Result<S> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(EchoError::Snapshot("missing header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(EchoError::Snapshot(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(20..20 + len)
        .ok_or_else(|| EchoError::Snapshot("truncated body".into()))?;
    Ok(serde_json::from_slice(body)?)
}

/// Word-at-a-time FNV-1a style accumulator for parameter checksums.
#[derive(Debug, Clone, Copy)]
pub struct Checksum(u64);

impl Default for Checksum {
    fn default() -> Self {
        Checksum(0xcbf2_9ce4_8422_2325)
    }
}

impl Checksum {
    pub fn word(&mut self, w: u64) {
        self.0 = (self.0 ^ w).wrapping_mul(0x0000_0100_0000_01b3);
        self.0 ^= self.0 >> 29;
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.word(crate::text::fnv1a(b));
        self.word(b.len() as u64);
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

pub fn hex(v: u64) -> String {
    format!("{v:016x}")
}
