//! Shared on-disk envelope.
//!
//! ```text
//! <magic> <major>.<minor>\n
//! {"payload_bytes":N,"meta":{...}}\n
//! <N payload bytes, little-endian>
//! <32-byte SHA-256 of the payload>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_MAJOR: u32 = 1;
pub const FORMAT_MINOR: u32 = 0;
const CHECKSUM_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    payload_bytes: u64,
    meta: M,
}

pub(crate) fn encode<M: Serialize>(magic: &str, meta: &M, payload: &[u8]) -> Result<Vec<u8>> {
    let header = serde_json::to_string(&Envelope {
        payload_bytes: payload.len() as u64,
        meta,
    })
    .map_err(|e| Error::Format(format!("cannot serialise header: {e}")))?;
    let mut out = Vec::with_capacity(payload.len() + header.len() + 64);
    writeln!(out, "{magic} {FORMAT_MAJOR}.{FORMAT_MINOR}").expect("vec write");
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(payload);
    out.extend_from_slice(&Sha256::digest(payload));
    Ok(out)
}

fn split_line(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Corruption("missing header line".into()))?;
    let line = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Corruption("header is not UTF-8".into()))?;
    Ok((line, &bytes[nl + 1..]))
}

/// Validates magic, version and checksum; returns the metadata and payload.
pub(crate) fn decode<'a, M: DeserializeOwned>(magic: &str, bytes: &'a [u8]) -> Result<(M, &'a [u8])> {
    let (first, rest) = split_line(bytes)?;
    let version = match first.split_once(' ') {
        Some((m, v)) if m == magic => v,
        _ => return Err(Error::Format(format!("not a {magic} file"))),
    };
    let major = version
        .split('.')
        .next()
        .and_then(|m| m.parse::<u32>().ok())
        .ok_or_else(|| Error::Format(format!("malformed version {version:?}")))?;
    if major != FORMAT_MAJOR {
        return Err(Error::Version {
            found: version.to_string(),
            expected: FORMAT_MAJOR,
        });
    }

    let (header, body) = split_line(rest)?;
    let env: Envelope<M> = serde_json::from_str(header)
        .map_err(|e| Error::Corruption(format!("unreadable header: {e}")))?;
    let len = usize::try_from(env.payload_bytes)
        .map_err(|_| Error::Corruption("payload length overflows".into()))?;
    if body.len() < len + CHECKSUM_LEN {
        return Err(Error::Corruption(format!(
            "truncated: {} bytes after header, expected {}",
            body.len(),
            len + CHECKSUM_LEN
        )));
    }
    if body.len() > len + CHECKSUM_LEN {
        return Err(Error::Corruption("trailing bytes after checksum".into()));
    }
    let (payload, checksum) = body.split_at(len);
    if Sha256::digest(payload).as_slice() != checksum {
        return Err(Error::Corruption("payload checksum mismatch".into()));
    }
    Ok((env.meta, payload))
}

/// Writes to a temporary sibling file, then renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Little-endian payload reader.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("payload ends early".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize, out: &mut Vec<f64>) -> Result<()> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        out.extend(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))),
        );
        Ok(())
    }

    pub fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("string is not UTF-8".into()))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} unread payload bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let n = u32::try_from(s.len()).map_err(|_| Error::Format("string too long".into()))?;
    put_u32(out, n);
    out.extend_from_slice(s.as_bytes());
    Ok(())
}
