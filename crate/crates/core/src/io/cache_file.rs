use std::path::Path;

use super::container::{decode, encode, put_f64, put_str, put_u32, read_file, write_atomic, Reader};
use crate::distill::SparseSoftLabel;
use crate::error::{Error, Result};
use crate::pipeline::{CacheHeader, CacheRecord, SoftLabelCache};

pub const CACHE_MAGIC: &str = "essence-kd-softlabels";

/// Payload layout per record: `utt_id` (u32 length + UTF-8), `frame_index`
/// (u32), entry count (u32), then `count × (class_id u32, prob f64)`.
pub fn encode_cache(cache: &SoftLabelCache) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    put_u32(&mut payload, len_u32(cache.len())?);
    for r in cache.records() {
        put_str(&mut payload, &r.utt_id)?;
        put_u32(&mut payload, r.frame_index);
        put_u32(&mut payload, len_u32(r.label.entries.len())?);
        for &(c, p) in &r.label.entries {
            put_u32(&mut payload, c);
            put_f64(&mut payload, p);
        }
    }
    encode(CACHE_MAGIC, &cache.header, &payload)
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("count {n} does not fit in 32 bits")))
}

pub fn decode_cache(bytes: &[u8]) -> Result<SoftLabelCache> {
    let (header, payload): (CacheHeader, _) = decode(CACHE_MAGIC, bytes)?;
    let mut r = Reader::new(payload);
    let count = r.u32()? as usize;
    let arity = header.arity();
    let mut records = Vec::with_capacity(count.min(payload.len() / 16));
    for i in 0..count {
        let utt_id = r.string()?;
        let frame_index = r.u32()?;
        let n = r.u32()? as usize;
        if n != arity {
            return Err(Error::Format(format!(
                "record {i} carries {n} entries but header k = {} implies {arity}",
                header.k
            )));
        }
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let c = r.u32()?;
            entries.push((c, r.f64()?));
        }
        records.push(CacheRecord {
            utt_id,
            frame_index,
            label: SparseSoftLabel::from_entries(header.k, entries),
        });
    }
    r.finish()?;
    SoftLabelCache::new(header, records)
}

pub fn save_cache(path: impl AsRef<Path>, cache: &SoftLabelCache) -> Result<()> {
    write_atomic(path.as_ref(), &encode_cache(cache)?)
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<SoftLabelCache> {
    decode_cache(&read_file(path.as_ref())?)
}
