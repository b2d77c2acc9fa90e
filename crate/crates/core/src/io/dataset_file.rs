use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::{decode, encode, put_f64, put_str, put_u32, read_file, write_atomic, Reader};
use crate::data::{Dataset, Split, Utterance};
use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const DATASET_MAGIC: &str = "essence-kd-dataset";

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    split: Split,
    num_classes: usize,
    feature_dim: usize,
    utterances: usize,
}

/// Payload per utterance: `utt_id`, speed factor (f64), frame count (u32),
/// row-major frames (f64), labels (u32).
pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    for u in ds.utterances() {
        put_str(&mut payload, &u.utt_id)?;
        put_f64(&mut payload, u.speed_factor);
        put_u32(
            &mut payload,
            u32::try_from(u.len()).map_err(|_| Error::Format("utterance too long".into()))?,
        );
        for v in u.frames.as_slice() {
            put_f64(&mut payload, *v);
        }
        for l in &u.labels {
            put_u32(&mut payload, *l);
        }
    }
    encode(
        DATASET_MAGIC,
        &DatasetMeta {
            split: ds.split,
            num_classes: ds.num_classes,
            feature_dim: ds.feature_dim,
            utterances: ds.utterances().len(),
        },
        &payload,
    )
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let (meta, payload): (DatasetMeta, _) = decode(DATASET_MAGIC, bytes)?;
    let mut r = Reader::new(payload);
    let mut utts = Vec::with_capacity(meta.utterances.min(payload.len()));
    for _ in 0..meta.utterances {
        let utt_id = r.string()?;
        let speed_factor = r.f64()?;
        let n = r.u32()? as usize;
        let mut frames = Vec::with_capacity(n.saturating_mul(meta.feature_dim).min(payload.len()));
        r.f64s(n * meta.feature_dim, &mut frames)?;
        let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let mut u = Utterance::new(utt_id, Matrix::from_vec(n, meta.feature_dim, frames)?, labels)?;
        u.speed_factor = speed_factor;
        u.validate()?;
        utts.push(u);
    }
    r.finish()?;
    Dataset::new(meta.split, meta.num_classes, meta.feature_dim, utts)
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    write_atomic(path.as_ref(), &encode_dataset(ds)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&read_file(path.as_ref())?)
}
