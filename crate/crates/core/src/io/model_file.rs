use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::{decode, encode, put_f64, read_file, write_atomic, Reader};
use crate::error::{Error, Result};
use crate::nn::{Matrix, NetworkSpec, ParameterSet};
use crate::Model;

pub const MODEL_MAGIC: &str = "essence-kd-model";

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    spec: NetworkSpec,
}

/// Serialises a model: spec in the header, then per layer the row-major
/// weights followed by the biases as little-endian `f64`.
pub fn encode_model(model: &Model) -> Result<Vec<u8>> {
    model.params.check_shapes(&model.spec)?;
    let mut payload = Vec::with_capacity(model.params.len() * 8);
    for v in model.params.values() {
        put_f64(&mut payload, *v);
    }
    encode(
        MODEL_MAGIC,
        &ModelMeta {
            spec: model.spec.clone(),
        },
        &payload,
    )
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let (meta, payload): (ModelMeta, _) = decode(MODEL_MAGIC, bytes)?;
    let spec = meta.spec;
    spec.validate()
        .map_err(|e| Error::Format(format!("invalid network spec in header: {e}")))?;
    if payload.len() != spec.num_parameters() * 8 {
        return Err(Error::Format(format!(
            "payload has {} bytes but the spec needs {}",
            payload.len(),
            spec.num_parameters() * 8
        )));
    }
    let mut r = Reader::new(payload);
    let mut params = ParameterSet::zeros(&spec);
    for (layer, ls) in params.layers.iter_mut().zip(&spec.layers) {
        let mut w = Vec::with_capacity(ls.input_dim * ls.output_dim);
        r.f64s(ls.input_dim * ls.output_dim, &mut w)?;
        layer.weights = Matrix::from_vec(ls.output_dim, ls.input_dim, w)?;
        layer.biases.clear();
        r.f64s(ls.output_dim, &mut layer.biases)?;
    }
    r.finish()?;
    Model::new(spec, params)
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    write_atomic(path.as_ref(), &encode_model(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    decode_model(&read_file(path.as_ref())?)
}
