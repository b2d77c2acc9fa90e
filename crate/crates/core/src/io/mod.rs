//! On-disk formats for datasets, models, soft-label caches and run configs.
//!
//! Binary artifacts share one container: a magic/version line, a JSON header
//! line, a little-endian payload and a SHA-256 digest of the payload. Files
//! are written to a temporary sibling and renamed into place.

mod cache_file;
mod container;
mod dataset_file;
mod model_file;

use std::path::Path;

pub use cache_file::{decode_cache, encode_cache, load_cache, save_cache, CACHE_MAGIC};
pub use container::{FORMAT_MAJOR, FORMAT_MINOR};
pub use dataset_file::{decode_dataset, encode_dataset, load_dataset, save_dataset, DATASET_MAGIC};
pub use model_file::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC};

use crate::error::{Error, Result};
use crate::pipeline::ExperimentConfig;

/// Atomically writes a UTF-8 text file.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    container::write_atomic(path, text.as_bytes())
}

pub fn config_to_toml(config: &ExperimentConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::Config(e.to_string()))
}

/// Parses and validates a TOML run configuration.
pub fn config_from_toml(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    config_from_toml(&text)
}

pub fn save_config(path: impl AsRef<Path>, config: &ExperimentConfig) -> Result<()> {
    write_text(path.as_ref(), &config_to_toml(config)?)
}
