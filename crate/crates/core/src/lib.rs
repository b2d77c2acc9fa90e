//! Essence knowledge distillation for frame classifiers.
//!
//! An ensemble of architecturally different sub-models is fused at the logit
//! level into a teacher. Only the teacher's top-k output probabilities (the
//! "essence"), renormalised, are used as soft labels, and a student network
//! is trained on a mix of hard-label cross entropy and soft-label cross
//! entropy.
//!
//! Modules:
//! - [`nn`]: dense network, backpropagation, SGD with exponential decay
//! - [`fusion`]: logit fusion and fusion-weight grid search
//! - [`distill`]: losses, top-k selection, mass statistics
//! - [`data`]: synthetic corpus, speed perturbation, context splicing
//! - [`pipeline`]: training, soft-label caches, experiments
//! - [`io`]: file formats and run configuration
//! - [`cli`]: the `essence-kd` command line

pub mod cli;
pub mod data;
pub mod distill;
mod error;
pub mod fusion;
pub mod io;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};

use data::Dataset;
use nn::{predict_logits, softmax_rows, Matrix, NetworkSpec, ParameterSet};

/// A network topology together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: NetworkSpec,
    pub params: ParameterSet,
}

impl Model {
    pub fn new(spec: NetworkSpec, params: ParameterSet) -> Result<Self> {
        spec.validate()?;
        params.check_shapes(&spec)?;
        Ok(Self { spec, params })
    }

    /// Logits for every frame of `dataset`, spliced with this model's context.
    pub fn logits_on(&self, dataset: &Dataset) -> Result<Matrix> {
        if dataset.feature_dim != self.spec.feature_dim {
            return Err(Error::Shape(format!(
                "dataset has {} features, model expects {}",
                dataset.feature_dim, self.spec.feature_dim
            )));
        }
        if dataset.num_classes != self.spec.num_classes {
            return Err(Error::Shape(format!(
                "dataset has {} classes, model outputs {}",
                dataset.num_classes, self.spec.num_classes
            )));
        }
        predict_logits(&self.spec, &self.params, &dataset.spliced(self.spec.context))
    }

    pub fn posteriors_on(&self, dataset: &Dataset, temperature: f64) -> Result<Matrix> {
        softmax_rows(&self.logits_on(dataset)?, temperature)
    }
}
