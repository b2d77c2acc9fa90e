use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cache::SoftLabelCache;
use crate::data::Dataset;
use crate::distill::{
    ce_grad_into, ce_loss, combined_loss, combined_loss_grad_into, DistillationConfig,
    SparseDistribution,
};
use crate::error::{Error, Result};
use crate::fusion::{count_errors, teacher_posterior, EnsembleLogits, FusionWeights};
use crate::nn::{
    backward, forward, lr_at, sgd_step, softmax_rows, Matrix, NetworkSpec, ParameterSet,
};
use crate::Model;

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

/// Minibatch SGD settings shared by teacher and student training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 32,
            lr_initial: 0.1,
            lr_final: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be positive".into()));
        }
        lr_at(0, 1, self.lr_initial, self.lr_final).map(|_| ())
    }
}

/// Trained parameters with the mean training loss of every epoch.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub epoch_losses: Vec<f64>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-frame training signal: writes `scale · ∂loss/∂logits` for frame `i`
/// with student posterior `v`, returning the frame loss.
trait FrameObjective: Sync {
    fn grad(&self, i: usize, v: &[f64], label: usize, scale: f64, out: &mut [f64]) -> Result<f64>;
}

struct HardLabels;

impl FrameObjective for HardLabels {
    fn grad(&self, _: usize, v: &[f64], label: usize, scale: f64, out: &mut [f64]) -> Result<f64> {
        ce_grad_into(v, label, scale, out)?;
        ce_loss(v, label)
    }
}

struct Multitask<'a> {
    targets: &'a [SparseDistribution],
    lambda: f64,
}

impl FrameObjective for Multitask<'_> {
    fn grad(&self, i: usize, v: &[f64], label: usize, scale: f64, out: &mut [f64]) -> Result<f64> {
        let q = self.targets[i].as_target();
        combined_loss_grad_into(v, label, q, self.lambda, scale, out)?;
        combined_loss(v, label, q, self.lambda)
    }
}

fn fit(
    spec: &NetworkSpec,
    dataset: &Dataset,
    hp: &TrainConfig,
    seed: u64,
    objective: &dyn FrameObjective,
) -> Result<Trained> {
    spec.validate()?;
    hp.validate()?;
    if dataset.feature_dim != spec.feature_dim || dataset.num_classes != spec.num_classes {
        return Err(Error::Shape(format!(
            "dataset ({} features, {} classes) does not match network ({} features, {} classes)",
            dataset.feature_dim, dataset.num_classes, spec.feature_dim, spec.num_classes
        )));
    }
    let inputs = dataset.spliced(spec.context);
    let labels = dataset.all_labels();
    let n = labels.len();
    if n == 0 && hp.epochs > 0 {
        return Err(Error::Data("training set is empty".into()));
    }

    let mut params = ParameterSet::init(spec, &mut rng_for(seed, INIT_STREAM));
    let mut shuffle_rng = rng_for(seed, SHUFFLE_STREAM);
    let batches_per_epoch = n.div_ceil(hp.batch_size);
    let total_steps = hp.epochs * batches_per_epoch;
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    let mut step = 0;

    for epoch in 0..hp.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch_idx in order.chunks(hp.batch_size) {
            let x = inputs.select_rows(batch_idx);
            let (logits, cache) = forward(spec, &params, &x).map_err(|e| diverged(epoch, e))?;
            let v = softmax_rows(&logits, 1.0)?;
            let scale = 1.0 / batch_idx.len() as f64;
            let mut d_logits = Matrix::zeros(batch_idx.len(), spec.num_classes);
            for (r, &i) in batch_idx.iter().enumerate() {
                loss_sum += objective.grad(i, v.row(r), labels[i] as usize, scale, d_logits.row_mut(r))?;
            }
            let grads = backward(spec, &params, &cache, &d_logits)?;
            sgd_step(&mut params, &grads, lr_at(step, total_steps, hp.lr_initial, hp.lr_final)?)?;
            step += 1;
        }
        let mean = loss_sum / n as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: format!("mean loss {mean}"),
            });
        }
        debug!("epoch {epoch}: mean loss {mean:.5}");
        epoch_losses.push(mean);
    }
    Ok(Trained {
        model: Model::new(spec.clone(), params)?,
        epoch_losses,
    })
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Numeric(reason) => Error::Training { epoch, reason },
        other => other,
    }
}

/// Trains a network on hard labels only.
pub fn train_model(spec: &NetworkSpec, dataset: &Dataset, hp: &TrainConfig, seed: u64) -> Result<Trained> {
    fit(spec, dataset, hp, seed, &HardLabels)
}

/// Trains a student on `λ·CE(hard) + (1 − λ)·CE(renormalised top-k teacher)`.
///
/// A cache holding more than `config.k` entries per frame is truncated to
/// `config.k` first. Initialisation and minibatch order depend only on `seed`,
/// so `λ = 1` reproduces [`train_model`] exactly.
pub fn train_student(
    spec: &NetworkSpec,
    dataset: &Dataset,
    cache: &SoftLabelCache,
    config: &DistillationConfig,
    hp: &TrainConfig,
    seed: u64,
) -> Result<Trained> {
    config.validate()?;
    if cache.header.temperature != config.temperature {
        return Err(Error::Config(format!(
            "cache was built at temperature {}, run asks for {}",
            cache.header.temperature, config.temperature
        )));
    }
    let targets = if config.k == cache.header.k {
        cache.targets_for(dataset)?
    } else {
        cache.truncated(config.k)?.targets_for(dataset)?
    };
    fit(
        spec,
        dataset,
        hp,
        seed,
        &Multitask {
            targets: &targets,
            lambda: config.lambda,
        },
    )
}

/// Fraction of frames whose argmax posterior differs from the label.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<f64> {
    if dataset.num_frames() == 0 {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let v = model.posteriors_on(dataset, 1.0)?;
    Ok(count_errors(&v, &dataset.all_labels())? as f64 / dataset.num_frames() as f64)
}

/// Frame error rate of the fused teacher.
pub fn evaluate_ensemble(models: &[Model], weights: &FusionWeights, dataset: &Dataset) -> Result<f64> {
    if dataset.num_frames() == 0 {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let ensemble = EnsembleLogits::from_models(models, dataset)?;
    let q = teacher_posterior(&ensemble, weights, 1.0)?;
    Ok(count_errors(&q, &dataset.all_labels())? as f64 / dataset.num_frames() as f64)
}
