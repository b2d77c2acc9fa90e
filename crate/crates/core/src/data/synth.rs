//! Synthetic frame-classification corpus.
//!
//! Classes come in confusable groups: group centres are spread by
//! `class_separation`, and class centres scatter around their group centre by
//! `within_group_spread · class_separation`. Labels follow a sticky Markov
//! chain (segments of mean length `mean_segment_length`), and the feature
//! trajectory glides between class centres with exponential smoothing before
//! unit Gaussian noise is added. With probability `label_noise` a frame's
//! reference label is replaced by a uniformly drawn other class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split, Utterance};
use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub utterances_per_split: usize,
    pub mean_utterance_length: usize,
    pub mean_segment_length: f64,
    pub class_separation: f64,
    pub group_size: usize,
    pub within_group_spread: f64,
    /// Weight of the previous frame in the feature trajectory, in [0, 1).
    pub smoothing: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 24,
            feature_dim: 10,
            utterances_per_split: 40,
            mean_utterance_length: 80,
            mean_segment_length: 8.0,
            class_separation: 2.0,
            group_size: 4,
            within_group_spread: 0.5,
            smoothing: 0.3,
            label_noise: 0.1,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Parameter(msg.to_string()));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if self.feature_dim == 0 || self.utterances_per_split == 0 || self.mean_utterance_length == 0 {
            return bad("feature_dim, utterances_per_split and mean_utterance_length must be positive");
        }
        if !(self.mean_segment_length >= 1.0 && self.mean_segment_length.is_finite()) {
            return bad("mean_segment_length must be at least 1");
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return bad("class_separation must be positive");
        }
        if self.group_size == 0 {
            return bad("group_size must be positive");
        }
        if !(self.within_group_spread >= 0.0 && self.within_group_spread.is_finite()) {
            return bad("within_group_spread must be non-negative");
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return bad("smoothing must be in [0, 1)");
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad("label_noise must be in [0, 0.5)");
        }
        Ok(())
    }

    /// Relative frequency with which the chain jumps into each class.
    pub fn class_popularity(&self) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| 1.0 / ((c + 1) as f64).sqrt())
            .collect()
    }

    /// Probability of leaving the current class at each frame.
    pub fn switch_probability(&self) -> f64 {
        1.0 / self.mean_segment_length
    }

    /// Row-stochastic label transition matrix.
    pub fn transition_matrix(&self) -> Vec<Vec<f64>> {
        let w = self.class_popularity();
        let total: f64 = w.iter().sum();
        let p_switch = self.switch_probability();
        (0..self.num_classes)
            .map(|i| {
                (0..self.num_classes)
                    .map(|j| {
                        if i == j {
                            1.0 - p_switch
                        } else {
                            p_switch * w[j] / (total - w[i])
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Stationary distribution of [`transition_matrix`](Self::transition_matrix).
    ///
    /// The jump chain is reversible with `π_i ∝ w_i (W − w_i)`; the shared
    /// self-loop probability does not move it.
    pub fn stationary_distribution(&self) -> Vec<f64> {
        let w = self.class_popularity();
        let total: f64 = w.iter().sum();
        let raw: Vec<f64> = w.iter().map(|wi| wi * (total - wi)).collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|r| r / z).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Dataset,
    pub heldout: Dataset,
    pub test: Dataset,
}

impl SynthCorpus {
    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Heldout => &self.heldout,
            Split::Test => &self.test,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws an index from unnormalised weights.
fn draw(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Generates train, held-out and test splits deterministically from the seed.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let centres = class_centres(config);
    let mk = |split: Split, stream: u64| -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream);
        let utts = (0..config.utterances_per_split)
            .map(|i| generate_utterance(config, &centres, &mut rng, format!("{split}-{i:05}")))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(split, config.num_classes, config.feature_dim, utts)
    };
    Ok(SynthCorpus {
        train: mk(Split::Train, 1)?,
        heldout: mk(Split::Heldout, 2)?,
        test: mk(Split::Test, 3)?,
    })
}

fn class_centres(config: &SynthConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.feature_dim;
    let groups = config.num_classes.div_ceil(config.group_size);
    let group_centres: Vec<Vec<f64>> = (0..groups)
        .map(|_| (0..d).map(|_| config.class_separation * gaussian(&mut rng)).collect())
        .collect();
    let spread = config.class_separation * config.within_group_spread;
    (0..config.num_classes)
        .map(|c| {
            group_centres[c / config.group_size]
                .iter()
                .map(|g| g + spread * gaussian(&mut rng))
                .collect()
        })
        .collect()
}

fn generate_utterance(
    config: &SynthConfig,
    centres: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
    utt_id: String,
) -> Result<Utterance> {
    let c = config.num_classes;
    let mean = config.mean_utterance_length;
    let len = rng.random_range(mean.div_ceil(2)..=mean + mean / 2).max(1);
    let popularity = config.class_popularity();
    let stationary = config.stationary_distribution();
    let p_switch = config.switch_probability();

    let mut frames = Matrix::zeros(len, config.feature_dim);
    let mut labels = Vec::with_capacity(len);
    let mut class = draw(rng, &stationary);
    let mut state = centres[class].clone();
    for t in 0..len {
        if t > 0 && rng.random::<f64>() < p_switch {
            let mut w = popularity.clone();
            w[class] = 0.0;
            class = draw(rng, &w);
        }
        for ((s, m), x) in state
            .iter_mut()
            .zip(&centres[class])
            .zip(frames.row_mut(t).iter_mut())
        {
            *s = config.smoothing * *s + (1.0 - config.smoothing) * m;
            *x = *s + gaussian(rng);
        }
        let mut label = class;
        if config.label_noise > 0.0 && rng.random::<f64>() < config.label_noise {
            label = (class + rng.random_range(1..c)) % c;
        }
        labels.push(label as u32);
    }
    Utterance::new(utt_id, frames, labels)
}
