//! Frame-level corpora: utterances, synthetic generation, speed
//! perturbation and context splicing.

mod augment;
mod splice;
mod synth;

use serde::{Deserialize, Serialize};

pub use augment::{
    augment, perturbed_utt_id, speed_perturb, speed_perturb_positions, DEFAULT_SPEED_FACTORS,
};
pub use splice::splice_context;
pub use synth::{synth_generate, SynthConfig, SynthCorpus};

use crate::error::{Error, Result};
use crate::nn::{Context, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Heldout,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One utterance: `frames` is `(num_frames, feature_dim)`, one label per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub frames: Matrix,
    pub labels: Vec<u32>,
    /// Cumulative speed factor applied to the original recording.
    pub speed_factor: f64,
}

impl Utterance {
    pub fn new(utt_id: impl Into<String>, frames: Matrix, labels: Vec<u32>) -> Result<Self> {
        let u = Self {
            utt_id: utt_id.into(),
            frames,
            labels,
            speed_factor: 1.0,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Data(format!("utterance {} is empty", self.utt_id)));
        }
        if self.frames.rows() != self.labels.len() {
            return Err(Error::Data(format!(
                "utterance {} has {} frames but {} labels",
                self.utt_id,
                self.frames.rows(),
                self.labels.len()
            )));
        }
        if !(self.speed_factor > 0.0 && self.speed_factor.is_finite()) {
            return Err(Error::Data(format!(
                "utterance {} has speed factor {}",
                self.utt_id, self.speed_factor
            )));
        }
        Ok(())
    }
}

/// A split of a corpus. Utterances are kept sorted by `utt_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub num_classes: usize,
    pub feature_dim: usize,
    utterances: Vec<Utterance>,
}

impl Dataset {
    pub fn new(
        split: Split,
        num_classes: usize,
        feature_dim: usize,
        mut utterances: Vec<Utterance>,
    ) -> Result<Self> {
        utterances.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        for pair in utterances.windows(2) {
            if pair[0].utt_id == pair[1].utt_id {
                return Err(Error::Data(format!("duplicate utterance id {}", pair[0].utt_id)));
            }
        }
        for u in &utterances {
            u.validate()?;
            if u.frames.cols() != feature_dim {
                return Err(Error::Shape(format!(
                    "utterance {} has {} features, dataset has {feature_dim}",
                    u.utt_id,
                    u.frames.cols()
                )));
            }
            if let Some(l) = u.labels.iter().find(|&&l| l as usize >= num_classes) {
                return Err(Error::Data(format!(
                    "utterance {} has label {l} but only {num_classes} classes",
                    u.utt_id
                )));
            }
        }
        Ok(Self {
            split,
            num_classes,
            feature_dim,
            utterances,
        })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn num_frames(&self) -> usize {
        self.utterances.iter().map(Utterance::len).sum()
    }

    /// Labels of every frame in dataset order.
    pub fn all_labels(&self) -> Vec<u32> {
        self.utterances
            .iter()
            .flat_map(|u| u.labels.iter().copied())
            .collect()
    }

    /// `(utt_id, frame_index)` of every frame in dataset order.
    pub fn frame_keys(&self) -> Vec<(&str, u32)> {
        self.utterances
            .iter()
            .flat_map(|u| (0..u.len() as u32).map(move |t| (u.utt_id.as_str(), t)))
            .collect()
    }

    /// Spliced network inputs for every frame, in dataset order.
    pub fn spliced(&self, context: Context) -> Matrix {
        let width = self.feature_dim * context.width();
        let mut data = Vec::with_capacity(self.num_frames() * width);
        for u in &self.utterances {
            data.extend(splice_context(u, context).into_vec());
        }
        Matrix::from_vec(self.num_frames(), width, data).expect("row widths agree")
    }
}
