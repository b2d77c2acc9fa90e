//! Per-frame top-k teacher soft labels.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{speed_perturb_positions, perturbed_utt_id, Dataset};
use crate::distill::{essence_select, renormalize, SparseDistribution, SparseSoftLabel};
use crate::error::{Error, Result};
use crate::fusion::{teacher_posterior, EnsembleLogits, FusionWeights};
use crate::io::encode_model;
use crate::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub num_classes: usize,
    pub k: usize,
    pub temperature: f64,
    /// SHA-256 prefix over the serialised teacher sub-models.
    pub teacher_fingerprint: String,
    pub fusion_weights: Vec<f64>,
}

impl CacheHeader {
    /// Number of entries every record carries.
    pub fn arity(&self) -> usize {
        self.k.min(self.num_classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheRecord {
    pub utt_id: String,
    pub frame_index: u32,
    /// Raw (not renormalised) teacher probabilities.
    pub label: SparseSoftLabel,
}

/// Soft labels for every frame of a dataset, sorted by `(utt_id, frame_index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelCache {
    pub header: CacheHeader,
    records: Vec<CacheRecord>,
}

impl SoftLabelCache {
    pub fn new(header: CacheHeader, records: Vec<CacheRecord>) -> Result<Self> {
        if header.k < 1 {
            return Err(Error::Format("cache k must be at least 1".into()));
        }
        let arity = header.arity();
        for (i, r) in records.iter().enumerate() {
            if r.label.entries.len() != arity {
                return Err(Error::Format(format!(
                    "record {i} ({}, {}) has {} entries but header k = {} implies {arity}",
                    r.utt_id,
                    r.frame_index,
                    r.label.entries.len(),
                    header.k
                )));
            }
            if r.label.entries.iter().any(|&(c, p)| c as usize >= header.num_classes || p.is_nan() || p <= 0.0) {
                return Err(Error::Format(format!(
                    "record {i} has an out-of-range class or non-positive probability"
                )));
            }
            if r.label.entries.windows(2).any(|w| w[0].1 < w[1].1) {
                return Err(Error::Format(format!("record {i} is not sorted by probability")));
            }
        }
        for (i, pair) in records.windows(2).enumerate() {
            let a = (pair[0].utt_id.as_str(), pair[0].frame_index);
            let b = (pair[1].utt_id.as_str(), pair[1].frame_index);
            if a >= b {
                return Err(Error::Format(format!(
                    "records {i} and {} are out of order: {a:?} then {b:?}",
                    i + 1
                )));
            }
        }
        Ok(Self { header, records })
    }

    pub fn records(&self) -> &[CacheRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, utt_id: &str, frame_index: u32) -> Option<&CacheRecord> {
        self.records
            .binary_search_by(|r| (r.utt_id.as_str(), r.frame_index).cmp(&(utt_id, frame_index)))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Keeps the top `k` entries of every record. Selecting `k` from a cache
    /// of a larger `k` gives the same labels as selecting from the posterior.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        if k > self.header.k && self.header.k < self.header.num_classes {
            return Err(Error::Config(format!(
                "cache holds top-{} labels, cannot provide top-{k}",
                self.header.k
            )));
        }
        let header = CacheHeader {
            k,
            ..self.header.clone()
        };
        let records = self
            .records
            .iter()
            .map(|r| CacheRecord {
                utt_id: r.utt_id.clone(),
                frame_index: r.frame_index,
                label: r.label.truncated(k),
            })
            .collect();
        Ok(Self { header, records })
    }

    /// Renormalised soft labels aligned with the frames of `dataset`.
    pub fn targets_for(&self, dataset: &Dataset) -> Result<Vec<SparseDistribution>> {
        if dataset.num_classes != self.header.num_classes {
            return Err(Error::Shape(format!(
                "cache has {} classes, dataset has {}",
                self.header.num_classes, dataset.num_classes
            )));
        }
        dataset
            .frame_keys()
            .into_iter()
            .map(|(utt, t)| {
                let rec = self.get(utt, t).ok_or_else(|| {
                    Error::Data(format!("no soft label for frame {t} of utterance {utt}"))
                })?;
                renormalize(&rec.label)
            })
            .collect()
    }

    /// Mean retained mass at each `k` up to the cached `k`, from the cache alone.
    pub fn mass_curve(&self) -> Result<Vec<(usize, f64)>> {
        if self.records.is_empty() {
            return Err(Error::Data("empty cache".into()));
        }
        let arity = self.header.arity();
        let mut sums = vec![0.0; arity];
        for r in &self.records {
            let mut acc = 0.0;
            for (s, (_, p)) in sums.iter_mut().zip(&r.label.entries) {
                acc += p;
                *s += acc;
            }
        }
        let n = self.records.len() as f64;
        Ok(sums
            .into_iter()
            .enumerate()
            .map(|(i, s)| (i + 1, s / n))
            .collect())
    }

    /// Carries labels computed on un-perturbed utterances over to their
    /// speed-perturbed copies, using the same nearest-frame mapping that
    /// relabels perturbed frames.
    pub fn transfer_to_perturbed(&self, original: &Dataset, factors: &[f64]) -> Result<Self> {
        let mut records = Vec::new();
        for u in original.utterances() {
            for &a in factors {
                let id = perturbed_utt_id(&u.utt_id, a);
                for (t, pos) in speed_perturb_positions(u.len(), a)?.into_iter().enumerate() {
                    let src = (pos.round() as usize).min(u.len() - 1) as u32;
                    let rec = self.get(&u.utt_id, src).ok_or_else(|| {
                        Error::Data(format!("no soft label for frame {src} of utterance {}", u.utt_id))
                    })?;
                    records.push(CacheRecord {
                        utt_id: id.clone(),
                        frame_index: t as u32,
                        label: rec.label.clone(),
                    });
                }
            }
        }
        records.sort_by(|a, b| (a.utt_id.as_str(), a.frame_index).cmp(&(b.utt_id.as_str(), b.frame_index)));
        Self::new(self.header.clone(), records)
    }
}

/// Fingerprint of an ensemble: SHA-256 over the serialised sub-models.
pub fn teacher_fingerprint(teachers: &[Model]) -> Result<String> {
    let mut hasher = Sha256::new();
    for t in teachers {
        hasher.update(encode_model(t)?);
    }
    Ok(hasher
        .finalize()
        .iter()
        .take(16)
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Runs the fused teacher over `dataset` and keeps the top-`k` posterior
/// entries of every frame.
pub fn dump_soft_labels(
    teachers: &[Model],
    weights: &FusionWeights,
    dataset: &Dataset,
    k: usize,
    temperature: f64,
) -> Result<SoftLabelCache> {
    if teachers.is_empty() {
        return Err(Error::Config("no teacher sub-models given".into()));
    }
    if k < 1 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    let ensemble = EnsembleLogits::from_models(teachers, dataset)?;
    let posteriors = teacher_posterior(&ensemble, weights, temperature)?;
    let records = dataset
        .frame_keys()
        .into_iter()
        .zip(posteriors.iter_rows())
        .map(|((utt, t), q)| {
            Ok(CacheRecord {
                utt_id: utt.to_string(),
                frame_index: t,
                label: essence_select(q, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SoftLabelCache::new(
        CacheHeader {
            num_classes: dataset.num_classes,
            k,
            temperature,
            teacher_fingerprint: teacher_fingerprint(teachers)?,
            fusion_weights: weights.as_slice().to_vec(),
        },
        records,
    )
}
