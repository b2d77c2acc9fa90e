//! Logit-level ensemble fusion.
//!
//! The teacher posterior is `q = softmax((Σ_k w_k z_k) / T)` where `z_k` are the
//! pre-softmax outputs of sub-model `k` and `w` lies on the probability simplex.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{argmax, softmax_rows, Matrix};
use crate::Model;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// One weight per sub-model, each in [0, 1], summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FusionWeights(Vec<f64>);

impl FusionWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Parameter("at least one fusion weight is required".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Parameter(format!("fusion weight {w} outside [0, 1]")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Parameter(format!("fusion weights sum to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Parameter("at least one fusion weight is required".into()));
        }
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for FusionWeights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FusionWeights> for Vec<f64> {
    fn from(w: FusionWeights) -> Self {
        w.0
    }
}

/// Logit matrices of every sub-model on the same frames.
#[derive(Debug, Clone)]
pub struct EnsembleLogits {
    members: Vec<Matrix>,
}

impl EnsembleLogits {
    pub fn new(members: Vec<Matrix>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Parameter("ensemble has no members".into()))?;
        let shape = first.shape();
        if let Some((i, m)) = members.iter().enumerate().find(|(_, m)| m.shape() != shape) {
            return Err(Error::Shape(format!(
                "sub-model {i} produced {:?} logits, sub-model 0 produced {shape:?}",
                m.shape()
            )));
        }
        Ok(Self { members })
    }

    /// Runs every model on the dataset, splicing with each model's own context.
    pub fn from_models(models: &[Model], dataset: &Dataset) -> Result<Self> {
        let members = models
            .par_iter()
            .map(|m| m.logits_on(dataset))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }

    pub fn members(&self) -> &[Matrix] {
        &self.members
    }

    pub fn num_models(&self) -> usize {
        self.members.len()
    }

    pub fn num_frames(&self) -> usize {
        self.members[0].rows()
    }

    pub fn num_classes(&self) -> usize {
        self.members[0].cols()
    }
}

/// Weighted average `Σ_k w_k z_k` of the member logits.
pub fn fuse_logits(ensemble: &EnsembleLogits, weights: &FusionWeights) -> Result<Matrix> {
    if weights.len() != ensemble.num_models() {
        return Err(Error::Parameter(format!(
            "{} fusion weights for {} sub-models",
            weights.len(),
            ensemble.num_models()
        )));
    }
    let (rows, cols) = ensemble.members[0].shape();
    let mut fused = Matrix::zeros(rows, cols);
    for (m, w) in ensemble.members.iter().zip(weights.as_slice()) {
        for (f, z) in fused.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *f += w * z;
        }
    }
    Ok(fused)
}

/// Teacher posterior `softmax(fused / T)` for every frame.
pub fn teacher_posterior(
    ensemble: &EnsembleLogits,
    weights: &FusionWeights,
    temperature: f64,
) -> Result<Matrix> {
    softmax_rows(&fuse_logits(ensemble, weights)?, temperature)
}

/// Every point of the simplex whose coordinates are multiples of `step`.
pub fn simplex_grid(num_models: usize, step: f64) -> Result<Vec<Vec<usize>>> {
    if num_models == 0 {
        return Err(Error::Parameter("grid over zero sub-models".into()));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Parameter(format!("grid step {step} outside (0, 1]")));
    }
    let divisions = (1.0 / step).round();
    if ((divisions * step) - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("grid step {step} does not divide 1")));
    }
    let n = divisions as usize;
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(num_models);
    compositions(n, num_models, &mut current, &mut out);
    Ok(out)
}

/// All `parts`-tuples of non-negative integers summing to `total`, in
/// lexicographic order.
fn compositions(total: usize, parts: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if parts == 1 {
        current.push(total);
        out.push(current.clone());
        current.pop();
        return;
    }
    for first in 0..=total {
        current.push(first);
        compositions(total - first, parts - 1, current, out);
        current.pop();
    }
}

fn counts_to_weights(counts: &[usize]) -> Result<FusionWeights> {
    let n: usize = counts.iter().sum();
    FusionWeights::new(counts.iter().map(|&c| c as f64 / n as f64).collect())
}

/// Frames whose argmax posterior differs from the label.
pub fn count_errors(posteriors: &Matrix, labels: &[u32]) -> Result<usize> {
    if posteriors.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} posterior rows for {} labels",
            posteriors.rows(),
            labels.len()
        )));
    }
    Ok(posteriors
        .iter_rows()
        .zip(labels)
        .filter(|(row, &l)| argmax(row) != l as usize)
        .count())
}

#[derive(Debug, Clone)]
pub struct GridCandidate {
    pub weights: FusionWeights,
    pub errors: usize,
    pub error_rate: f64,
}

#[derive(Debug, Clone)]
pub struct GridSearch {
    pub weights: FusionWeights,
    pub error_rate: f64,
    /// Every evaluated grid point, in lexicographic order of weights.
    pub candidates: Vec<GridCandidate>,
}

/// Exhaustive simplex grid search for the fusion weights with the lowest
/// held-out frame error rate of the T = 1 teacher posterior.
///
/// Ties go to the grid point closest to uniform weights, then to the
/// lexicographically smallest weight vector.
pub fn grid_search_on_logits(
    ensemble: &EnsembleLogits,
    labels: &[u32],
    step: f64,
) -> Result<GridSearch> {
    if labels.is_empty() || ensemble.num_frames() == 0 {
        return Err(Error::Data("held-out set is empty".into()));
    }
    let k = ensemble.num_models();
    let grid = simplex_grid(k, step)?;
    let n: usize = grid[0].iter().sum();

    let scored = grid
        .par_iter()
        .map(|counts| {
            let weights = counts_to_weights(counts)?;
            let errors = count_errors(&teacher_posterior(ensemble, &weights, 1.0)?, labels)?;
            // Σ (K·n_i − N)² is zero at the uniform point
            let spread: usize = counts
                .iter()
                .map(|&c| (c * k).abs_diff(n).pow(2))
                .sum();
            Ok((counts, weights, errors, spread))
        })
        .collect::<Result<Vec<_>>>()?;

    let best = scored
        .iter()
        .min_by(|a, b| a.2.cmp(&b.2).then(a.3.cmp(&b.3)).then(a.0.cmp(b.0)))
        .expect("grid is never empty");
    let total = labels.len() as f64;
    Ok(GridSearch {
        weights: best.1.clone(),
        error_rate: best.2 as f64 / total,
        candidates: scored
            .into_iter()
            .map(|(_, weights, errors, _)| GridCandidate {
                weights,
                errors,
                error_rate: errors as f64 / total,
            })
            .collect(),
    })
}

/// Grid search over trained sub-models evaluated on a held-out dataset.
pub fn grid_search_weights(models: &[Model], heldout: &Dataset, step: f64) -> Result<GridSearch> {
    if models.len() < 2 {
        return Err(Error::Parameter("grid search needs at least two sub-models".into()));
    }
    if heldout.num_frames() == 0 {
        return Err(Error::Data("held-out set is empty".into()));
    }
    let ensemble = EnsembleLogits::from_models(models, heldout)?;
    grid_search_on_logits(&ensemble, &heldout.all_labels(), step)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::nn::softmax;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn weights_validate() {
        assert!(FusionWeights::new(vec![0.5, 0.5]).is_ok());
        assert!(matches!(FusionWeights::new(vec![0.6, 0.6]), Err(Error::Parameter(_))));
        assert!(matches!(FusionWeights::new(vec![1.5, -0.5]), Err(Error::Parameter(_))));
        assert!(matches!(FusionWeights::new(vec![]), Err(Error::Parameter(_))));
    }

    #[test]
    fn single_model_is_identity() {
        let z = m(&[&[1.0, -2.0, 0.5], &[0.0, 3.0, 3.0]]);
        let e = EnsembleLogits::new(vec![z.clone()]).unwrap();
        let w = FusionWeights::new(vec![1.0]).unwrap();
        assert_eq!(fuse_logits(&e, &w).unwrap(), z);
        let q = teacher_posterior(&e, &w, 1.0).unwrap();
        assert_eq!(q.row(0), softmax(z.row(0), 1.0).unwrap().as_slice());
    }

    #[test]
    fn identical_members_fuse_to_themselves() {
        let z = m(&[&[1.0, -2.0, 0.5]]);
        let e = EnsembleLogits::new(vec![z.clone(), z.clone()]).unwrap();
        let w = FusionWeights::uniform(2).unwrap();
        assert_eq!(fuse_logits(&e, &w).unwrap(), z);
    }

    #[test]
    fn half_half_three_class_toy() {
        let z1 = [2.0, 0.0, -1.0];
        let z2 = [0.0, 1.0, 3.0];
        let e = EnsembleLogits::new(vec![m(&[&z1]), m(&[&z2])]).unwrap();
        let w = FusionWeights::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(fuse_logits(&e, &w).unwrap().row(0), &[1.0, 0.5, 1.0]);

        let q = teacher_posterior(&e, &w, 1.0).unwrap();
        let denom = 2.0 * 1f64.exp() + 0.5f64.exp();
        let want = [1f64.exp() / denom, 0.5f64.exp() / denom, 1f64.exp() / denom];
        for (a, b) in q.row(0).iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_class_logits_give_uniform() {
        let e = EnsembleLogits::new(vec![m(&[&[2.0; 4]]), m(&[&[-1.0; 4]])]).unwrap();
        let q = teacher_posterior(&e, &FusionWeights::new(vec![0.3, 0.7]).unwrap(), 2.0).unwrap();
        assert!(q.row(0).iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let e = EnsembleLogits::new(vec![m(&[&[1.0, 2.0]]), m(&[&[1.0, 2.0]])]).unwrap();
        assert!(matches!(
            fuse_logits(&e, &FusionWeights::new(vec![1.0]).unwrap()),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            EnsembleLogits::new(vec![m(&[&[1.0, 2.0]]), m(&[&[1.0, 2.0, 3.0]])]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn grid_cardinality() {
        assert_eq!(simplex_grid(2, 0.1).unwrap().len(), 11);
        assert_eq!(simplex_grid(3, 0.1).unwrap().len(), 66);
        assert_eq!(simplex_grid(2, 0.25).unwrap().len(), 5);
        assert!(matches!(simplex_grid(2, 0.3), Err(Error::Parameter(_))));
    }

    #[test]
    fn identical_models_tie_to_uniform() {
        let z = m(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 1.0]]);
        let e = EnsembleLogits::new(vec![z.clone(), z]).unwrap();
        let r = grid_search_on_logits(&e, &[0, 1, 1], 0.1).unwrap();
        assert_eq!(r.candidates.len(), 11);
        assert_eq!(r.weights.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn empty_heldout_is_data_error() {
        let e = EnsembleLogits::new(vec![Matrix::zeros(0, 2), Matrix::zeros(0, 2)]).unwrap();
        assert!(matches!(grid_search_on_logits(&e, &[], 0.1), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn permutation_equivariant_and_convex(
            z in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 3),
            raw in prop::collection::vec(0.01f64..1.0, 3),
        ) {
            let total: f64 = raw.iter().sum();
            let mut w: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let drift: f64 = 1.0 - w.iter().sum::<f64>();
            w[0] += drift;
            let mats: Vec<Matrix> = z.iter().map(|r| Matrix::from_rows(std::slice::from_ref(r)).unwrap()).collect();
            let fused = fuse_logits(
                &EnsembleLogits::new(mats.clone()).unwrap(),
                &FusionWeights::new(w.clone()).unwrap(),
            ).unwrap();
            let perm = [2usize, 0, 1];
            let fused_p = fuse_logits(
                &EnsembleLogits::new(perm.iter().map(|&i| mats[i].clone()).collect()).unwrap(),
                &FusionWeights::new(perm.iter().map(|&i| w[i]).collect()).unwrap(),
            ).unwrap();
            for c in 0..4 {
                prop_assert!((fused.get(0, c) - fused_p.get(0, c)).abs() < 1e-12);
                let lo = z.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
                let hi = z.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(fused.get(0, c) >= lo - 1e-12 && fused.get(0, c) <= hi + 1e-12);
            }
        }
    }
}
