//! Distillation losses and top-k "essence" soft labels.
//!
//! The student is trained on
//!
//! ```text
//! J(θ) = λ·J_CE(θ) + (1 − λ)·J_KD(θ)
//! J_CE = −log v_c                 (hard label c)
//! J_KD = −Σ_i q_i log v_i         (teacher soft label q)
//! ```
//!
//! where `q` is either the full teacher posterior or its top-k entries
//! renormalised to sum to one. Classes dropped by top-k selection carry
//! exactly zero weight in `J_KD`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-30;

#[inline]
fn safe_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Mixing weight, top-k count and teacher temperature for one student run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillationConfig {
    pub lambda: f64,
    pub k: usize,
    pub temperature: f64,
}

impl Default for DistillationConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            k: 10,
            temperature: 1.0,
        }
    }
}

impl DistillationConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if self.k < 1 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Parameter(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// Top-k teacher probabilities for one frame, before renormalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSoftLabel {
    pub k: usize,
    /// `(class_id, probability)`, probability descending, ties by class id.
    pub entries: Vec<(u32, f64)>,
    /// `f_k(q)`: total probability of the kept entries.
    pub retained_mass: f64,
}

impl SparseSoftLabel {
    /// Wraps already-ranked entries, computing the retained mass.
    pub fn from_entries(k: usize, entries: Vec<(u32, f64)>) -> Self {
        let retained_mass = entries.iter().map(|(_, p)| p).sum::<f64>().min(1.0);
        Self {
            k,
            entries,
            retained_mass,
        }
    }

    /// The top-`k` prefix, identical to selecting `k` from the full posterior.
    pub fn truncated(&self, k: usize) -> Self {
        let keep = k.min(self.entries.len());
        Self::from_entries(k, self.entries[..keep].to_vec())
    }
}

/// A probability distribution stored only on its support.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDistribution {
    pub entries: Vec<(u32, f64)>,
}

impl SparseDistribution {
    pub fn to_dense(&self, num_classes: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; num_classes];
        for &(c, p) in &self.entries {
            *out.get_mut(c as usize).ok_or_else(|| {
                Error::Shape(format!("class {c} outside {num_classes} classes"))
            })? = p;
        }
        Ok(out)
    }

    pub fn as_target(&self) -> SoftTarget<'_> {
        SoftTarget::Sparse(&self.entries)
    }
}

/// Soft label `q`, either dense over all classes or sparse over its support.
#[derive(Debug, Clone, Copy)]
pub enum SoftTarget<'a> {
    Dense(&'a [f64]),
    Sparse(&'a [(u32, f64)]),
}

impl<'a> SoftTarget<'a> {
    fn check_against(&self, num_classes: usize) -> Result<()> {
        match self {
            SoftTarget::Dense(q) if q.len() != num_classes => Err(Error::Shape(format!(
                "soft label has {} classes, distribution has {num_classes}",
                q.len()
            ))),
            SoftTarget::Sparse(e) => match e.iter().find(|(c, _)| *c as usize >= num_classes) {
                Some((c, _)) => Err(Error::Shape(format!(
                    "soft label class {c} outside {num_classes} classes"
                ))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Non-zero `(class, q_class)` pairs.
    fn support(&self) -> Box<dyn Iterator<Item = (usize, f64)> + 'a> {
        match *self {
            SoftTarget::Dense(q) => Box::new(
                q.iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(i, p)| (i, *p)),
            ),
            SoftTarget::Sparse(e) => Box::new(
                e.iter()
                    .filter(|(_, p)| *p > 0.0)
                    .map(|(c, p)| (*c as usize, *p)),
            ),
        }
    }
}

impl<'a> From<&'a [f64]> for SoftTarget<'a> {
    fn from(q: &'a [f64]) -> Self {
        SoftTarget::Dense(q)
    }
}

impl<'a> From<&'a Vec<f64>> for SoftTarget<'a> {
    fn from(q: &'a Vec<f64>) -> Self {
        SoftTarget::Dense(q)
    }
}

impl<'a> From<&'a SparseDistribution> for SoftTarget<'a> {
    fn from(q: &'a SparseDistribution) -> Self {
        q.as_target()
    }
}

fn check_label(label: usize, num_classes: usize) -> Result<()> {
    if label >= num_classes {
        return Err(Error::Parameter(format!(
            "label {label} outside {num_classes} classes"
        )));
    }
    Ok(())
}

/// Hard-label cross entropy `−log v_label`.
pub fn ce_loss(v: &[f64], label: usize) -> Result<f64> {
    check_label(label, v.len())?;
    Ok(-safe_ln(v[label]))
}

/// Soft-label cross entropy `H(q, v) = −Σ q_i log v_i`.
pub fn kd_loss<'a>(v: &[f64], q: impl Into<SoftTarget<'a>>) -> Result<f64> {
    let q = q.into();
    q.check_against(v.len())?;
    Ok(-q.support().map(|(i, p)| p * safe_ln(v[i])).sum::<f64>())
}

/// Shannon entropy `−Σ q_i log q_i` (natural log).
pub fn entropy<'a>(q: impl Into<SoftTarget<'a>>) -> f64 {
    -q.into().support().map(|(_, p)| p * p.ln()).sum::<f64>()
}

/// `D_KL(q ‖ v) = Σ q_i log(q_i / v_i)`; classes with `q_i = 0` contribute nothing.
pub fn kl_divergence<'a>(q: impl Into<SoftTarget<'a>>, v: &[f64]) -> Result<f64> {
    let q = q.into();
    q.check_against(v.len())?;
    Ok(q
        .support()
        .map(|(i, p)| p * (p.ln() - safe_ln(v[i])))
        .sum())
}

/// `λ·J_CE + (1 − λ)·J_KD` for one frame.
pub fn combined_loss<'a>(
    v: &[f64],
    label: usize,
    q: impl Into<SoftTarget<'a>>,
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    let ce = ce_loss(v, label)?;
    let kd = kd_loss(v, q)?;
    Ok(lambda * ce + (1.0 - lambda) * kd)
}

/// Gradient of [`combined_loss`] with respect to the student logits (softmax
/// at T = 1): `λ(v − onehot(label)) + (1 − λ)(v − q)`.
pub fn combined_loss_grad_logits<'a>(
    v: &[f64],
    label: usize,
    q: impl Into<SoftTarget<'a>>,
    lambda: f64,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; v.len()];
    combined_loss_grad_into(v, label, q.into(), lambda, 1.0, &mut out)?;
    Ok(out)
}

/// Writes `scale · ∂J/∂z` into `out`; `scale` lets callers fold in the
/// minibatch mean.
pub(crate) fn combined_loss_grad_into(
    v: &[f64],
    label: usize,
    q: SoftTarget<'_>,
    lambda: f64,
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    check_lambda(lambda)?;
    check_label(label, v.len())?;
    q.check_against(v.len())?;
    if out.len() != v.len() {
        return Err(Error::Shape("gradient buffer has wrong length".into()));
    }
    // hard part: λ(v − e_c); soft part: (1−λ)(v − q)
    let mut hard: Vec<f64> = v.to_vec();
    hard[label] -= 1.0;
    let mut soft: Vec<f64> = v.to_vec();
    for (i, p) in q.support() {
        soft[i] -= p;
    }
    for ((o, h), s) in out.iter_mut().zip(&hard).zip(&soft) {
        *o = scale * (lambda * h + (1.0 - lambda) * s);
    }
    Ok(())
}

/// Gradient of the hard-label cross entropy alone, `scale · (v − onehot)`.
pub(crate) fn ce_grad_into(v: &[f64], label: usize, scale: f64, out: &mut [f64]) -> Result<()> {
    check_label(label, v.len())?;
    for (o, p) in out.iter_mut().zip(v) {
        *o = *p;
    }
    out[label] -= 1.0;
    for o in out.iter_mut() {
        *o *= scale;
    }
    Ok(())
}

/// Descending by probability, ascending class id on ties.
fn rank_order(q: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |a, b| q[*b].total_cmp(&q[*a]).then(a.cmp(b))
}

/// Keeps the `k` largest teacher probabilities.
pub fn essence_select(q: &[f64], k: usize) -> Result<SparseSoftLabel> {
    if k < 1 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if q.is_empty() {
        return Err(Error::Shape("empty distribution".into()));
    }
    let keep = k.min(q.len());
    let mut idx: Vec<usize> = (0..q.len()).collect();
    let cmp = rank_order(q);
    if keep < idx.len() {
        idx.select_nth_unstable_by(keep - 1, &cmp);
        idx.truncate(keep);
    }
    idx.sort_unstable_by(&cmp);
    Ok(SparseSoftLabel::from_entries(
        k,
        idx.iter().map(|&i| (i as u32, q[i])).collect(),
    ))
}

/// Rescales the kept entries so they sum to one.
pub fn renormalize(s: &SparseSoftLabel) -> Result<SparseDistribution> {
    if !(s.retained_mass > 0.0 && s.retained_mass.is_finite()) {
        return Err(Error::Numeric(format!(
            "cannot renormalise a soft label with retained mass {}",
            s.retained_mass
        )));
    }
    Ok(SparseDistribution {
        entries: s
            .entries
            .iter()
            .map(|&(c, p)| (c, p / s.retained_mass))
            .collect(),
    })
}

/// `f_k(q)`: sum of the k largest entries of `q`.
pub fn topk_mass(q: &[f64], k: usize) -> Result<f64> {
    Ok(essence_select(q, k)?.retained_mass)
}

/// Mean `f_k(q)` over a set of posteriors for each requested `k`.
///
/// The `k` list is sorted and de-duplicated; values above the class count
/// saturate at the full mass.
pub fn topk_mass_curve<R: AsRef<[f64]>>(posteriors: &[R], ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    if posteriors.is_empty() {
        return Err(Error::Data("no posteriors to summarise".into()));
    }
    if ks.iter().any(|&k| k < 1) {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();

    let mut sums = vec![0.0; ks.len()];
    let mut sorted = Vec::new();
    for q in posteriors {
        let q = q.as_ref();
        if q.is_empty() {
            return Err(Error::Shape("empty posterior".into()));
        }
        sorted.clear();
        sorted.extend_from_slice(q);
        sorted.sort_unstable_by(|a, b| b.total_cmp(a));
        let mut prefix = 0.0;
        let mut taken = 0;
        for (sum, &k) in sums.iter_mut().zip(&ks) {
            let upto = k.min(sorted.len());
            while taken < upto {
                prefix += sorted[taken];
                taken += 1;
            }
            *sum += prefix;
        }
    }
    let n = posteriors.len() as f64;
    Ok(ks.into_iter().zip(sums).map(|(k, s)| (k, s / n)).collect())
}
