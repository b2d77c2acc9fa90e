use super::{Dataset, Utterance};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Speed factors that triple the training corpus.
pub const DEFAULT_SPEED_FACTORS: [f64; 3] = [0.9, 1.0, 1.1];

/// Source positions `a·t'` sampled by each output frame of a warp, clamped
/// to the last input frame. The output has `round(n / a)` frames.
pub fn speed_perturb_positions(n: usize, a: f64) -> Result<Vec<f64>> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Parameter(format!("speed factor {a} must be positive")));
    }
    if n == 0 {
        return Err(Error::Data("cannot warp an empty utterance".into()));
    }
    let out_len = ((n as f64 / a).round() as usize).max(1);
    let last = (n - 1) as f64;
    Ok((0..out_len).map(|t| (a * t as f64).min(last)).collect())
}

/// Utterance id of a speed-perturbed copy; factor 1 keeps the original id.
pub fn perturbed_utt_id(utt_id: &str, a: f64) -> String {
    if a == 1.0 {
        utt_id.to_string()
    } else {
        format!("sp{a}-{utt_id}")
    }
}

/// Time-warps an utterance to `x(a·t)`.
///
/// Output frame `t'` linearly interpolates the input at position `a·t'` and
/// takes the label of the nearest input frame.
pub fn speed_perturb(u: &Utterance, a: f64) -> Result<Utterance> {
    if u.is_empty() {
        return Err(Error::Data(format!("utterance {} is empty", u.utt_id)));
    }
    let positions = speed_perturb_positions(u.len(), a)?;
    let n = u.len();
    let dim = u.frames.cols();

    let mut frames = Matrix::zeros(positions.len(), dim);
    let mut labels = Vec::with_capacity(positions.len());
    for (t, &pos) in positions.iter().enumerate() {
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        let dst = frames.row_mut(t);
        if frac == 0.0 {
            dst.copy_from_slice(u.frames.row(lo));
        } else {
            let hi = (lo + 1).min(n - 1);
            for ((d, x0), x1) in dst.iter_mut().zip(u.frames.row(lo)).zip(u.frames.row(hi)) {
                *d = (1.0 - frac) * x0 + frac * x1;
            }
        }
        labels.push(u.labels[(pos.round() as usize).min(n - 1)]);
    }

    Ok(Utterance {
        utt_id: perturbed_utt_id(&u.utt_id, a),
        frames,
        labels,
        speed_factor: u.speed_factor * a,
    })
}

/// Applies every speed factor to every utterance.
pub fn augment(dataset: &Dataset, factors: &[f64]) -> Result<Dataset> {
    if factors.is_empty() {
        return Err(Error::Parameter("no speed factors given".into()));
    }
    let mut out = Vec::with_capacity(dataset.utterances().len() * factors.len());
    for u in dataset.utterances() {
        for &a in factors {
            out.push(speed_perturb(u, a)?);
        }
    }
    Dataset::new(dataset.split, dataset.num_classes, dataset.feature_dim, out)
}
