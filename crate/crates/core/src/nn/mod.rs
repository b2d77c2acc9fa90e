//! Dense feedforward frame classifier: forward pass, exact backpropagation
//! and SGD with an exponentially decaying learning rate.

mod matrix;
mod network;
mod optim;
mod spec;

pub use matrix::Matrix;
pub use network::{
    backward, forward, predict_logits, ForwardCache, GradientSet, LayerParams, ParameterSet,
};
pub use optim::{lr_at, sgd_step};
pub use spec::{Activation, Context, LayerSpec, NetworkSpec};

use crate::error::{Error, Result};

/// Temperature softmax of one logit row, stabilised by subtracting the row max.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out, temperature)?;
    Ok(out)
}

pub fn softmax_in_place(row: &mut [f64], temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Parameter(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    if row.is_empty() {
        return Err(Error::Shape("softmax of an empty row".into()));
    }
    if row.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric("softmax input is not finite".into()));
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in row.iter_mut() {
        *z = ((*z - max) / temperature).exp();
        sum += *z;
    }
    row.iter_mut().for_each(|p| *p /= sum);
    Ok(())
}

/// Row-wise softmax over a logit matrix.
pub fn softmax_rows(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    let mut out = logits.clone();
    let rows = out.rows();
    for r in 0..rows {
        softmax_in_place(out.row_mut(r), temperature)?;
    }
    Ok(out)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
