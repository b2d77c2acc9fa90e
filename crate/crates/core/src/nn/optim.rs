use super::network::{GradientSet, ParameterSet};
use crate::error::{Error, Result};

/// Plain SGD update `θ ← θ − lr·∇θ`, in place.
pub fn sgd_step(params: &mut ParameterSet, grads: &GradientSet, lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Parameter(format!("learning rate {lr} must be finite and >= 0")));
    }
    if params.layers.len() != grads.layers.len()
        || params.layers.iter().zip(&grads.layers).any(|(p, g)| {
            p.weights.shape() != g.weights.shape() || p.biases.len() != g.biases.len()
        })
    {
        return Err(Error::Shape("gradient shapes do not match parameters".into()));
    }
    for (p, g) in params.values_mut().zip(grads.values()) {
        *p -= lr * g;
    }
    Ok(())
}

/// Exponentially decaying learning rate: geometric interpolation from
/// `lr_initial` at step 0 to `lr_final` at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, lr_initial: f64, lr_final: f64) -> Result<f64> {
    if !(lr_final > 0.0 && lr_initial.is_finite() && lr_final.is_finite()) {
        return Err(Error::Parameter(format!(
            "learning rates must be finite and positive (got {lr_initial}, {lr_final})"
        )));
    }
    if lr_final > lr_initial {
        return Err(Error::Parameter(format!(
            "lr_final {lr_final} exceeds lr_initial {lr_initial}"
        )));
    }
    if step > total_steps {
        return Err(Error::Parameter(format!("step {step} beyond total {total_steps}")));
    }
    if step == 0 {
        return Ok(lr_initial);
    }
    if step == total_steps {
        return Ok(lr_final);
    }
    let frac = step as f64 / total_steps as f64;
    Ok(lr_initial * (lr_final / lr_initial).powf(frac))
}
