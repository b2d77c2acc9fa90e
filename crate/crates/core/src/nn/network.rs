use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::matrix::{accumulate_weight_grad, affine, backprop_input, Matrix};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};

/// Weights `(output_dim, input_dim)` and biases of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl LayerParams {
    fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(output_dim, input_dim),
            biases: vec![0.0; output_dim],
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.as_slice().iter().chain(self.biases.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .as_mut_slice()
            .iter_mut()
            .chain(self.biases.iter_mut())
    }
}

/// Trainable parameters of a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub layers: Vec<LayerParams>,
}

/// Gradient of a scalar loss with respect to every entry of a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerParams>,
}

macro_rules! impl_flat_access {
    ($t:ty) => {
        impl $t {
            /// All values, layer by layer, weights (row-major) before biases.
            pub fn values(&self) -> impl Iterator<Item = &f64> {
                self.layers.iter().flat_map(|l| l.values())
            }

            pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
                self.layers.iter_mut().flat_map(|l| l.values_mut())
            }

            pub fn len(&self) -> usize {
                self.layers
                    .iter()
                    .map(|l| l.weights.as_slice().len() + l.biases.len())
                    .sum()
            }

            pub fn is_empty(&self) -> bool {
                self.len() == 0
            }

            pub fn is_finite(&self) -> bool {
                self.values().all(|v| v.is_finite())
            }

            /// Checks that every layer has the shape the spec prescribes.
            pub fn check_shapes(&self, spec: &NetworkSpec) -> Result<()> {
                if self.layers.len() != spec.layers.len() {
                    return Err(Error::Shape(format!(
                        "{} layers but spec has {}",
                        self.layers.len(),
                        spec.layers.len()
                    )));
                }
                for (i, (p, s)) in self.layers.iter().zip(&spec.layers).enumerate() {
                    if p.weights.shape() != (s.output_dim, s.input_dim)
                        || p.biases.len() != s.output_dim
                    {
                        return Err(Error::Shape(format!(
                            "layer {i}: weights {:?} / biases {} do not match {}x{}",
                            p.weights.shape(),
                            p.biases.len(),
                            s.output_dim,
                            s.input_dim
                        )));
                    }
                }
                Ok(())
            }
        }
    };
}

impl_flat_access!(ParameterSet);
impl_flat_access!(GradientSet);

impl ParameterSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            layers: spec
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.input_dim, l.output_dim))
                .collect(),
        }
    }

    /// Glorot-uniform weights in ±√(6/(fan_in+fan_out)), zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let mut params = Self::zeros(spec);
        for (p, s) in params.layers.iter_mut().zip(&spec.layers) {
            let limit = (6.0 / (s.input_dim + s.output_dim) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
            for w in p.weights.as_mut_slice() {
                *w = dist.sample(rng);
            }
        }
        params
    }
}

impl GradientSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            layers: ParameterSet::zeros(spec).layers,
        }
    }
}

/// Per-layer pre-activations and activations saved by [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn logits(&self) -> &Matrix {
        self.post.last().expect("validated spec has layers")
    }
}

fn check_batch(spec: &NetworkSpec, params: &ParameterSet, batch: &Matrix) -> Result<()> {
    spec.validate()?;
    params.check_shapes(spec)?;
    if batch.cols() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} columns, network expects {}",
            batch.cols(),
            spec.input_dim()
        )));
    }
    if !params.is_finite() {
        return Err(Error::Numeric("parameter set contains non-finite values".into()));
    }
    Ok(())
}

/// Runs the network on a batch of spliced input rows and returns one logit row
/// per input row together with the activations needed by [`backward`].
pub fn forward(
    spec: &NetworkSpec,
    params: &ParameterSet,
    batch: &Matrix,
) -> Result<(Matrix, ForwardCache)> {
    check_batch(spec, params, batch)?;
    let mut pre = Vec::with_capacity(spec.layers.len());
    let mut post: Vec<Matrix> = Vec::with_capacity(spec.layers.len());
    for (l, p) in spec.layers.iter().zip(&params.layers) {
        let x = post.last().unwrap_or(batch);
        let z = affine(x, &p.weights, &p.biases);
        let mut a = z.clone();
        a.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = l.activation.apply(*v));
        pre.push(z);
        post.push(a);
    }
    let logits = post.last().expect("validated spec has layers").clone();
    if !logits.is_finite() {
        return Err(Error::Numeric("forward pass produced non-finite logits".into()));
    }
    Ok((
        logits,
        ForwardCache {
            input: batch.clone(),
            pre,
            post,
        },
    ))
}

/// Forward pass without retaining the cache.
pub fn predict_logits(spec: &NetworkSpec, params: &ParameterSet, batch: &Matrix) -> Result<Matrix> {
    check_batch(spec, params, batch)?;
    let mut x = batch.clone();
    for (l, p) in spec.layers.iter().zip(&params.layers) {
        let mut z = affine(&x, &p.weights, &p.biases);
        z.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = l.activation.apply(*v));
        x = z;
    }
    if !x.is_finite() {
        return Err(Error::Numeric("forward pass produced non-finite logits".into()));
    }
    Ok(x)
}

/// Backpropagates `d_logits` (gradient of the loss w.r.t. each logit row)
/// through the network recorded in `cache`.
pub fn backward(
    spec: &NetworkSpec,
    params: &ParameterSet,
    cache: &ForwardCache,
    d_logits: &Matrix,
) -> Result<GradientSet> {
    params.check_shapes(spec)?;
    if cache.pre.len() != spec.layers.len() || cache.input.cols() != spec.input_dim() {
        return Err(Error::Shape("forward cache was built for another network".into()));
    }
    for (i, (z, l)) in cache.pre.iter().zip(&spec.layers).enumerate() {
        if z.shape() != (cache.batch_size(), l.output_dim) {
            return Err(Error::Shape(format!("forward cache layer {i} is stale")));
        }
    }
    if d_logits.shape() != (cache.batch_size(), spec.num_classes) {
        return Err(Error::Shape(format!(
            "upstream gradient is {:?}, expected ({}, {})",
            d_logits.shape(),
            cache.batch_size(),
            spec.num_classes
        )));
    }

    let mut grads = GradientSet::zeros(spec);
    let mut upstream = d_logits.clone();
    for i in (0..spec.layers.len()).rev() {
        let act = spec.layers[i].activation;
        let mut delta = upstream;
        for ((d, z), a) in delta
            .as_mut_slice()
            .iter_mut()
            .zip(cache.pre[i].as_slice())
            .zip(cache.post[i].as_slice())
        {
            *d *= act.derivative(*z, *a);
        }
        let x = if i == 0 { &cache.input } else { &cache.post[i - 1] };
        let g = &mut grads.layers[i];
        accumulate_weight_grad(&delta, x, &mut g.weights, &mut g.biases);
        upstream = if i > 0 {
            backprop_input(&delta, &params.layers[i].weights)
        } else {
            Matrix::zeros(0, 0)
        };
    }
    Ok(grads)
}
