use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

/// Frames of temporal context spliced around the centre frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Context {
    pub left: usize,
    pub right: usize,
}

impl Context {
    pub fn new(left: usize, right: usize) -> Self {
        Self { left, right }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.left + self.right + 1
    }
}

/// Topology of a feedforward frame classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub feature_dim: usize,
    pub context: Context,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Builds a spec from hidden widths; hidden layers share `hidden_activation`
    /// and the output layer is linear.
    pub fn mlp(
        feature_dim: usize,
        context: Context,
        hidden: &[usize],
        hidden_activation: Activation,
        num_classes: usize,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut input_dim = feature_dim * context.width();
        for &width in hidden {
            layers.push(LayerSpec {
                input_dim,
                output_dim: width,
                activation: hidden_activation,
            });
            input_dim = width;
        }
        layers.push(LayerSpec {
            input_dim,
            output_dim: num_classes,
            activation: Activation::Identity,
        });
        let spec = Self {
            feature_dim,
            context,
            num_classes,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn input_dim(&self) -> usize {
        self.feature_dim * self.context.width()
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.num_classes == 0 {
            return Err(Error::Parameter(
                "feature_dim and num_classes must be positive".into(),
            ));
        }
        let (first, last) = match (self.layers.first(), self.layers.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::Parameter("network has no layers".into())),
        };
        if first.input_dim != self.input_dim() {
            return Err(Error::Shape(format!(
                "first layer expects {} inputs but feature_dim {} x context width {} = {}",
                first.input_dim,
                self.feature_dim,
                self.context.width(),
                self.input_dim()
            )));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_dim != pair[1].input_dim {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].output_dim,
                    i + 1,
                    pair[1].input_dim
                )));
            }
        }
        if let Some(i) = self
            .layers
            .iter()
            .position(|l| l.input_dim == 0 || l.output_dim == 0)
        {
            return Err(Error::Parameter(format!("layer {i} has a zero dimension")));
        }
        if last.output_dim != self.num_classes {
            return Err(Error::Shape(format!(
                "final layer outputs {} but num_classes is {}",
                last.output_dim, self.num_classes
            )));
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.input_dim * l.output_dim + l.output_dim)
            .sum()
    }
}
