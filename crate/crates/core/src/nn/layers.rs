use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// BatchNorm running-statistics momentum.
pub const BATCHNORM_MOMENTUM: f64 = 0.99;
/// BatchNorm variance epsilon.
pub const BATCHNORM_EPSILON: f64 = 1e-3;
/// Initial `raw_scale` of variational layers; `softplus(-5) ≈ 6.7e-3`.
pub const INITIAL_RAW_SCALE: f64 = -5.0;
pub const DEFAULT_DROPOUT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Linear,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => super::loss::sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    pub(crate) fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

fn default_stride() -> usize {
    1
}

/// One layer of a sequential model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        filters: usize,
        kernel_size: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        activation: Activation,
    },
    Conv1dReparam {
        filters: usize,
        kernel_size: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        activation: Activation,
    },
    #[serde(rename = "batchnorm")]
    BatchNorm,
    #[serde(rename = "avgpool1d")]
    AvgPool1d {
        pool_size: usize,
    },
    Flatten,
    Dropout {
        rate: f64,
    },
    Dense {
        units: usize,
        #[serde(default)]
        activation: Activation,
    },
    DenseVariational {
        units: usize,
        #[serde(default)]
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Conv1dReparam { .. } => "conv1d_reparam",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::AvgPool1d { .. } => "avgpool1d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::DenseVariational { .. } => "dense_variational",
        }
    }

    pub fn is_variational(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv1dReparam { .. } | LayerSpec::DenseVariational { .. }
        )
    }

    pub fn activation(&self) -> Activation {
        match self {
            LayerSpec::Conv1d { activation, .. }
            | LayerSpec::Conv1dReparam { activation, .. }
            | LayerSpec::Dense { activation, .. }
            | LayerSpec::DenseVariational { activation, .. } => *activation,
            _ => Activation::Linear,
        }
    }

    /// The variational counterpart of a deterministic layer (identity otherwise).
    pub fn to_variational(&self) -> LayerSpec {
        match *self {
            LayerSpec::Conv1d {
                filters,
                kernel_size,
                stride,
                activation,
            } => LayerSpec::Conv1dReparam {
                filters,
                kernel_size,
                stride,
                activation,
            },
            LayerSpec::Dense { units, activation } => LayerSpec::DenseVariational { units, activation },
            other => other,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("{}: {what}", self.name())));
        match *self {
            LayerSpec::Conv1d {
                filters,
                kernel_size,
                stride,
                ..
            }
            | LayerSpec::Conv1dReparam {
                filters,
                kernel_size,
                stride,
                ..
            } => {
                if filters == 0 || kernel_size == 0 || stride == 0 {
                    return bad("filters, kernel_size and stride must be positive");
                }
            }
            LayerSpec::AvgPool1d { pool_size: 0 } => return bad("pool_size must be positive"),
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => return bad("rate must be in [0, 1)"),
            LayerSpec::Dense { units, .. } | LayerSpec::DenseVariational { units, .. } if units == 0 => {
                return bad("units must be positive")
            }
            _ => {}
        }
        Ok(())
    }
}

/// Per-sample activation shape (batch dimension excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    /// `(length, channels)`.
    Seq(usize, usize),
    Flat(usize),
}

impl Shape {
    pub fn size(self) -> usize {
        match self {
            Shape::Seq(l, c) => l * c,
            Shape::Flat(f) => f,
        }
    }

    pub(crate) fn dims(self) -> Vec<usize> {
        match self {
            Shape::Seq(l, c) => vec![l, c],
            Shape::Flat(f) => vec![f],
        }
    }
}

/// Output shape of `spec` applied to `input`.
pub(crate) fn output_shape(spec: &LayerSpec, input: Shape) -> Result<Shape> {
    let mismatch = |why: &str| {
        Err(Error::ShapeMismatch(format!(
            "{} cannot take input {input:?}: {why}",
            spec.name()
        )))
    };
    match (*spec, input) {
        (
            LayerSpec::Conv1d {
                filters,
                kernel_size,
                stride,
                ..
            }
            | LayerSpec::Conv1dReparam {
                filters,
                kernel_size,
                stride,
                ..
            },
            Shape::Seq(len, _),
        ) => {
            if len < kernel_size {
                return mismatch("sequence shorter than kernel");
            }
            Ok(Shape::Seq((len - kernel_size) / stride + 1, filters))
        }
        (LayerSpec::BatchNorm, s) => Ok(s),
        (LayerSpec::AvgPool1d { pool_size }, Shape::Seq(len, c)) => {
            if len < pool_size {
                return mismatch("sequence shorter than pool");
            }
            Ok(Shape::Seq(len / pool_size, c))
        }
        (LayerSpec::Flatten, s) => Ok(Shape::Flat(s.size())),
        (LayerSpec::Dropout { .. }, s) => Ok(s),
        (LayerSpec::Dense { units, .. } | LayerSpec::DenseVariational { units, .. }, Shape::Flat(_)) => {
            Ok(Shape::Flat(units))
        }
        (LayerSpec::Dense { .. } | LayerSpec::DenseVariational { .. }, Shape::Seq(..)) => {
            mismatch("dense layers need flattened input")
        }
        (_, Shape::Flat(_)) => mismatch("expects a (length, channels) input"),
    }
}

/// Deterministic or variational flavour of the default architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[serde(rename = "det")]
    Deterministic,
    #[serde(rename = "pbnn")]
    Bayesian,
}

/// Hyperparameters of the default conv → batchnorm → pool → dense stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub filters: usize,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub dropout: f64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            filters: 8,
            kernel_size: 3,
            pool_size: 2,
            dropout: DEFAULT_DROPOUT,
        }
    }
}

impl ArchitectureConfig {
    /// Layer stack for `kind` with `outputs` sigmoid units.
    pub fn layers(&self, kind: ModelKind, outputs: usize) -> Vec<LayerSpec> {
        let det = vec![
            LayerSpec::Conv1d {
                filters: self.filters,
                kernel_size: self.kernel_size,
                stride: 1,
                activation: Activation::Relu,
            },
            LayerSpec::BatchNorm,
            LayerSpec::AvgPool1d {
                pool_size: self.pool_size,
            },
            LayerSpec::Flatten,
            LayerSpec::Dropout { rate: self.dropout },
            LayerSpec::Dense {
                units: outputs,
                activation: Activation::Sigmoid,
            },
        ];
        match kind {
            ModelKind::Deterministic => det,
            ModelKind::Bayesian => det.iter().map(LayerSpec::to_variational).collect(),
        }
    }
}
