use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{ActivationFamily, LayerKind, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// A layer together with its parameters and buffers.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        running_mean: Tensor,
        running_var: Tensor,
    },
    Activation(ActivationFamily),
    MaxPool(usize),
    Gap,
    Fc {
        weight: Tensor,
        bias: Tensor,
    },
}

/// Metadata stored alongside the weights in a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epoch: usize,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) config: ModelConfig,
    pub(crate) layers: Vec<Layer>,
    pub(crate) shapes: Vec<Vec<usize>>,
    pub mode: Mode,
    pub meta: TrainingMeta,
}

/// He-normal draw: `N(0, 2 / fan_in)`.
pub(crate) fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

/// Allocates a model for `config` with He-initialized weights.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    let shapes = config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = config
        .layers
        .iter()
        .map(|spec| match spec.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            } => Layer::Conv {
                weight: he_normal(
                    &[out_channels, in_channels, kernel, kernel],
                    in_channels * kernel * kernel,
                    &mut rng,
                ),
                bias: Tensor::zeros(&[out_channels]),
                stride,
                pad,
            },
            LayerKind::BatchNorm { channels } => Layer::BatchNorm {
                gamma: Tensor::full(&[channels], 1.0),
                beta: Tensor::zeros(&[channels]),
                running_mean: Tensor::zeros(&[channels]),
                running_var: Tensor::full(&[channels], 1.0),
            },
            LayerKind::Activation => Layer::Activation(config.activation),
            LayerKind::MaxPool { size } => Layer::MaxPool(size),
            LayerKind::Gap => Layer::Gap,
            LayerKind::Fc {
                in_features,
                out_features,
            } => Layer::Fc {
                weight: he_normal(&[out_features, in_features], in_features, &mut rng),
                bias: Tensor::zeros(&[out_features]),
            },
        })
        .collect();
    Ok(Model {
        config: config.clone(),
        layers,
        shapes,
        mode: Mode::Eval,
        meta: TrainingMeta {
            seed,
            ..Default::default()
        },
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn activation_family(&self) -> ActivationFamily {
        self.config.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_name(&self, i: usize) -> &str {
        &self.config.layers[i].name
    }

    /// Output shape of layer `i` for a single sample.
    pub fn output_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn input_shape(&self) -> [usize; 3] {
        let (h, w) = self.config.input_size;
        [self.config.input_channels, h, w]
    }

    /// Resolves hook names to layer indices, rejecting unknown or non-hookable names.
    pub fn resolve_hooks<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                let n = n.as_ref();
                let i = self
                    .config
                    .layer_index(n)
                    .ok_or_else(|| Error::invalid(format!("no layer named `{n}`")))?;
                if !self.config.layers[i].hookable {
                    return Err(Error::invalid(format!("layer `{n}` is not hookable")));
                }
                Ok(i)
            })
            .collect()
    }

    /// Trainable parameters in a fixed order, paired with their names.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (spec, layer) in self.config.layers.iter().zip(&self.layers) {
            match layer {
                Layer::Conv { weight, bias, .. } | Layer::Fc { weight, bias } => {
                    out.push((format!("{}.weight", spec.name), weight));
                    out.push((format!("{}.bias", spec.name), bias));
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.push((format!("{}.weight", spec.name), gamma));
                    out.push((format!("{}.bias", spec.name), beta));
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { weight, bias, .. } | Layer::Fc { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Non-trainable buffers (BN running statistics), paired with their names.
    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (spec, layer) in self.config.layers.iter().zip(&self.layers) {
            if let Layer::BatchNorm {
                running_mean,
                running_var,
                ..
            } = layer
            {
                out.push((format!("{}.running_mean", spec.name), running_mean));
                out.push((format!("{}.running_var", spec.name), running_var));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Layer::BatchNorm {
                running_mean,
                running_var,
                ..
            } = layer
            {
                out.push(running_mean);
                out.push(running_var);
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Layer indices of the final fully connected layer.
    pub(crate) fn last_fc(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, Layer::Fc { .. }))
    }
}
