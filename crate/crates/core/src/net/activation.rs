//! Activation functions and their (possibly rewritten) backward rules.

use serde::{Deserialize, Serialize};

use super::config::ActivationFamily;
use crate::tensor::Tensor;

/// How activation layers propagate gradients during the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMode {
    /// True gradient.
    Standard,
    /// Masked by both forward output and upstream gradient.
    Guided,
    /// Masked by the upstream gradient only.
    Deconv,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `d/dx [x·σ(x)] = σ(x) + x·σ(x)·(1 − σ(x))`.
#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

pub fn activate(family: ActivationFamily, x: &Tensor) -> Tensor {
    match family {
        ActivationFamily::Relu => x.map(|v| v.max(0.0)),
        ActivationFamily::Silu => x.map(silu),
    }
}

/// Gradient with respect to an activation layer's input.
///
/// * ReLU: standard `(h>0)⊙g`, deconv `(g>0)⊙g`, guided `(h>0)⊙(g>0)⊙g`,
///   where `h` is the layer output.
/// * SiLU: standard `a'(x)⊙g` at the layer input `x`; guided applies the
///   derivative to the output and to the gradient itself, `a'(h)⊙a'(g)⊙g`;
///   deconv keeps only the gradient factor, `a'(g)⊙g`.
pub fn activation_backward(
    family: ActivationFamily,
    mode: GradMode,
    input: &Tensor,
    output: &Tensor,
    upstream: &Tensor,
) -> Tensor {
    let g = upstream.data();
    let data: Vec<f64> = match (family, mode) {
        (ActivationFamily::Relu, GradMode::Standard) => output
            .data()
            .iter()
            .zip(g)
            .map(|(&h, &g)| if h > 0.0 { g } else { 0.0 })
            .collect(),
        (ActivationFamily::Relu, GradMode::Deconv) => {
            g.iter().map(|&g| if g > 0.0 { g } else { 0.0 }).collect()
        }
        (ActivationFamily::Relu, GradMode::Guided) => output
            .data()
            .iter()
            .zip(g)
            .map(|(&h, &g)| if h > 0.0 && g > 0.0 { g } else { 0.0 })
            .collect(),
        (ActivationFamily::Silu, GradMode::Standard) => input
            .data()
            .iter()
            .zip(g)
            .map(|(&x, &g)| silu_grad(x) * g)
            .collect(),
        (ActivationFamily::Silu, GradMode::Guided) => output
            .data()
            .iter()
            .zip(g)
            .map(|(&h, &g)| silu_grad(h) * silu_grad(g) * g)
            .collect(),
        (ActivationFamily::Silu, GradMode::Deconv) => g.iter().map(|&g| silu_grad(g) * g).collect(),
    };
    Tensor::new(upstream.shape().to_vec(), data).expect("activation_backward shape")
}
