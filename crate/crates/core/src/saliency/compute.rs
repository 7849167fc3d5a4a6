use serde::{Deserialize, Serialize};

use super::methods::{
    gbp_from_gradient, grad_cam, guided_grad_cam, input_x_grad, normgrad_combine, normgrad_single,
};
use super::{Method, SaliencyMap};
use crate::error::{Error, Result};
use crate::net::{GradMode, Model, Tape, BLOCK_OUTPUTS, LAST_CONV_BLOCK};
use crate::tensor::Tensor;

/// Which logit the backward pass starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Class(usize),
    /// The model's own top-scoring class.
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencyOptions {
    /// Gaussian smoothing sigma applied to the final map, if any.
    pub smoothing: Option<f64>,
    /// Layer used by Grad-CAM and single-layer NormGrad.
    pub single_layer: String,
    /// Layers whose NormGrad maps are combined.
    pub combined_layers: Vec<String>,
}

impl Default for SaliencyOptions {
    fn default() -> Self {
        SaliencyOptions {
            smoothing: None,
            single_layer: LAST_CONV_BLOCK.to_string(),
            combined_layers: BLOCK_OUTPUTS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Maps for several methods computed from one shared forward pass.
#[derive(Debug, Clone)]
pub struct SuiteOutput {
    pub target_class: usize,
    pub logits: Tensor,
    /// Unsmoothed maps in the order the methods were requested.
    pub maps: Vec<SaliencyMap>,
}

/// Runs one forward pass, at most one standard and one guided backward pass,
/// and derives every requested map from them.
pub fn compute_suite(
    model: &Model,
    x: &Tensor,
    target: Target,
    methods: &[Method],
    options: &SaliencyOptions,
) -> Result<SuiteOutput> {
    let single = options.single_layer.as_str();
    let mut hooks: Vec<&str> = Vec::new();
    fn add<'a>(name: &'a str, hooks: &mut Vec<&'a str>) {
        if !hooks.contains(&name) {
            hooks.push(name);
        }
    }
    for m in methods {
        match m {
            Method::GradCam
            | Method::GuidedGradCam
            | Method::NormGrad {
                combined: false, ..
            } => add(single, &mut hooks),
            Method::NormGrad { combined: true, .. } => {
                if options.combined_layers.is_empty() {
                    return Err(Error::invalid("combined NormGrad needs at least one layer"));
                }
                for l in &options.combined_layers {
                    add(l, &mut hooks);
                }
            }
            _ => {}
        }
    }
    let (_, h, w) = x.chw()?;
    let size = (h, w);

    let mut tape = Tape::new(model);
    let (logits, _) = tape.forward(x, &hooks)?;
    let class = match target {
        Target::Class(c) => c,
        Target::Predicted => logits.argmax(),
    };
    let needs_standard = methods.iter().any(|m| *m != Method::GuidedBackprop);
    let standard = if needs_standard {
        Some(tape.backward(class, GradMode::Standard)?)
    } else {
        None
    };
    let gbp = if methods.iter().any(Method::needs_guided) {
        Some(gbp_from_gradient(
            &tape.backward(class, GradMode::Guided)?.input_grad,
        )?)
    } else {
        None
    };

    let mut maps = Vec::with_capacity(methods.len());
    for m in methods {
        let map = match m {
            Method::InputXGrad => {
                input_x_grad(x, &standard.as_ref().expect("standard pass").input_grad)?
            }
            Method::GuidedBackprop => gbp.clone().expect("guided pass"),
            Method::GradCam => grad_cam(
                &standard.as_ref().expect("standard pass").record,
                single,
                size,
            )?,
            Method::GuidedGradCam => {
                let gc = grad_cam(
                    &standard.as_ref().expect("standard pass").record,
                    single,
                    size,
                )?;
                guided_grad_cam(&gc, gbp.as_ref().expect("guided pass"))?
            }
            Method::NormGrad { kind, combined } => {
                let record = &standard.as_ref().expect("standard pass").record;
                if *combined {
                    let singles = options
                        .combined_layers
                        .iter()
                        .map(|l| normgrad_single(record, l, *kind, size))
                        .collect::<Result<Vec<_>>>()?;
                    normgrad_combine(&singles)?
                } else {
                    normgrad_single(record, single, *kind, size)?
                }
            }
        };
        maps.push(map);
    }
    Ok(SuiteOutput {
        target_class: class,
        logits,
        maps,
    })
}

/// Computes a single method's map, smoothed if `options.smoothing` is set.
pub fn compute_saliency(
    model: &Model,
    x: &Tensor,
    target: Target,
    method: Method,
    options: &SaliencyOptions,
) -> Result<SaliencyMap> {
    let out = compute_suite(model, x, target, &[method], options)?;
    let map = out.maps.into_iter().next().expect("one map per method");
    match options.smoothing {
        Some(sigma) => map.smoothed(sigma),
        None => Ok(map),
    }
}
