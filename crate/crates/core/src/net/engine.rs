//! Batched forward/backward passes with activation and gradient capture.
//!
//! Hooks behave as virtual identity layers placed right after the hooked
//! layer: the captured activation is the layer output itself and the captured
//! gradient is the gradient arriving at that same point, before the hooked
//! layer's own backward rule runs.

use rayon::prelude::*;

use super::activation::{activate, activation_backward, GradMode};
use super::model::{Layer, Mode, Model, BN_EPS, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::kernels::{
    conv2d_backward_cols, conv2d_forward_cols, global_avg_pool, global_avg_pool_backward,
    maxpool2d, maxpool2d_backward, UnfoldedTensor,
};
use crate::tensor::Tensor;

enum Cache {
    None,
    Conv(Vec<UnfoldedTensor>),
    BatchNorm {
        xhat: Vec<Tensor>,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
        mode: Mode,
    },
    MaxPool(Vec<Vec<usize>>),
}

/// Everything the backward pass needs from a forward pass over a batch.
pub struct Trace {
    inputs: Vec<Tensor>,
    /// `outputs[layer][sample]`
    outputs: Vec<Vec<Tensor>>,
    caches: Vec<Cache>,
    mode: Mode,
}

impl Trace {
    pub fn batch_size(&self) -> usize {
        self.inputs.len()
    }

    pub fn logits(&self) -> &[Tensor] {
        self.outputs.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Output of layer `i` for sample `s`.
    pub fn output(&self, i: usize, s: usize) -> &Tensor {
        &self.outputs[i][s]
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// Activation and gradient captured at one hooked layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HookPair {
    pub activation: Tensor,
    pub gradient: Option<Tensor>,
}

/// Captured per-layer activations and (after backward) upstream gradients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HookRecord {
    entries: Vec<(String, HookPair)>,
}

impl HookRecord {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a record directly from an activation/gradient pair.
    pub fn from_pair(name: &str, activation: Tensor, gradient: Tensor) -> Result<Self> {
        activation.check_same_shape(&gradient)?;
        Ok(HookRecord {
            entries: vec![(
                name.to_string(),
                HookPair {
                    activation,
                    gradient: Some(gradient),
                },
            )],
        })
    }

    pub fn insert(&mut self, name: &str, pair: HookPair) {
        if let Some(e) = self.entries.iter_mut().find(|(n, _)| n == name) {
            e.1 = pair;
        } else {
            self.entries.push((name.to_string(), pair));
        }
    }

    pub fn get(&self, name: &str) -> Option<&HookPair> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    /// Activation and gradient at `name`, failing if either is missing.
    pub fn pair(&self, name: &str) -> Result<(&Tensor, &Tensor)> {
        let p = self
            .get(name)
            .ok_or_else(|| Error::State(format!("no hook recorded at `{name}`")))?;
        let g = p.gradient.as_ref().ok_or_else(|| {
            Error::State(format!("hook `{name}` has no gradient; run backward first"))
        })?;
        Ok((&p.activation, g))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The single entry when the record holds exactly one hook.
    pub fn sole(&self) -> Result<(&str, &Tensor, &Tensor)> {
        match self.entries.as_slice() {
            [(name, _)] => {
                let (a, g) = self.pair(name)?;
                Ok((name.as_str(), a, g))
            }
            _ => Err(Error::State(format!(
                "expected exactly one hook, record has {}",
                self.entries.len()
            ))),
        }
    }
}

/// Result of a backward pass over a batch.
pub struct BatchGrads {
    pub input: Vec<Tensor>,
    /// Summed over the batch, aligned with [`Model::params`].
    pub params: Vec<Tensor>,
    /// `hooks[j][sample]` for the j-th requested hook layer.
    pub hooks: Vec<Vec<Tensor>>,
}

impl Model {
    /// Forward pass over a batch. In train mode BatchNorm uses batch statistics;
    /// the running statistics are not touched (see [`Model::update_running_stats`]).
    pub fn forward_batch(&self, inputs: &[Tensor], mode: Mode) -> Result<Trace> {
        let expect = self.input_shape();
        for x in inputs {
            if x.shape() != expect {
                return Err(Error::dim(format!(
                    "input shape {:?} does not match model input {:?}",
                    x.shape(),
                    expect
                )));
            }
        }
        if inputs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut outputs: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let prev: &[Tensor] = if i == 0 { inputs } else { &outputs[i - 1] };
            let (out, cache) = forward_layer(layer, prev, mode)?;
            outputs.push(out);
            caches.push(cache);
        }
        Ok(Trace {
            inputs: inputs.to_vec(),
            outputs,
            caches,
            mode,
        })
    }

    /// Folds the batch statistics of a train-mode trace into the running statistics.
    pub fn update_running_stats(&mut self, trace: &Trace) {
        let n_batch = trace.batch_size();
        for (layer, cache) in self.layers.iter_mut().zip(&trace.caches) {
            if let (
                Layer::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                },
                Cache::BatchNorm {
                    batch_mean,
                    batch_var,
                    mode: Mode::Train,
                    xhat,
                    ..
                },
            ) = (layer, cache)
            {
                let (_, h, w) = xhat[0].chw().expect("bn cache shape");
                let n = (n_batch * h * w) as f64;
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                for c in 0..batch_mean.len() {
                    let rm = &mut running_mean.data_mut()[c];
                    *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * batch_mean[c];
                    let rv = &mut running_var.data_mut()[c];
                    *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * batch_var[c] * unbias;
                }
            }
        }
    }

    /// Backward pass from per-sample logit gradients.
    pub fn backward_batch(
        &self,
        trace: &Trace,
        upstream: Vec<Tensor>,
        mode: GradMode,
        hooks: &[usize],
    ) -> Result<BatchGrads> {
        if upstream.len() != trace.batch_size() {
            return Err(Error::dim(format!(
                "{} upstream gradients for a batch of {}",
                upstream.len(),
                trace.batch_size()
            )));
        }
        let last = self.layers.len() - 1;
        for g in &upstream {
            g.check_same_shape(&trace.outputs[last][0])?;
        }
        let mut hook_grads: Vec<Vec<Tensor>> = vec![Vec::new(); hooks.len()];
        let mut param_grads: Vec<Vec<Tensor>> = Vec::new();
        let mut grad = upstream;
        for i in (0..self.layers.len()).rev() {
            for (j, &h) in hooks.iter().enumerate() {
                if h == i {
                    hook_grads[j] = grad.clone();
                }
            }
            let input: &[Tensor] = if i == 0 {
                &trace.inputs
            } else {
                &trace.outputs[i - 1]
            };
            let (gin, pg) = backward_layer(
                &self.layers[i],
                &trace.caches[i],
                input,
                &trace.outputs[i],
                grad,
                mode,
                trace.mode,
            )?;
            if !pg.is_empty() {
                param_grads.push(pg);
            }
            grad = gin;
        }
        param_grads.reverse();
        Ok(BatchGrads {
            input: grad,
            params: param_grads.into_iter().flatten().collect(),
            hooks: hook_grads,
        })
    }

    /// Single-sample forward pass capturing the requested hooks.
    pub fn forward(&self, x: &Tensor, hooks: &[&str]) -> Result<(Tensor, HookRecord)> {
        let mut tape = Tape::new(self);
        tape.forward(x, hooks)
    }
}

fn forward_layer(layer: &Layer, xs: &[Tensor], mode: Mode) -> Result<(Vec<Tensor>, Cache)> {
    Ok(match layer {
        Layer::Conv {
            weight,
            bias,
            stride,
            pad,
        } => {
            let res: Vec<(Tensor, UnfoldedTensor)> = xs
                .par_iter()
                .map(|x| conv2d_forward_cols(x, weight, bias, *stride, *pad))
                .collect::<Result<_>>()?;
            let (out, cols) = res.into_iter().unzip();
            (out, Cache::Conv(cols))
        }
        Layer::BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
        } => {
            let (k, h, w) = xs[0].chw()?;
            let (mean, var) = match mode {
                Mode::Train => {
                    let n = (xs.len() * h * w) as f64;
                    let mut mean = vec![0.0; k];
                    let mut var = vec![0.0; k];
                    for c in 0..k {
                        let m = xs
                            .iter()
                            .map(|x| x.channel(c).iter().sum::<f64>())
                            .sum::<f64>()
                            / n;
                        let v = xs
                            .iter()
                            .map(|x| x.channel(c).iter().map(|v| (v - m) * (v - m)).sum::<f64>())
                            .sum::<f64>()
                            / n;
                        mean[c] = m;
                        var[c] = v;
                    }
                    (mean, var)
                }
                Mode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec()),
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let mut xhat = Vec::with_capacity(xs.len());
            let mut out = Vec::with_capacity(xs.len());
            for x in xs {
                let mut xh = x.clone();
                let mut y = x.clone();
                for c in 0..k {
                    let (g, b) = (gamma.data()[c], beta.data()[c]);
                    let range = c * h * w..(c + 1) * h * w;
                    for (xv, yv) in xh.data_mut()[range.clone()]
                        .iter_mut()
                        .zip(&mut y.data_mut()[range])
                    {
                        *xv = (*xv - mean[c]) * inv_std[c];
                        *yv = g * *xv + b;
                    }
                }
                xhat.push(xh);
                out.push(y);
            }
            (
                out,
                Cache::BatchNorm {
                    xhat,
                    inv_std,
                    batch_mean: mean,
                    batch_var: var,
                    mode,
                },
            )
        }
        Layer::Activation(family) => (
            xs.iter().map(|x| activate(*family, x)).collect(),
            Cache::None,
        ),
        Layer::MaxPool(size) => {
            let res: Vec<(Tensor, Vec<usize>)> = xs
                .iter()
                .map(|x| maxpool2d(x, *size))
                .collect::<Result<_>>()?;
            let (out, idx) = res.into_iter().unzip();
            (out, Cache::MaxPool(idx))
        }
        Layer::Gap => (
            xs.iter().map(global_avg_pool).collect::<Result<_>>()?,
            Cache::None,
        ),
        Layer::Fc { weight, bias } => {
            let (o, i) = (weight.shape()[0], weight.shape()[1]);
            let out = xs
                .iter()
                .map(|x| {
                    if x.len() != i {
                        return Err(Error::dim(format!(
                            "fc expects {i} features, got {}",
                            x.len()
                        )));
                    }
                    let y = (0..o)
                        .map(|r| {
                            bias.data()[r]
                                + weight.data()[r * i..(r + 1) * i]
                                    .iter()
                                    .zip(x.data())
                                    .map(|(a, b)| a * b)
                                    .sum::<f64>()
                        })
                        .collect();
                    Tensor::new(vec![o], y)
                })
                .collect::<Result<_>>()?;
            (out, Cache::None)
        }
    })
}

#[allow(clippy::type_complexity)]
fn backward_layer(
    layer: &Layer,
    cache: &Cache,
    inputs: &[Tensor],
    outputs: &[Tensor],
    grads: Vec<Tensor>,
    mode: GradMode,
    fwd_mode: Mode,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    Ok(match (layer, cache) {
        (
            Layer::Conv {
                weight,
                stride,
                pad,
                ..
            },
            Cache::Conv(cols),
        ) => {
            let per: Vec<_> = cols
                .par_iter()
                .zip(inputs.par_iter())
                .zip(grads.par_iter())
                .map(|((c, x), g)| conv2d_backward_cols(c, x.chw()?, weight, g, *stride, *pad))
                .collect::<Result<_>>()?;
            let mut gw = Tensor::zeros(weight.shape());
            let mut gb = Tensor::zeros(&[weight.shape()[0]]);
            let mut gin = Vec::with_capacity(per.len());
            for p in per {
                gw.add_assign(&p.weights)?;
                gb.add_assign(&p.bias)?;
                gin.push(p.input);
            }
            (gin, vec![gw, gb])
        }
        (Layer::BatchNorm { gamma, .. }, Cache::BatchNorm { xhat, inv_std, .. }) => {
            let (k, h, w) = xhat[0].chw()?;
            let hw = h * w;
            let n = (xhat.len() * hw) as f64;
            let mut dgamma = vec![0.0; k];
            let mut dbeta = vec![0.0; k];
            for (g, xh) in grads.iter().zip(xhat) {
                for c in 0..k {
                    let gs = g.channel(c);
                    let xs = xh.channel(c);
                    dbeta[c] += gs.iter().sum::<f64>();
                    dgamma[c] += gs.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            let gin = grads
                .iter()
                .zip(xhat)
                .map(|(g, xh)| {
                    let mut out = g.clone();
                    for c in 0..k {
                        let scale = gamma.data()[c] * inv_std[c];
                        let range = c * hw..(c + 1) * hw;
                        let od = &mut out.data_mut()[range.clone()];
                        match fwd_mode {
                            Mode::Eval => od.iter_mut().for_each(|v| *v *= scale),
                            Mode::Train => {
                                let xs = &xh.data()[range];
                                for (v, xv) in od.iter_mut().zip(xs) {
                                    *v = scale * (*v - dbeta[c] / n - xv * dgamma[c] / n);
                                }
                            }
                        }
                    }
                    out
                })
                .collect();
            (
                gin,
                vec![Tensor::new(vec![k], dgamma)?, Tensor::new(vec![k], dbeta)?],
            )
        }
        (Layer::Activation(family), _) => (
            inputs
                .iter()
                .zip(outputs)
                .zip(&grads)
                .map(|((x, y), g)| activation_backward(*family, mode, x, y, g))
                .collect(),
            Vec::new(),
        ),
        (Layer::MaxPool(_), Cache::MaxPool(idx)) => (
            grads
                .iter()
                .zip(idx)
                .zip(inputs)
                .map(|((g, ix), x)| maxpool2d_backward(g, ix, x.shape()))
                .collect(),
            Vec::new(),
        ),
        (Layer::Gap, _) => (
            grads
                .iter()
                .zip(inputs)
                .map(|(g, x)| global_avg_pool_backward(g, x.shape()))
                .collect(),
            Vec::new(),
        ),
        (Layer::Fc { weight, .. }, _) => {
            let (o, i) = (weight.shape()[0], weight.shape()[1]);
            let mut gw = Tensor::zeros(&[o, i]);
            let mut gb = Tensor::zeros(&[o]);
            let mut gin = Vec::with_capacity(grads.len());
            for (g, x) in grads.iter().zip(inputs) {
                let mut gx = vec![0.0; i];
                for r in 0..o {
                    let gr = g.data()[r];
                    gb.data_mut()[r] += gr;
                    let row = &weight.data()[r * i..(r + 1) * i];
                    let gwr = &mut gw.data_mut()[r * i..(r + 1) * i];
                    for c in 0..i {
                        gwr[c] += gr * x.data()[c];
                        gx[c] += gr * row[c];
                    }
                }
                gin.push(Tensor::new(vec![i], gx)?);
            }
            (gin, vec![gw, gb])
        }
        _ => return Err(Error::State("layer cache does not match layer kind".into())),
    })
}

/// Output of a single-sample backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    /// Gradient with respect to the input image.
    pub input_grad: Tensor,
    /// The forward record with gradients filled in.
    pub record: HookRecord,
    /// Parameter gradients aligned with [`Model::params`].
    pub param_grads: Vec<Tensor>,
}

/// Single-sample forward/backward session over a model.
pub struct Tape<'m> {
    model: &'m Model,
    trace: Option<Trace>,
    hooks: Vec<usize>,
    record: HookRecord,
}

impl<'m> Tape<'m> {
    pub fn new(model: &'m Model) -> Self {
        Tape {
            model,
            trace: None,
            hooks: Vec::new(),
            record: HookRecord::new(),
        }
    }

    /// Runs the forward pass in the model's current mode and captures activations.
    pub fn forward(&mut self, x: &Tensor, hooks: &[&str]) -> Result<(Tensor, HookRecord)> {
        let idx = self.model.resolve_hooks(hooks)?;
        let trace = self
            .model
            .forward_batch(std::slice::from_ref(x), self.model.mode)?;
        let mut record = HookRecord::new();
        for &i in &idx {
            record.insert(
                self.model.layer_name(i),
                HookPair {
                    activation: trace.outputs[i][0].clone(),
                    gradient: None,
                },
            );
        }
        let logits = trace.logits()[0].clone();
        self.trace = Some(trace);
        self.hooks = idx;
        self.record = record.clone();
        Ok((logits, record))
    }

    pub fn logits(&self) -> Result<&Tensor> {
        self.trace
            .as_ref()
            .map(|t| &t.logits()[0])
            .ok_or_else(|| Error::State("no forward pass recorded".into()))
    }

    /// Backward from a one-hot seed on `target_class`'s raw score.
    pub fn backward(&self, target_class: usize, mode: GradMode) -> Result<Backward> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let n_classes = trace.logits()[0].len();
        if target_class >= n_classes {
            return Err(Error::invalid(format!(
                "target class {target_class} out of range for {n_classes} classes"
            )));
        }
        let mut seed = Tensor::zeros(&[n_classes]);
        seed.data_mut()[target_class] = 1.0;
        self.backward_from(seed, mode)
    }

    /// Backward from an arbitrary gradient on the logits.
    pub fn backward_from(&self, seed: Tensor, mode: GradMode) -> Result<Backward> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let grads = self
            .model
            .backward_batch(trace, vec![seed], mode, &self.hooks)?;
        let mut record = self.record.clone();
        for (j, &i) in self.hooks.iter().enumerate() {
            let name = self.model.layer_name(i);
            let activation = record
                .get(name)
                .expect("hook recorded in forward")
                .activation
                .clone();
            record.insert(
                name,
                HookPair {
                    activation,
                    gradient: Some(grads.hooks[j][0].clone()),
                },
            );
        }
        Ok(Backward {
            input_grad: grads.input.into_iter().next().expect("one sample"),
            record,
            param_grads: grads.params,
        })
    }
}
