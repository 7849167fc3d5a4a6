use super::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over a batch of logit vectors and its gradient
/// with respect to each logit vector.
pub fn cross_entropy(logits: &[Tensor], labels: &[usize]) -> Result<(f64, Vec<Tensor>)> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::dim(format!(
            "{} logit vectors for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let b = logits.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(labels) {
        if y >= z.len() {
            return Err(Error::invalid(format!(
                "label {y} out of range for {} classes",
                z.len()
            )));
        }
        let m = z.max();
        let exps: Vec<f64> = z.data().iter().map(|v| (v - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        loss += total.ln() - (z.data()[y] - m);
        let g = exps
            .iter()
            .enumerate()
            .map(|(k, e)| (e / total - if k == y { 1.0 } else { 0.0 }) / b)
            .collect();
        grads.push(Tensor::new(z.shape().to_vec(), g)?);
    }
    Ok((loss / b, grads))
}

/// `v ← momentum·v + (g + weight_decay·w)`, then `w ← w − lr·v`.
pub fn sgd_momentum_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::dim(format!(
            "{} params, {} grads, {} velocity buffers",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((w, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        w.check_same_shape(g)?;
        w.check_same_shape(v)?;
        for ((wi, gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = momentum * *vi + gi + weight_decay * *wi;
            *wi -= lr * *vi;
        }
    }
    Ok(())
}

/// Step decay: `lr · decay^{-floor(epoch / every)}`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let steps = (epoch / config.lr_decay_every.max(1)) as i32;
    config.lr * config.lr_decay_factor.powi(-steps)
}
