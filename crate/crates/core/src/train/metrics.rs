use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{sigmoid, Mode, Model};
use crate::synthdata::Sample;

const EVAL_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub accuracy: f64,
    pub auc: f64,
}

/// Predicted class and class-1 softmax probability for each sample, in eval mode.
pub fn predict(model: &Model, samples: &[Sample]) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let xs: Vec<_> = chunk.iter().map(|s| s.image.clone()).collect();
        let trace = model.forward_batch(&xs, Mode::Eval)?;
        for z in trace.logits() {
            let d = z.data();
            out.push((z.argmax(), sigmoid(d[1] - d[0])));
        }
    }
    Ok(out)
}

pub fn accuracy(model: &Model, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("accuracy of an empty split"));
    }
    let preds = predict(model, samples)?;
    let correct = preds
        .iter()
        .zip(samples)
        .filter(|((p, _), s)| *p == s.label)
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Mann–Whitney AUC of `scores` for positives (`labels == 1`); ties count 1/2.
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks over tie blocks
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Accuracy at argmax and AUC over class-1 probabilities.
pub fn evaluate_classifier(model: &Model, samples: &[Sample]) -> Result<ClassifierMetrics> {
    let preds = predict(model, samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let scores: Vec<f64> = preds.iter().map(|p| p.1).collect();
    let auc = auc(&scores, &labels)?;
    let correct = preds
        .iter()
        .zip(&labels)
        .filter(|((p, _), l)| p == *l)
        .count();
    Ok(ClassifierMetrics {
        accuracy: correct as f64 / samples.len() as f64,
        auc,
    })
}
