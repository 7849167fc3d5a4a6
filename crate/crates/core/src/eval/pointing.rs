use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Model;
use crate::saliency::{compute_suite, Method, SaliencyMap, SaliencyOptions, Target};
use crate::synthdata::{BoundingBox, Sample, DEFECT};

/// Class whose logit seeds the backward pass during scoring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicy {
    #[default]
    GroundTruth,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointingConfig {
    pub tau: usize,
    pub target: TargetPolicy,
    pub smoothed: bool,
    pub sigma: f64,
}

impl Default for PointingConfig {
    fn default() -> Self {
        PointingConfig {
            tau: 15,
            target: TargetPolicy::GroundTruth,
            smoothed: true,
            sigma: 1.0,
        }
    }
}

impl PointingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(Error::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// `(hit, (x, y))` where `(x, y)` is the first maximal pixel in row-major order
/// and a hit means it lies inside some box dilated by `tau`.
pub fn pointing_hit(
    map: &SaliencyMap,
    boxes: &[BoundingBox],
    tau: usize,
) -> Result<(bool, (usize, usize))> {
    if boxes.is_empty() {
        return Err(Error::invalid("pointing game needs at least one box"));
    }
    let (h, w) = map.size();
    let (x, y) = map.argmax();
    let hit = boxes.iter().any(|b| b.dilate(tau, w, h).contains(x, y));
    Ok((hit, (x, y)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointingRecord {
    pub id: String,
    pub argmax: (usize, usize),
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointingResult {
    pub hits: usize,
    pub misses: usize,
    pub accuracy: f64,
    pub records: Vec<PointingRecord>,
}

pub fn pointing_accuracy(records: Vec<PointingRecord>) -> Result<PointingResult> {
    if records.is_empty() {
        return Err(Error::invalid("pointing accuracy of zero samples"));
    }
    let hits = records.iter().filter(|r| r.hit).count();
    let misses = records.len() - hits;
    Ok(PointingResult {
        hits,
        misses,
        accuracy: hits as f64 / (hits + misses) as f64,
        records,
    })
}

/// Pointing results of one method, scored on raw and on smoothed maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: Method,
    pub raw: PointingResult,
    pub smoothed: PointingResult,
}

impl MethodScores {
    pub fn result(&self, smoothed: bool) -> &PointingResult {
        if smoothed {
            &self.smoothed
        } else {
            &self.raw
        }
    }
}

/// Scores every method on the defect samples, once on raw maps and once on
/// maps smoothed with `config.sigma`; maps of both variants come from the
/// same forward/backward passes.
pub fn pointing_study(
    model: &Model,
    samples: &[Sample],
    methods: &[Method],
    config: &PointingConfig,
    options: &SaliencyOptions,
) -> Result<Vec<MethodScores>> {
    config.validate()?;
    let scored: Vec<&Sample> = samples.iter().filter(|s| s.label == DEFECT).collect();
    if scored.is_empty() {
        return Err(Error::invalid("no defect samples to score"));
    }
    let per_sample: Vec<Vec<(PointingRecord, PointingRecord)>> = scored
        .par_iter()
        .map(|s| {
            let target = match config.target {
                TargetPolicy::GroundTruth => Target::Class(s.label),
                TargetPolicy::Predicted => Target::Predicted,
            };
            let suite = compute_suite(model, &s.image, target, methods, options)?;
            suite
                .maps
                .iter()
                .map(|m| {
                    let (hit, argmax) = pointing_hit(m, &s.boxes, config.tau)?;
                    let (shit, sargmax) =
                        pointing_hit(&m.smoothed(config.sigma)?, &s.boxes, config.tau)?;
                    Ok((
                        PointingRecord {
                            id: s.id.clone(),
                            argmax,
                            hit,
                        },
                        PointingRecord {
                            id: s.id.clone(),
                            argmax: sargmax,
                            hit: shit,
                        },
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let (raw, smoothed): (Vec<_>, Vec<_>) = per_sample.iter().map(|v| v[k].clone()).unzip();
            Ok(MethodScores {
                method,
                raw: pointing_accuracy(raw)?,
                smoothed: pointing_accuracy(smoothed)?,
            })
        })
        .collect()
}

/// One row of the smoothing comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingRow {
    pub method: Method,
    pub unsmoothed: f64,
    pub smoothed: f64,
}

impl SmoothingRow {
    pub fn delta(&self) -> f64 {
        self.smoothed - self.unsmoothed
    }
}

/// Pointing accuracy of each method with and without smoothing on identical samples.
pub fn smoothing_study(
    model: &Model,
    samples: &[Sample],
    methods: &[Method],
    config: &PointingConfig,
    options: &SaliencyOptions,
) -> Result<Vec<SmoothingRow>> {
    Ok(pointing_study(model, samples, methods, config, options)?
        .into_iter()
        .map(|s| SmoothingRow {
            method: s.method,
            unsmoothed: s.raw.accuracy,
            smoothed: s.smoothed.accuracy,
        })
        .collect())
}
