use std::fmt;

use serde::{Deserialize, Serialize};

use super::pointing::{pointing_study, MethodScores, PointingConfig};
use crate::error::{Error, Result};
use crate::net::{build_model, randomize_model, Model, ModelConfig, Scheme};
use crate::saliency::{Method, SaliencyOptions};
use crate::synthdata::Sample;
use crate::train::{evaluate_classifier, train_loop, ClassifierMetrics, TrainConfig, TrainReport};

/// How the model under test was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    /// Pretrained feature layers with a freshly initialised classifier.
    #[serde(rename = "SR")]
    SemiRandom,
    /// Every parameter freshly initialised.
    #[serde(rename = "FR")]
    FullyRandom,
    /// Trained from scratch.
    Repeated,
}

impl Condition {
    pub const ALL: [Condition; 3] = [
        Condition::SemiRandom,
        Condition::FullyRandom,
        Condition::Repeated,
    ];
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::SemiRandom => "SR",
            Condition::FullyRandom => "FR",
            Condition::Repeated => "Repeated",
        })
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SR" => Ok(Condition::SemiRandom),
            "FR" => Ok(Condition::FullyRandom),
            "Repeated" => Ok(Condition::Repeated),
            _ => Err(Error::invalid(format!("unknown condition `{s}`"))),
        }
    }
}

/// Mean and population standard deviation of one method's accuracy over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: Method,
    pub arch: String,
    pub condition: Condition,
    pub split: String,
    pub smoothed: bool,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
}

impl ExperimentReport {
    pub fn from_runs(
        method: Method,
        arch: &str,
        condition: Condition,
        split: &str,
        smoothed: bool,
        accuracies: Vec<f64>,
    ) -> Result<Self> {
        if accuracies.is_empty() {
            return Err(Error::invalid("a report needs at least one run"));
        }
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let std = (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(ExperimentReport {
            method,
            arch: arch.to_string(),
            condition,
            split: split.to_string(),
            smoothed,
            n_runs: accuracies.len(),
            accuracies,
            mean,
            std,
        })
    }
}

/// Absolute difference between two architectures' mean accuracies for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoMRecord {
    pub method: Method,
    pub arch_a: String,
    pub arch_b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub dom: f64,
}

pub fn dom(a: &ExperimentReport, b: &ExperimentReport) -> Result<DoMRecord> {
    if a.method != b.method {
        return Err(Error::invalid(format!(
            "difference of means across methods {} and {}",
            a.method, b.method
        )));
    }
    Ok(DoMRecord {
        method: a.method,
        arch_a: a.arch.clone(),
        arch_b: b.arch.clone(),
        mean_a: a.mean,
        mean_b: b.mean,
        dom: (a.mean - b.mean).abs(),
    })
}

/// Everything shared by the runs of one architecture.
#[derive(Debug, Clone)]
pub struct ExperimentSetup<'a> {
    pub arch: &'a str,
    pub train: &'a [Sample],
    pub val: &'a [Sample],
    pub eval: &'a [Sample],
    pub eval_split: &'a str,
    pub methods: &'a [Method],
    pub train_config: &'a TrainConfig,
    pub pointing: &'a PointingConfig,
    pub saliency: &'a SaliencyOptions,
    /// Pretrained weights for the semi-random condition.
    pub donor: Option<&'a Model>,
}

/// Outcome of one model (one condition and seed) scored on every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arch: String,
    pub condition: Condition,
    pub seed: u64,
    pub scores: Vec<MethodScores>,
    pub classifier: Option<ClassifierMetrics>,
    pub training: Option<TrainReport>,
}

impl ExperimentSetup<'_> {
    fn model_config(&self) -> Result<ModelConfig> {
        let (_, h, w) = self
            .eval
            .first()
            .ok_or_else(|| Error::invalid("empty evaluation split"))?
            .image
            .chw()?;
        ModelConfig::stock(self.arch, (h, w))
    }

    /// Builds (and for the repeated condition trains) one model and scores it.
    pub fn run(&self, condition: Condition, seed: u64) -> Result<RunRecord> {
        let cfg = self.model_config()?;
        let base = build_model(&cfg, seed)?;
        let (model, training) = match condition {
            Condition::FullyRandom => (
                randomize_model(&base, Scheme::FullyRandom, seed, None)?,
                None,
            ),
            Condition::SemiRandom => {
                let donor = self.donor.ok_or_else(|| {
                    Error::MissingResource("semi-random condition needs a pretrained donor".into())
                })?;
                (
                    randomize_model(&base, Scheme::SemiRandom, seed, Some(donor))?,
                    None,
                )
            }
            Condition::Repeated => {
                let mut m = base;
                let tc = TrainConfig {
                    seed,
                    ..self.train_config.clone()
                };
                let report = train_loop(&mut m, self.train, self.val, &tc, None)?;
                (m, Some(report))
            }
        };
        let classifier = match condition {
            Condition::Repeated => Some(evaluate_classifier(&model, self.eval)?),
            _ => None,
        };
        let scores = pointing_study(
            &model,
            self.eval,
            self.methods,
            self.pointing,
            self.saliency,
        )?;
        Ok(RunRecord {
            arch: self.arch.to_string(),
            condition,
            seed,
            scores,
            classifier,
            training,
        })
    }
}

/// Per-method reports for every (arch, condition) present in `runs`, in
/// first-appearance order, scored on smoothed or raw maps.
pub fn summarize(
    runs: &[RunRecord],
    methods: &[Method],
    split: &str,
    smoothed: bool,
) -> Result<Vec<ExperimentReport>> {
    let mut keys: Vec<(&str, Condition)> = Vec::new();
    for r in runs {
        if !keys.contains(&(r.arch.as_str(), r.condition)) {
            keys.push((&r.arch, r.condition));
        }
    }
    let mut out = Vec::new();
    for (arch, condition) in keys {
        for (k, &method) in methods.iter().enumerate() {
            let accs: Vec<f64> = runs
                .iter()
                .filter(|r| r.arch == arch && r.condition == condition)
                .map(|r| r.scores[k].result(smoothed).accuracy)
                .collect();
            out.push(ExperimentReport::from_runs(
                method, arch, condition, split, smoothed, accs,
            )?);
        }
    }
    Ok(out)
}

/// Runs the FR, SR and repeated-training conditions for every seed on one
/// architecture and reports mean ± std per method.
pub fn randomization_experiment(
    setup: &ExperimentSetup,
    seeds: &[u64],
) -> Result<(Vec<RunRecord>, Vec<ExperimentReport>)> {
    let mut runs = Vec::new();
    for condition in Condition::ALL {
        for &seed in seeds {
            runs.push(setup.run(condition, seed)?);
        }
    }
    let reports = summarize(
        &runs,
        setup.methods,
        setup.eval_split,
        setup.pointing.smoothed,
    )?;
    Ok((runs, reports))
}

/// DoM for every method present in both report lists.
pub fn dom_table(a: &[ExperimentReport], b: &[ExperimentReport]) -> Result<Vec<DoMRecord>> {
    a.iter()
        .filter_map(|ra| {
            b.iter()
                .find(|rb| rb.method == ra.method)
                .map(|rb| dom(ra, rb))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(method: Method, mean: f64) -> ExperimentReport {
        ExperimentReport::from_runs(method, "a", Condition::Repeated, "test", true, vec![mean])
            .unwrap()
    }

    #[test]
    fn single_run_has_zero_std() {
        let r = ExperimentReport::from_runs(
            Method::GradCam,
            "a",
            Condition::FullyRandom,
            "test",
            true,
            vec![0.4],
        )
        .unwrap();
        assert_eq!((r.mean, r.std, r.n_runs), (0.4, 0.0, 1));
    }

    #[test]
    fn population_std() {
        let r = ExperimentReport::from_runs(
            Method::GradCam,
            "a",
            Condition::Repeated,
            "test",
            true,
            vec![0.2, 0.4, 0.6],
        )
        .unwrap();
        assert!((r.mean - 0.4).abs() < 1e-15);
        assert!((r.std - (0.08f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dom_fixtures() {
        let m: Method = "normgrad-conv3x3-combined".parse().unwrap();
        let d = dom(&report(m, 0.602), &report(m, 0.607)).unwrap();
        assert_eq!(format!("{:.3}", d.dom), "0.005");
        assert!((d.dom - 0.005).abs() < 1e-12);
        let m: Method = "normgrad-conv1x1-single".parse().unwrap();
        let d = dom(&report(m, 0.851), &report(m, 0.850)).unwrap();
        assert!((d.dom - 0.001).abs() < 1e-12);
        assert_eq!(dom(&report(m, 0.5), &report(m, 0.5)).unwrap().dom, 0.0);
    }

    #[test]
    fn dom_method_mismatch() {
        assert!(dom(
            &report(Method::GradCam, 0.1),
            &report(Method::InputXGrad, 0.1)
        )
        .is_err());
    }

    #[test]
    fn condition_names() {
        for c in Condition::ALL {
            assert_eq!(c.to_string().parse::<Condition>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{c}\""));
        }
    }

    proptest! {
        #[test]
        fn dom_is_symmetric_and_non_negative(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let x = dom(&report(Method::GradCam, a), &report(Method::GradCam, b)).unwrap();
            let y = dom(&report(Method::GradCam, b), &report(Method::GradCam, a)).unwrap();
            prop_assert_eq!(x.dom, y.dom);
            prop_assert!(x.dom >= 0.0);
            prop_assert_eq!(x.dom == 0.0, a == b);
        }
    }
}
