use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiment::{Condition, DoMRecord, ExperimentReport, RunRecord};
use super::pointing::MethodScores;
use crate::error::{Error, Result};
use crate::pgm::write_pgm;
use crate::saliency::{Method, SaliencyMap};
use crate::synthdata::BoundingBox;
use crate::tensor::Tensor;

pub const RANDOMIZATION_CSV: &str = "randomization.csv";
pub const SMOOTHING_CSV: &str = "smoothing.csv";
pub const DOM_CSV: &str = "dom.csv";
pub const CLASSIFIER_CSV: &str = "classifier.csv";
pub const FAILURES_CSV: &str = "failures.csv";
pub const DETAILS_JSON: &str = "details.json";

/// The details file's JSON Schema, also shipped as `docs/report-schema.json`.
pub const DETAILS_SCHEMA: &str = include_str!("../../../../docs/report-schema.json");

/// Mean accuracy of one method before and after smoothing over the runs of one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSummary {
    pub method: Method,
    pub arch: String,
    pub condition: Condition,
    pub unsmoothed: f64,
    pub smoothed: f64,
    pub delta: f64,
}

/// A grid cell that did not complete.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub arch: String,
    pub condition: Condition,
    pub seed: u64,
    pub error: String,
}

/// Everything one experiment grid produces.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub reports: Vec<ExperimentReport>,
    pub smoothing: Vec<SmoothingSummary>,
    pub dom: Vec<DoMRecord>,
    pub runs: Vec<RunRecord>,
    pub failures: Vec<CellFailure>,
}

/// Pairs raw and smoothed reports that describe the same (method, arch, condition).
pub fn smoothing_summaries(
    raw: &[ExperimentReport],
    smoothed: &[ExperimentReport],
) -> Vec<SmoothingSummary> {
    raw.iter()
        .filter_map(|r| {
            smoothed
                .iter()
                .find(|s| s.method == r.method && s.arch == r.arch && s.condition == r.condition)
                .map(|s| SmoothingSummary {
                    method: r.method,
                    arch: r.arch.clone(),
                    condition: r.condition,
                    unsmoothed: r.mean,
                    smoothed: s.mean,
                    delta: s.mean - r.mean,
                })
        })
        .collect()
}

fn fixed(v: f64) -> String {
    format!("{v:.9}")
}

fn write_csv<const N: usize>(
    path: &Path,
    header: [&str; N],
    rows: impl IntoIterator<Item = [String; N]>,
) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

pub fn write_randomization_csv(path: &Path, reports: &[ExperimentReport]) -> Result<()> {
    write_csv(
        path,
        [
            "method",
            "arch",
            "condition",
            "split",
            "smoothed",
            "mean",
            "std",
            "n",
        ],
        reports.iter().map(|r| {
            [
                r.method.to_string(),
                r.arch.clone(),
                r.condition.to_string(),
                r.split.clone(),
                r.smoothed.to_string(),
                fixed(r.mean),
                fixed(r.std),
                r.n_runs.to_string(),
            ]
        }),
    )
}

pub fn write_smoothing_csv(path: &Path, rows: &[SmoothingSummary]) -> Result<()> {
    write_csv(
        path,
        [
            "method",
            "arch",
            "condition",
            "unsmoothed",
            "smoothed",
            "delta",
        ],
        rows.iter().map(|r| {
            [
                r.method.to_string(),
                r.arch.clone(),
                r.condition.to_string(),
                fixed(r.unsmoothed),
                fixed(r.smoothed),
                fixed(r.delta),
            ]
        }),
    )
}

pub fn write_dom_csv(path: &Path, rows: &[DoMRecord]) -> Result<()> {
    write_csv(
        path,
        ["method", "arch_a", "arch_b", "mean_a", "mean_b", "dom"],
        rows.iter().map(|r| {
            [
                r.method.to_string(),
                r.arch_a.clone(),
                r.arch_b.clone(),
                fixed(r.mean_a),
                fixed(r.mean_b),
                fixed(r.dom),
            ]
        }),
    )
}

/// One row per trained run; randomised models have no classifier metrics.
pub fn write_classifier_csv(path: &Path, runs: &[RunRecord]) -> Result<()> {
    write_csv(
        path,
        [
            "arch",
            "condition",
            "seed",
            "accuracy",
            "auc",
            "best_val_accuracy",
        ],
        runs.iter().filter_map(|r| {
            let c = r.classifier.as_ref()?;
            let best = r.training.as_ref().and_then(|t| t.best_val_accuracy);
            Some([
                r.arch.clone(),
                r.condition.to_string(),
                r.seed.to_string(),
                fixed(c.accuracy),
                fixed(c.auc),
                best.map(fixed).unwrap_or_default(),
            ])
        }),
    )
}

pub fn write_failures_csv(path: &Path, rows: &[CellFailure]) -> Result<()> {
    write_csv(
        path,
        ["arch", "condition", "seed", "error"],
        rows.iter().map(|f| {
            [
                f.arch.clone(),
                f.condition.to_string(),
                f.seed.to_string(),
                f.error.clone(),
            ]
        }),
    )
}

/// One row per method of a single Pointing Game evaluation.
pub fn write_pointing_csv(
    path: &Path,
    scores: &[MethodScores],
    split: &str,
    tau: usize,
    smoothed: bool,
) -> Result<()> {
    write_csv(
        path,
        [
            "method", "split", "tau", "smoothed", "hits", "misses", "accuracy",
        ],
        scores.iter().map(|s| {
            let r = s.result(smoothed);
            [
                s.method.to_string(),
                split.to_string(),
                tau.to_string(),
                smoothed.to_string(),
                r.hits.to_string(),
                r.misses.to_string(),
                fixed(r.accuracy),
            ]
        }),
    )
}

/// A row of the randomisation CSV as read back from disk.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CsvReportRow {
    pub method: Method,
    pub arch: String,
    pub condition: Condition,
    pub split: String,
    pub smoothed: bool,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn read_randomization_csv(path: &Path) -> Result<Vec<CsvReportRow>> {
    let mut r =
        csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                offset: e.position().map_or(0, |p| p.byte() as usize),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes every CSV plus the details JSON into `dir` and returns the paths written.
pub fn emit_report(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = |name: &str| dir.join(name);
    write_randomization_csv(&p(RANDOMIZATION_CSV), &bundle.reports)?;
    write_smoothing_csv(&p(SMOOTHING_CSV), &bundle.smoothing)?;
    write_dom_csv(&p(DOM_CSV), &bundle.dom)?;
    write_classifier_csv(&p(CLASSIFIER_CSV), &bundle.runs)?;
    write_failures_csv(&p(FAILURES_CSV), &bundle.failures)?;
    let details = p(DETAILS_JSON);
    let text = serde_json::to_string_pretty(bundle)?;
    std::fs::write(&details, text + "\n").map_err(|e| Error::io(&details, e))?;
    Ok([
        RANDOMIZATION_CSV,
        SMOOTHING_CSV,
        DOM_CSV,
        CLASSIFIER_CSV,
        FAILURES_CSV,
        DETAILS_JSON,
    ]
    .iter()
    .map(|n| p(n))
    .collect())
}

/// Blends the image with the min-max scaled map, burns in white box outlines
/// and marks the map's argmax with a black cross. Returns an `H×W` image.
pub fn overlay(image: &Tensor, map: &SaliencyMap, boxes: &[BoundingBox]) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    if c != 1 || map.size() != (h, w) {
        return Err(Error::dim(format!(
            "overlay of {c}x{h}x{w} image with {:?} map",
            map.size()
        )));
    }
    let (lo, hi) = (map.values.min(), map.values.max());
    let span = hi - lo;
    let mut out = Tensor::from_fn(&[h, w], |i| {
        let m = if span > 0.0 {
            (map.values.data()[i] - lo) / span
        } else {
            0.0
        };
        0.5 * image.data()[i] + 0.5 * m
    });
    let d = out.data_mut();
    for b in boxes {
        for x in b.x0..b.x1 {
            d[b.y0 * w + x] = 1.0;
            d[(b.y1 - 1) * w + x] = 1.0;
        }
        for y in b.y0..b.y1 {
            d[y * w + b.x0] = 1.0;
            d[y * w + b.x1 - 1] = 1.0;
        }
    }
    let (ax, ay) = map.argmax();
    for k in -2i64..=2 {
        let x = ax as i64 + k;
        let y = ay as i64 + k;
        if (0..w as i64).contains(&x) {
            d[ay * w + x as usize] = 0.0;
        }
        if (0..h as i64).contains(&y) {
            d[y as usize * w + ax] = 0.0;
        }
    }
    Ok(out)
}

pub fn write_overlay(
    path: &Path,
    image: &Tensor,
    map: &SaliencyMap,
    boxes: &[BoundingBox],
) -> Result<()> {
    write_pgm(path, &overlay(image, map, boxes)?)
}
