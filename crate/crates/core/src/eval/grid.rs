use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::experiment::{dom_table, summarize, Condition, ExperimentSetup, RunRecord};
use super::pointing::PointingConfig;
use super::report::{emit_report, smoothing_summaries, CellFailure, ReportBundle};
use crate::error::{Error, Result};
use crate::net::{build_model, Model, ModelConfig};
use crate::saliency::{Method, SaliencyOptions};
use crate::synthdata::{
    generate_samples, load_dataset, split_dataset, texture_classes, GenSpec, Record, Sample,
};
use crate::train::{train_loop, TrainConfig};

/// Where the grid's samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// A named generator preset, built in memory.
    Preset {
        name: String,
        n_per_class: usize,
        image_size: usize,
        seed: u64,
    },
    /// A full generator spec, built in memory.
    Spec(GenSpec),
    /// A directory written by `generate_dataset`.
    Dir(PathBuf),
}

pub const TEXTURE_CLASSES: &str = "texture-classes";

/// Pretraining of the semi-random donor on a different synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DonorConfig {
    /// `texture-classes` or the name of a dataset preset.
    pub task: String,
    pub n_per_class: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for DonorConfig {
    fn default() -> Self {
        DonorConfig {
            task: TEXTURE_CLASSES.into(),
            n_per_class: 150,
            epochs: 5,
            seed: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dataset: DatasetSource,
    pub archs: Vec<String>,
    pub methods: Vec<Method>,
    pub conditions: Vec<Condition>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub pointing: PointingConfig,
    pub saliency: SaliencyOptions,
    pub donor: DonorConfig,
    pub eval_split: String,
    /// Concurrent grid cells; 0 uses every available core.
    pub workers: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            dataset: DatasetSource::Preset {
                name: "fobj".into(),
                n_per_class: 300,
                image_size: 64,
                seed: 7,
            },
            archs: vec!["micro-res".into(), "micro-eff".into()],
            methods: Method::benchmark_set(),
            conditions: Condition::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            train: TrainConfig::default(),
            pointing: PointingConfig {
                tau: 4,
                ..PointingConfig::default()
            },
            saliency: SaliencyOptions::default(),
            donor: DonorConfig::default(),
            eval_split: "test".into(),
            workers: 0,
        }
    }
}

impl GridConfig {
    pub fn from_json(text: &str) -> Result<GridConfig> {
        let c: GridConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |what: &str| Err(Error::Config(format!("grid lists no {what}")));
        if self.archs.is_empty() {
            return empty("architectures");
        }
        if self.methods.is_empty() {
            return empty("methods");
        }
        if self.conditions.is_empty() {
            return empty("conditions");
        }
        if self.seeds.is_empty() {
            return empty("seeds");
        }
        for a in &self.archs {
            ModelConfig::stock(a, (32, 32)).map_err(|e| Error::Config(e.to_string()))?;
        }
        if !["train", "val", "test"].contains(&self.eval_split.as_str()) {
            return Err(Error::Config(format!(
                "unknown split `{}`",
                self.eval_split
            )));
        }
        self.train.validate()?;
        self.pointing.validate()
    }
}

/// Train, validation and evaluation samples of a grid.
#[derive(Debug, Clone)]
pub struct GridData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub eval: Vec<Sample>,
    pub image_size: usize,
}

fn in_memory_splits(spec: &GenSpec) -> Result<[Vec<Sample>; 3]> {
    let samples = generate_samples(spec)?;
    let records: Vec<Record> = samples
        .iter()
        .map(|s| Record {
            id: s.id.clone(),
            path: String::new(),
            label: s.label,
            boxes: s.boxes.clone(),
            group: s.group.clone(),
        })
        .collect();
    let splits = split_dataset(&records, spec.splits, spec.seed)?;
    let mut out: [Vec<Sample>; 3] = Default::default();
    for (k, name) in ["train", "val", "test"].iter().enumerate() {
        let ids: std::collections::HashSet<&str> =
            splits.by_name(name)?.iter().map(String::as_str).collect();
        out[k] = samples
            .iter()
            .filter(|s| ids.contains(s.id.as_str()))
            .cloned()
            .collect();
    }
    Ok(out)
}

pub fn load_grid_data(source: &DatasetSource, eval_split: &str) -> Result<GridData> {
    let ([train, val, test], size) = match source {
        DatasetSource::Preset {
            name,
            n_per_class,
            image_size,
            seed,
        } => (
            in_memory_splits(&GenSpec::preset(name, *n_per_class, *image_size, *seed)?)?,
            *image_size,
        ),
        DatasetSource::Spec(spec) => (in_memory_splits(spec)?, spec.image_size),
        DatasetSource::Dir(dir) => {
            let d = load_dataset(dir)?;
            (
                [d.split("train")?, d.split("val")?, d.split("test")?],
                d.manifest.image_size,
            )
        }
    };
    let eval = match eval_split {
        "train" => train.clone(),
        "val" => val.clone(),
        "test" => test.clone(),
        other => return Err(Error::Config(format!("unknown split `{other}`"))),
    };
    Ok(GridData {
        train,
        val,
        eval,
        image_size: size,
    })
}

/// Trains the semi-random donor for one architecture on the donor task.
pub fn train_donor(
    arch: &str,
    image_size: usize,
    donor: &DonorConfig,
    train: &TrainConfig,
) -> Result<Model> {
    let (tr, va) = if donor.task == TEXTURE_CLASSES {
        let all = texture_classes(donor.n_per_class, image_size, donor.seed)?;
        let (va, tr): (Vec<_>, Vec<_>) = all.into_iter().enumerate().partition(|(i, _)| i % 5 == 4);
        (
            tr.into_iter().map(|(_, s)| s).collect::<Vec<_>>(),
            va.into_iter().map(|(_, s)| s).collect::<Vec<_>>(),
        )
    } else {
        let spec = GenSpec::preset(&donor.task, donor.n_per_class, image_size, donor.seed)?;
        let [tr, va, _] = in_memory_splits(&spec)?;
        (tr, va)
    };
    let mut model = build_model(
        &ModelConfig::stock(arch, (image_size, image_size))?,
        donor.seed,
    )?;
    let cfg = TrainConfig {
        epochs: donor.epochs,
        seed: donor.seed,
        ..train.clone()
    };
    train_loop(&mut model, &tr, &va, &cfg, None)?;
    Ok(model)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::State(format!("worker pool: {e}")))
}

/// Runs every (arch, condition, seed) cell and aggregates the reports.
///
/// A failing cell is recorded in `failures` and the rest of the grid still
/// runs. Results do not depend on the worker count.
pub fn run_grid_on(config: &GridConfig, data: &GridData) -> Result<ReportBundle> {
    config.validate()?;
    let needs_donor = config.conditions.contains(&Condition::SemiRandom);
    let workers = pool(config.workers)?;
    let donors: Vec<std::result::Result<Model, String>> = workers.install(|| {
        config
            .archs
            .par_iter()
            .map(|a| {
                if needs_donor {
                    train_donor(a, data.image_size, &config.donor, &config.train)
                        .map_err(|e| e.to_string())
                } else {
                    Err("no donor needed".into())
                }
            })
            .collect()
    });
    let mut cells = Vec::new();
    for (ai, arch) in config.archs.iter().enumerate() {
        for &condition in &config.conditions {
            for &seed in &config.seeds {
                cells.push((ai, arch.as_str(), condition, seed));
            }
        }
    }
    let outcomes: Vec<std::result::Result<RunRecord, CellFailure>> = workers.install(|| {
        cells
            .par_iter()
            .map(|&(ai, arch, condition, seed)| {
                let fail = |error: String| CellFailure {
                    arch: arch.to_string(),
                    condition,
                    seed,
                    error,
                };
                let donor = match (&donors[ai], condition) {
                    (Ok(m), _) => Some(m),
                    (Err(e), Condition::SemiRandom) => {
                        return Err(fail(format!("donor training failed: {e}")))
                    }
                    _ => None,
                };
                let setup = ExperimentSetup {
                    arch,
                    train: &data.train,
                    val: &data.val,
                    eval: &data.eval,
                    eval_split: &config.eval_split,
                    methods: &config.methods,
                    train_config: &config.train,
                    pointing: &config.pointing,
                    saliency: &config.saliency,
                    donor,
                };
                setup.run(condition, seed).map_err(|e| fail(e.to_string()))
            })
            .collect()
    });
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => runs.push(r),
            Err(f) => failures.push(f),
        }
    }
    let split = &config.eval_split;
    let reports = summarize(&runs, &config.methods, split, config.pointing.smoothed)?;
    let raw = summarize(&runs, &config.methods, split, false)?;
    let smoothed = summarize(&runs, &config.methods, split, true)?;
    let mut dom = Vec::new();
    let repeated = |arch: &str| -> Vec<_> {
        reports
            .iter()
            .filter(|r| r.arch == arch && r.condition == Condition::Repeated)
            .cloned()
            .collect()
    };
    for (i, a) in config.archs.iter().enumerate() {
        for b in &config.archs[i + 1..] {
            dom.extend(dom_table(&repeated(a), &repeated(b))?);
        }
    }
    Ok(ReportBundle {
        reports,
        smoothing: smoothing_summaries(&raw, &smoothed),
        dom,
        runs,
        failures,
    })
}

/// Loads the data, runs the grid and writes every report file into `out_dir`.
pub fn run_grid(config: &GridConfig, out_dir: &Path) -> Result<(ReportBundle, Vec<PathBuf>)> {
    config.validate()?;
    let data = load_grid_data(&config.dataset, &config.eval_split)?;
    let bundle = run_grid_on(config, &data)?;
    let paths = emit_report(&bundle, out_dir)?;
    Ok((bundle, paths))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(methods: Vec<Method>, archs: &[&str], conditions: Vec<Condition>) -> GridConfig {
        GridConfig {
            dataset: DatasetSource::Preset {
                name: "fobj".into(),
                n_per_class: 12,
                image_size: 16,
                seed: 1,
            },
            archs: archs.iter().map(|s| s.to_string()).collect(),
            methods,
            conditions,
            seeds: vec![0],
            train: TrainConfig {
                epochs: 1,
                batch_size: 8,
                ..TrainConfig::default()
            },
            donor: DonorConfig {
                n_per_class: 6,
                epochs: 1,
                ..DonorConfig::default()
            },
            workers: 1,
            ..GridConfig::default()
        }
    }

    #[test]
    fn single_cell_grid_gives_single_row() {
        let cfg = tiny(
            vec![Method::GradCam],
            &["micro-res"],
            vec![Condition::FullyRandom],
        );
        let data = load_grid_data(&cfg.dataset, &cfg.eval_split).unwrap();
        let b = run_grid_on(&cfg, &data).unwrap();
        assert_eq!(b.reports.len(), 1);
        assert!(b.failures.is_empty() && b.dom.is_empty());
    }

    #[test]
    fn two_archs_give_one_dom_row_per_method() {
        let methods = vec![
            Method::GradCam,
            "normgrad-conv3x3-combined".parse().unwrap(),
        ];
        let cfg = tiny(
            methods,
            &["micro-res", "micro-eff"],
            vec![Condition::Repeated],
        );
        let data = load_grid_data(&cfg.dataset, &cfg.eval_split).unwrap();
        let b = run_grid_on(&cfg, &data).unwrap();
        assert_eq!(b.dom.len(), 2);
        assert_eq!(b.reports.len(), 4);
    }

    #[test]
    fn failing_cell_is_recorded_and_grid_continues() {
        let cfg = GridConfig {
            saliency: SaliencyOptions {
                single_layer: "fc".into(),
                ..SaliencyOptions::default()
            },
            ..tiny(
                vec!["normgrad-conv3x3-single".parse().unwrap()],
                &["micro-res"],
                vec![Condition::FullyRandom],
            )
        };
        let data = load_grid_data(&cfg.dataset, &cfg.eval_split).unwrap();
        let b = run_grid_on(&cfg, &data).unwrap();
        assert_eq!(b.failures.len(), 1);
        assert!(b.reports.is_empty());
    }

    #[test]
    fn config_rejects_unknown_keys_and_empty_lists() {
        assert!(GridConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(GridConfig::from_json(r#"{"archs": []}"#).is_err());
        assert!(GridConfig::from_json(r#"{"archs": ["resnet"]}"#).is_err());
        assert_eq!(GridConfig::from_json("{}").unwrap(), GridConfig::default());
    }
}
