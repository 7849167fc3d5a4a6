use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use salforge::eval::{
    emit_report, pointing_study, run_grid, write_overlay, write_pointing_csv, GridConfig,
    PointingConfig, ReportBundle, TargetPolicy, DETAILS_JSON,
};
use salforge::net::{build_model, load_checkpoint, Model, ModelConfig};
use salforge::saliency::{
    compute_suite, write_map_pgm, write_raw_map, Method, SaliencyOptions, Target,
};
use salforge::synthdata::{
    build_dataset, load_dataset, write_dataset, Dataset, GenSpec, Sample, DEFECT, MANIFEST_FILE,
};
use salforge::train::{evaluate_classifier, train_loop, TrainConfig};

use crate::error::{AtRuntime, CliError, CliResult};
use crate::manifest::{resolve_seed, RunManifest, SeedSource};
use crate::{ExperimentArgs, GenDataArgs, PointingArgs, ReportArgs, SaliencyArgs, TrainArgs};

pub const MODEL_FILE: &str = "model.ckpt";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const CLASSIFIER_JSON: &str = "classifier.json";
pub const POINTING_CSV: &str = "pointing.csv";
pub const POINTING_JSON: &str = "pointing.json";

/// `gen-data` config: a full generator spec, or a preset reference.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetRequest {
    preset: String,
    n_per_class: usize,
    image_size: usize,
    seed: u64,
}

/// `train` config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub arch: String,
    #[serde(default)]
    pub train: TrainConfig,
}

fn read_text(path: &Path, what: &str) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> CliResult<T> {
    serde_json::from_str(text)
        .map_err(|e| salforge::Error::Config(format!("{}: {e}", path.display())).into())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config serializes")
}

fn absolute(p: &Path) -> PathBuf {
    let abs = std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let mut existing = abs.as_path();
    let mut rest = Vec::new();
    while !existing.exists() {
        match (existing.parent(), existing.file_name()) {
            (Some(parent), Some(name)) => {
                rest.push(name.to_os_string());
                existing = parent;
            }
            _ => return abs,
        }
    }
    let mut out = existing
        .canonicalize()
        .unwrap_or_else(|_| existing.to_path_buf());
    out.extend(rest.iter().rev());
    out
}

/// Rejects an output directory inside an input dataset directory.
fn ensure_outside(out: &Path, data: &Path) -> CliResult<()> {
    if absolute(out).starts_with(absolute(data)) {
        return Err(CliError::Usage(format!(
            "output directory {} lies inside the input dataset {}",
            out.display(),
            data.display()
        )));
    }
    Ok(())
}

fn require_dataset(dir: &Path) -> CliResult<()> {
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(CliError::Usage(format!(
            "{} is not a dataset directory",
            dir.display()
        )));
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "{what} {} not found",
            path.display()
        )));
    }
    Ok(())
}

fn parse_methods(names: &[String]) -> CliResult<Vec<Method>> {
    if names.is_empty() {
        return Err(CliError::Usage("no saliency method given".into()));
    }
    names
        .iter()
        .map(|n| n.parse::<Method>().map_err(CliError::from))
        .collect()
}

fn split_samples(dataset: &Dataset, split: &str) -> CliResult<Vec<Sample>> {
    Ok(dataset.split(split)?)
}

fn check_model_input(model: &Model, dataset: &Dataset) -> CliResult<()> {
    let [_, h, w] = model.input_shape();
    let s = dataset.manifest.image_size;
    if (h, w) != (s, s) {
        return Err(CliError::Usage(format!(
            "model expects {h}x{w} inputs but the dataset has {s}x{s} images"
        )));
    }
    Ok(())
}

/// Writes the manifest whatever the outcome, then returns the outcome.
fn finish(out: &Path, mut manifest: RunManifest, result: CliResult<Vec<PathBuf>>) -> CliResult<()> {
    match &result {
        Ok(paths) => manifest.outputs = relative(out, paths),
        Err(e) => {
            manifest.status = "error".into();
            manifest.error = Some(e.to_string());
        }
    }
    let written = manifest.write(out);
    result?;
    written
}

fn relative(out: &Path, paths: &[PathBuf]) -> Vec<String> {
    paths
        .iter()
        .map(|p| {
            p.strip_prefix(out)
                .unwrap_or(p)
                .to_string_lossy()
                .replace('\\', "/")
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> salforge::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| salforge::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> salforge::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| salforge::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

pub fn gen_data(a: GenDataArgs) -> CliResult<()> {
    let text = read_text(&a.config, "config")?;
    let raw: Value = parse_json(&text, &a.config)?;
    let mut spec = if raw.get("preset").is_some() {
        let p: PresetRequest = parse_json(&text, &a.config)?;
        GenSpec::preset(&p.preset, p.n_per_class, p.image_size, p.seed)?
    } else {
        parse_json::<GenSpec>(&text, &a.config)?
    };
    let (seed, source) = resolve_seed(a.seed, spec.seed)?;
    spec.seed = seed;
    spec.validate()?;
    let manifest = RunManifest::new("gen-data", to_value(&spec), vec![seed], Some(source));
    let d = build_dataset(&spec)?;
    let result = (|| {
        write_dataset(&d, &a.out).at_runtime()?;
        let mut paths: Vec<PathBuf> = d
            .samples
            .iter()
            .map(|s| a.out.join("images").join(format!("{}.pgm", s.id)))
            .collect();
        paths.push(a.out.join(salforge::synthdata::ANNOTATIONS_FILE));
        paths.push(a.out.join(MANIFEST_FILE));
        Ok(paths)
    })();
    finish(&a.out, manifest, result)
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let text = read_text(&a.config, "config")?;
    let mut run: TrainRun = parse_json(&text, &a.config)?;
    if let Some(arch) = a.arch {
        run.arch = arch;
    }
    if let Some(e) = a.epochs {
        run.train.epochs = e;
    }
    let (seed, source) = resolve_seed(a.seed, run.train.seed)?;
    run.train.seed = seed;
    run.train.validate()?;
    require_dataset(&a.data)?;
    ensure_outside(&a.out, &a.data)?;
    let dataset = load_dataset(&a.data)?;
    let size = dataset.manifest.image_size;
    let model_config = ModelConfig::stock(&run.arch, (size, size))?;
    let (train_set, val_set, test_set) = (
        split_samples(&dataset, "train")?,
        split_samples(&dataset, "val")?,
        split_samples(&dataset, "test")?,
    );
    let manifest = RunManifest::new("train", to_value(&run), vec![seed], Some(source));
    let result = (|| {
        create_dir(&a.out).at_runtime()?;
        let ckpt = a.out.join(MODEL_FILE);
        let mut model = build_model(&model_config, seed).at_runtime()?;
        let report =
            train_loop(&mut model, &train_set, &val_set, &run.train, Some(&ckpt)).at_runtime()?;
        let rpath = a.out.join(TRAIN_REPORT);
        write_json(&rpath, &report).at_runtime()?;
        let mut paths = vec![ckpt, rpath];
        if !test_set.is_empty() {
            let metrics = evaluate_classifier(&model, &test_set).at_runtime()?;
            let cpath = a.out.join(CLASSIFIER_JSON);
            write_json(&cpath, &metrics).at_runtime()?;
            paths.push(cpath);
        }
        Ok(paths)
    })();
    finish(&a.out, manifest, result)
}

fn saliency_options(path: Option<&Path>) -> CliResult<SaliencyOptions> {
    match path {
        Some(p) => parse_json(&read_text(p, "config")?, p),
        None => Ok(SaliencyOptions::default()),
    }
}

fn check_hooks(model: &Model, options: &SaliencyOptions) -> CliResult<()> {
    model.resolve_hooks(std::slice::from_ref(&options.single_layer))?;
    model.resolve_hooks(&options.combined_layers)?;
    Ok(())
}

#[derive(Serialize)]
struct SaliencyRunConfig<'a> {
    model: &'a Path,
    data: &'a Path,
    methods: Vec<String>,
    split: &'a str,
    ids: Vec<String>,
    target: TargetPolicy,
    options: &'a SaliencyOptions,
}

pub fn saliency(a: SaliencyArgs) -> CliResult<()> {
    let mut options = saliency_options(a.config.as_deref())?;
    if a.smooth.is_some() {
        options.smoothing = a.smooth;
    }
    if let Some(s) = options.smoothing {
        if s.is_nan() || s <= 0.0 {
            return Err(CliError::Usage(format!(
                "smoothing sigma must be positive, got {s}"
            )));
        }
    }
    let methods = parse_methods(&a.methods)?;
    require_file(&a.model, "model")?;
    require_dataset(&a.data)?;
    ensure_outside(&a.out, &a.data)?;
    let model = load_checkpoint(&a.model)?;
    check_hooks(&model, &options)?;
    let dataset = load_dataset(&a.data)?;
    check_model_input(&model, &dataset)?;
    let samples: Vec<Sample> = if a.ids.is_empty() {
        split_samples(&dataset, &a.split)?
            .into_iter()
            .filter(|s| s.label == DEFECT)
            .take(a.limit)
            .collect()
    } else {
        a.ids
            .iter()
            .map(|id| {
                dataset
                    .samples
                    .iter()
                    .find(|s| &s.id == id)
                    .cloned()
                    .ok_or_else(|| {
                        CliError::Usage(format!("no sample `{id}` in {}", a.data.display()))
                    })
            })
            .collect::<CliResult<_>>()?
    };
    let target = if a.predicted {
        TargetPolicy::Predicted
    } else {
        TargetPolicy::GroundTruth
    };
    let config = SaliencyRunConfig {
        model: &a.model,
        data: &a.data,
        methods: methods.iter().map(Method::to_string).collect(),
        split: &a.split,
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        target,
        options: &options,
    };
    let manifest = RunManifest::new("saliency", to_value(&config), vec![model.meta.seed], None);
    let result = (|| {
        create_dir(&a.out).at_runtime()?;
        let mut paths = Vec::new();
        for s in &samples {
            let t = match target {
                TargetPolicy::GroundTruth => Target::Class(s.label),
                TargetPolicy::Predicted => Target::Predicted,
            };
            let suite = compute_suite(&model, &s.image, t, &methods, &options).at_runtime()?;
            for map in suite.maps {
                let map = match options.smoothing {
                    Some(sigma) => map.smoothed(sigma).at_runtime()?,
                    None => map,
                };
                let stem = format!("{}_{}", s.id, map.method);
                let pgm = a.out.join(format!("{stem}.pgm"));
                let raw = a.out.join(format!("{stem}.f64"));
                let over = a.out.join(format!("{stem}_overlay.pgm"));
                write_map_pgm(&pgm, &map).at_runtime()?;
                write_raw_map(&raw, &map).at_runtime()?;
                write_overlay(&over, &s.image, &map, &s.boxes).at_runtime()?;
                paths.extend([pgm, raw.clone(), raw.with_extension("json"), over]);
            }
        }
        Ok(paths)
    })();
    finish(&a.out, manifest, result)
}

#[derive(Serialize)]
struct PointingRunConfig<'a> {
    model: &'a Path,
    data: &'a Path,
    methods: Vec<String>,
    split: &'a str,
    pointing: &'a PointingConfig,
    saliency: &'a SaliencyOptions,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PointingFile {
    pointing: PointingConfig,
    saliency: SaliencyOptions,
}

pub fn pointing_game(a: PointingArgs) -> CliResult<()> {
    let file: PointingFile = match &a.config {
        Some(p) => parse_json(&read_text(p, "config")?, p)?,
        None => PointingFile::default(),
    };
    let (mut pointing, options) = (file.pointing, file.saliency);
    if let Some(t) = a.tau {
        pointing.tau = t;
    }
    if a.raw {
        pointing.smoothed = false;
    }
    if let Some(s) = a.sigma {
        pointing.sigma = s;
    }
    if a.predicted {
        pointing.target = TargetPolicy::Predicted;
    }
    pointing.validate()?;
    let methods = parse_methods(&a.methods)?;
    require_file(&a.model, "model")?;
    require_dataset(&a.data)?;
    ensure_outside(&a.out, &a.data)?;
    let model = load_checkpoint(&a.model)?;
    check_hooks(&model, &options)?;
    let dataset = load_dataset(&a.data)?;
    check_model_input(&model, &dataset)?;
    let samples = split_samples(&dataset, &a.split)?;
    let config = PointingRunConfig {
        model: &a.model,
        data: &a.data,
        methods: methods.iter().map(Method::to_string).collect(),
        split: &a.split,
        pointing: &pointing,
        saliency: &options,
    };
    let manifest = RunManifest::new(
        "pointing-game",
        to_value(&config),
        vec![model.meta.seed],
        None,
    );
    let result = (|| {
        let scores =
            pointing_study(&model, &samples, &methods, &pointing, &options).at_runtime()?;
        create_dir(&a.out).at_runtime()?;
        let csv = a.out.join(POINTING_CSV);
        write_pointing_csv(&csv, &scores, &a.split, pointing.tau, pointing.smoothed)
            .at_runtime()?;
        let json = a.out.join(POINTING_JSON);
        write_json(&json, &scores).at_runtime()?;
        Ok(vec![csv, json])
    })();
    finish(&a.out, manifest, result)
}

pub fn experiment(a: ExperimentArgs) -> CliResult<()> {
    let text = read_text(&a.config, "config")?;
    let mut config = GridConfig::from_json(&text)?;
    if let Some(w) = a.workers {
        config.workers = w;
    }
    let (first, source) = resolve_seed(a.seed, config.seeds[0])?;
    if source != SeedSource::Config {
        let n = config.seeds.len() as u64;
        config.seeds = (first..first + n).collect();
    }
    config.validate()?;
    if let salforge::eval::DatasetSource::Dir(d) = &config.dataset {
        require_dataset(d)?;
        ensure_outside(&a.out, d)?;
    }
    let mut manifest = RunManifest::new(
        "experiment",
        to_value(&config),
        config.seeds.clone(),
        Some(source),
    );
    let cells = config.archs.len() * config.conditions.len() * config.seeds.len();
    match run_grid(&config, &a.out).at_runtime() {
        Ok((bundle, paths)) if !bundle.failures.is_empty() => {
            let err = CliError::PartialFailure {
                failed: bundle.failures.len(),
                total: cells,
            };
            manifest.outputs = relative(&a.out, &paths);
            manifest.status = "partial".into();
            manifest.error = Some(err.to_string());
            manifest.write(&a.out)?;
            Err(err)
        }
        other => finish(&a.out, manifest, other.map(|(_, p)| p)),
    }
}

#[derive(Serialize)]
struct ReportRunConfig<'a> {
    details: &'a Path,
}

pub fn report(a: ReportArgs) -> CliResult<()> {
    require_file(&a.details, "details file")?;
    if absolute(&a.out.join(DETAILS_JSON)) == absolute(&a.details) {
        return Err(CliError::Usage(
            "--out must differ from the directory holding --details".into(),
        ));
    }
    let bundle: ReportBundle = parse_json(&read_text(&a.details, "details file")?, &a.details)?;
    let seeds = {
        let mut s: Vec<u64> = bundle.runs.iter().map(|r| r.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let manifest = RunManifest::new(
        "report",
        to_value(&ReportRunConfig {
            details: &a.details,
        }),
        seeds,
        Some(SeedSource::Config),
    );
    let result = emit_report(&bundle, &a.out).at_runtime();
    finish(&a.out, manifest, result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_output_is_rejected() {
        let d = tempfile::tempdir().unwrap();
        assert!(ensure_outside(&d.path().join("data/out"), &d.path().join("data")).is_err());
        assert!(ensure_outside(&d.path().join("out"), &d.path().join("data")).is_ok());
        assert!(ensure_outside(&d.path().join("data"), &d.path().join("data")).is_err());
    }

    #[test]
    fn train_config_rejects_unknown_keys() {
        let p = Path::new("t.json");
        assert!(parse_json::<TrainRun>(r#"{"arch":"micro-res","lr":0.1}"#, p).is_err());
        let r: TrainRun = parse_json(r#"{"arch":"micro-eff"}"#, p).unwrap();
        assert_eq!(r.train, TrainConfig::default());
    }

    #[test]
    fn method_names_parse() {
        let m = parse_methods(&["gradcam".into(), "normgrad-conv3x3-combined".into()]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(parse_methods(&["bogus".into()]).unwrap_err().exit_code(), 1);
    }
}
