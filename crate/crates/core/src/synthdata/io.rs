use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generate::{generate_samples, GenSpec};
use super::split::{split_dataset, Splits};
use super::{validate_record, BoundingBox, Sample};
use crate::error::{Error, Result};
use crate::pgm::{read_pgm, write_pgm};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";

/// One line of the annotation file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    /// Image path relative to the dataset directory.
    pub path: String,
    pub label: usize,
    pub boxes: Vec<BoundingBox>,
    pub group: String,
}

impl Record {
    fn of(sample: &Sample) -> Record {
        Record {
            id: sample.id.clone(),
            path: format!("images/{}.pgm", sample.id),
            label: sample.label,
            boxes: sample.boxes.clone(),
            group: sample.group.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub generator: GenSpec,
    pub image_size: usize,
    pub seed: u64,
    pub n_samples: usize,
    pub splits: Splits,
}

/// A loaded dataset: manifest plus samples in annotation order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Samples of a named split (`train`, `val` or `test`) in dataset order.
    pub fn split(&self, name: &str) -> Result<Vec<Sample>> {
        let ids: HashSet<&str> = self
            .manifest
            .splits
            .by_name(name)?
            .iter()
            .map(String::as_str)
            .collect();
        Ok(self
            .samples
            .iter()
            .filter(|s| ids.contains(s.id.as_str()))
            .cloned()
            .collect())
    }
}

pub fn write_annotations(path: &Path, records: &[Record]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads and validates an annotation file for `width×height` images.
pub fn read_annotations(path: &Path, width: usize, height: usize) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim();
        if !body.is_empty() {
            let r: Record = serde_json::from_str(body).map_err(|e| Error::Parse {
                offset,
                message: e.to_string(),
            })?;
            if !seen.insert(r.id.clone()) {
                return Err(Error::Validation {
                    record: r.id,
                    message: "duplicate id".into(),
                });
            }
            validate_record(&r.id, r.label, &r.boxes, width, height)?;
            out.push(r);
        }
        offset += line.len();
    }
    Ok(out)
}

/// Generates a dataset in memory, including its split assignment.
pub fn build_dataset(spec: &GenSpec) -> Result<Dataset> {
    let samples = generate_samples(spec)?;
    let records: Vec<Record> = samples.iter().map(Record::of).collect();
    let manifest = DatasetManifest {
        name: spec.name.clone(),
        generator: spec.clone(),
        image_size: spec.image_size,
        seed: spec.seed,
        n_samples: samples.len(),
        splits: split_dataset(&records, spec.splits, spec.seed)?,
    };
    Ok(Dataset { manifest, samples })
}

/// Writes images, annotations and manifest of `data` under `dir`.
pub fn write_dataset(data: &Dataset, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let records: Vec<Record> = data.samples.iter().map(Record::of).collect();
    for (s, r) in data.samples.iter().zip(&records) {
        write_pgm(&dir.join(&r.path), &s.image)?;
    }
    write_annotations(&dir.join(ANNOTATIONS_FILE), &records)?;
    let mpath = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&data.manifest)?;
    text.push('\n');
    std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))
}

/// Generates a dataset, writes it under `dir` and returns it.
pub fn generate_dataset(spec: &GenSpec, dir: &Path) -> Result<Dataset> {
    let data = build_dataset(spec)?;
    write_dataset(&data, dir)?;
    Ok(data)
}

/// Loads and validates a dataset directory written by [`generate_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let size = manifest.image_size;
    let records = read_annotations(&dir.join(ANNOTATIONS_FILE), size, size)?;
    if records.len() != manifest.n_samples {
        return Err(Error::Validation {
            record: MANIFEST_FILE.into(),
            message: format!(
                "manifest lists {} samples, annotations have {}",
                manifest.n_samples,
                records.len()
            ),
        });
    }
    let ids: HashSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let mut assigned = HashSet::new();
    let sp = &manifest.splits;
    for id in sp.train.iter().chain(&sp.val).chain(&sp.test) {
        if !ids.contains(id.as_str()) || !assigned.insert(id.as_str()) {
            return Err(Error::Validation {
                record: id.clone(),
                message: "split entry unknown or listed twice".into(),
            });
        }
    }
    let samples = records
        .into_iter()
        .map(|r| {
            let image = read_pgm(&dir.join(&r.path))?;
            if image.hw()? != (size, size) {
                return Err(Error::Validation {
                    record: r.id,
                    message: format!("image is {:?}, expected {size}×{size}", image.shape()),
                });
            }
            Ok(Sample {
                id: r.id,
                image,
                label: r.label,
                boxes: r.boxes,
                group: r.group,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, samples })
}
