use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Method, SaliencyMap};
use crate::error::{Error, Result};
use crate::pgm::encode_pgm;
use crate::tensor::Tensor;

/// Min-max scales a map to `[0,1]` and encodes it as PGM; constant maps become black.
pub fn map_to_pgm(map: &SaliencyMap) -> Result<Vec<u8>> {
    let (lo, hi) = (map.values.min(), map.values.max());
    let span = hi - lo;
    let scaled = map
        .values
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 });
    encode_pgm(&scaled)
}

pub fn write_map_pgm(path: &Path, map: &SaliencyMap) -> Result<()> {
    std::fs::write(path, map_to_pgm(map)?).map_err(|e| Error::io(path, e))
}

/// Metadata stored next to a raw float dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMapSidecar {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub method: Method,
    pub hook_layers: Vec<String>,
    pub smoothed: bool,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes values as little-endian `f64` to `path` and metadata to `path` with a `.json` extension.
pub fn write_raw_map(path: &Path, map: &SaliencyMap) -> Result<()> {
    let bytes: Vec<u8> = map
        .values
        .data()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = RawMapSidecar {
        shape: map.values.shape().to_vec(),
        dtype: "f64le".into(),
        method: map.method,
        hook_layers: map.hook_layers.clone(),
        smoothed: map.smoothed,
    };
    let sp = sidecar_path(path);
    std::fs::write(&sp, serde_json::to_vec_pretty(&side)?).map_err(|e| Error::io(&sp, e))
}

pub fn read_raw_map(path: &Path) -> Result<SaliencyMap> {
    let sp = sidecar_path(path);
    let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let side: RawMapSidecar = serde_json::from_str(&text)?;
    if side.dtype != "f64le" {
        return Err(Error::invalid(format!(
            "unsupported dtype `{}`",
            side.dtype
        )));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Parse {
            offset: bytes.len() - bytes.len() % 8,
            message: "raw dump length is not a multiple of 8".into(),
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut map = SaliencyMap::new(
        Tensor::new(side.shape, data)?,
        side.method,
        side.hook_layers,
    )?;
    map.smoothed = side.smoothed;
    Ok(map)
}
