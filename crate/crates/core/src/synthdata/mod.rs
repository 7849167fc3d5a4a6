//! Deterministic synthetic localisation datasets.
//!
//! Images are greyscale anatomical-looking textures; defect samples carry one
//! or more planted compact objects with pixel-exact boxes. Datasets live on
//! disk as a directory of PGM images, a JSON Lines annotation file and a
//! manifest describing the generator and the splits.

mod generate;
mod io;
mod split;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use generate::{
    box_contrast, generate_samples, texture_classes, GenSpec, ObjectStyle, Placement,
};
pub use io::{
    build_dataset, generate_dataset, load_dataset, read_annotations, write_annotations,
    write_dataset, Dataset, DatasetManifest, Record, ANNOTATIONS_FILE, MANIFEST_FILE,
};
pub use split::{split_dataset, SplitFractions, Splits};

/// Axis-aligned box with inclusive `x0,y0` and exclusive `x1,y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl From<[usize; 4]> for BoundingBox {
    fn from([x0, y0, x1, y1]: [usize; 4]) -> Self {
        BoundingBox { x0, y0, x1, y1 }
    }
}

impl From<BoundingBox> for [usize; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        BoundingBox { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// Grows the box by `d` on every side, clamped to a `w×h` image.
    pub fn dilate(&self, d: usize, w: usize, h: usize) -> BoundingBox {
        BoundingBox {
            x0: self.x0.saturating_sub(d),
            y0: self.y0.saturating_sub(d),
            x1: (self.x1 + d).min(w),
            y1: (self.y1 + d).min(h),
        }
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    /// Checks `0 ≤ x0 < x1 ≤ w`, `0 ≤ y0 < y1 ≤ h`.
    pub fn in_bounds(&self, w: usize, h: usize) -> bool {
        self.x0 < self.x1 && self.x1 <= w && self.y0 < self.y1 && self.y1 <= h
    }
}

/// Smallest box area accepted for a defect.
pub const MIN_BOX_AREA: usize = 9;

pub const CLEAN: usize = 0;
pub const DEFECT: usize = 1;

/// One labelled image.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `1×H×W`, values in `[0,1]`.
    pub image: Tensor,
    pub label: usize,
    pub boxes: Vec<BoundingBox>,
    /// Samples sharing a group never straddle splits.
    pub group: String,
}

impl Sample {
    /// Checks the label/box biconditional, box bounds and minimum area.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image.hw()?;
        validate_record(&self.id, self.label, &self.boxes, w, h)
    }
}

pub(crate) fn validate_record(
    id: &str,
    label: usize,
    boxes: &[BoundingBox],
    w: usize,
    h: usize,
) -> Result<()> {
    let fail = |message: String| Error::Validation {
        record: id.to_string(),
        message,
    };
    match label {
        CLEAN if !boxes.is_empty() => return Err(fail("clean sample has boxes".into())),
        DEFECT if boxes.is_empty() => return Err(fail("defect sample has no boxes".into())),
        CLEAN | DEFECT => {}
        l => return Err(fail(format!("label {l} is not 0 or 1"))),
    }
    for b in boxes {
        if !b.in_bounds(w, h) {
            return Err(fail(format!(
                "box {:?} outside {w}×{h} image",
                <[usize; 4]>::from(*b)
            )));
        }
        if b.area() < MIN_BOX_AREA {
            return Err(fail(format!(
                "box {:?} smaller than {MIN_BOX_AREA} px",
                <[usize; 4]>::from(*b)
            )));
        }
    }
    Ok(())
}
