use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::split::SplitFractions;
use super::{BoundingBox, Sample, CLEAN, DEFECT, MIN_BOX_AREA};
use crate::error::{Error, Result};
use crate::kernels::gaussian_smooth;
use crate::pgm::quantize;
use crate::tensor::Tensor;

/// Where planted objects may appear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    Anywhere,
    /// Object centre within `radius` pixels (per axis) of the image centre.
    Center {
        radius: usize,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectStyle {
    /// Solid bright ellipses and rectangles added on top of the background.
    #[default]
    Bright,
    /// Rectangular patches of oriented fine stripes.
    Texture,
}

/// Generator parameters. Sizes are in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub name: String,
    pub n_per_class: usize,
    /// Side of the square images.
    pub image_size: usize,
    pub objects_per_image: (usize, usize),
    pub object_size_range: (usize, usize),
    pub contrast_range: (f64, f64),
    /// Minimum of box mean minus surrounding ring mean, checked on the quantized image.
    pub contrast_floor: f64,
    pub placement: Placement,
    #[serde(default)]
    pub style: ObjectStyle,
    /// Range of rib-like bright bands in the background; `(0, 0)` disables them.
    #[serde(default = "default_rib_bands")]
    pub rib_bands: (usize, usize),
    /// Add a bright collimator border with a hard edge along one or two sides of every image.
    #[serde(default = "default_collimation")]
    pub collimation: bool,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default)]
    pub splits: SplitFractions,
    pub seed: u64,
}

fn default_group_size() -> usize {
    2
}

fn default_rib_bands() -> (usize, usize) {
    (3, 4)
}

fn default_collimation() -> bool {
    true
}

const RING_WIDTH: usize = 2;
const OBJECT_GAP: usize = 3;
const MAX_ATTEMPTS: usize = 500;
/// Width in pixels of a band's soft edge ramp.
const BAND_EDGE: f64 = 2.5;

fn scaled(v: usize, size: usize) -> usize {
    ((v * size) as f64 / 64.0).round().max(3.0) as usize
}

impl GenSpec {
    /// Named presets: `fobj` (one to three small bright objects anywhere),
    /// `lvot` (one small object near the centre) and `texture` (one stripe
    /// patch). Images under 48 px get no rib bands and no collimation.
    pub fn preset(name: &str, n_per_class: usize, image_size: usize, seed: u64) -> Result<GenSpec> {
        let s = image_size;
        let base = GenSpec {
            name: name.to_string(),
            n_per_class,
            image_size,
            objects_per_image: (1, 3),
            object_size_range: (scaled(4, s), scaled(8, s)),
            contrast_range: (0.4, 0.65),
            contrast_floor: 0.15,
            placement: Placement::Anywhere,
            style: ObjectStyle::Bright,
            rib_bands: if s >= 48 { default_rib_bands() } else { (0, 0) },
            collimation: s >= 48,
            group_size: 2,
            splits: SplitFractions::default(),
            seed,
        };
        match name {
            "fobj" => Ok(base),
            "lvot" => Ok(GenSpec {
                objects_per_image: (1, 1),
                object_size_range: (scaled(3, s), scaled(6, s)),
                contrast_range: (0.3, 0.5),
                placement: Placement::Center { radius: s / 8 },
                ..base
            }),
            "texture" => Ok(GenSpec {
                objects_per_image: (1, 1),
                object_size_range: (s / 4, s / 2),
                contrast_range: (0.15, 0.25),
                contrast_floor: 0.0,
                style: ObjectStyle::Texture,
                ..base
            }),
            _ => Err(Error::Config(format!("unknown dataset preset `{name}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < 16 {
            return bad(format!("image size {} below 16 px", self.image_size));
        }
        if self.n_per_class == 0 {
            return bad("n_per_class must be at least 1".into());
        }
        let (lo, hi) = self.objects_per_image;
        if lo == 0 || lo > hi {
            return bad(format!(
                "objects_per_image ({lo}, {hi}) is not a range starting at 1 or more"
            ));
        }
        let (smin, smax) = self.object_size_range;
        if smin > smax || smin * smin < MIN_BOX_AREA {
            return bad(format!("object_size_range ({smin}, {smax}) invalid"));
        }
        if smax >= self.image_size {
            return bad(format!(
                "object size {smax} does not fit in a {} px image",
                self.image_size
            ));
        }
        let (clo, chi) = self.contrast_range;
        if !(clo > 0.0 && clo <= chi && chi <= 1.0) {
            return bad(format!("contrast_range ({clo}, {chi}) invalid"));
        }
        if self.contrast_floor < 0.0 || self.contrast_floor > chi {
            return bad(format!("contrast_floor {} invalid", self.contrast_floor));
        }
        if self.rib_bands.0 > self.rib_bands.1 || self.rib_bands.1 > 8 {
            return bad(format!(
                "rib_bands {:?} must be a range within 0..=8",
                self.rib_bands
            ));
        }
        if self.group_size == 0 {
            return bad("group_size must be at least 1".into());
        }
        if let Placement::Center { radius } = self.placement {
            if radius + smax / 2 + 1 > self.image_size / 2 {
                return bad(format!(
                    "centre radius {radius} pushes objects off the image"
                ));
            }
        }
        self.splits.validate()
    }
}

/// Mean inside `b` minus the mean of the `RING_WIDTH`-pixel ring around it,
/// excluding pixels of any box in `all`.
pub fn box_contrast(image: &Tensor, b: &BoundingBox, all: &[BoundingBox]) -> f64 {
    let (h, w) = image.hw().expect("map-shaped image");
    let d = image.data();
    let (mut inside, mut n_in) = (0.0, 0usize);
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            inside += d[y * w + x];
            n_in += 1;
        }
    }
    let ring = b.dilate(RING_WIDTH, w, h);
    let (mut outside, mut n_out) = (0.0, 0usize);
    for y in ring.y0..ring.y1 {
        for x in ring.x0..ring.x1 {
            if !all.iter().any(|o| o.contains(x, y)) && !b.contains(x, y) {
                outside += d[y * w + x];
                n_out += 1;
            }
        }
    }
    if n_out == 0 {
        return f64::INFINITY;
    }
    inside / n_in as f64 - outside / n_out as f64
}

struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
    amp: f64,
}

/// A rib-like bright band crossing the whole image along a gentle parabola.
/// Bands of one image share angle and curvature, so they never cross.
struct Band {
    px: f64,
    py: f64,
    angle: f64,
    curvature: f64,
    half_width: f64,
    amp: f64,
}

impl Band {
    /// Antialiased coverage of pixel centre `(x, y)`.
    fn coverage(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.px, y - self.py);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        let d = (v - self.curvature * u * u).abs();
        ((self.half_width - d) / BAND_EDGE + 0.5).clamp(0.0, 1.0)
    }
}

/// Background structure shared by the members of a group.
struct Anatomy {
    blobs: Vec<Blob>,
    bands: Vec<Band>,
}

impl Anatomy {
    /// Pixels lying in the core of some band; bright objects are kept off them.
    fn band_core(&self, size: usize) -> Vec<bool> {
        (0..size * size)
            .map(|i| {
                let (x, y) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
                self.bands.iter().any(|b| b.coverage(x, y) > 0.5)
            })
            .collect()
    }
}

/// Collimator borders: the outer `depth` pixels of each listed side
/// (0 left, 1 right, 2 top, 3 bottom) are brightened by `amp`.
struct Collimation {
    sides: Vec<(usize, usize)>,
    amp: f64,
}

impl Collimation {
    fn sample(size: usize, rng: &mut ChaCha8Rng) -> Self {
        let first = rng.random_range(0..4);
        let mut sides = vec![first];
        if rng.random_bool(0.5) {
            sides.push((first + rng.random_range(1..4)) % 4);
        }
        let (lo, hi) = ((0.06 * size as f64) as usize, (0.12 * size as f64) as usize);
        Collimation {
            sides: sides
                .into_iter()
                .map(|side| (side, rng.random_range(lo..=hi)))
                .collect(),
            amp: rng.random_range(0.35..0.5),
        }
    }

    /// Whether `(x, y)` lies in the collimated region grown by `margin`.
    fn covers(&self, x: usize, y: usize, size: usize, margin: usize) -> bool {
        self.sides.iter().any(|&(side, depth)| {
            let d = depth + margin;
            match side {
                0 => x < d,
                1 => x + d >= size,
                2 => y < d,
                _ => y + d >= size,
            }
        })
    }

    fn apply(&self, img: &mut [f64], blocked: &mut [bool], size: usize) {
        for y in 0..size {
            for x in 0..size {
                if self.covers(x, y, size, 0) {
                    img[y * size + x] += self.amp;
                }
                if self.covers(x, y, size, OBJECT_GAP) {
                    blocked[y * size + x] = true;
                }
            }
        }
    }
}

fn normalized(t: Tensor) -> Tensor {
    let n = t.len() as f64;
    let mean = t.sum() / n;
    let sd = (t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    t.map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 })
}

fn background(size: usize, anatomy: &Anatomy, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut img = vec![0.22; size * size];
    for (sigma, weight) in [(1.0, 0.035), (2.5, 0.045), (6.0, 0.05)] {
        let noise = Tensor::from_fn(&[size, size], |_| rng.sample::<f64, _>(StandardNormal));
        let tex = normalized(gaussian_smooth(&noise, sigma)?);
        for (v, t) in img.iter_mut().zip(tex.data()) {
            *v += weight * t;
        }
    }
    for y in 0..size {
        for x in 0..size {
            let v = &mut img[y * size + x];
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            for b in &anatomy.bands {
                *v += b.amp * b.coverage(fx, fy);
            }
            for b in &anatomy.blobs {
                let r2 = (x as f64 + 0.5 - b.cx).powi(2) + (y as f64 + 0.5 - b.cy).powi(2);
                *v += b.amp * (-r2 / (2.0 * b.sigma * b.sigma)).exp();
            }
        }
    }
    Ok(img)
}

fn sample_anatomy(size: usize, bands: (usize, usize), rng: &mut ChaCha8Rng) -> Anatomy {
    let s = size as f64;
    let n = rng.random_range(2..=4);
    let blobs = (0..n)
        .map(|_| Blob {
            cx: rng.random_range(0.0..s),
            cy: rng.random_range(0.0..s),
            sigma: rng.random_range(0.10..0.22) * s,
            amp: rng.random_range(0.10..0.25),
        })
        .collect();
    let n = rng.random_range(bands.0..=bands.1);
    let spacing = s / n.max(1) as f64;
    let angle = rng.random_range(-0.4..0.4);
    let curvature = rng.random_range(-0.6..0.6) / s;
    let px = s / 2.0 + rng.random_range(-0.2..0.2) * s;
    let bands = (0..n)
        .map(|k| Band {
            px,
            py: (k as f64 + rng.random_range(0.3..0.7)) * spacing,
            angle,
            curvature,
            half_width: rng.random_range(0.045..0.065) * s,
            amp: rng.random_range(0.45..0.6),
        })
        .collect();
    Anatomy { blobs, bands }
}

/// Draws an object footprint: a tight box plus the pixels it covers.
fn draw_object(
    spec: &GenSpec,
    existing: &[BoundingBox],
    blocked: &[bool],
    rng: &mut ChaCha8Rng,
) -> Option<(BoundingBox, Vec<(usize, usize)>)> {
    let s = spec.image_size;
    let (smin, smax) = spec.object_size_range;
    let w = rng.random_range(smin..=smax);
    let h = rng.random_range(smin..=smax);
    let (x0, y0) = match spec.placement {
        Placement::Anywhere => (rng.random_range(1..s - w), rng.random_range(1..s - h)),
        Placement::Center { radius } => {
            let cx = s / 2 - radius + rng.random_range(0..=2 * radius);
            let cy = s / 2 - radius + rng.random_range(0..=2 * radius);
            (cx - w / 2, cy - h / 2)
        }
    };
    let ellipse = spec.style == ObjectStyle::Bright && rng.random_bool(0.5);
    let mut pixels = Vec::new();
    let (rx, ry) = (w as f64 / 2.0, h as f64 / 2.0);
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            let inside = !ellipse || {
                let dx = (x - x0) as f64 + 0.5 - rx;
                let dy = (y - y0) as f64 + 0.5 - ry;
                (dx / rx).powi(2) + (dy / ry).powi(2) <= 1.0
            };
            if inside {
                pixels.push((x, y));
            }
        }
    }
    let bx = BoundingBox::new(
        pixels.iter().map(|p| p.0).min()?,
        pixels.iter().map(|p| p.1).min()?,
        pixels.iter().map(|p| p.0).max()? + 1,
        pixels.iter().map(|p| p.1).max()? + 1,
    );
    if bx.area() < MIN_BOX_AREA
        || !bx.in_bounds(s, s)
        || pixels.iter().any(|&(x, y)| blocked[y * s + x])
        || existing
            .iter()
            .any(|e| e.dilate(OBJECT_GAP, s, s).intersects(&bx))
    {
        return None;
    }
    Some((bx, pixels))
}

fn plant(
    spec: &GenSpec,
    bg: &[f64],
    blocked: &[bool],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<BoundingBox>)> {
    let s = spec.image_size;
    let (lo, hi) = spec.objects_per_image;
    let k = rng.random_range(lo..=hi);
    for _ in 0..MAX_ATTEMPTS {
        let mut img = bg.to_vec();
        let mut boxes = Vec::with_capacity(k);
        let mut tries = 0;
        while boxes.len() < k && tries < MAX_ATTEMPTS {
            tries += 1;
            let Some((bx, pixels)) = draw_object(spec, &boxes, blocked, rng) else {
                continue;
            };
            let c = rng.random_range(spec.contrast_range.0..=spec.contrast_range.1);
            match spec.style {
                ObjectStyle::Bright => {
                    for (x, y) in pixels {
                        img[y * s + x] += c;
                    }
                }
                ObjectStyle::Texture => {
                    let theta = rng.random_range(0.0..std::f64::consts::PI);
                    let period = rng.random_range(2.5..4.0);
                    let (ct, st) = (theta.cos(), theta.sin());
                    for (x, y) in pixels {
                        let phase =
                            (x as f64 * ct + y as f64 * st) * std::f64::consts::TAU / period;
                        img[y * s + x] += c * phase.sin();
                    }
                }
            }
            boxes.push(bx);
        }
        if boxes.len() < k {
            continue;
        }
        let img: Vec<f64> = img
            .into_iter()
            .map(|v| quantize(v) as f64 / 255.0)
            .collect();
        let t = Tensor::new(vec![s, s], img)?;
        if boxes
            .iter()
            .all(|b| box_contrast(&t, b, &boxes) >= spec.contrast_floor)
        {
            return Ok((t.into_data(), boxes));
        }
    }
    Err(Error::Config(format!(
        "could not place {k} objects meeting contrast floor {} after {MAX_ATTEMPTS} attempts",
        spec.contrast_floor
    )))
}

/// Generates the in-memory samples of a dataset, already quantized to 8 bits.
///
/// Each group holds `group_size` clean and `group_size` defect images that
/// share one anatomy layout and differ in fine texture and planted objects.
pub fn generate_samples(spec: &GenSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let s = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_groups = spec.n_per_class.div_ceil(spec.group_size);
    let mut samples = Vec::with_capacity(2 * spec.n_per_class);
    for g in 0..n_groups {
        let members = (spec.n_per_class - g * spec.group_size).min(spec.group_size);
        let anatomy = sample_anatomy(s, spec.rib_bands, &mut rng);
        let band_core = if spec.style == ObjectStyle::Bright {
            anatomy.band_core(s)
        } else {
            vec![false; s * s]
        };
        let group = format!("g{g:04}");
        for label in [CLEAN, DEFECT] {
            for _ in 0..members {
                let mut bg = background(s, &anatomy, &mut rng)?;
                let mut blocked = band_core.clone();
                if spec.collimation {
                    Collimation::sample(s, &mut rng).apply(&mut bg, &mut blocked, s);
                }
                let (pixels, boxes) = if label == DEFECT {
                    plant(spec, &bg, &blocked, &mut rng)?
                } else {
                    (
                        bg.into_iter().map(|v| quantize(v) as f64 / 255.0).collect(),
                        vec![],
                    )
                };
                samples.push(Sample {
                    id: format!("s{:05}", samples.len()),
                    image: Tensor::new(vec![1, s, s], pixels)?,
                    label,
                    boxes,
                    group: group.clone(),
                });
            }
        }
    }
    Ok(samples)
}

/// Orientation classification task used to pretrain semi-random donors.
///
/// Every image is covered by one stripe texture over a noisy background;
/// class 0 stripes run within 45 degrees of horizontal, class 1 within
/// 45 degrees of vertical. Class 1 images carry a full-frame box. Samples
/// alternate between the classes and each forms its own group.
pub fn texture_classes(n_per_class: usize, image_size: usize, seed: u64) -> Result<Vec<Sample>> {
    if n_per_class == 0 || image_size < 16 {
        return Err(Error::Config(format!(
            "texture task needs n_per_class >= 1 and image_size >= 16, got {n_per_class} and {image_size}"
        )));
    }
    let s = image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(2 * n_per_class);
    let spread = std::f64::consts::FRAC_PI_4;
    for i in 0..2 * n_per_class {
        let label = i % 2;
        let base = if label == CLEAN {
            0.0
        } else {
            std::f64::consts::FRAC_PI_2
        };
        let theta = base + rng.random_range(-spread..spread);
        let period = rng.random_range(3.0..8.0);
        let amp = rng.random_range(0.04..0.12);
        let offset = rng.random_range(0.0..std::f64::consts::TAU);
        let (ct, st) = (theta.cos(), theta.sin());
        let noise = Tensor::from_fn(&[s, s], |_| rng.sample::<f64, _>(StandardNormal));
        let tex = normalized(gaussian_smooth(&noise, 1.5)?);
        let pixels: Vec<f64> = (0..s * s)
            .map(|k| {
                let (x, y) = ((k % s) as f64, (k / s) as f64);
                // stripes vary across the direction normal to their orientation
                let phase = (-x * st + y * ct) * std::f64::consts::TAU / period + offset;
                let v = 0.45 + amp * phase.sin() + 0.08 * tex.data()[k];
                quantize(v) as f64 / 255.0
            })
            .collect();
        samples.push(Sample {
            id: format!("t{i:05}"),
            image: Tensor::new(vec![1, s, s], pixels)?,
            label,
            boxes: if label == DEFECT {
                vec![BoundingBox::new(0, 0, s, s)]
            } else {
                vec![]
            },
            group: format!("t{i:05}"),
        });
    }
    Ok(samples)
}
