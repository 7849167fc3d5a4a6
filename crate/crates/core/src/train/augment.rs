use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::synthdata::{BoundingBox, Sample};
use crate::tensor::Tensor;

/// Largest translation, in pixels, applied by the affine augmentation.
pub const MAX_SHIFT: isize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentFlags {
    pub hflip: bool,
    pub intensity_jitter: bool,
    pub affine: bool,
}

impl Default for AugmentFlags {
    fn default() -> Self {
        AugmentFlags {
            hflip: true,
            intensity_jitter: true,
            affine: true,
        }
    }
}

impl AugmentFlags {
    pub fn none() -> Self {
        AugmentFlags {
            hflip: false,
            intensity_jitter: false,
            affine: false,
        }
    }
}

/// One concrete draw of the augmentation: mirror, then translate, then
/// `v·gain + offset` clamped to `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub flip: bool,
    pub dx: isize,
    pub dy: isize,
    pub gain: f64,
    pub offset: f64,
}

impl Augmentation {
    pub fn identity() -> Self {
        Augmentation {
            flip: false,
            dx: 0,
            dy: 0,
            gain: 1.0,
            offset: 0.0,
        }
    }

    /// Draws a transform; translations are limited so every box stays inside the image.
    pub fn draw(
        flags: AugmentFlags,
        boxes: &[BoundingBox],
        (h, w): (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let mut a = Augmentation::identity();
        if flags.hflip {
            a.flip = rng.random_bool(0.5);
        }
        if flags.affine {
            let flipped = a.flip_boxes(boxes, w);
            let lo_x = flipped
                .iter()
                .map(|b| -(b.x0 as isize))
                .fold(-MAX_SHIFT, isize::max);
            let hi_x = flipped
                .iter()
                .map(|b| (w - b.x1) as isize)
                .fold(MAX_SHIFT, isize::min);
            let lo_y = flipped
                .iter()
                .map(|b| -(b.y0 as isize))
                .fold(-MAX_SHIFT, isize::max);
            let hi_y = flipped
                .iter()
                .map(|b| (h - b.y1) as isize)
                .fold(MAX_SHIFT, isize::min);
            a.dx = rng.random_range(lo_x as i64..=hi_x as i64) as isize;
            a.dy = rng.random_range(lo_y as i64..=hi_y as i64) as isize;
        }
        if flags.intensity_jitter {
            a.gain = rng.random_range(0.8..1.2);
            a.offset = rng.random_range(-0.1..0.1);
        }
        a
    }

    fn flip_boxes(&self, boxes: &[BoundingBox], w: usize) -> Vec<BoundingBox> {
        boxes
            .iter()
            .map(|b| {
                if self.flip {
                    BoundingBox::new(w - b.x1, b.y0, w - b.x0, b.y1)
                } else {
                    *b
                }
            })
            .collect()
    }

    pub fn apply_boxes(&self, boxes: &[BoundingBox], w: usize) -> Vec<BoundingBox> {
        self.flip_boxes(boxes, w)
            .into_iter()
            .map(|b| {
                BoundingBox::new(
                    (b.x0 as isize + self.dx) as usize,
                    (b.y0 as isize + self.dy) as usize,
                    (b.x1 as isize + self.dx) as usize,
                    (b.y1 as isize + self.dy) as usize,
                )
            })
            .collect()
    }

    /// Applies the transform to a `C×H×W` image; uncovered pixels replicate the nearest edge.
    pub fn apply_image(&self, image: &Tensor) -> Tensor {
        let (c, h, w) = image.chw().expect("image tensor");
        let src = image.data();
        let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        Tensor::from_fn(image.shape(), |i| {
            let ch = i / (h * w);
            let y = (i / w) % h;
            let x = i % w;
            let sy = clampi(y as isize - self.dy, h);
            let mut sx = clampi(x as isize - self.dx, w);
            if self.flip {
                sx = w - 1 - sx;
            }
            debug_assert!(ch < c);
            (src[(ch * h + sy) * w + sx] * self.gain + self.offset).clamp(0.0, 1.0)
        })
    }
}

/// Randomly augments a training sample, keeping label and box count.
pub fn augment(sample: &Sample, flags: AugmentFlags, rng: &mut impl Rng) -> Sample {
    let (_, h, w) = sample.image.chw().expect("image tensor");
    let a = Augmentation::draw(flags, &sample.boxes, (h, w), rng);
    Sample {
        image: a.apply_image(&sample.image),
        boxes: a.apply_boxes(&sample.boxes, w),
        ..sample.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Sample {
            id: "x".into(),
            image: Tensor::from_fn(&[1, 12, 10], |_| rng.random_range(0.0..1.0)),
            label: 1,
            boxes: vec![BoundingBox::new(1, 2, 4, 6), BoundingBox::new(6, 7, 9, 11)],
            group: "g".into(),
        }
    }

    #[test]
    fn flags_off_is_identity() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(augment(&s, AugmentFlags::none(), &mut rng), s);
    }

    #[test]
    fn hflip_is_involution() {
        let s = sample();
        let a = Augmentation {
            flip: true,
            ..Augmentation::identity()
        };
        assert_eq!(a.apply_image(&a.apply_image(&s.image)), s.image);
        assert_eq!(a.apply_boxes(&a.apply_boxes(&s.boxes, 10), 10), s.boxes);
    }

    #[test]
    fn hflip_box_arithmetic() {
        let a = Augmentation {
            flip: true,
            ..Augmentation::identity()
        };
        assert_eq!(
            a.apply_boxes(&[BoundingBox::new(1, 2, 4, 6)], 10),
            vec![BoundingBox::new(6, 2, 9, 6)]
        );
        // the pixel at x=1 moves to x=8
        let s = sample();
        let f = a.apply_image(&s.image);
        assert_eq!(f.at3(0, 3, 8), s.image.at3(0, 3, 1));
    }

    #[test]
    fn translation_moves_pixels_and_boxes_together() {
        let s = sample();
        let a = Augmentation {
            dx: 1,
            dy: -2,
            ..Augmentation::identity()
        };
        let img = a.apply_image(&s.image);
        assert_eq!(img.at3(0, 3, 5), s.image.at3(0, 5, 4));
        assert_eq!(a.apply_boxes(&s.boxes, 10)[0], BoundingBox::new(2, 0, 5, 4));
    }

    #[test]
    fn preserves_label_count_and_bounds() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = augment(&s, AugmentFlags::default(), &mut rng);
            assert_eq!(a.label, s.label);
            assert_eq!(a.boxes.len(), s.boxes.len());
            for b in &a.boxes {
                assert!(b.in_bounds(10, 12));
            }
            assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
