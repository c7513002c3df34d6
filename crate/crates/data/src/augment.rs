//! Geometric augmentation: small rotations, shifts and flips.

use capsnet_core::SeededRng;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::resize::sample_zero_fill;
use crate::set::{Image, LabeledImageSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipSet {
    None,
    Horizontal,
    HorizontalVertical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flip {
    Identity,
    Horizontal,
    Vertical,
}

impl FlipSet {
    /// Choices drawn uniformly, identity included.
    pub fn choices(self) -> &'static [Flip] {
        match self {
            FlipSet::None => &[Flip::Identity],
            FlipSet::Horizontal => &[Flip::Identity, Flip::Horizontal],
            FlipSet::HorizontalVertical => &[Flip::Identity, Flip::Horizontal, Flip::Vertical],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Rotation angle is uniform in `[-max, max]` degrees.
    pub max_rotation_deg: f64,
    /// Per-axis shift is uniform in `[-max, max]` pixels at the working
    /// resolution; 0 disables translation.
    pub max_translation: f64,
    pub flips: FlipSet,
}

impl AugmentSpec {
    pub const MAX_ROTATION_DEG: f64 = 10.0;

    pub fn mnist() -> Self {
        Self {
            max_rotation_deg: Self::MAX_ROTATION_DEG,
            max_translation: 0.0,
            flips: FlipSet::None,
        }
    }

    pub fn fashion() -> Self {
        Self {
            flips: FlipSet::Horizontal,
            ..Self::mnist()
        }
    }

    /// Histology/fundus profile: shifts of `source_shift` pixels at patch
    /// resolution, rescaled to 28 pixels.
    pub fn medical(patch_size: usize, source_shift: f64) -> Self {
        Self {
            max_rotation_deg: Self::MAX_ROTATION_DEG,
            max_translation: scaled_translation(source_shift, patch_size, 28) as f64,
            flips: FlipSet::HorizontalVertical,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=Self::MAX_ROTATION_DEG).contains(&self.max_rotation_deg) {
            return Err(DataError::contract(
                "augment",
                format!("rotation range {} outside [0, 10] degrees", self.max_rotation_deg),
            ));
        }
        if !(self.max_translation >= 0.0) {
            return Err(DataError::contract("augment", "translation range must be non-negative"));
        }
        Ok(())
    }
}

/// `round(shift / patch_size * out_size)`: a shift at source resolution
/// expressed at the output resolution.
pub fn scaled_translation(shift: f64, patch_size: usize, out_size: usize) -> usize {
    (shift / patch_size as f64 * out_size as f64).round() as usize
}

/// Number of images to append for a budget given as a fraction of the
/// training-set size.
pub fn budget_for_fraction(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

/// One concrete draw of the augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub angle_deg: f64,
    pub shift_y: f64,
    pub shift_x: f64,
    pub flip: Flip,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        angle_deg: 0.0,
        shift_y: 0.0,
        shift_x: 0.0,
        flip: Flip::Identity,
    };

    pub fn draw(spec: &AugmentSpec, rng: &mut SeededRng) -> Self {
        let angle_deg = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg);
        let (shift_y, shift_x) = if spec.max_translation > 0.0 {
            let t = spec.max_translation;
            (rng.uniform(-t, t), rng.uniform(-t, t))
        } else {
            (0.0, 0.0)
        };
        let flips = spec.flips.choices();
        let flip = flips[rng.below(flips.len())];
        Self {
            angle_deg,
            shift_y,
            shift_x,
            flip,
        }
    }

    /// Rotates about the centre, shifts (bilinear, zero fill), then flips.
    pub fn apply(&self, image: &Image) -> Image {
        let (h, w) = (image.height, image.width);
        let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let mut moved = Image::filled(h, w, 0.0);
        for r in 0..h {
            let dy = r as f64 - self.shift_y - cy;
            for c in 0..w {
                let dx = c as f64 - self.shift_x - cx;
                // Inverse rotation of the destination offset.
                let sy = cos * dy - sin * dx + cy;
                let sx = sin * dy + cos * dx + cx;
                moved.set(r, c, sample_zero_fill(image, sy, sx).clamp(0.0, 1.0));
            }
        }
        flip(&moved, self.flip)
    }
}

pub fn flip(image: &Image, f: Flip) -> Image {
    let (h, w) = (image.height, image.width);
    let mut out = image.clone();
    for r in 0..h {
        for c in 0..w {
            let v = match f {
                Flip::Identity => continue,
                Flip::Horizontal => image.at(r, w - 1 - c),
                Flip::Vertical => image.at(h - 1 - r, c),
            };
            out.set(r, c, v);
        }
    }
    out
}

/// Appends `budget` augmented copies of uniformly chosen source images.
/// Originals are untouched and labels are copied.
pub fn augment(set: &LabeledImageSet, spec: &AugmentSpec, budget: usize, rng: &mut SeededRng) -> Result<LabeledImageSet> {
    spec.validate()?;
    if set.is_empty() {
        return Err(DataError::contract("augment", "empty source set"));
    }
    let n = set.len();
    let mut out = set.clone();
    out.pixels.reserve(budget * set.image_len());
    for _ in 0..budget {
        let i = rng.below(n);
        let t = Transform::draw(spec, rng);
        let img = t.apply(&set.image_owned(i));
        out.push(&img.pixels, set.labels[i]);
    }
    Ok(out)
}
