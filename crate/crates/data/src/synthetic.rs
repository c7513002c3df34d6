//! Small learnable image sets for tests and smoke runs: each class is a
//! bar at its own position over light noise.

use std::path::Path;

use capsnet_core::SeededRng;

use crate::error::Result;
use crate::idx::{standard_paths, write_idx};
use crate::set::{LabeledImageSet, Split};

pub fn bars(num_classes: usize, per_class: usize, side: usize, split: Split, rng: &mut SeededRng) -> LabeledImageSet {
    let mut pixels = Vec::with_capacity(num_classes * per_class * side * side);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for i in 0..num_classes * per_class {
        let k = i % num_classes;
        // Rows for even slots, columns for odd ones, spread over the image.
        let pos = 2 + (k / 2) * (side - 4) / num_classes.div_ceil(2).max(1);
        for r in 0..side {
            for c in 0..side {
                let on = if k % 2 == 0 { r.abs_diff(pos) <= 1 } else { c.abs_diff(pos) <= 1 };
                let base = if on { 0.8 } else { 0.0 };
                pixels.push((base + 0.2 * rng.uniform01()) as f32);
            }
        }
        labels.push(k);
    }
    LabeledImageSet::numbered(side, side, pixels, labels, num_classes, split).expect("valid by construction")
}

/// Writes train and test IDX files for a bars set under `dir`.
pub fn write_bars_dataset(dir: impl AsRef<Path>, num_classes: usize, train_per_class: usize, test_per_class: usize, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| crate::DataError::io(dir, e))?;
    let mut rng = SeededRng::new(seed);
    for (split, n) in [(Split::Train, train_per_class), (Split::Test, test_per_class)] {
        let set = bars(num_classes, n, 28, split, &mut rng);
        let (img, lbl) = standard_paths(dir, split);
        write_idx(&set, img, lbl)?;
    }
    Ok(())
}
