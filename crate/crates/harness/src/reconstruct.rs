use std::path::Path;

use capsnet_core::models::Model;
use capsnet_data::pnm::write_gray;
use capsnet_data::{Image, LabeledImageSet};

use crate::error::{HarnessError, Result};

/// Two-row mosaic: the first `n` images of `set` on top, the capsule
/// network's reconstructions (decoder masked by the longest capsule)
/// underneath.
pub fn reconstruction_grid(model: &Model<f32>, set: &LabeledImageSet, n: usize) -> Result<Image> {
    if !model.architecture().is_capsule() {
        return Err(HarnessError::contract(
            "reconstruct",
            format!("{} has no decoder; reconstructions need a capsnet checkpoint", model.architecture()),
        ));
    }
    if n == 0 || n > set.len() {
        return Err(HarnessError::contract(
            "reconstruct",
            format!("asked for {n} samples from a set of {}", set.len()),
        ));
    }
    let (h, w) = (set.height, set.width);
    let idx: Vec<usize> = (0..n).collect();
    let (_, recon) = model.predict_with_reconstruction(&set.batch_tensor(&idx))?;
    let recon = recon.expect("capsule networks reconstruct");
    let mut grid = Image::filled(2 * h, n * w, 0.0);
    for (t, &i) in idx.iter().enumerate() {
        let source = set.image(i);
        let rebuilt = &recon.data()[t * h * w..(t + 1) * h * w];
        for r in 0..h {
            for c in 0..w {
                grid.set(r, t * w + c, source[r * w + c]);
                grid.set(h + r, t * w + c, rebuilt[r * w + c]);
            }
        }
    }
    Ok(grid)
}

/// [`reconstruction_grid`] written as PGM, or PNG for a `.png` path.
pub fn dump_reconstructions(model: &Model<f32>, set: &LabeledImageSet, n: usize, path: impl AsRef<Path>) -> Result<Image> {
    let grid = reconstruction_grid(model, set, n)?;
    write_gray(&grid, path)?;
    Ok(grid)
}
