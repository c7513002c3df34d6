//! Beer-Lambert colour deconvolution of H&E histology images.

use crate::error::{DataError, Result};
use crate::pnm::RgbImage;
use crate::set::Image;

/// Optical-density floor: intensities below one grey level are clamped so
/// black pixels stay finite.
pub const OD_FLOOR: f64 = 1.0 / 255.0;

/// Stain optical-density vectors (rows): hematoxylin, eosin and their cross
/// product as the residual channel, each normalised to unit length.
pub fn he_stain_matrix() -> [[f64; 3]; 3] {
    let h = normalize([0.65, 0.70, 0.29]);
    let e = normalize([0.07, 0.99, 0.11]);
    let r = normalize(cross(h, e));
    [h, e, r]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|x| x / n)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Inverse of a 3x3 matrix via the adjugate; `None` when singular.
pub fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |r: usize, k: usize| {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
        m[r1][k1] * m[r2][k2] - m[r1][k2] * m[r2][k1]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    if det.abs() < 1e-12 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = c(k, r) / det;
        }
    }
    Some(inv)
}

/// `-log10(max(p, floor))` per channel.
pub fn optical_density(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|p| -p.max(OD_FLOOR).log10())
}

/// Stain amounts `c` with `OD = c · M` for the stain matrix `M`.
pub fn stain_concentrations(rgb: [f64; 3], inverse: &[[f64; 3]; 3]) -> [f64; 3] {
    let od = optical_density(rgb);
    let mut c = [0.0; 3];
    for (k, ck) in c.iter_mut().enumerate() {
        *ck = (0..3).map(|j| od[j] * inverse[j][k]).sum();
    }
    c
}

/// Hematoxylin channel of an interleaved image with `channels` channels:
/// negative amounts clipped to 0, then divided by the image maximum.
pub fn color_deconvolution_raw(data: &[f32], height: usize, width: usize, channels: usize) -> Result<Image> {
    if channels != 3 {
        return Err(DataError::contract(
            "color_deconvolution",
            format!("expected 3 colour channels, got {channels}"),
        ));
    }
    if data.len() != height * width * 3 {
        return Err(DataError::contract("color_deconvolution", "pixel count does not match dimensions"));
    }
    let inverse = invert3(&he_stain_matrix()).expect("stain vectors are independent");
    let mut h: Vec<f64> = data
        .chunks_exact(3)
        .map(|p| stain_concentrations([p[0] as f64, p[1] as f64, p[2] as f64], &inverse)[0].max(0.0))
        .collect();
    let max = h.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        h.iter_mut().for_each(|v| *v /= max);
    }
    Image::new(height, width, h.into_iter().map(|v| v as f32).collect())
}

pub fn color_deconvolution(image: &RgbImage) -> Result<Image> {
    let flat: Vec<f32> = image.pixels.iter().flatten().copied().collect();
    color_deconvolution_raw(&flat, image.height, image.width, 3)
}
