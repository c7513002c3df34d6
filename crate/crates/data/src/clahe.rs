//! Contrast-limited adaptive histogram equalisation, bit-compatible with
//! OpenCV's 8-bit implementation (tile LUTs with clipped, redistributed
//! histograms, bilinearly blended between tile centres).

use crate::error::{DataError, Result};
use crate::pnm::RgbImage;
use crate::set::Image;

const BINS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClaheParams {
    /// Histogram clip as a multiple of the uniform bin height; 0 disables clipping.
    pub clip_limit: f64,
    pub tiles_x: usize,
    pub tiles_y: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            clip_limit: 2.0,
            tiles_x: 8,
            tiles_y: 8,
        }
    }
}

fn reflect101(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        2 * (n - 1) - i
    }
}

/// CLAHE on a row-major 8-bit plane.
pub fn clahe_u8(src: &[u8], height: usize, width: usize, params: &ClaheParams) -> Result<Vec<u8>> {
    let (tx, ty) = (params.tiles_x, params.tiles_y);
    if tx == 0 || ty == 0 || !(params.clip_limit >= 0.0) {
        return Err(DataError::contract("clahe", "tile grid must be non-empty and clip non-negative"));
    }
    if height < ty || width < tx {
        return Err(DataError::contract(
            "clahe",
            format!("{height}x{width} image is smaller than one {ty}x{tx} tile grid"),
        ));
    }
    if src.len() != height * width {
        return Err(DataError::contract("clahe", "pixel count does not match dimensions"));
    }

    // Histograms come from a reflect-101 padded copy when the grid does not
    // divide the image; like OpenCV, both axes are padded in that case.
    let divisible = height % ty == 0 && width % tx == 0;
    let (eh, ew) = if divisible {
        (height, width)
    } else {
        (height + ty - height % ty, width + tx - width % tx)
    };
    let (tile_h, tile_w) = (eh / ty, ew / tx);
    let tile_area = tile_h * tile_w;
    let lut_scale = (BINS - 1) as f32 / tile_area as f32;
    let clip = if params.clip_limit > 0.0 {
        ((params.clip_limit * tile_area as f64 / BINS as f64) as usize).max(1)
    } else {
        0
    };

    let mut luts = vec![[0u8; BINS]; tx * ty];
    for (t, lut) in luts.iter_mut().enumerate() {
        let (r0, c0) = ((t / tx) * tile_h, (t % tx) * tile_w);
        let mut hist = [0usize; BINS];
        for r in r0..r0 + tile_h {
            let row = reflect101(r, height) * width;
            for c in c0..c0 + tile_w {
                hist[src[row + reflect101(c, width)] as usize] += 1;
            }
        }
        if clip > 0 {
            let mut clipped = 0;
            for h in hist.iter_mut() {
                if *h > clip {
                    clipped += *h - clip;
                    *h = clip;
                }
            }
            let batch = clipped / BINS;
            let mut residual = clipped - batch * BINS;
            hist.iter_mut().for_each(|h| *h += batch);
            if residual > 0 {
                let step = (BINS / residual).max(1);
                let mut i = 0;
                while i < BINS && residual > 0 {
                    hist[i] += 1;
                    i += step;
                    residual -= 1;
                }
            }
        }
        let mut sum = 0;
        for (l, h) in lut.iter_mut().zip(hist) {
            sum += h;
            *l = saturate(sum as f32 * lut_scale);
        }
    }

    // Per-column tile neighbours and weights.
    let axis = |n: usize, tile: usize, tiles: usize| -> Vec<(usize, usize, f32)> {
        let inv = 1.0f32 / tile as f32;
        (0..n)
            .map(|i| {
                let f = i as f32 * inv - 0.5;
                let lo = f.floor();
                let a = f - lo;
                let lo = lo as i64;
                let t1 = lo.max(0) as usize;
                let t2 = ((lo + 1) as usize).min(tiles - 1);
                (t1, t2, a)
            })
            .collect()
    };
    let cols = axis(width, tile_w, tx);
    let rows = axis(height, tile_h, ty);
    let mut out = vec![0u8; height * width];
    for (r, &(ty1, ty2, ya)) in rows.iter().enumerate() {
        let ya1 = 1.0 - ya;
        for (c, &(tx1, tx2, xa)) in cols.iter().enumerate() {
            let xa1 = 1.0 - xa;
            let v = src[r * width + c] as usize;
            let l = |ty: usize, tx_: usize| luts[ty * tx + tx_][v] as f32;
            let res = (l(ty1, tx1) * xa1 + l(ty1, tx2) * xa) * ya1 + (l(ty2, tx1) * xa1 + l(ty2, tx2) * xa) * ya;
            out[r * width + c] = saturate(res);
        }
    }
    Ok(out)
}

fn saturate(v: f32) -> u8 {
    v.round_ties_even().clamp(0.0, 255.0) as u8
}

pub fn to_u8(v: f32) -> u8 {
    saturate(v * 255.0)
}

/// CLAHE on a [0, 1] image quantised to 8 bits.
pub fn clahe(image: &Image, params: &ClaheParams) -> Result<Image> {
    let src: Vec<u8> = image.pixels.iter().map(|&v| to_u8(v)).collect();
    let out = clahe_u8(&src, image.height, image.width, params)?;
    Image::new(image.height, image.width, out.into_iter().map(|v| v as f32 / 255.0).collect())
}

// sRGB (D65) <-> CIELAB.
const WHITE: [f64; 3] = [0.950456, 1.0, 1.088754];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let xyz = [
        0.412453 * r + 0.357580 * g + 0.180423 * b,
        0.212671 * r + 0.715160 * g + 0.072169 * b,
        0.019334 * r + 0.119193 * g + 0.950227 * b,
    ];
    let f = |t: f64| if t > EPSILON { t.cbrt() } else { (KAPPA * t + 16.0) / 116.0 };
    let [fx, fy, fz] = [f(xyz[0] / WHITE[0]), f(xyz[1] / WHITE[1]), f(xyz[2] / WHITE[2])];
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn lab_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let inv = |f: f64| {
        let t = f * f * f;
        if t > EPSILON {
            t
        } else {
            (116.0 * f - 16.0) / KAPPA
        }
    };
    let [x, y, z] = [inv(fx) * WHITE[0], inv(fy) * WHITE[1], inv(fz) * WHITE[2]];
    let lin = [
        3.240479 * x - 1.537150 * y - 0.498535 * z,
        -0.969256 * x + 1.875992 * y + 0.041556 * z,
        0.055648 * x - 0.204043 * y + 1.057311 * z,
    ];
    lin.map(|c| linear_to_srgb(c.clamp(0.0, 1.0)).clamp(0.0, 1.0))
}

/// Fundus preprocessing: CLAHE on the Lab lightness, back to RGB, green channel kept.
pub fn fundus_green(image: &RgbImage, params: &ClaheParams) -> Result<Image> {
    let labs: Vec<[f64; 3]> = image
        .pixels
        .iter()
        .map(|p| rgb_to_lab(p.map(|v| v as f64)))
        .collect();
    let lightness: Vec<u8> = labs.iter().map(|l| to_u8((l[0] / 100.0) as f32)).collect();
    let eq = clahe_u8(&lightness, image.height, image.width, params)?;
    let green = labs
        .iter()
        .zip(eq)
        .map(|(l, e)| lab_to_rgb([e as f64 * 100.0 / 255.0, l[1], l[2]])[1] as f32)
        .collect();
    Image::new(image.height, image.width, green)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_maps_through_its_lut() {
        // One grey level per tile: the CDF jumps to full at that level.
        let out = clahe_u8(&[100; 64 * 64], 64, 64, &ClaheParams::default()).unwrap();
        assert!(out.iter().all(|&v| v == out[0]));
    }

    #[test]
    fn too_small_rejected() {
        assert!(clahe_u8(&[0; 7 * 20], 7, 20, &ClaheParams::default()).is_err());
    }

    #[test]
    fn lab_round_trip() {
        for rgb in [[0.2, 0.5, 0.9], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.8, 0.1, 0.3]] {
            let back = lab_to_rgb(rgb_to_lab(rgb));
            for k in 0..3 {
                assert!((back[k] - rgb[k]).abs() < 1e-4, "{rgb:?} -> {back:?}");
            }
        }
        assert!((rgb_to_lab([1.0, 1.0, 1.0])[0] - 100.0).abs() < 1e-3);
    }
}
