use crate::error::{DataError, Result};
use crate::set::Image;

/// Bilinear resampling with corner-aligned grids: output pixel `(r, c)`
/// samples the source at `(r (h-1)/(H-1), c (w-1)/(W-1))`, so corners map
/// to corners and same-size resizing is the identity.
pub fn resize_bilinear(image: &Image, height: usize, width: usize) -> Result<Image> {
    if image.height < 2 || image.width < 2 || height < 2 || width < 2 {
        return Err(DataError::contract(
            "resize_bilinear",
            format!(
                "{}x{} -> {height}x{width}: both sides must be at least 2",
                image.height, image.width
            ),
        ));
    }
    let sy = (image.height - 1) as f64 / (height - 1) as f64;
    let sx = (image.width - 1) as f64 / (width - 1) as f64;
    let mut out = Vec::with_capacity(height * width);
    for r in 0..height {
        let y = r as f64 * sy;
        for c in 0..width {
            let x = c as f64 * sx;
            out.push(sample_clamped(image, y, x));
        }
    }
    Image::new(height, width, out)
}

/// Interpolated value at a point inside the pixel grid.
fn sample_clamped(image: &Image, y: f64, x: f64) -> f32 {
    let y0 = (y.floor() as usize).min(image.height - 2);
    let x0 = (x.floor() as usize).min(image.width - 2);
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let p = |r, c| image.at(r, c) as f64;
    let top = p(y0, x0) * (1.0 - fx) + p(y0, x0 + 1) * fx;
    let bottom = p(y0 + 1, x0) * (1.0 - fx) + p(y0 + 1, x0 + 1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

/// Interpolated value anywhere; pixels outside the image read as zero.
pub fn sample_zero_fill(image: &Image, y: f64, x: f64) -> f32 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let p = |r: f64, c: f64| {
        if r < 0.0 || c < 0.0 || r >= image.height as f64 || c >= image.width as f64 {
            0.0
        } else {
            image.at(r as usize, c as usize) as f64
        }
    };
    // Skip zero-weight neighbours so integer positions read exactly one pixel.
    let mut v = (1.0 - fy) * (1.0 - fx) * p(y0, x0);
    if fx > 0.0 {
        v += (1.0 - fy) * fx * p(y0, x0 + 1.0);
    }
    if fy > 0.0 {
        v += fy * (1.0 - fx) * p(y0 + 1.0, x0);
        if fx > 0.0 {
            v += fy * fx * p(y0 + 1.0, x0 + 1.0);
        }
    }
    v as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let img = Image::filled(100, 100, 0.37);
        let out = resize_bilinear(&img, 28, 28).unwrap();
        assert!(out.pixels.iter().all(|&v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn same_size_is_identity() {
        let img = Image::new(28, 28, (0..784).map(|i| (i % 97) as f32 / 96.0).collect()).unwrap();
        assert_eq!(resize_bilinear(&img, 28, 28).unwrap(), img);
    }

    #[test]
    fn checkerboard_by_hand() {
        // 4x4 checkerboard, 1 where r + c is even, resized to 3x3: samples at
        // source coordinates 0, 1.5, 3 on each axis.
        let px = (0..16).map(|i| ((i / 4 + i % 4 + 1) % 2) as f32).collect();
        let img = Image::new(4, 4, px).unwrap();
        let out = resize_bilinear(&img, 3, 3).unwrap();
        // (0,0)=1, (0,3)=0, (3,0)=0, (3,3)=1; at (0,1.5) the row 1,0,1,0
        // gives (0+1)/2; every interior sample averages to 0.5.
        let want = [1.0, 0.5, 0.0, 0.5, 0.5, 0.5, 0.0, 0.5, 1.0];
        for (g, w) in out.pixels.iter().zip(want) {
            assert!((g - w).abs() < 1e-7, "{:?}", out.pixels);
        }
    }

    #[test]
    fn degenerate_sizes_rejected() {
        assert!(resize_bilinear(&Image::filled(1, 5, 0.0), 28, 28).is_err());
        assert!(resize_bilinear(&Image::filled(5, 5, 0.0), 1, 28).is_err());
    }

    #[test]
    fn zero_fill_outside() {
        let img = Image::filled(2, 2, 1.0);
        assert_eq!(sample_zero_fill(&img, 0.0, 0.0), 1.0);
        assert_eq!(sample_zero_fill(&img, -1.0, 0.0), 0.0);
        assert!((sample_zero_fill(&img, 1.5, 1.0) - 0.5).abs() < 1e-7);
    }
}
