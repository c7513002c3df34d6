//! Image files: binary PGM (P5) for single-channel images and PNG for RGB
//! sources and grayscale outputs.

use std::fs;
use std::path::Path;

use crate::error::{DataError, Result};
use crate::set::Image;

/// RGB image with channels interleaved, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn at(&self, row: usize, col: usize) -> [f32; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn channel(&self, c: usize) -> Image {
        Image {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|p| p[c]).collect(),
        }
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.pixels.iter().map(|&v| to_byte(v)));
    out
}

pub fn write_pgm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(image)).map_err(|e| DataError::io(path, e))
}

/// Parses a binary PGM with 8-bit samples; `#` comments are allowed in the
/// header.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |detail: &str| DataError::Format {
        path: path.to_owned(),
        detail: detail.to_string(),
    };
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    let data = &bytes[(i + 1).min(bytes.len())..];
    if data.len() < width * height {
        return Err(DataError::Truncated {
            path: path.to_owned(),
            needed: width * height,
            actual: data.len(),
        });
    }
    let pixels = data[..width * height].iter().map(|&b| b as f32 / maxval as f32).collect();
    Image::new(height, width, pixels)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_pgm(&bytes, path)
}

fn decode_png(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| DataError::Format {
        path: path.to_owned(),
        detail: e.to_string(),
    })
}

pub fn read_png_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let img = decode_png(path.as_ref())?.to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img
        .pixels()
        .map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
        .collect();
    Ok(RgbImage {
        height: h as usize,
        width: w as usize,
        pixels,
    })
}

pub fn read_png_gray(path: impl AsRef<Path>) -> Result<Image> {
    let img = decode_png(path.as_ref())?.to_luma8();
    let (w, h) = img.dimensions();
    Image::new(h as usize, w as usize, img.pixels().map(|p| p[0] as f32 / 255.0).collect())
}

pub fn write_png_gray(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = image.pixels.iter().map(|&v| to_byte(v)).collect();
    let buf = image::GrayImage::from_raw(image.width as u32, image.height as u32, bytes).expect("sizes agree");
    buf.save(path).map_err(|e| DataError::Format {
        path: path.to_owned(),
        detail: e.to_string(),
    })
}

pub fn write_png_rgb(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = image.pixels.iter().flat_map(|p| p.map(to_byte)).collect();
    let buf = image::RgbImage::from_raw(image.width as u32, image.height as u32, bytes).expect("sizes agree");
    buf.save(path).map_err(|e| DataError::Format {
        path: path.to_owned(),
        detail: e.to_string(),
    })
}

/// Writes a PNG when the extension says so, PGM otherwise.
pub fn write_gray(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        write_png_gray(image, path)
    } else {
        write_pgm(image, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_with_comment() {
        let img = Image::new(2, 3, vec![0.0, 1.0, 0.2, 0.4, 0.6, 0.8]).unwrap();
        let bytes = encode_pgm(&img);
        let mut commented = b"P5\n# made by hand\n".to_vec();
        commented.extend_from_slice(&bytes[3..]);
        for b in [bytes, commented] {
            let back = decode_pgm(&b, Path::new("x.pgm")).unwrap();
            assert_eq!((back.height, back.width), (2, 3));
            for (a, b) in back.pixels.iter().zip(&img.pixels) {
                assert!((a - b).abs() <= 0.5 / 255.0);
            }
        }
    }

    #[test]
    fn bad_pgm_rejected() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0", Path::new("x")).is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00", Path::new("x")).is_err());
        assert!(decode_pgm(b"P5\n4", Path::new("x")).is_err());
    }
}
