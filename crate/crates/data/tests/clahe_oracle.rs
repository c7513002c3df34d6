//! Frozen reference outputs produced by OpenCV 5.0 with
//! `createCLAHE(clipLimit=2.0, tileGridSize=(8, 8))`.

use capsnet_data::clahe::{clahe_u8, ClaheParams};
use capsnet_data::pnm::read_pgm;

fn fixture(name: &str) -> Vec<u8> {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    read_pgm(path)
        .unwrap()
        .pixels
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect()
}

fn compare(src: &[u8], h: usize, w: usize, expected: &[u8]) {
    let out = clahe_u8(src, h, w, &ClaheParams::default()).unwrap();
    let worst = out
        .iter()
        .zip(expected)
        .map(|(&a, &b)| (a as i32 - b as i32).abs())
        .max()
        .unwrap();
    assert!(worst <= 1, "max deviation {worst} grey levels");
}

#[test]
fn two_gradient_matches_opencv() {
    let src: Vec<u8> = (0..64 * 64)
        .map(|i| {
            let (y, x) = (i / 64, i % 64);
            (if x < 32 { x * 8 } else { y * 4 }) as u8
        })
        .collect();
    compare(&src, 64, 64, &fixture("clahe_two_gradient_cv2.pgm"));
}

#[test]
fn non_divisible_size_matches_opencv() {
    let (h, w) = (45, 70);
    let src: Vec<u8> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            if (x / 10 + y / 9) % 2 == 0 {
                ((x * 3 + y * 5 + (x * y) % 7) % 256) as u8
            } else {
                ((40 + x + y) % 256) as u8
            }
        })
        .collect();
    compare(&src, h, w, &fixture("clahe_odd_cv2.pgm"));
}
