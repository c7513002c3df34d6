//! Labelled patches cut from annotated whole images: windows around each
//! annotated lesion (positives) and an equal number of windows far away from
//! every lesion (negatives), resized to the network input size.

use capsnet_core::SeededRng;

use crate::error::{DataError, Result};
use crate::resize::resize_bilinear;
use crate::set::{Image, LabeledImageSet, Split};

pub const NEGATIVE: usize = 0;
pub const POSITIVE: usize = 1;

/// Where the lesions are.
#[derive(Clone, Debug, PartialEq)]
pub enum Annotation {
    /// Lesion centres as `(row, col)`.
    Points(Vec<(usize, usize)>),
    /// Pixel mask, lesion where the value exceeds 0.5. Each 4-connected
    /// component yields one positive centred on one of its pixels.
    Mask(Image),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchSpec {
    /// Side of the square window cut from the source image.
    pub patch_size: usize,
    /// Side after resizing.
    pub output_size: usize,
    /// Rejection-sampling attempts per requested negative.
    pub attempts_per_negative: usize,
}

impl PatchSpec {
    pub fn new(patch_size: usize) -> Self {
        Self {
            patch_size,
            output_size: 28,
            attempts_per_negative: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub center: (usize, usize),
    pub label: usize,
    pub image: Image,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Extraction {
    pub patches: Vec<Patch>,
    /// Lesions whose window would cross the image border.
    pub skipped_border: usize,
    pub warnings: Vec<String>,
}

impl Extraction {
    pub fn count(&self, label: usize) -> usize {
        self.patches.iter().filter(|p| p.label == label).count()
    }
}

/// Top-left corner of the window centred on `(r, c)` if it fits entirely.
fn window(image: &Image, p: usize, (r, c): (usize, usize)) -> Option<(usize, usize)> {
    let (top, left) = (r.checked_sub(p / 2)?, c.checked_sub(p / 2)?);
    (top + p <= image.height && left + p <= image.width).then_some((top, left))
}

fn components(mask: &Image) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if seen[start] || mask.pixels[start] <= 0.5 {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            comp.push((r, c));
            let mut visit = |j: usize| {
                if !seen[j] && mask.pixels[j] > 0.5 {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn cut(image: &Image, spec: &PatchSpec, center: (usize, usize), label: usize) -> Result<Patch> {
    let (top, left) = window(image, spec.patch_size, center).expect("caller checked the window");
    let crop = image.crop(top, left, spec.patch_size, spec.patch_size);
    let mut resized = resize_bilinear(&crop, spec.output_size, spec.output_size)?;
    resized.pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(Patch {
        center,
        label,
        image: resized,
    })
}

pub fn extract_patches(
    image: &Image,
    annotation: &Annotation,
    spec: &PatchSpec,
    rng: &mut SeededRng,
) -> Result<Extraction> {
    let p = spec.patch_size;
    if p == 0 || spec.output_size == 0 {
        return Err(DataError::contract("extract_patches", "patch sizes must be positive"));
    }
    if image.height < p || image.width < p {
        return Err(DataError::contract(
            "extract_patches",
            format!("{}x{} image is smaller than a {p}px patch", image.height, image.width),
        ));
    }
    let mut out = Extraction::default();
    let mut centers = Vec::new();
    match annotation {
        Annotation::Points(points) => {
            for &pt in points {
                if pt.0 >= image.height || pt.1 >= image.width {
                    return Err(DataError::Extraction(format!(
                        "annotation {pt:?} outside the {}x{} image",
                        image.height, image.width
                    )));
                }
                match window(image, p, pt) {
                    Some(_) => centers.push(pt),
                    None => out.skipped_border += 1,
                }
            }
        }
        Annotation::Mask(mask) => {
            if (mask.height, mask.width) != (image.height, image.width) {
                return Err(DataError::contract("extract_patches", "mask and image sizes differ"));
            }
            for comp in components(mask) {
                let inside: Vec<_> = comp.into_iter().filter(|&pt| window(image, p, pt).is_some()).collect();
                if inside.is_empty() {
                    out.skipped_border += 1;
                } else {
                    centers.push(inside[rng.below(inside.len())]);
                }
            }
        }
    }
    if centers.is_empty() {
        return Err(DataError::Extraction(format!(
            "no positive window fits inside the image ({} annotations at the border)",
            out.skipped_border
        )));
    }
    if out.skipped_border > 0 {
        out.warnings.push(format!("{} annotations skipped at the image border", out.skipped_border));
    }
    for &c in &centers {
        out.patches.push(cut(image, spec, c, POSITIVE)?);
    }

    // Negatives: uniform window centres farther than one patch width from
    // every positive centre and off the lesion mask.
    let on_mask = |r: usize, c: usize| match annotation {
        Annotation::Mask(m) => m.at(r, c) > 0.5,
        Annotation::Points(_) => false,
    };
    let far = |r: usize, c: usize| {
        centers.iter().all(|&(pr, pc)| {
            let (dr, dc) = (r as f64 - pr as f64, c as f64 - pc as f64);
            (dr * dr + dc * dc).sqrt() > p as f64
        })
    };
    let (lo, r_span, c_span) = (p / 2, image.height - p + 1, image.width - p + 1);
    let wanted = centers.len();
    let mut found = 0;
    for _ in 0..wanted * spec.attempts_per_negative {
        if found == wanted {
            break;
        }
        let (r, c) = (lo + rng.below(r_span), lo + rng.below(c_span));
        if far(r, c) && !on_mask(r, c) {
            out.patches.push(cut(image, spec, (r, c), NEGATIVE)?);
            found += 1;
        }
    }
    if found == 0 {
        return Err(DataError::Extraction("no negative window is far enough from every lesion".into()));
    }
    if found < wanted {
        out.warnings.push(format!("only {found} of {wanted} negatives found"));
    }
    Ok(out)
}

/// Gathers patches into a two-class set (`negative`, `positive` named by the caller).
pub fn patches_to_set(patches: &[Patch], class_names: [&str; 2], split: Split) -> Result<LabeledImageSet> {
    let side = patches.first().map_or(0, |p| p.image.height);
    let mut pixels = Vec::with_capacity(patches.len() * side * side);
    for p in patches {
        if p.image.height != side || p.image.width != side {
            return Err(DataError::contract("patches_to_set", "patches differ in size"));
        }
        pixels.extend_from_slice(&p.image.pixels);
    }
    LabeledImageSet::new(
        side,
        side,
        pixels,
        patches.iter().map(|p| p.label).collect(),
        class_names.iter().map(|s| s.to_string()).collect(),
        split,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canvas() -> Image {
        let mut img = Image::filled(300, 300, 0.0);
        for r in 0..300 {
            for c in 0..300 {
                img.set(r, c, ((r + c) % 17) as f32 / 16.0);
            }
        }
        img
    }

    #[test]
    fn point_annotations() {
        let img = canvas();
        let ann = Annotation::Points(vec![(150, 150), (10, 10)]);
        let ex = extract_patches(&img, &ann, &PatchSpec::new(100), &mut SeededRng::new(0)).unwrap();
        assert_eq!(ex.count(POSITIVE), 1);
        assert_eq!(ex.count(NEGATIVE), 1);
        assert_eq!(ex.skipped_border, 1);
        for p in &ex.patches {
            assert_eq!((p.image.height, p.image.width), (28, 28));
            if p.label == NEGATIVE {
                let d = ((p.center.0 as f64 - 150.0).powi(2) + (p.center.1 as f64 - 150.0).powi(2)).sqrt();
                assert!(d > 100.0);
            }
        }
    }

    #[test]
    fn only_border_points_is_an_error() {
        let ann = Annotation::Points(vec![(5, 5), (299, 0)]);
        let err = extract_patches(&canvas(), &ann, &PatchSpec::new(100), &mut SeededRng::new(0)).unwrap_err();
        assert!(matches!(err, DataError::Extraction(_)));
    }

    #[test]
    fn mask_components() {
        let img = canvas();
        let mut mask = Image::filled(300, 300, 0.0);
        for r in 60..70 {
            for c in 60..70 {
                mask.set(r, c, 1.0);
            }
        }
        mask.set(250, 250, 1.0);
        let ex = extract_patches(&img, &Annotation::Mask(mask), &PatchSpec::new(100), &mut SeededRng::new(1)).unwrap();
        assert_eq!(ex.count(POSITIVE), 2);
        assert_eq!(ex.count(NEGATIVE), 2);
        let pos: Vec<_> = ex.patches.iter().filter(|p| p.label == POSITIVE).map(|p| p.center).collect();
        assert!((60..70).contains(&pos[0].0) && (60..70).contains(&pos[0].1));
        assert_eq!(pos[1], (250, 250));
    }

    #[test]
    fn deterministic_under_seed() {
        let ann = Annotation::Points(vec![(150, 150), (120, 90)]);
        let a = extract_patches(&canvas(), &ann, &PatchSpec::new(60), &mut SeededRng::new(5)).unwrap();
        let b = extract_patches(&canvas(), &ann, &PatchSpec::new(60), &mut SeededRng::new(5)).unwrap();
        assert_eq!(a, b);
        let set = patches_to_set(&a.patches, ["negative", "positive"], Split::Train).unwrap();
        assert_eq!(set.len(), 4);
    }
}
