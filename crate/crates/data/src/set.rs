use capsnet_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

/// Single-channel image, row-major, intensities nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(DataError::contract(
                "image",
                format!("{} pixels for a {height}x{width} image", pixels.len()),
            ));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.pixels[row * self.width + col] = v;
    }

    /// Rectangular window starting at `(top, left)`; must lie inside.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Image {
        assert!(top + height <= self.height && left + width <= self.width);
        let mut pixels = Vec::with_capacity(height * width);
        for r in top..top + height {
            let start = r * self.width + left;
            pixels.extend_from_slice(&self.pixels[start..start + width]);
        }
        Image { height, width, pixels }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Equally sized single-channel images with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    pub height: usize,
    pub width: usize,
    /// `len() * height * width` intensities, image-major.
    pub pixels: Vec<f32>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub split: Split,
    /// Non-fatal notes from the manipulations that produced the set.
    pub warnings: Vec<String>,
}

impl LabeledImageSet {
    pub fn new(
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        split: Split,
    ) -> Result<Self> {
        let set = Self {
            height,
            width,
            pixels,
            labels,
            class_names,
            split,
            warnings: Vec::new(),
        };
        set.validate()?;
        Ok(set)
    }

    /// Set with classes named `"0"`, `"1"`, ...
    pub fn numbered(
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let names = (0..num_classes).map(|k| k.to_string()).collect();
        Self::new(height, width, pixels, labels, names, split)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        let side = self.height * self.width;
        if self.pixels.len() != n * side {
            return Err(DataError::CountMismatch {
                images: if side == 0 { 0 } else { self.pixels.len() / side },
                labels: n,
            });
        }
        let k = self.class_names.len();
        if let Some((index, &label)) = self.labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(DataError::LabelOutOfRange { index, label, num_classes: k });
        }
        if let Some(v) = self.pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::contract("image set", format!("intensity {v} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let s = self.image_len();
        &self.pixels[i * s..(i + 1) * s]
    }

    pub fn image_owned(&self, i: usize) -> Image {
        Image {
            height: self.height,
            width: self.width,
            pixels: self.image(i).to_vec(),
        }
    }

    /// Items per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Indices of each class, in set order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            by[l].push(i);
        }
        by
    }

    /// New set holding the listed items in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let s = self.image_len();
        let mut pixels = Vec::with_capacity(indices.len() * s);
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        Self {
            height: self.height,
            width: self.width,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            split: self.split,
            warnings: self.warnings.clone(),
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn push(&mut self, image: &[f32], label: usize) {
        assert_eq!(image.len(), self.image_len());
        assert!(label < self.num_classes());
        self.pixels.extend_from_slice(image);
        self.labels.push(label);
    }

    /// Network input `[batch, 1, height, width]` for the listed items.
    pub fn batch_tensor(&self, indices: &[usize]) -> Tensor<f32> {
        let s = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * s);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::from_vec(&[indices.len(), 1, self.height, self.width], data).expect("sizes agree")
    }
}
