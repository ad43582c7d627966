//! Domain types shared by every stage of the pipeline.
//!
//! All pixel data is stored row-major; multi-plane data is plane-major
//! (class, then row, then column).

use crate::error::{Error, Result};

/// Label code for pixels excluded from training and evaluation.
pub const IGNORE_LABEL: u8 = 255;

/// Largest class count whose codes `1..=C` stay clear of [`IGNORE_LABEL`].
pub const MAX_CLASSES: usize = 254;

fn check_class_count(class_count: usize) -> Result<()> {
    if class_count == 0 || class_count > MAX_CLASSES {
        return Err(Error::InvalidClassCount(class_count));
    }
    Ok(())
}

fn check_extent(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::dims(format!("empty extent {height}x{width}")));
    }
    Ok(())
}

fn check_unit_interval(values: &[f32]) -> Result<()> {
    for (index, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::ValueOutOfRange {
                index,
                value: v as f64,
            });
        }
    }
    Ok(())
}

/// Per-class activation planes with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStack {
    class_count: usize,
    height: usize,
    width: usize,
    planes: Vec<f32>,
}

impl ActivationStack {
    pub fn new(class_count: usize, height: usize, width: usize, planes: Vec<f32>) -> Result<Self> {
        check_class_count(class_count)?;
        check_extent(height, width)?;
        let expected = class_count * height * width;
        if planes.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: planes.len(),
            });
        }
        check_unit_interval(&planes)?;
        Ok(Self {
            class_count,
            height,
            width,
            planes,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn planes(&self) -> &[f32] {
        &self.planes
    }

    /// The `H*W` plane of class index `class` (0-based).
    pub fn plane(&self, class: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.planes[class * n..(class + 1) * n]
    }

    pub fn into_planes(self) -> Vec<f32> {
        self.planes
    }
}

/// Class-agnostic foreground map, either soft or binarized.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    binarized: bool,
}

impl SaliencyMap {
    /// A soft map with values in `[0, 1]`.
    pub fn soft(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        Self::build(height, width, values, false)
    }

    /// A binarized map; every value must be exactly `0.0` or `1.0`.
    pub fn binary(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        Self::build(height, width, values, true)
    }

    fn build(height: usize, width: usize, values: Vec<f32>, binarized: bool) -> Result<Self> {
        check_extent(height, width)?;
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        check_unit_interval(&values)?;
        if binarized {
            if let Some(index) = values.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::ValueOutOfRange {
                    index,
                    value: values[index] as f64,
                });
            }
        }
        Ok(Self {
            height,
            width,
            values,
            binarized,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_binarized(&self) -> bool {
        self.binarized
    }
}

/// Discrete per-pixel labels: 0 is background, `1..=C` are classes and
/// [`IGNORE_LABEL`] marks ignored pixels. Code `k >= 1` denotes class
/// index `k - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    class_count: usize,
    values: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, class_count: usize, values: Vec<u8>) -> Result<Self> {
        check_class_count(class_count)?;
        check_extent(height, width)?;
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        if let Some(index) = values
            .iter()
            .position(|&v| v != IGNORE_LABEL && v as usize > class_count)
        {
            return Err(Error::InvalidLabelValue {
                index,
                value: values[index],
                class_count,
            });
        }
        Ok(Self {
            height,
            width,
            class_count,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }
}

/// Image-level class presence flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageLabelVector {
    flags: Vec<bool>,
}

impl ImageLabelVector {
    pub fn new(flags: Vec<bool>) -> Self {
        Self { flags }
    }

    /// Flags for `class_count` classes with the listed class indices set.
    pub fn from_indices(class_count: usize, present: &[usize]) -> Result<Self> {
        let mut flags = vec![false; class_count];
        for &c in present {
            if c >= class_count {
                return Err(Error::LabelOutOfRange {
                    label: c as i64,
                    class_count,
                });
            }
            flags[c] = true;
        }
        Ok(Self { flags })
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn is_present(&self, class: usize) -> bool {
        self.flags[class]
    }
}

/// Pre-sigmoid classifier scores, one per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `(C+1) x (C+1)` pixel counts; rows are ground truth, columns are
/// predictions, index 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    class_count: usize,
    counts: Vec<u64>,
    ignored_pixels: u64,
}

impl ConfusionMatrix {
    pub fn new(class_count: usize) -> Result<Self> {
        check_class_count(class_count)?;
        let side = class_count + 1;
        Ok(Self {
            class_count,
            counts: vec![0; side * side],
            ignored_pixels: 0,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Number of rows (and columns): `C + 1`.
    pub fn side(&self) -> usize {
        self.class_count + 1
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.side() + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub(crate) fn counts_mut(&mut self) -> &mut [u64] {
        &mut self.counts
    }

    pub fn ignored_pixels(&self) -> u64 {
        self.ignored_pixels
    }

    pub(crate) fn add_ignored(&mut self, n: u64) {
        self.ignored_pixels += n;
    }

    pub fn counted_pixels(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn total_pixels(&self) -> u64 {
        self.counted_pixels() + self.ignored_pixels
    }

    /// Element-wise sum of two matrices over the same class set.
    pub fn merge(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    pub fn merge_from(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.class_count != other.class_count {
            return Err(Error::ClassCountMismatch {
                expected: self.class_count,
                actual: other.class_count,
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored_pixels += other.ignored_pixels;
        Ok(())
    }
}

/// Checks that an activation stack, a saliency map and an image label
/// vector describe the same image.
pub fn validate_pair(a: &ActivationStack, s: &SaliencyMap, y: &ImageLabelVector) -> Result<()> {
    if a.height() != s.height() || a.width() != s.width() {
        return Err(Error::dims(format!(
            "activations are {}x{}, saliency is {}x{}",
            a.height(),
            a.width(),
            s.height(),
            s.width()
        )));
    }
    if a.class_count() != y.len() {
        return Err(Error::dims(format!(
            "activations have {} classes, image labels have {}",
            a.class_count(),
            y.len()
        )));
    }
    check_unit_interval(a.planes())?;
    check_unit_interval(s.values())?;
    Ok(())
}
