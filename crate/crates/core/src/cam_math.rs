//! Classifier-side formulas: CAM normalization and multi-label BCE.

use crate::error::{Error, Result};
use crate::types::{ActivationStack, ImageLabelVector, LogitVector};

/// Raw class feature maps of the last convolutional layer, `C x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    class_count: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FeatureStack {
    pub fn new(class_count: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if class_count == 0 || height == 0 || width == 0 {
            return Err(Error::dims(format!(
                "empty feature stack {class_count}x{height}x{width}"
            )));
        }
        let expected = class_count * height * width;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            class_count,
            height,
            width,
            values,
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn planes(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.height * self.width)
    }
}

/// `relu(F_c) / max(relu(F_c))` per channel, in double precision.
///
/// Channels without any positive value become all-zero planes.
pub fn normalized_planes(f: &FeatureStack) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.values.len());
    for plane in f.planes() {
        let peak = plane.iter().fold(0.0_f64, |m, &v| m.max(v));
        if peak > 0.0 {
            out.extend(plane.iter().map(|&v| v.max(0.0) / peak));
        } else {
            out.extend(std::iter::repeat_n(0.0, plane.len()));
        }
    }
    out
}

/// Normalizes raw feature maps into an activation stack.
///
/// Every channel with a positive value has a maximum of exactly 1.0.
pub fn normalize_cam(f: &FeatureStack) -> Result<ActivationStack> {
    let planes = normalized_planes(f).into_iter().map(|v| v as f32).collect();
    ActivationStack::new(f.class_count, f.height, f.width, planes)
}

/// Per-channel spatial mean, mapping feature maps to logits.
pub fn global_average_pool(f: &FeatureStack) -> LogitVector {
    let n = (f.height * f.width) as f64;
    let values = f.planes().map(|p| p.iter().sum::<f64>() / n).collect();
    LogitVector::new(values).expect("mean of finite values is finite")
}

/// `-[y log σ(z) + (1-y) log(1-σ(z))]` for a single class, without
/// overflow for large `|z|`.
pub(crate) fn bce_term(z: f64, present: bool) -> f64 {
    let target = if present { 1.0 } else { 0.0 };
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

/// Mean multi-label binary cross-entropy over all classes.
pub fn bce_loss(z: &LogitVector, y: &ImageLabelVector) -> Result<f64> {
    if z.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            actual: z.len(),
        });
    }
    if z.is_empty() {
        return Err(Error::LengthMismatch {
            expected: 1,
            actual: 0,
        });
    }
    let total: f64 = z
        .values()
        .iter()
        .zip(y.flags())
        .map(|(&zc, &yc)| bce_term(zc, yc))
        .sum();
    Ok(total / z.len() as f64)
}
