//! Saliency binarization and pseudo label generation.

use crate::error::{Error, Result};
use crate::types::{
    validate_pair, ActivationStack, ImageLabelVector, LabelMask, SaliencyMap, IGNORE_LABEL,
};

pub const DEFAULT_SALIENCY_THRESHOLD: f64 = 0.5;

/// Thresholds used when turning activations and saliency into labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    tau: f64,
    saliency_threshold: f64,
}

impl FusionConfig {
    pub fn new(tau: f64, saliency_threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::ThresholdOutOfRange(tau));
        }
        if !(saliency_threshold > 0.0 && saliency_threshold < 1.0) {
            return Err(Error::ThresholdOutOfRange(saliency_threshold));
        }
        Ok(Self {
            tau,
            saliency_threshold,
        })
    }

    /// Activation cutoff; values strictly above it count as object cues.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn saliency_threshold(&self) -> f64 {
        self.saliency_threshold
    }

    pub fn with_tau(self, tau: f64) -> Result<Self> {
        Self::new(tau, self.saliency_threshold)
    }
}

/// Marks every pixel with `s >= threshold` as salient.
pub fn binarize_saliency(s: &SaliencyMap, threshold: f64) -> Result<SaliencyMap> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::ThresholdOutOfRange(threshold));
    }
    let values = s
        .values()
        .iter()
        .map(|&v| if v as f64 >= threshold { 1.0 } else { 0.0 })
        .collect();
    SaliencyMap::binary(s.height(), s.width(), values)
}

/// Builds a pseudo label from class activations and a binarized saliency map.
///
/// Per pixel the label is the argmax over `[1 - S, fg_1, .., fg_C]`, where
/// `fg_c = A_c` if `A_c > tau` and class `c` is present in the image, else 0.
/// Ties go to the lowest index. Salient pixels that end up as background are
/// set to [`IGNORE_LABEL`].
pub fn generate_pseudo_label(
    a: &ActivationStack,
    s: &SaliencyMap,
    y: &ImageLabelVector,
    tau: f64,
) -> Result<LabelMask> {
    validate_pair(a, s, y)?;
    if !s.is_binarized() {
        return Err(Error::NotBinarized);
    }
    let mut codes = vec![0u8; s.values().len()];
    fuse_into(a, s, y, tau, &mut codes);
    LabelMask::new(a.height(), a.width(), a.class_count(), codes)
}

/// Writes fusion codes into `codes`; inputs must already be validated.
pub(crate) fn fuse_into(
    a: &ActivationStack,
    s: &SaliencyMap,
    y: &ImageLabelVector,
    tau: f64,
    codes: &mut [u8],
) {
    let saliency = s.values();
    let mut best: Vec<f32> = saliency.iter().map(|&v| 1.0 - v).collect();
    codes.fill(0);
    for class in (0..a.class_count()).filter(|&c| y.is_present(c)) {
        let code = (class + 1) as u8;
        for ((&v, b), out) in a
            .plane(class)
            .iter()
            .zip(best.iter_mut())
            .zip(codes.iter_mut())
        {
            if v > *b && v as f64 > tau {
                *b = v;
                *out = code;
            }
        }
    }
    for (out, &sv) in codes.iter_mut().zip(saliency) {
        if sv == 1.0 && *out == 0 {
            *out = IGNORE_LABEL;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(h: usize, w: usize, v: Vec<f32>) -> SaliencyMap {
        SaliencyMap::binary(h, w, v).unwrap()
    }

    #[test]
    fn binarize_cutoff_is_inclusive() {
        let s = SaliencyMap::soft(1, 3, vec![0.2, 0.8, 0.5]).unwrap();
        let b = binarize_saliency(&s, 0.5).unwrap();
        assert!(b.is_binarized());
        assert_eq!(b.values(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn binarize_is_idempotent_on_binary_maps() {
        let s = binary(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(binarize_saliency(&s, 0.5).unwrap(), s);
        assert_eq!(binarize_saliency(&s, 1.0).unwrap(), s);
    }

    #[test]
    fn binarize_rejects_bad_threshold() {
        let s = binary(1, 1, vec![0.0]);
        assert!(matches!(
            binarize_saliency(&s, 0.0),
            Err(Error::ThresholdOutOfRange(_))
        ));
        assert!(binarize_saliency(&s, 1.5).is_err());
    }

    #[test]
    fn non_salient_pixels_are_background() {
        let a = ActivationStack::new(2, 2, 2, vec![1.0; 8]).unwrap();
        let y = ImageLabelVector::new(vec![true, true]);
        let p = generate_pseudo_label(&a, &binary(2, 2, vec![0.0; 4]), &y, 0.1).unwrap();
        assert_eq!(p.values(), &[0, 0, 0, 0]);
    }

    #[test]
    fn salient_without_cue_is_ignored() {
        let a = ActivationStack::new(3, 2, 2, vec![0.0; 12]).unwrap();
        let y = ImageLabelVector::new(vec![true, false, true]);
        let p = generate_pseudo_label(&a, &binary(2, 2, vec![1.0; 4]), &y, 0.1).unwrap();
        assert_eq!(p.values(), &[255; 4]);
    }

    #[test]
    fn worked_two_class_example() {
        #[rustfmt::skip]
        let a = ActivationStack::new(2, 2, 2, vec![
            0.9, 0.2, 0.05, 0.6,
            0.1, 0.8, 0.0, 0.7,
        ]).unwrap();
        let s = binary(2, 2, vec![1.0, 1.0, 0.0, 1.0]);
        let y = ImageLabelVector::new(vec![true, true]);
        let p = generate_pseudo_label(&a, &s, &y, 0.5).unwrap();
        assert_eq!(p.values(), &[1, 2, 0, 2]);
    }

    #[test]
    fn activation_equal_to_tau_is_not_a_cue() {
        let a = ActivationStack::new(1, 1, 2, vec![0.5, 0.75]).unwrap();
        let y = ImageLabelVector::new(vec![true]);
        let p = generate_pseudo_label(&a, &binary(1, 2, vec![1.0, 1.0]), &y, 0.5).unwrap();
        assert_eq!(p.values(), &[255, 1]);
    }

    #[test]
    fn absent_classes_never_appear() {
        let a = ActivationStack::new(2, 1, 2, vec![0.9, 0.9, 0.3, 0.3]).unwrap();
        let y = ImageLabelVector::new(vec![false, true]);
        let p = generate_pseudo_label(&a, &binary(1, 2, vec![1.0, 1.0]), &y, 0.1).unwrap();
        assert_eq!(p.values(), &[2, 2]);
    }

    #[test]
    fn equal_activations_pick_lowest_class() {
        let a = ActivationStack::new(2, 1, 1, vec![0.6, 0.6]).unwrap();
        let y = ImageLabelVector::new(vec![true, true]);
        let p = generate_pseudo_label(&a, &binary(1, 1, vec![1.0]), &y, 0.1).unwrap();
        assert_eq!(p.values(), &[1]);
    }

    #[test]
    fn soft_saliency_is_an_error() {
        let a = ActivationStack::new(1, 1, 1, vec![0.6]).unwrap();
        let s = SaliencyMap::soft(1, 1, vec![1.0]).unwrap();
        let y = ImageLabelVector::new(vec![true]);
        assert!(matches!(
            generate_pseudo_label(&a, &s, &y, 0.1),
            Err(Error::NotBinarized)
        ));
    }

    #[test]
    fn config_validation() {
        assert!(FusionConfig::new(1.5, 0.5).is_err());
        assert!(FusionConfig::new(0.3, 1.0).is_err());
        assert!(FusionConfig::new(0.0, 0.5).is_ok());
        assert!(FusionConfig::new(1.0, 0.5).is_ok());
    }
}
