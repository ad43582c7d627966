//! Confusion-matrix accumulation and segmentation / saliency metrics.

use crate::error::{Error, Result};
use crate::fusion::binarize_saliency;
use crate::types::{ConfusionMatrix, LabelMask, SaliencyMap, IGNORE_LABEL};

/// Scores derived from a confusion matrix. Per-class entries are indexed by
/// label code (0 is background) and are `None` where undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub per_class_precision: Vec<Option<f64>>,
    pub per_class_recall: Vec<Option<f64>>,
    pub ignored_fraction: f64,
}

/// Adds one prediction / ground-truth pair to `m`.
///
/// Pixels ignored in either mask are only counted in `ignored_pixels`.
pub fn accumulate(
    mut m: ConfusionMatrix,
    pred: &LabelMask,
    gt: &LabelMask,
) -> Result<ConfusionMatrix> {
    accumulate_into(&mut m, pred, gt)?;
    Ok(m)
}

pub fn accumulate_into(m: &mut ConfusionMatrix, pred: &LabelMask, gt: &LabelMask) -> Result<()> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::dims(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    for count in [pred.class_count(), gt.class_count()] {
        if count != m.class_count() {
            return Err(Error::ClassCountMismatch {
                expected: m.class_count(),
                actual: count,
            });
        }
    }
    accumulate_codes(m, pred.values(), gt.values());
    Ok(())
}

/// Unchecked inner loop; codes must be valid for `m`'s class count.
pub(crate) fn accumulate_codes(m: &mut ConfusionMatrix, pred: &[u8], gt: &[u8]) {
    let side = m.side();
    let mut ignored = 0u64;
    let counts = m.counts_mut();
    for (&p, &g) in pred.iter().zip(gt) {
        if p == IGNORE_LABEL || g == IGNORE_LABEL {
            ignored += 1;
        } else {
            counts[g as usize * side + p as usize] += 1;
        }
    }
    m.add_ignored(ignored);
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Computes IoU, precision and recall per class plus their summaries.
///
/// Classes with an empty union are left out of the mean IoU.
pub fn finalize(m: &ConfusionMatrix) -> Result<MetricReport> {
    let side = m.side();
    let mut rows = vec![0u64; side];
    let mut cols = vec![0u64; side];
    for (row, counts) in rows.iter_mut().zip(m.counts().chunks(side)) {
        for (col, &v) in cols.iter_mut().zip(counts) {
            *row += v;
            *col += v;
        }
    }
    let diag: Vec<u64> = (0..side).map(|k| m.get(k, k)).collect();

    let per_class_iou: Vec<Option<f64>> = (0..side)
        .map(|k| ratio(diag[k], rows[k] + cols[k] - diag[k]))
        .collect();
    let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::NoValidClasses);
    }
    let miou = present.iter().sum::<f64>() / present.len() as f64;

    let counted = m.counted_pixels();
    let total = m.total_pixels();
    Ok(MetricReport {
        miou,
        pixel_accuracy: diag.iter().sum::<u64>() as f64 / counted as f64,
        per_class_precision: (0..side).map(|k| ratio(diag[k], cols[k])).collect(),
        per_class_recall: (0..side).map(|k| ratio(diag[k], rows[k])).collect(),
        per_class_iou,
        ignored_fraction: ratio(m.ignored_pixels(), total).unwrap_or(0.0),
    })
}

/// Agreement between a saliency map and a binary reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaliencyError {
    pub mae: f64,
    pub iou: f64,
}

/// Mean absolute error of `s` against `gt`, and the IoU of the salient
/// region after binarizing `s` at 0.5. Two empty salient regions score an
/// IoU of 1.
pub fn saliency_error(s: &SaliencyMap, gt: &SaliencyMap) -> Result<SaliencyError> {
    if s.height() != gt.height() || s.width() != gt.width() {
        return Err(Error::dims(format!(
            "saliency is {}x{}, reference is {}x{}",
            s.height(),
            s.width(),
            gt.height(),
            gt.width()
        )));
    }
    if !gt.is_binarized() {
        return Err(Error::NotBinarized);
    }
    let n = s.values().len() as f64;
    let mae = s
        .values()
        .iter()
        .zip(gt.values())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum::<f64>()
        / n;

    let bin = binarize_saliency(s, 0.5)?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (&a, &b) in bin.values().iter().zip(gt.values()) {
        let (a, b) = (a == 1.0, b == 1.0);
        inter += (a && b) as u64;
        union += (a || b) as u64;
    }
    Ok(SaliencyError {
        mae,
        iou: ratio(inter, union).unwrap_or(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, c: usize, v: Vec<u8>) -> LabelMask {
        LabelMask::new(h, w, c, v).unwrap()
    }

    fn worked_matrix() -> ConfusionMatrix {
        let pred = mask(2, 2, 2, vec![0, 1, 1, 255]);
        let gt = mask(2, 2, 2, vec![0, 1, 2, 2]);
        accumulate(ConfusionMatrix::new(2).unwrap(), &pred, &gt).unwrap()
    }

    #[test]
    fn identical_masks_fill_the_diagonal() {
        let x = mask(2, 3, 3, vec![0, 1, 2, 3, 3, 0]);
        let m = accumulate(ConfusionMatrix::new(3).unwrap(), &x, &x).unwrap();
        for g in 0..4 {
            for p in 0..4 {
                if g != p {
                    assert_eq!(m.get(g, p), 0);
                }
            }
        }
        assert_eq!(m.get(3, 3), 2);
        assert_eq!(finalize(&m).unwrap().miou, 1.0);
    }

    #[test]
    fn ignored_ground_truth_counts_nothing() {
        let gt = mask(3, 3, 4, vec![255; 9]);
        let pred = mask(3, 3, 4, vec![1; 9]);
        let m = accumulate(ConfusionMatrix::new(4).unwrap(), &pred, &gt).unwrap();
        assert_eq!(m.counted_pixels(), 0);
        assert_eq!(m.ignored_pixels(), 9);
        assert!(matches!(finalize(&m), Err(Error::NoValidClasses)));
    }

    #[test]
    fn worked_counts() {
        let m = worked_matrix();
        let mut expected = ConfusionMatrix::new(2).unwrap();
        expected.counts_mut()[0] = 1; // (0,0)
        expected.counts_mut()[3 + 1] = 1; // (1,1)
        expected.counts_mut()[2 * 3 + 1] = 1; // (2,1)
        expected.add_ignored(1);
        assert_eq!(m, expected);
    }

    #[test]
    fn worked_report() {
        let r = finalize(&worked_matrix()).unwrap();
        assert_eq!(r.per_class_iou, vec![Some(1.0), Some(0.5), Some(0.0)]);
        assert_eq!(r.miou, 0.5);
        assert_eq!(r.ignored_fraction, 0.25);
        assert_eq!(r.per_class_precision, vec![Some(1.0), Some(0.5), None]);
        assert_eq!(r.per_class_recall, vec![Some(1.0), Some(1.0), Some(0.0)]);
        assert_eq!(r.pixel_accuracy, 2.0 / 3.0);
    }

    #[test]
    fn absent_classes_leave_the_mean() {
        let x = mask(1, 2, 5, vec![0, 3]);
        let m = accumulate(ConfusionMatrix::new(5).unwrap(), &x, &x).unwrap();
        let r = finalize(&m).unwrap();
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.per_class_iou.iter().filter(|v| v.is_none()).count(), 4);
    }

    #[test]
    fn empty_matrix_has_no_valid_classes() {
        assert!(matches!(
            finalize(&ConfusionMatrix::new(3).unwrap()),
            Err(Error::NoValidClasses)
        ));
    }

    #[test]
    fn mismatches_are_rejected() {
        let a = mask(1, 2, 2, vec![0, 1]);
        let b = mask(2, 1, 2, vec![0, 1]);
        let c = mask(1, 2, 3, vec![0, 1]);
        let m = ConfusionMatrix::new(2).unwrap();
        assert!(matches!(
            accumulate(m.clone(), &a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            accumulate(m, &a, &c),
            Err(Error::ClassCountMismatch { .. })
        ));
    }

    #[test]
    fn saliency_identity() {
        let gt = SaliencyMap::binary(1, 4, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let e = saliency_error(&gt, &gt).unwrap();
        assert_eq!(e, SaliencyError { mae: 0.0, iou: 1.0 });
    }

    #[test]
    fn saliency_constant_half() {
        let s = SaliencyMap::soft(2, 2, vec![0.5; 4]).unwrap();
        let gt = SaliencyMap::binary(2, 2, vec![1.0; 4]).unwrap();
        let e = saliency_error(&s, &gt).unwrap();
        assert_eq!(e, SaliencyError { mae: 0.5, iou: 1.0 });
    }

    #[test]
    fn saliency_dimension_mismatch() {
        let s = SaliencyMap::soft(2, 2, vec![0.5; 4]).unwrap();
        let gt = SaliencyMap::binary(1, 4, vec![1.0; 4]).unwrap();
        assert!(matches!(
            saliency_error(&s, &gt),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
