//! Independent reference implementations used as test oracles. Nothing here
//! calls into the fusion or metrics code paths under test.
#![allow(dead_code)]

use psl_bench::{SampleSource, SweepGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Literal per-pixel evaluation of the pseudo label rule: stack
/// `[1 - S, fg_1 .. fg_C]`, take the first maximum, ignore salient background.
pub fn reference_fuse(
    classes: usize,
    h: usize,
    w: usize,
    a: &[f32],
    s: &[f32],
    y: &[bool],
    tau: f64,
) -> Vec<u8> {
    let n = h * w;
    let mut out = vec![0u8; n];
    for p in 0..n {
        let mut stack = Vec::with_capacity(classes + 1);
        stack.push(1.0 - s[p] as f64);
        for c in 0..classes {
            let v = a[c * n + p] as f64;
            let fg = if v > tau { v } else { 0.0 };
            stack.push(if y[c] { fg } else { 0.0 });
        }
        let mut arg = 0;
        for (i, &v) in stack.iter().enumerate() {
            if v > stack[arg] {
                arg = i;
            }
        }
        out[p] = if s[p] == 1.0 && arg == 0 {
            255
        } else {
            arg as u8
        };
    }
    out
}

/// `counts[gt][pred]` plus the ignored pixel count.
pub fn reference_counts(classes: usize, pred: &[u8], gt: &[u8]) -> (Vec<Vec<u64>>, u64) {
    let mut counts = vec![vec![0u64; classes + 1]; classes + 1];
    let mut ignored = 0;
    for (&p, &g) in pred.iter().zip(gt) {
        if p == 255 || g == 255 {
            ignored += 1;
        } else {
            counts[g as usize][p as usize] += 1;
        }
    }
    (counts, ignored)
}

/// Mean IoU over classes with a non-empty union, `None` if there are none.
pub fn reference_miou(counts: &[Vec<u64>]) -> Option<f64> {
    let k = counts.len();
    let mut ious = Vec::new();
    for c in 0..k {
        let tp = counts[c][c];
        let row: u64 = counts[c].iter().sum();
        let col: u64 = counts.iter().map(|r| r[c]).sum();
        let union = row + col - tp;
        if union > 0 {
            ious.push(tp as f64 / union as f64);
        }
    }
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Sequential evaluation of a whole source at one threshold.
pub fn reference_dataset_miou(
    source: &dyn SampleSource,
    tau: f64,
    saliency_threshold: f64,
) -> Option<f64> {
    let mut total: Option<Vec<Vec<u64>>> = None;
    for i in 0..source.len() {
        let s = source.load(i).unwrap();
        let a = &s.activations;
        let bin: Vec<f32> = s
            .saliency
            .values()
            .iter()
            .map(|&v| {
                if v as f64 >= saliency_threshold {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let pred = reference_fuse(
            a.class_count(),
            a.height(),
            a.width(),
            a.planes(),
            &bin,
            s.labels.flags(),
            tau,
        );
        let (counts, _) = reference_counts(a.class_count(), &pred, s.ground_truth.values());
        match total.as_mut() {
            None => total = Some(counts),
            Some(t) => {
                for (tr, cr) in t.iter_mut().zip(&counts) {
                    for (x, y) in tr.iter_mut().zip(cr) {
                        *x += y;
                    }
                }
            }
        }
    }
    reference_miou(&total?)
}

/// Exhaustive grid search: the smallest threshold reaching the best mIoU.
pub fn reference_best_tau(
    source: &dyn SampleSource,
    grid: &SweepGrid,
    saliency_threshold: f64,
) -> (f64, f64) {
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for tau in grid.values() {
        let m = reference_dataset_miou(source, tau, saliency_threshold).unwrap();
        if m > best.1 {
            best = (tau, m);
        }
    }
    best
}

/// A random fusion instance: `(C, H, W, A, S, y, tau)`.
pub struct FusionCase {
    pub classes: usize,
    pub h: usize,
    pub w: usize,
    pub a: Vec<f32>,
    pub s: Vec<f32>,
    pub y: Vec<bool>,
    pub tau: f64,
}

pub fn random_fusion_case(rng: &mut ChaCha8Rng) -> FusionCase {
    let classes = rng.random_range(1..=5);
    let h = rng.random_range(1..=8);
    let w = rng.random_range(1..=8);
    // Coarse values make exact ties and tau-equal activations common.
    let a: Vec<f32> = (0..classes * h * w)
        .map(|_| {
            if rng.random_bool(0.3) {
                rng.random_range(0..=10) as f32 / 10.0
            } else {
                rng.random::<f32>()
            }
        })
        .collect();
    let s: Vec<f32> = (0..h * w)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
        .collect();
    let y: Vec<bool> = (0..classes).map(|_| rng.random_bool(0.6)).collect();
    let tau = if rng.random_bool(0.3) {
        rng.random_range(0..=10) as f64 / 10.0
    } else {
        rng.random::<f64>()
    };
    FusionCase {
        classes,
        h,
        w,
        a,
        s,
        y,
        tau,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random label mask codes in `{0..=C, 255}`.
pub fn random_codes(rng: &mut ChaCha8Rng, classes: usize, n: usize) -> Vec<u8> {
    (0..n)
        .map(|_| {
            if rng.random_bool(0.1) {
                255
            } else {
                rng.random_range(0..=classes) as u8
            }
        })
        .collect()
}
