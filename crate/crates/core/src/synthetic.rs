//! Deterministic synthetic datasets.
//!
//! Each image holds two rectangular objects of distinct classes, one in
//! each half of the frame. The saliency map covers exactly the objects and
//! the ground truth marks a one-pixel ignore ring around each object. Two
//! activation styles are available:
//!
//! * [`ActivationStyle::Sparse`]: a sharp peak at the object centre with a
//!   weak plateau (0.12..0.27) over the rest of the object and a faint outer
//!   ring where a competing class is marginally stronger.
//! * [`ActivationStyle::Saturated`]: a strong core (>= 0.85) with a weak
//!   rim (0.2..0.3) on which a competing class bleeds in at 0.38.
//!
//! In both styles a competing class fires at 1.0 on a thin band inside each
//! object, an error no threshold below 1 removes.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datasets::{
    sample_path, write_actmap, write_gray_png, write_label_png, write_manifest, Manifest,
    ManifestEntry, ACTMAP_EXT, PNG_EXT,
};
use crate::error::{Error, Result};
use crate::experiments::{Sample, SampleSource};
use crate::types::{ActivationStack, ImageLabelVector, LabelMask, SaliencyMap, IGNORE_LABEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationStyle {
    Sparse,
    Saturated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub class_count: usize,
    pub style: ActivationStyle,
    /// Fraction of salient pixels switched to non-salient in every image.
    pub saliency_flip: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            images: 20,
            height: 32,
            width: 32,
            class_count: 5,
            style: ActivationStyle::Sparse,
            saliency_flip: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rect {
    top: usize,
    left: usize,
    bottom: usize,
    right: usize,
}

impl Rect {
    fn contains(&self, r: usize, c: usize) -> bool {
        (self.top..self.bottom).contains(&r) && (self.left..self.right).contains(&c)
    }

    /// Chebyshev distance from the centre, 0 at the centre and about 1 on
    /// the border.
    fn depth(&self, r: usize, c: usize) -> f64 {
        let half_h = (self.bottom - self.top) as f64 / 2.0;
        let half_w = (self.right - self.left) as f64 / 2.0;
        let dr = (r as f64 + 0.5 - (self.top as f64 + half_h)).abs() / half_h;
        let dc = (c as f64 + 0.5 - (self.left as f64 + half_w)).abs() / half_w;
        dr.max(dc)
    }

    fn center_row(&self) -> f64 {
        (self.top + self.bottom) as f64 / 2.0
    }
}

#[derive(Debug, Clone)]
struct Layout {
    objects: [(usize, Rect); 2],
}

/// A generated dataset; samples are synthesized on demand.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    config: SyntheticConfig,
    layouts: Vec<Layout>,
}

fn image_rng(seed: u64, index: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(index as u128 * 1024);
    rng
}

fn random_rect(rng: &mut ChaCha8Rng, height: usize, left: usize, right: usize) -> Rect {
    let span_w = right - left - 2;
    let span_h = height - 2;
    let w = rng.random_range(span_w / 2..=span_w);
    let h = rng.random_range(span_h / 2..=span_h);
    let l = left + 1 + rng.random_range(0..=span_w - w);
    let t = 1 + rng.random_range(0..=span_h - h);
    Rect {
        top: t,
        left: l,
        bottom: t + h,
        right: l + w,
    }
}

impl SyntheticDataset {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        if config.class_count < 2 {
            return Err(Error::InvalidClassCount(config.class_count));
        }
        if config.height < 8 || config.width < 16 {
            return Err(Error::dims(format!(
                "synthetic images need at least 8x16 pixels, got {}x{}",
                config.height, config.width
            )));
        }
        if !(0.0..=1.0).contains(&config.saliency_flip) {
            return Err(Error::ThresholdOutOfRange(config.saliency_flip));
        }
        let half = config.width / 2;
        let layouts = (0..config.images)
            .map(|i| {
                let mut rng = image_rng(config.seed, i, 0);
                let a = rng.random_range(0..config.class_count);
                let b = (a + rng.random_range(1..config.class_count)) % config.class_count;
                let ra = random_rect(&mut rng, config.height, 0, half);
                let rb = random_rect(&mut rng, config.height, half, config.width);
                Layout {
                    objects: [(a, ra), (b, rb)],
                }
            })
            .collect();
        Ok(Self { config, layouts })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn id(&self, index: usize) -> String {
        format!("img{index:05}")
    }

    pub fn manifest(&self) -> Manifest {
        let entries = self
            .layouts
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut labels: Vec<usize> = l.objects.iter().map(|o| o.0).collect();
                labels.sort_unstable();
                ManifestEntry {
                    id: self.id(i),
                    labels,
                }
            })
            .collect();
        Manifest { entries }
    }

    fn activations(&self, layout: &Layout) -> Vec<f32> {
        let SyntheticConfig {
            height: h,
            width: w,
            class_count,
            style,
            ..
        } = self.config;
        let n = h * w;
        let mut planes = vec![0.0f32; class_count * n];
        let present = [layout.objects[0].0, layout.objects[1].0];

        // Absent classes fire over the first object; image labels must mask them.
        let decoy = layout.objects[0].1;
        for class in (0..class_count).filter(|c| !present.contains(c)) {
            let plane = &mut planes[class * n..(class + 1) * n];
            for r in decoy.top..decoy.bottom {
                plane[r * w + decoy.left..r * w + decoy.right].fill(0.6);
            }
        }

        for (slot, &(class, _)) in layout.objects.iter().enumerate() {
            let (_, own) = layout.objects[slot];
            let (_, other) = layout.objects[1 - slot];
            let plane = &mut planes[class * n..(class + 1) * n];
            for r in 0..h {
                for c in 0..w {
                    let v = if own.contains(r, c) {
                        own_value(style, own.depth(r, c))
                    } else if other.contains(r, c) {
                        competing_value(style, &other, r, c)
                    } else {
                        match style {
                            ActivationStyle::Sparse => 0.02,
                            ActivationStyle::Saturated => 0.3,
                        }
                    };
                    plane[r * w + c] = v as f32;
                }
            }
        }
        planes
    }

    fn saliency(&self, index: usize, layout: &Layout) -> Vec<f32> {
        let (h, w) = (self.config.height, self.config.width);
        let mut values = vec![0.1f32; h * w];
        let mut salient = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if layout.objects.iter().any(|(_, rect)| rect.contains(r, c)) {
                    values[r * w + c] = 0.9;
                    salient.push(r * w + c);
                }
            }
        }
        let flips = (self.config.saliency_flip * salient.len() as f64).round() as usize;
        if flips > 0 {
            let mut rng = image_rng(self.config.seed, index, 1);
            for k in sample(&mut rng, salient.len(), flips) {
                values[salient[k]] = 0.1;
            }
        }
        values
    }

    fn ground_truth(&self, layout: &Layout) -> Vec<u8> {
        let (h, w) = (self.config.height, self.config.width);
        let mut codes = vec![0u8; h * w];
        for &(_, rect) in &layout.objects {
            let ring = Rect {
                top: rect.top - 1,
                left: rect.left - 1,
                bottom: rect.bottom + 1,
                right: rect.right + 1,
            };
            for r in ring.top..ring.bottom {
                for c in ring.left..ring.right {
                    if !rect.contains(r, c) {
                        codes[r * w + c] = IGNORE_LABEL;
                    }
                }
            }
        }
        for &(class, rect) in &layout.objects {
            for r in rect.top..rect.bottom {
                codes[r * w + rect.left..r * w + rect.right].fill((class + 1) as u8);
            }
        }
        codes
    }

    /// Writes `<root>/manifest.jsonl` plus `actmaps/`, `saliency/` and `gt/`
    /// directories and returns their paths.
    pub fn write_to_dir(&self, root: &Path) -> Result<DatasetDirs> {
        let dirs = DatasetDirs::under(root);
        for d in [&dirs.actmaps, &dirs.saliency, &dirs.gt] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for i in 0..self.len() {
            let s = self.load(i)?;
            write_actmap(
                &s.activations,
                sample_path(&dirs.actmaps, &s.id, ACTMAP_EXT),
            )?;
            write_gray_png(&s.saliency, sample_path(&dirs.saliency, &s.id, PNG_EXT))?;
            write_label_png(&s.ground_truth, sample_path(&dirs.gt, &s.id, PNG_EXT))?;
        }
        write_manifest(&self.manifest(), &dirs.manifest)?;
        Ok(dirs)
    }
}

fn own_value(style: ActivationStyle, d: f64) -> f64 {
    match style {
        ActivationStyle::Sparse if d < 0.25 => 1.0 - 2.0 * d,
        ActivationStyle::Sparse if d < 0.85 => 0.12 + 0.15 * (0.85 - d) / 0.6,
        ActivationStyle::Sparse => 0.06,
        ActivationStyle::Saturated if d < 0.6 => 0.85 + 0.15 * (1.0 - d / 0.6),
        ActivationStyle::Saturated => 0.2 + 0.1 * (1.0 - d).max(0.0) / 0.4,
    }
}

/// Activation of a class inside the other object's rectangle.
fn competing_value(style: ActivationStyle, other: &Rect, r: usize, c: usize) -> f64 {
    let d = other.depth(r, c);
    match style {
        _ if (0.5..0.6).contains(&d) && (r as f64) < other.center_row() => 1.0,
        ActivationStyle::Sparse if d >= 0.85 => 0.08,
        ActivationStyle::Sparse => 0.0,
        ActivationStyle::Saturated if d >= 0.6 => 0.38,
        ActivationStyle::Saturated => 0.3,
    }
}

impl SampleSource for SyntheticDataset {
    fn len(&self) -> usize {
        self.layouts.len()
    }

    fn load(&self, index: usize) -> Result<Sample> {
        let layout = &self.layouts[index];
        let SyntheticConfig {
            height: h,
            width: w,
            class_count,
            ..
        } = self.config;
        let present: Vec<usize> = layout.objects.iter().map(|o| o.0).collect();
        Ok(Sample {
            id: self.id(index),
            activations: ActivationStack::new(class_count, h, w, self.activations(layout))?,
            saliency: SaliencyMap::soft(h, w, self.saliency(index, layout))?,
            labels: ImageLabelVector::from_indices(class_count, &present)?,
            ground_truth: LabelMask::new(h, w, class_count, self.ground_truth(layout))?,
        })
    }
}

/// On-disk layout written by [`SyntheticDataset::write_to_dir`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetDirs {
    pub manifest: PathBuf,
    pub actmaps: PathBuf,
    pub saliency: PathBuf,
    pub gt: PathBuf,
}

impl DatasetDirs {
    pub fn under(root: &Path) -> Self {
        Self {
            manifest: root.join("manifest.jsonl"),
            actmaps: root.join("actmaps"),
            saliency: root.join("saliency"),
            gt: root.join("gt"),
        }
    }
}
