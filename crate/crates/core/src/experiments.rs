//! Dataset-level protocols: evaluation at a fixed threshold, threshold
//! sweeps and method x saliency cross matrices.
//!
//! Images are processed in parallel. Each image produces its own confusion
//! matrix and matrices are merged in manifest order, so results never depend
//! on the worker count.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::datasets::{
    classwise_to_salient, existing_sample_path, read_actmap, read_gray_png, read_label_png,
    sample_path, write_gray_png, write_label_png, ClassSubset, Manifest, ACTMAP_EXT, PNG_EXT,
};
use crate::error::{Error, Result};
use crate::fusion::{binarize_saliency, fuse_into, generate_pseudo_label, FusionConfig};
use crate::metrics::{accumulate_codes, accumulate_into, finalize, MetricReport};
use crate::types::{
    validate_pair, ActivationStack, ConfusionMatrix, ImageLabelVector, LabelMask, SaliencyMap,
};

/// Worker-count cap. `None` uses the global rayon pool.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Jobs(pub Option<usize>);

impl Jobs {
    pub fn new(n: usize) -> Self {
        Jobs(Some(n.max(1)))
    }

    pub(crate) fn run<T: Send>(self, f: impl FnOnce() -> T + Send) -> T {
        match self.0 {
            None => f(),
            Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(f),
                Err(_) => f(),
            },
        }
    }
}

/// Everything needed to fuse and score one image.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub activations: ActivationStack,
    pub saliency: SaliencyMap,
    pub labels: ImageLabelVector,
    pub ground_truth: LabelMask,
}

/// Indexed collection of samples that can be loaded concurrently.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn load(&self, index: usize) -> Result<Sample>;
}

/// A dataset laid out as `<root>/<id>.actmap` and `<root>/<id>.png`.
#[derive(Debug, Clone)]
pub struct DirSource<'a> {
    pub manifest: &'a Manifest,
    pub actmap_root: PathBuf,
    pub saliency_root: PathBuf,
    pub gt_root: PathBuf,
}

impl<'a> DirSource<'a> {
    pub fn new(
        manifest: &'a Manifest,
        actmap_root: impl Into<PathBuf>,
        saliency_root: impl Into<PathBuf>,
        gt_root: impl Into<PathBuf>,
    ) -> Self {
        Self {
            manifest,
            actmap_root: actmap_root.into(),
            saliency_root: saliency_root.into(),
            gt_root: gt_root.into(),
        }
    }
}

fn load_fusion_inputs(
    manifest: &Manifest,
    index: usize,
    actmap_root: &Path,
    saliency_root: &Path,
) -> Result<(ActivationStack, SaliencyMap, ImageLabelVector)> {
    let entry = &manifest.entries[index];
    let id = entry.id.as_str();
    let actmap_path = existing_sample_path(actmap_root, id, ACTMAP_EXT)?;
    let saliency_path = existing_sample_path(saliency_root, id, PNG_EXT)?;
    let load = || {
        let activations = read_actmap(&actmap_path)?;
        let saliency = read_gray_png(&saliency_path)?;
        let labels = entry.label_vector(activations.class_count())?;
        Ok((activations, saliency, labels))
    };
    load().map_err(|e: Error| e.for_sample(id))
}

impl SampleSource for DirSource<'_> {
    fn len(&self) -> usize {
        self.manifest.len()
    }

    fn load(&self, index: usize) -> Result<Sample> {
        let id = &self.manifest.entries[index].id;
        let (activations, saliency, labels) =
            load_fusion_inputs(self.manifest, index, &self.actmap_root, &self.saliency_root)?;
        let gt_path = existing_sample_path(&self.gt_root, id, PNG_EXT)?;
        let ground_truth =
            read_label_png(&gt_path, activations.class_count()).map_err(|e| e.for_sample(id))?;
        Ok(Sample {
            id: id.clone(),
            activations,
            saliency,
            labels,
            ground_truth,
        })
    }
}

/// Binarizes, fuses once per threshold and scores one sample.
fn score_sample(
    sample: &Sample,
    saliency_threshold: f64,
    taus: &[f64],
) -> Result<Vec<ConfusionMatrix>> {
    let a = &sample.activations;
    let gt = &sample.ground_truth;
    let saliency = binarize_saliency(&sample.saliency, saliency_threshold)?;
    validate_pair(a, &saliency, &sample.labels)?;
    if gt.height() != a.height() || gt.width() != a.width() {
        return Err(Error::dims(format!(
            "ground truth is {}x{}, activations are {}x{}",
            gt.height(),
            gt.width(),
            a.height(),
            a.width()
        )));
    }
    if gt.class_count() != a.class_count() {
        return Err(Error::ClassCountMismatch {
            expected: a.class_count(),
            actual: gt.class_count(),
        });
    }
    let mut codes = vec![0u8; gt.values().len()];
    taus.iter()
        .map(|&tau| {
            let mut m = ConfusionMatrix::new(a.class_count())?;
            fuse_into(a, &saliency, &sample.labels, tau, &mut codes);
            accumulate_codes(&mut m, &codes, gt.values());
            Ok(m)
        })
        .collect()
}

/// Merges per-image results in index order; the first failing image wins.
fn merge_ordered(
    per_image: Vec<Result<(String, Vec<ConfusionMatrix>)>>,
) -> Result<Vec<ConfusionMatrix>> {
    let mut merged: Option<Vec<ConfusionMatrix>> = None;
    for result in per_image {
        let (id, matrices) = result?;
        match merged.as_mut() {
            None => merged = Some(matrices),
            Some(acc) => {
                for (a, m) in acc.iter_mut().zip(&matrices) {
                    a.merge_from(m).map_err(|e| e.for_sample(&id))?;
                }
            }
        }
    }
    merged.ok_or(Error::NoValidClasses)
}

/// One confusion matrix per threshold, summed over the whole source.
pub fn dataset_confusions(
    source: &dyn SampleSource,
    saliency_threshold: f64,
    taus: &[f64],
    jobs: Jobs,
) -> Result<Vec<ConfusionMatrix>> {
    let per_image: Vec<Result<(String, Vec<ConfusionMatrix>)>> = jobs.run(|| {
        (0..source.len())
            .into_par_iter()
            .map(|i| {
                let sample = source.load(i)?;
                let matrices = score_sample(&sample, saliency_threshold, taus)
                    .map_err(|e| e.for_sample(&sample.id))?;
                Ok((sample.id, matrices))
            })
            .collect()
    });
    merge_ordered(per_image)
}

/// Fuses every image at `config.tau()` and scores the merged confusion matrix.
pub fn evaluate_dataset(
    source: &dyn SampleSource,
    config: FusionConfig,
    jobs: Jobs,
) -> Result<MetricReport> {
    let m = dataset_confusions(source, config.saliency_threshold(), &[config.tau()], jobs)?;
    finalize(&m[0])
}

/// Scores existing label PNGs `<pred_root>/<id>.png` against ground truth.
pub fn evaluate_predictions(
    manifest: &Manifest,
    pred_root: &Path,
    gt_root: &Path,
    class_count: usize,
    jobs: Jobs,
) -> Result<MetricReport> {
    let per_image: Vec<Result<ConfusionMatrix>> = jobs.run(|| {
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                let id = entry.id.as_str();
                let pred_path = existing_sample_path(pred_root, id, PNG_EXT)?;
                let gt_path = existing_sample_path(gt_root, id, PNG_EXT)?;
                let score = || {
                    let pred = read_label_png(&pred_path, class_count)?;
                    let gt = read_label_png(&gt_path, class_count)?;
                    let mut m = ConfusionMatrix::new(class_count)?;
                    accumulate_into(&mut m, &pred, &gt)?;
                    Ok(m)
                };
                score().map_err(|e: Error| e.for_sample(id))
            })
            .collect()
    });
    let mut total = ConfusionMatrix::new(class_count)?;
    for m in per_image {
        total.merge_from(&m?)?;
    }
    finalize(&total)
}

/// Writes `<out_dir>/<id>.png` pseudo labels for every manifest entry and
/// returns the number written.
pub fn fuse_dataset(
    manifest: &Manifest,
    actmap_root: &Path,
    saliency_root: &Path,
    config: FusionConfig,
    out_dir: &Path,
    jobs: Jobs,
) -> Result<usize> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<Result<()>> = jobs.run(|| {
        (0..manifest.len())
            .into_par_iter()
            .map(|i| {
                let id = manifest.entries[i].id.as_str();
                let (a, s, y) = load_fusion_inputs(manifest, i, actmap_root, saliency_root)?;
                let fuse = || {
                    let s = binarize_saliency(&s, config.saliency_threshold())?;
                    let label = generate_pseudo_label(&a, &s, &y, config.tau())?;
                    write_label_png(&label, sample_path(out_dir, id, PNG_EXT))
                };
                fuse().map_err(|e: Error| e.for_sample(id))
            })
            .collect()
    });
    for r in results {
        r?;
    }
    Ok(manifest.len())
}

/// Writes `<out_dir>/<id>.png` binary saliency maps that are salient only on
/// the kept classes, and returns the number written.
pub fn convert_saliency_dataset(
    manifest: &Manifest,
    gt_root: &Path,
    subset: &ClassSubset,
    class_count: usize,
    out_dir: &Path,
    jobs: Jobs,
) -> Result<usize> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<Result<()>> = jobs.run(|| {
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                let id = entry.id.as_str();
                let gt_path = existing_sample_path(gt_root, id, PNG_EXT)?;
                let convert = || {
                    let gt = read_label_png(&gt_path, class_count)?;
                    let salient = classwise_to_salient(&gt, subset);
                    write_gray_png(&salient, sample_path(out_dir, id, PNG_EXT))
                };
                convert().map_err(|e: Error| e.for_sample(id))
            })
            .collect()
    });
    for r in results {
        r?;
    }
    Ok(manifest.len())
}

/// Threshold grid `{start, start + step, ..} <= stop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepGrid {
    start: f64,
    stop: f64,
    step: f64,
}

const MAX_GRID_POINTS: usize = 100_000;

impl SweepGrid {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
            return Err(Error::InvalidGrid("non-finite bound".into()));
        }
        if !(0.0 <= start && start <= stop && stop <= 1.0) {
            return Err(Error::InvalidGrid(format!(
                "need 0 <= start <= stop <= 1, got {start}..{stop}"
            )));
        }
        if step <= 0.0 {
            return Err(Error::InvalidGrid(format!(
                "step must be positive, got {step}"
            )));
        }
        if (stop - start) / step >= MAX_GRID_POINTS as f64 {
            return Err(Error::InvalidGrid("too many grid points".into()));
        }
        Ok(Self { start, stop, step })
    }

    /// Threshold values in ascending order, snapped to 1e-9 so that
    /// accumulated steps land on their decimal values.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|i| {
                let t = self.start + i as f64 * self.step;
                ((t * 1e9).round() / 1e9).min(self.stop)
            })
            .collect()
    }
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            start: 0.05,
            stop: 0.95,
            step: 0.05,
        }
    }
}

impl FromStr for SweepGrid {
    type Err = Error;

    /// Parses `START:STOP:STEP`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidGrid(format!(
                "expected START:STOP:STEP, got {s:?}"
            )));
        }
        let mut nums = [0.0; 3];
        for (n, p) in nums.iter_mut().zip(&parts) {
            *n = p
                .trim()
                .parse()
                .map_err(|_| Error::InvalidGrid(format!("not a number: {p:?}")))?;
        }
        Self::new(nums[0], nums[1], nums[2])
    }
}

impl fmt::Display for SweepGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub ignored_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub best_tau: f64,
    pub best_miou: f64,
}

impl SweepResult {
    /// Builds the result from rows in ascending `tau` order; ties for the
    /// best mIoU go to the smallest threshold.
    pub fn from_rows(rows: Vec<SweepRow>) -> Result<Self> {
        let mut best: Option<&SweepRow> = None;
        for row in &rows {
            if best.is_none_or(|b| row.miou > b.miou) {
                best = Some(row);
            }
        }
        let (best_tau, best_miou) = best
            .map(|b| (b.tau, b.miou))
            .ok_or_else(|| Error::InvalidGrid("empty grid".into()))?;
        Ok(Self {
            rows,
            best_tau,
            best_miou,
        })
    }
}

/// Evaluates the dataset at every threshold of `grid`. Each image is
/// loaded once and fused at all thresholds.
pub fn sweep(
    source: &dyn SampleSource,
    grid: &SweepGrid,
    saliency_threshold: f64,
    jobs: Jobs,
) -> Result<SweepResult> {
    FusionConfig::new(0.0, saliency_threshold)?;
    let taus = grid.values();
    let matrices = dataset_confusions(source, saliency_threshold, &taus, jobs)?;
    let rows = taus
        .iter()
        .zip(&matrices)
        .map(|(&tau, m)| {
            let r = finalize(m)?;
            Ok(SweepRow {
                tau,
                miou: r.miou,
                per_class_iou: r.per_class_iou,
                ignored_fraction: r.ignored_fraction,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SweepResult::from_rows(rows)
}

/// mIoU for every (method, saliency source) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossMatrix {
    pub methods: Vec<String>,
    pub saliencies: Vec<String>,
    /// `miou[m][s]`
    pub miou: Vec<Vec<f64>>,
}

impl CrossMatrix {
    pub fn cell(&self, method: &str, saliency: &str) -> Option<f64> {
        let m = self.methods.iter().position(|n| n == method)?;
        let s = self.saliencies.iter().position(|n| n == saliency)?;
        Some(self.miou[m][s])
    }
}

/// Evaluates each method's activation maps against each saliency source at
/// that method's threshold. Any failing cell fails the whole matrix.
pub fn cross_matrix(
    methods: &[(String, PathBuf)],
    saliencies: &[(String, PathBuf)],
    manifest: &Manifest,
    gt_root: &Path,
    per_method_tau: &HashMap<String, f64>,
    saliency_threshold: f64,
    jobs: Jobs,
) -> Result<CrossMatrix> {
    let mut miou = Vec::with_capacity(methods.len());
    for (method, actmap_root) in methods {
        let tau = *per_method_tau
            .get(method)
            .ok_or_else(|| Error::MissingTau(method.clone()))?;
        let config = FusionConfig::new(tau, saliency_threshold)?;
        let row = saliencies
            .iter()
            .map(|(_, saliency_root)| {
                let source = DirSource::new(manifest, actmap_root, saliency_root, gt_root);
                evaluate_dataset(&source, config, jobs).map(|r| r.miou)
            })
            .collect::<Result<Vec<_>>>()?;
        miou.push(row);
    }
    Ok(CrossMatrix {
        methods: methods.iter().map(|(n, _)| n.clone()).collect(),
        saliencies: saliencies.iter().map(|(n, _)| n.clone()).collect(),
        miou,
    })
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn optional(v: Option<f64>) -> String {
    v.map(fixed).unwrap_or_default()
}

/// Results that serialize to a CSV report (`\n` line endings, six decimals).
pub trait CsvReport {
    fn write_csv(&self, w: &mut dyn Write) -> std::io::Result<()>;

    fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("reports are UTF-8")
    }
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |k| format!("{prefix}_{k}"))
}

impl CsvReport for SweepResult {
    /// `tau,miou,ignored_fraction,iou_0,..,iou_C`
    fn write_csv(&self, w: &mut dyn Write) -> std::io::Result<()> {
        let classes = self.rows.first().map_or(0, |r| r.per_class_iou.len());
        let header: Vec<String> = ["tau", "miou", "ignored_fraction"]
            .into_iter()
            .map(String::from)
            .chain(numbered("iou", classes))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for row in &self.rows {
            let fields: Vec<String> =
                [fixed(row.tau), fixed(row.miou), fixed(row.ignored_fraction)]
                    .into_iter()
                    .chain(row.per_class_iou.iter().map(|&v| optional(v)))
                    .collect();
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

impl CsvReport for CrossMatrix {
    /// `method,<saliency_1>,..` with one row per method.
    fn write_csv(&self, w: &mut dyn Write) -> std::io::Result<()> {
        let header: Vec<&str> = std::iter::once("method")
            .chain(self.saliencies.iter().map(String::as_str))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (name, row) in self.methods.iter().zip(&self.miou) {
            let fields: Vec<String> = std::iter::once(name.clone())
                .chain(row.iter().map(|&v| fixed(v)))
                .collect();
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

impl CsvReport for MetricReport {
    /// One row: `miou,pixel_accuracy,ignored_fraction,iou_*,precision_*,recall_*`.
    fn write_csv(&self, w: &mut dyn Write) -> std::io::Result<()> {
        let n = self.per_class_iou.len();
        let header: Vec<String> = ["miou", "pixel_accuracy", "ignored_fraction"]
            .into_iter()
            .map(String::from)
            .chain(numbered("iou", n))
            .chain(numbered("precision", n))
            .chain(numbered("recall", n))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        let fields: Vec<String> = [
            fixed(self.miou),
            fixed(self.pixel_accuracy),
            fixed(self.ignored_fraction),
        ]
        .into_iter()
        .chain(
            self.per_class_iou
                .iter()
                .chain(&self.per_class_precision)
                .chain(&self.per_class_recall)
                .map(|&v| optional(v)),
        )
        .collect();
        writeln!(w, "{}", fields.join(","))
    }
}

pub fn write_report(result: &dyn CsvReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, result.to_csv()).map_err(|e| Error::io(path, e))
}
